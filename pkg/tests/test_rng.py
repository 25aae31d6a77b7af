"""Counter RNG: pinned values, stream separation, moment sanity."""

import numpy as np

from qsdlab import _rng


def _ctr(*vals):
    return np.array(vals, dtype=np.uint64)


def test_pinned_values():
    b = _rng.path_bases(12345, _rng.KIND_PATH, 0, 3)
    assert [int(x) for x in b] == [0xA9FB86AFF8EE1B6D, 0x6B64FFA09ECC90F7,
                                   0x180DC55CF3FB3666]
    assert int(_rng.u64_at(b[:1], _ctr(0))[0]) == 0x2B50FA6DE868A494
    assert float(_rng.uniform_at(b[:1], _ctr(7))[0]) == 0.33194963008197786
    assert float(_rng.normal_at(b[:1], _ctr(4))[0]) == 0.04643913233108982
    assert float(_rng.exponential_at(b[:1], _ctr(1 << 62))[0]) == \
        1.948648535442929


def test_streams_do_not_collide():
    kinds = (_rng.KIND_PATH, _rng.KIND_INIT, _rng.KIND_RESAMPLE,
             _rng.KIND_JUMP)
    bases = np.concatenate([_rng.path_bases(9, k, 0, 64) for k in kinds])
    assert len(set(int(x) for x in bases)) == bases.size
    # and distinct master seeds give distinct bases too
    other = _rng.path_bases(10, _rng.KIND_PATH, 0, 64)
    assert not set(int(x) for x in other) & set(int(x) for x in bases)


def test_index_offset_matches_slicing():
    whole = _rng.path_bases(77, _rng.KIND_PATH, 0, 100)
    tail = _rng.path_bases(77, _rng.KIND_PATH, 40, 60)
    assert np.array_equal(whole[40:], tail)


def test_uniform_moments():
    b = _rng.path_bases(3, _rng.KIND_PATH, 0, 1)
    base = np.repeat(b, 200_000)
    ctr = np.arange(200_000, dtype=np.uint64)
    u = _rng.uniform_at(base, ctr)
    assert np.all((u > 0.0) & (u < 1.0))
    assert abs(u.mean() - 0.5) < 4.0 / np.sqrt(12 * u.size)
    assert abs(u.var() - 1.0 / 12) < 1e-3


def test_normal_and_exponential_moments():
    b = _rng.path_bases(4, _rng.KIND_PATH, 0, 1)
    base = np.repeat(b, 200_000)
    ctr = np.arange(0, 400_000, 2, dtype=np.uint64)
    z = _rng.normal_at(base, ctr)
    assert abs(z.mean()) < 4.0 / np.sqrt(z.size)
    assert abs(z.var() - 1.0) < 0.02
    e = _rng.exponential_at(base, ctr)
    assert np.all(e > 0.0)
    assert abs(e.mean() - 1.0) < 4.0 / np.sqrt(e.size)


def test_counter_determinism():
    b = _rng.path_bases(5, _rng.KIND_PATH, 3, 2)
    ctr = _ctr(0, 1)
    again = _rng.uniform_at(b, ctr)
    assert np.array_equal(_rng.uniform_at(b, ctr), again)

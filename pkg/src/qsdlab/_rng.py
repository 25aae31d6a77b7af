"""Counter-based random number streams.

Every draw is a pure function of (master_seed, stream kind, stream index,
counter), so draws for one path never depend on how work is scheduled across
threads or on how many draws another path consumed.  The same construction is
used by the numba kernels (on uint64 scalars) and by the numpy fallback (on
uint64 arrays); outputs are bit-identical between the two.

The mixing function is the splitmix64 finalizer.  A stream's n-th raw word is

    mix64(base + GOLDEN * (n + 1)),   base = f(seed, kind, index)

which is the splitmix64 sequence read in counter mode.

numpy warns on uint64 *scalar* overflow (the wraparound itself is correct),
so python-level helpers run under errstate; array code is silent by default.
"""

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_U1 = np.uint64(1)
_U11 = np.uint64(11)
_U27 = np.uint64(27)
_U30 = np.uint64(30)
_U31 = np.uint64(31)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53
_TWO_PI = 6.283185307179586

# Stream kinds: keep path dynamics, initial sampling, resampling and jump
# clocks on disjoint streams so adding one feature never shifts the draws of
# another (paired-seed tests rely on this).
KIND_PATH = np.uint64(0)
KIND_INIT = np.uint64(1)
KIND_RESAMPLE = np.uint64(2)
KIND_JUMP = np.uint64(3)


def mix64(z):
    # uint64 wraparound is the point here; silence the scalar overflow noise
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _U30)) * _M1
        z = (z ^ (z >> _U27)) * _M2
        return z ^ (z >> _U31)


def stream_base(seed, kind, index):
    """Derive the 64-bit base of stream (seed, kind, index).

    All arguments must already be uint64 (scalars or arrays).
    """
    with np.errstate(over="ignore"):
        u = mix64(seed + GOLDEN)
        v = mix64(u + GOLDEN + kind)
        return mix64(v + GOLDEN + index)


def u64_at(base, counter):
    with np.errstate(over="ignore"):
        return mix64(base + GOLDEN * (counter + _U1))


def uniform_at(base, counter):
    """Uniform draw in (0, 1] at the given counter (log-safe)."""
    return ((u64_at(base, counter) >> _U11) + _U1) * _INV53


def normal_at(base, counter):
    """Standard normal consuming counters (counter, counter+1)."""
    u1 = uniform_at(base, counter)
    u2 = uniform_at(base, counter + _U1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)


def exponential_at(base, counter):
    """Exp(1) draw consuming one counter."""
    return -np.log(uniform_at(base, counter))


def seed_u64(master_seed):
    """Map a python int seed onto uint64 (wraps mod 2**64)."""
    return np.uint64(int(master_seed) & 0xFFFFFFFFFFFFFFFF)


def path_bases(master_seed, kind, index0, n):
    """uint64 array of stream bases for paths index0 .. index0+n-1."""
    idx = np.arange(n, dtype=np.uint64) + np.uint64(int(index0))
    return stream_base(np.broadcast_to(seed_u64(master_seed), idx.shape).copy(),
                       np.uint64(kind), idx)

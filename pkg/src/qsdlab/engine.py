"""Path engine: coefficient tables, killed paths, chain walks, hitting rep.

Everything here is a thin deterministic orchestration layer over the
compiled kernels.  Randomness is counter-based: stream (seed, kind, index)
plus a draw counter addresses every variate, so runs are reproducible
bit-for-bit at any thread count and independent batches just shift index0.

Coefficient functions are tabulated on a lattice uniform in u = sqrt(y) and
linearly interpolated inside the kernels; that is exact for sigma(y) =
sqrt(y) (the family that controls absorption) and dense near 0 where it
matters.  One compiled kernel serves every model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels
from ._rng import (KIND_INIT, KIND_JUMP, KIND_PATH, path_bases,
                   exponential_at, uniform_at)
from .errors import ConfigError, NumericError
from .measures import PowerWeight, integrate, natural_scale_form
from .spectral import _interval_masses

__all__ = [
    "Tables", "make_tables", "eta_table", "PathsResult",
    "simulate_killed_paths", "sample_nodes", "chain_rates", "ChainResult",
    "simulate_chain", "ComingDownResult", "coming_down_probability",
    "QProcessResult", "simulate_qprocess",
    "AbsorptionOutcome", "PathSample", "simulate_sde_path",
    "simulate_with_jumps", "simulate_chain_path", "feller_hitting_check",
    "HittingCheck",
]

N_TAB = 4097


@dataclass
class Tables:
    """Coefficient lookups on the sqrt-spaced lattice shared by all kernels."""

    du: float
    sig: np.ndarray
    dri: np.ndarray
    kap: np.ndarray
    y_top: float

    @property
    def n(self):
        return self.sig.shape[0]


def _tabulate(fn, y, du):
    """Evaluate a coefficient on the lattice; a divergence at y = 0 is
    re-evaluated half a cell in (rates like y^{-1/2} are integrable along
    paths but cannot sit at the node itself)."""
    vals = np.asarray(fn(y), dtype=float)
    if vals.shape != y.shape:
        vals = np.broadcast_to(vals, y.shape).astype(float)
    bad = ~np.isfinite(vals)
    if bad.any():
        y_half = np.where(y > 0, y, (0.5 * du) ** 2)
        vals = np.where(bad, np.asarray(fn(y_half), dtype=float), vals)
        if not np.all(np.isfinite(vals)):
            raise NumericError("coefficient table has non-finite interior values")
    return vals


def make_tables(spec, y_top=None, n_tab=N_TAB):
    sde = spec.sde_form
    if sde is None:
        raise ConfigError("path engine needs SDE coefficients on the spec")
    if y_top is None:
        y_top = spec.y_max
    if y_top is None:
        raise ConfigError("no y_top: set y_max on the spec or pass one")
    y_top = float(y_top)
    du = math.sqrt(y_top) / (n_tab - 1)
    u = np.arange(n_tab, dtype=float) * du
    y = u * u
    sig = _tabulate(sde.sigma, y, du)
    dri = _tabulate(sde.drift, y, du)
    if sde.kill_rate is None:
        kap = np.zeros(n_tab)
    else:
        kap = _tabulate(sde.kill_rate, y, du)
    if np.any(sig[1:] <= 0.0):
        raise ConfigError("sigma must be positive away from 0")
    if np.any(kap < 0.0):
        raise ConfigError("kill rate must be nonnegative")
    return Tables(du=du, sig=sig, dri=dri, kap=kap, y_top=y_top)


def eta_table(eta_fn, tables):
    """Sample an eta interpolant onto the kernel lattice."""
    u = np.arange(tables.n, dtype=float) * tables.du
    vals = np.asarray(eta_fn(u * u), dtype=float)
    if np.any(~np.isfinite(vals)) or np.any(vals < 0.0):
        raise NumericError("eta table must be finite and nonnegative")
    return vals


def _resolve_steps(horizon, dt):
    n_steps = int(round(horizon / dt))
    if n_steps < 1:
        raise ConfigError("horizon shorter than one step")
    return n_steps, horizon / n_steps


def _snap_steps(snapshot_times, dt, n_steps):
    ts = np.asarray(snapshot_times, dtype=float)
    if ts.size == 0:
        return np.zeros(0, dtype=np.int64), ts
    if np.any(np.diff(ts) <= 0.0):
        raise ConfigError("snapshot times must be strictly increasing")
    steps = np.rint(ts / dt).astype(np.int64)
    if steps[0] < 1 or steps[-1] > n_steps:
        raise ConfigError("snapshot times must lie inside the horizon")
    if np.unique(steps).size != steps.size:
        raise ConfigError("snapshot times collide on the step grid")
    return steps, steps * dt


@dataclass
class PathsResult:
    """Outcome arrays of a killed-path run.

    state uses the kernel codes: 0 alive at the horizon, 1 absorbed at 0,
    2 killed by the clock.  snapshots holds the position of each still-alive
    path at each snapshot time, NaN once dead.
    """

    state: np.ndarray
    time: np.ndarray
    y_final: np.ndarray
    snapshots: np.ndarray
    snapshot_times: np.ndarray
    dt: float
    n_steps: int
    killing_clock: np.ndarray = None

    @property
    def alive(self):
        return self.state == _kernels.ALIVE

    @property
    def hit_zero(self):
        return self.state == _kernels.HIT_ZERO

    @property
    def killed(self):
        return self.state == _kernels.KILLED

    def survival_at_snapshots(self):
        return np.mean(~np.isnan(self.snapshots), axis=0)


def simulate_killed_paths(spec, y0, horizon, dt, n_paths, seed,
                          snapshot_times=(), jumps=None, y_top=None,
                          tables=None, index0=0):
    """Euler paths of the killed diffusion with bridge absorption at 0.

    jumps, when given, is (rate, level): at Poisson arrival times the path
    jumps up by one unit whenever it sits at or above level (reflecting cap
    at y_top still applies).
    """
    if tables is None:
        tables = make_tables(spec, y_top=y_top)
    n_steps, dt = _resolve_steps(horizon, dt)
    snap_steps, snap_ts = _snap_steps(snapshot_times, dt, n_steps)

    y0 = np.asarray(y0, dtype=float)
    if y0.ndim == 0:
        y0 = np.full(n_paths, float(y0))
    if y0.shape != (n_paths,):
        raise ConfigError("y0 must be a scalar or one value per path")
    if np.any(y0 <= 0.0) or np.any(y0 > tables.y_top):
        raise ConfigError("start positions must lie in (0, y_top]")

    bases = path_bases(seed, KIND_PATH, index0, n_paths)
    jump_bases = path_bases(seed, KIND_JUMP, index0, n_paths)
    jump_rate, jump_level = (0.0, 0.0) if jumps is None else (float(jumps[0]),
                                                              float(jumps[1]))

    out_state = np.empty(n_paths, dtype=np.int64)
    out_time = np.empty(n_paths)
    out_y = np.empty(n_paths)
    out_snap = np.empty((n_paths, snap_steps.shape[0]))
    out_akill = np.empty(n_paths)
    absorb0 = np.int64(1 if getattr(spec, "absorbing_zero", True) else 0)
    _kernels.killed_paths(bases, y0, dt, n_steps, tables.du, tables.sig,
                          tables.dri, tables.kap, tables.y_top, absorb0,
                          snap_steps, jump_bases, jump_rate, jump_level,
                          out_state, out_time, out_y, out_snap, out_akill)
    return PathsResult(state=out_state, time=out_time, y_final=out_y,
                       snapshots=out_snap, snapshot_times=snap_ts,
                       dt=dt, n_steps=n_steps, killing_clock=out_akill)


def sample_nodes(y_nodes, weights, n_paths, seed, index0=0):
    """Deterministic draw of start positions from node weights (inverse CDF
    on the init stream, one uniform per path)."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or w.sum() <= 0:
        raise ConfigError("weights must be nonnegative with positive mass")
    cdf = np.cumsum(w) / w.sum()
    bases = path_bases(seed, KIND_INIT, index0, n_paths)
    u = uniform_at(bases, np.zeros(n_paths, dtype=np.uint64))
    idx = np.searchsorted(cdf, u)
    idx = np.minimum(idx, len(w) - 1)
    return np.asarray(y_nodes, dtype=float)[idx]


def chain_rates(gen):
    """(p_up, hold_mean, kill_rate) of the birth-death walk matching a
    discretized generator: up with probability d-/(d- + d+), mean holding
    time m_i d- d+/(d- + d+), killed at rate k_i/m_i while holding.  The top
    node is reflecting (never moves up, one-sided holding time)."""
    x = gen.x_nodes
    m = gen.m_nodes
    dm = np.concatenate([[x[0]], np.diff(x)])
    dp = np.concatenate([np.diff(x), [np.inf]])
    top = ~np.isfinite(dp)
    dps = np.where(top, 1.0, dp)
    p_up = np.where(top, 0.0, dm / (dm + dps))
    hold = np.where(top, m * dm, m * dm * dps / (dm + dps))
    kill = gen.k_nodes / m
    return p_up, hold, kill


@dataclass
class ChainResult:
    state: np.ndarray
    time: np.ndarray
    i_final: np.ndarray
    snapshots: np.ndarray
    snapshot_times: np.ndarray

    @property
    def alive(self):
        return self.state == _kernels.ALIVE

    @property
    def budget_exceeded(self):
        return self.state == _kernels.BUDGET


def simulate_chain(p_up, hold_mean, kill_rate, i0, horizon, n_paths, seed,
                   snapshot_times=(), max_events=2_000_000, index0=0):
    """Event-driven walk on 0..N-1; state -1 move from 0 is absorption."""
    p_up = np.ascontiguousarray(p_up, dtype=float)
    hold_mean = np.ascontiguousarray(hold_mean, dtype=float)
    kill_rate = np.ascontiguousarray(kill_rate, dtype=float)
    i0 = np.asarray(i0, dtype=np.int64)
    if i0.ndim == 0:
        i0 = np.full(n_paths, int(i0), dtype=np.int64)
    snap_ts = np.asarray(snapshot_times, dtype=float)
    bases = path_bases(seed, KIND_PATH, index0, n_paths)
    out_state = np.empty(n_paths, dtype=np.int64)
    out_time = np.empty(n_paths)
    out_i = np.empty(n_paths, dtype=np.int64)
    out_snap = np.empty((n_paths, snap_ts.shape[0]), dtype=np.int64)
    _kernels.chain_paths(bases, i0, p_up, hold_mean, kill_rate, float(horizon),
                         snap_ts, int(max_events), out_state, out_time, out_i,
                         out_snap)
    if np.any(out_state == _kernels.BUDGET):
        raise NumericError("chain event budget exhausted; raise max_events")
    return ChainResult(state=out_state, time=out_time, i_final=out_i,
                       snapshots=out_snap, snapshot_times=snap_ts)


@dataclass
class ComingDownResult:
    x0: np.ndarray          # natural-scale start levels
    y0: np.ndarray          # the same levels in the original coordinate
    prob: np.ndarray        # P(T_0 < t, survives killing)
    se: np.ndarray
    tail_bound: float       # bound on mass ignored above the truncation top
    n_cells: int


def coming_down_probability(spec, t, x, n_paths=20000, seed=0, rel_cell=0.02,
                            top_factor=4.0, tail_tol=0.01, x_floor=None,
                            x_top=None):
    """P_x(the path reaches 0 before time t and before the killing clock).

    Computed through the local-time representation: in natural scale the
    time to reach 0 from level x is the speed-measure integral of the
    local-time field, a squared Bessel process of dimension 2 below x and
    of dimension 0 above; killing enters as exp of minus the same field
    integrated against the killing measure.  Coupling: every start level
    runs on the same noise, so the returned probabilities are monotone
    nonincreasing in the start level path by path.  x may be a scalar or
    an array, in the original coordinate; inf is allowed and uses the
    everywhere-dimension-2 limit of the field.

    The level grid is geometric (relative cell rel_cell) between x_floor
    (default: 1e-6 times the lowest start; raise it to probe truncation
    sensitivity when the killing measure diverges at 0) and a truncation
    top: x_top when given (natural-scale units), else the top of the
    measure support, else top_factor times the highest start.  Starts at
    inf with unbounded measures and no x_top are refused.  The ignored
    contribution above the top is bounded per path from the still-positive
    field values and the first moments of m + k beyond the top, and the
    run aborts when that bound exceeds tail_tol.
    """
    ns = natural_scale_form(spec)
    s = spec.scale
    base_m = ns.speed.transform[0] if ns.speed.transform else ns.speed
    base_k = ns.killing.transform[0] if ns.killing.transform else ns.killing

    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x <= 0.0) or np.any(np.isnan(x)):
        raise ConfigError("start levels must be positive (inf allowed)")
    finite = np.isfinite(x)
    x0s = np.full(x.shape, np.inf)
    x0s[finite] = np.asarray(s(x[finite]), dtype=float).reshape(-1)
    if not np.all(np.isfinite(x0s[finite])):
        raise NumericError("scale positions overflow at the requested starts")

    # mass and first moment of the representation measures beyond a
    # candidate top, for the per-path truncation bound below; the plain
    # first moment over-counts the centered one, which only pads the bound
    # (the stored measures are twice the representation ones, hence the /2)
    def _tail_moments(mu, hi):
        m0 = integrate(mu, PowerWeight(0.0), (hi, np.inf))
        m1 = integrate(mu, PowerWeight(1.0), (hi, np.inf))
        if m0.converged and m1.converged:
            return 0.5 * max(m0.value, 0.0), 0.5 * max(m1.value, 0.0)
        return np.inf, np.inf

    sup_edge = max(ns.speed.support[1], ns.killing.support[1])
    if x_top is not None:
        x_hi = float(x_top)
    elif np.isfinite(sup_edge):
        x_hi = float(sup_edge)
    elif finite.all():
        x_hi = float(x0s.max()) * float(top_factor)
    else:
        # a start at inf with unbounded measure support: push the top out
        # until the expected contribution beyond it (field mean 2*top at
        # the cut, linear growth past it) drops under the tolerance.  The
        # ladder walks in the original coordinate: scale positions blow up
        # so fast that doubling x would crawl.  Whether the tail moments
        # are finite does not depend on the cut, so one divergent reading
        # settles the unbounded-mass case.
        seed_hi = float(top_factor) * (float(x0s[finite].max())
                                       if finite.any() else 1.0)
        yk = max(float(np.asarray(s.inv(seed_hi)).reshape(())), 1e-6)
        cands = []
        for k in range(64):
            xv = float(np.asarray(s(np.array([yk])), dtype=float)[0])
            if not np.isfinite(xv) or xv > 1e290:
                break
            if xv >= seed_hi:
                cands.append(xv)
            yk *= 2.0
        if not cands:
            cands = [seed_hi]
        x_hi = None
        fallback = None
        for cand in cands:
            p0m, p1m = _tail_moments(ns.speed, cand)
            p0k, p1k = _tail_moments(ns.killing, cand)
            if not np.isfinite(p0m + p1m + p0k + p1k):
                break
            fallback = cand
            apriori = ((2.0 * cand * p0m + 2.0 * p1m) / t
                       + (2.0 * cand * p0k + 2.0 * p1k))
            if apriori < 0.5 * tail_tol:
                x_hi = cand
                break
        if x_hi is None:
            if fallback is None:
                raise NumericError("truncate measure support: a start at "
                                   "inf needs x_top, or measure tails with "
                                   "finite first moments")
            x_hi = fallback  # the per-path bound below still arbitrates
    if np.any(x0s[finite] >= x_hi):
        raise ConfigError("finite starts must lie below the truncation top")

    x_min = float(x0s[finite].min()) if finite.any() else x_hi
    x_lo = x_min * 1e-6 if x_floor is None else float(x_floor)
    if not 0.0 < x_lo < x_min:
        raise ConfigError("x_floor must sit strictly below the lowest start")

    # geometric level ladder, full resolution through the start region and
    # coarser (8x ratio) beyond it: cells out there only feed the tail of
    # the clock for a start at inf, where the field mean is linear anyway
    x_mid = x_hi if not finite.any() else \
        min(x_hi, float(top_factor) * float(x0s[finite].max()))
    n_geo = int(math.ceil(math.log(x_mid / x_lo) / math.log1p(rel_cell)))
    ladder = x_lo * np.power(1.0 + rel_cell, np.arange(n_geo + 1))
    ladder[-1] = x_mid
    if x_mid < x_hi:
        n_far = int(math.ceil(math.log(x_hi / x_mid)
                              / math.log1p(8.0 * rel_cell)))
        far = x_mid * np.power(1.0 + 8.0 * rel_cell, np.arange(1, n_far + 1))
        far[-1] = x_hi
        ladder = np.concatenate([ladder, far])
    edges = np.unique(np.concatenate([[0.0], ladder, x0s[finite]]))
    widths = np.diff(edges)

    # hat weights of the speed and killing measures per cell, in the
    # convention where standard BM has speed measure = Lebesgue (the stored
    # measures carry twice that; the representation needs the plain one)
    y_edges = np.asarray(s.inv(edges), dtype=float)
    y_edges[0] = 0.0
    m0, m1 = _interval_masses(base_m, s, y_edges)
    k0, k1 = _interval_masses(base_k, s, y_edges)
    lo, hi = edges[:-1], edges[1:]
    with np.errstate(invalid="ignore"):
        am = (hi * m0 - m1) / widths / 2.0
        bm = (m1 - lo * m0) / widths / 2.0
        ak = (hi * k0 - k1) / widths / 2.0
        bk = (k1 - lo * k0) / widths / 2.0
    for arr in (am, bm, ak, bk):
        arr[~np.isfinite(arr)] = 0.0
        np.maximum(arr, 0.0, out=arr)
    am[0] = 0.0   # the field vanishes at 0; the falling hat there may sit on
    ak[0] = 0.0   # an infinite measure but carries no contribution

    # coalesce runs of weightless cells (densities underflow far out): the
    # exact cell transition composes, so one wide cell is the same law as
    # the run, and start levels stay pinned as edges
    loaded = (am + bm + ak + bk) > 0.0
    edge_keep = np.zeros(edges.shape[0], dtype=bool)
    edge_keep[0] = edge_keep[-1] = True
    edge_keep[:-1] |= loaded
    edge_keep[1:] |= loaded
    if finite.any():
        edge_keep[np.searchsorted(edges, x0s[finite])] = True
    if not edge_keep.all():
        kept = np.nonzero(edge_keep)[0]
        new_cell = np.searchsorted(kept, np.arange(widths.shape[0]),
                                   side="right") - 1
        n_new = kept.shape[0] - 1

        def _agg(w):
            out = np.zeros(n_new)
            np.add.at(out, new_cell, w)
            return out

        am, bm, ak, bk = _agg(am), _agg(bm), _agg(ak), _agg(bk)
        edges = edges[kept]
        widths = np.diff(edges)

    mom0_m, mom1_m = _tail_moments(ns.speed, x_hi)
    mom0_k, mom1_k = _tail_moments(ns.killing, x_hi)

    bases = path_bases(seed, KIND_PATH, 0, n_paths)
    out_sm = np.empty(n_paths)
    out_sk = np.empty(n_paths)
    out_alive = np.empty(n_paths, dtype=bool)
    out_ztop = np.empty(n_paths)

    prob = np.empty(x.shape[0])
    se = np.empty(x.shape[0])
    tail_bound = 0.0
    for j, x0 in enumerate(x0s):
        n_below = (widths.shape[0] if not np.isfinite(x0)
                   else int(np.searchsorted(edges, x0)))
        _kernels.besq_paths(bases, n_below, widths, am, bm, ak, bk,
                            out_sm, out_sk, out_alive, out_ztop)
        vals = np.where(out_sm < t, np.exp(-out_sk), 0.0)
        prob[j] = float(vals.mean())
        se[j] = float(vals.std(ddof=1) / math.sqrt(n_paths))
        # a path whose field died below the top contributes exactly zero
        # beyond it; truncation error lives on paths still alive at the
        # top AND counted as arrivals.  Each such path's contribution can
        # be wrong by at most its own weight, scaled down by the expected
        # continuation integrals: E[field] beyond the top is ztop (plus a
        # linear-growth term when the start is above the top), so the
        # missing speed integral can flip the arrival indicator with
        # probability <= dm/(t - sm) and the missing killing integral
        # shrinks the weight by at most 1 - exp(-dk)
        a = out_alive & (vals > 0.0)
        if a.any():
            grow = 0.0 if np.isfinite(x0) else 2.0
            dm = out_ztop[a] * mom0_m + grow * mom1_m
            dk = out_ztop[a] * mom0_k + grow * mom1_k
            with np.errstate(over="ignore", invalid="ignore"):
                flip = np.minimum(1.0, dm / np.maximum(t - out_sm[a], 1e-300))
                shrink = np.where(np.isfinite(dk), -np.expm1(-dk), 1.0)
            err = vals[a] * np.minimum(1.0, np.nan_to_num(flip, nan=1.0)
                                       + shrink)
            tail_bound = max(tail_bound, float(err.sum()) / n_paths)
    if tail_bound > tail_tol:
        raise NumericError("truncated tail too heavy; raise x_top or "
                           "top_factor, or shorten the horizon")
    return ComingDownResult(x0=x0s, y0=x, prob=prob, se=se,
                            tail_bound=float(tail_bound),
                            n_cells=widths.shape[0])


@dataclass
class QProcessResult:
    snapshots: np.ndarray
    snapshot_times: np.ndarray
    stuck_fraction: float
    dt: float


def simulate_qprocess(spec, eta_fn, y0, horizon, dt, n_paths, seed,
                      snap_every=None, y_top=None, tables=None, index0=0):
    """Surviving-forever paths by eta-tilted rejection of killed steps."""
    if tables is None:
        tables = make_tables(spec, y_top=y_top)
    n_steps, dt = _resolve_steps(horizon, dt)
    if snap_every is None:
        snap_every = max(1, n_steps // 64)
    n_snap = n_steps // snap_every

    y0 = np.asarray(y0, dtype=float)
    if y0.ndim == 0:
        y0 = np.full(n_paths, float(y0))
    if np.any(y0 <= 0.0) or np.any(y0 > tables.y_top):
        raise ConfigError("start positions must lie in (0, y_top]")

    etab = eta_table(eta_fn, tables)
    eta_max = float(etab.max())
    if eta_max <= 0.0:
        raise ConfigError("eta table is identically zero")

    bases = path_bases(seed, KIND_PATH, index0, n_paths)
    out_snap = np.empty((n_paths, n_snap))
    out_stuck = np.zeros(n_paths, dtype=np.int64)
    _kernels.qprocess_paths(bases, y0, dt, n_steps, tables.du, tables.sig,
                            tables.dri, tables.kap, etab, eta_max,
                            tables.y_top, int(snap_every), out_snap, out_stuck)
    ts = dt * snap_every * np.arange(1, n_snap + 1)
    stuck = float(out_stuck.sum()) / (n_paths * n_steps)
    return QProcessResult(snapshots=out_snap, snapshot_times=ts,
                          stuck_fraction=stuck, dt=dt)


# ---------------------------------------------------------------------------
# single-path views


@dataclass
class AbsorptionOutcome:
    """How one path ended: alive at the horizon, hit 0, or killed."""

    kind: str            # "alive" | "continuous" | "killed"
    time: float          # absorption time; the horizon when alive
    final_state: float   # state at the horizon when alive, else 0.0


@dataclass
class PathSample:
    """One trajectory with its outcome and final killing-clock value.

    states are strictly positive before the absorption time and frozen at
    0 from the absorption time on; killing_clock_final is the accumulated
    integral of the killing rate along the path at termination.
    """

    times: np.ndarray
    states: np.ndarray
    outcome: AbsorptionOutcome
    killing_clock_final: float


_KIND_OF_STATE = {_kernels.ALIVE: "alive", _kernels.HIT_ZERO: "continuous",
                  _kernels.KILLED: "killed"}


def _path_sample_from_run(res, x0):
    state = int(res.state[0])
    kind = _KIND_OF_STATE[state]
    t_abs = float(res.time[0])
    grid = np.concatenate([[0.0], res.snapshot_times])
    vals = np.concatenate([[float(x0)], res.snapshots[0]])
    if kind == "alive":
        times, states = grid, np.nan_to_num(vals, nan=0.0)
        final = float(res.y_final[0])
    else:
        keep = grid < t_abs
        times = np.concatenate([grid[keep], [t_abs],
                                grid[~keep & (grid <= res.n_steps * res.dt)]])
        states = np.concatenate([vals[keep],
                                 np.zeros(times.shape[0] - int(keep.sum()))])
        final = 0.0
    outcome = AbsorptionOutcome(kind=kind, time=t_abs, final_state=final)
    return PathSample(times=times, states=states, outcome=outcome,
                      killing_clock_final=float(res.killing_clock[0]))


def simulate_sde_path(spec, x0, horizon, dt, seed, index=0, jumps=None,
                      y_top=None, tables=None):
    """One Euler path of the killed SDE, recorded at every step.

    Same kernel and same RNG stream layout as the ensemble runs: the path
    is bit-identical to member `index` of a simulate_killed_paths batch.
    """
    n_steps, dt = _resolve_steps(horizon, dt)
    snaps = dt * np.arange(1, n_steps + 1)
    res = simulate_killed_paths(spec, float(x0), horizon, dt, 1, seed,
                                snapshot_times=snaps, jumps=jumps,
                                y_top=y_top, tables=tables, index0=index)
    return _path_sample_from_run(res, x0)


def simulate_with_jumps(spec, x0, horizon, dt, seed, index=0, y_top=None,
                        tables=None, rate=1.0, level=1.0):
    """simulate_sde_path plus a rate-1 Poisson clock of unit upward jumps,
    active only while the path sits at or above `level`.

    The diffusion draws live on the same counters as the no-jump run, so a
    path that never reaches `level` reproduces it exactly.
    """
    return simulate_sde_path(spec, x0, horizon, dt, seed, index=index,
                             jumps=(rate, level), y_top=y_top, tables=tables)


def simulate_chain_path(spec, x0, horizon, grid, seed, index=0,
                        max_events=2_000_000):
    """One trajectory of the birth-death chain on an explicit level grid.

    The chain is the speed-measure discretization of the natural-scale
    diffusion: from an interior node the walk holds an exponential time
    with the node's mean, steps to a neighbor with the martingale split of
    the gaps, and is killed during a hold with probability set by the
    node's killing-to-speed mass ratio (conditionally exact inverse-CDF
    time).  Exit below the first node absorbs at 0; the top node reflects.
    """
    from .spectral import discretize_generator

    grid = np.asarray(grid, dtype=float)
    gen = discretize_generator(spec, y_nodes=grid)
    p_up, hold_mean, kill_rate = chain_rates(gen)
    x_nodes = gen.y_nodes
    if not (x_nodes[0] <= x0 <= x_nodes[-1]):
        raise ConfigError("grid does not cover the start position")
    i = int(np.argmin(np.abs(x_nodes - float(x0))))

    base = path_bases(seed, KIND_PATH, index, 1)[0]
    times = [0.0]
    states = [float(x_nodes[i])]
    t = 0.0
    kind = "alive"
    clock = 0.0
    for ev in range(max_events):
        if t >= horizon:
            break
        e = np.uint64(3 * ev)
        hold = float(hold_mean[i]) * float(exponential_at(base, e))
        rate = float(kill_rate[i])
        dwell = min(hold, horizon - t)
        if rate > 0.0:
            u_kill = float(uniform_at(base, e + np.uint64(2)))
            if u_kill < -math.expm1(-rate * dwell):
                # the same uniform decides whether and when: the killing
                # time within the dwell is the inverse CDF at u_kill
                tau = -math.log1p(-u_kill) / rate
                clock += rate * tau
                t += tau
                kind = "killed"
                times.append(t)
                states.append(0.0)
                break
        clock += rate * dwell
        if t + hold > horizon:
            t = horizon
            break
        t += hold
        u_dir = float(uniform_at(base, e + np.uint64(1)))
        if u_dir < float(p_up[i]):
            i += 1
        else:
            i -= 1
        if i < 0:
            kind = "continuous"
            times.append(t)
            states.append(0.0)
            break
        times.append(t)
        states.append(float(x_nodes[i]))
    else:
        raise NumericError("event budget exhausted before the horizon")

    if kind == "alive":
        times.append(horizon)
        states.append(float(x_nodes[i]))
        final = float(x_nodes[i])
        t_out = horizon
    else:
        final = 0.0
        t_out = t
    outcome = AbsorptionOutcome(kind=kind, time=t_out, final_state=final)
    return PathSample(times=np.asarray(times), states=np.asarray(states),
                      outcome=outcome, killing_clock_final=clock)


@dataclass
class HittingCheck:
    estimate: float
    se: float
    ci_low: float
    ci_high: float
    n_paths: int


def feller_hitting_check(x, t, n_paths, seed, dt=5e-4):
    """Engine self-test: P_x(T_0 <= t) for dZ = sqrt(Z) dW.

    The exact value is exp(-2x/t); the returned estimate carries bridge
    absorption and should sit within Monte Carlo error of it when the
    stepper is unbiased.  The 95% CI is the normal approximation.
    """
    from .measures import spec_from_sde

    spec = spec_from_sde(sigma=lambda y: np.sqrt(np.maximum(y, 0.0)),
                         drift=lambda y: np.zeros_like(np.asarray(y, float)),
                         kill_rate=None, label="feller",
                         y_max=4.0 * max(1.0, float(x)))
    res = simulate_killed_paths(spec, float(x), float(t), dt, int(n_paths),
                                seed)
    hits = res.hit_zero
    p = float(hits.mean())
    se = math.sqrt(max(p * (1.0 - p), 1e-300) / n_paths)
    return HittingCheck(estimate=p, se=se, ci_low=p - 1.96 * se,
                        ci_high=p + 1.96 * se, n_paths=int(n_paths))

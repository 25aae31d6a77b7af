"""Conditioned-ensemble evolution and quasi-stationary estimators.

Two routes to the law conditioned on survival:

  fv            N interacting particles; a particle that dies is reborn at
                the position of a surviving one (chosen uniformly), so the
                ensemble size stays N.  Rebirth happens at slice ends (the
                slices tile consecutive snapshot times), dead particles
                freeze in between; keep snapshots dense enough that the
                freeze window times the kill rate stays small.
  renormalize   independent killed paths; the conditional law at t is the
                empirical law of the survivors.  Unbiased but the sample
                shrinks like e^{-lambda0 t}.

Estimators on top: histogram law with a time average over a settled window,
survival-slope decay rate over a self-selected quasi-stationary window
(fit starts once the conditional law stops moving, ends while survivors
remain), the survival profile route to the eigenfunction
(e^{lambda0 t} P_y(alive at t), normalized to ensemble-average one), an
exponential fit of TV decay curves, and single-path surviving-forever
dynamics driven by an eigenfunction profile.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from ._rng import (KIND_PATH, KIND_RESAMPLE, exponential_at, path_bases,
                   uniform_at)
from .engine import (PathsResult, PathSample, AbsorptionOutcome, Tables,
                     make_tables, sample_nodes, simulate_killed_paths)
from .engine import simulate_qprocess as _qprocess_ensemble
from .errors import ConfigError, NumericError

__all__ = [
    "ParticleEnsemble", "EnsembleResult", "evolve_conditioned_ensemble",
    "QsdEstimate", "estimate_qsd", "bin_weights", "tv_distance",
    "Lambda0Estimate", "lambda0_from_survival", "estimate_lambda0",
    "EtaEstimate", "estimate_eta", "eta_profile_fn", "RateFit",
    "fit_convergence_rate", "simulate_qprocess", "sqrt_edges",
]


@dataclass
class ParticleEnsemble:
    """One time slice of a conditioned particle system.

    ancestral_weights carry the survival renormalization factor picked up
    so far (uniform across members: n_started / n_alive in renormalize
    mode, one in fv mode where rebirth keeps the count constant);
    generation_log counts resampling events up to this time.
    """

    positions: np.ndarray
    time: float
    ancestral_weights: np.ndarray
    generation_log: int = 0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.ancestral_weights = np.asarray(self.ancestral_weights,
                                            dtype=float)
        if self.positions.size == 0 or np.any(self.positions <= 0.0):
            raise NumericError("ensemble positions must be strictly positive")
        w = self.ancestral_weights
        if w.shape != self.positions.shape or np.any(w <= 0.0) \
                or not np.all(np.isfinite(w)):
            raise NumericError("ensemble weights must be finite and positive")


@dataclass
class EnsembleResult:
    """Positions of the conditioned ensemble at each snapshot time.

    positions[j] holds the members alive at snapshot j (always the full
    ensemble in fv mode).  n_alive tracks the surviving count in
    renormalize mode and the (constant) ensemble size in fv mode;
    rebirths counts fv resampling events per slice.
    """

    times: np.ndarray
    positions: list
    n_alive: np.ndarray
    method: str
    rebirths: Optional[np.ndarray] = None
    n_particles: int = 0

    def ensemble_at(self, j):
        """The conditioned system at snapshot index j as a ParticleEnsemble."""
        j = int(np.arange(len(self.times))[j])  # normalize negative indices
        if self.method == "fv":
            w = np.ones(self.positions[j].shape[0])
            gens = int(self.rebirths[:j + 1].sum())
        else:
            w = np.full(self.positions[j].shape[0],
                        self.n_particles / max(int(self.n_alive[j]), 1))
            gens = 0
        return ParticleEnsemble(positions=self.positions[j],
                                time=float(self.times[j]),
                                ancestral_weights=w, generation_log=gens)

    def final_ensemble(self):
        return self.ensemble_at(len(self.times) - 1)

    def rebirth_rate(self, t_from=0.0):
        """Rebirth events per particle per unit time from t_from on; at
        quasi-stationarity this estimates the decay rate."""
        if self.method != "fv":
            raise ConfigError("rebirth rate only exists for the fv method")
        t = np.concatenate([[0.0], self.times])
        use = self.times >= t_from
        if not use.any():
            raise ConfigError("t_from beyond the last snapshot")
        events = float(self.rebirths[use].sum())
        span = float(np.diff(t)[use].sum())
        return events / (self.n_particles * span)


def _resolve_mu0(mu0, n_particles, seed):
    """Start positions from a point, an array, or (nodes, weights)."""
    if isinstance(mu0, tuple) and len(mu0) == 2:
        nodes, weights = mu0
        return sample_nodes(nodes, weights, n_particles, seed)
    arr = np.asarray(mu0, dtype=float)
    if arr.ndim == 0:
        return np.full(n_particles, float(arr))
    if arr.shape != (n_particles,):
        raise ConfigError("mu0 must be a point, one position per particle, "
                          "or a (nodes, weights) pair")
    return arr.copy()


def evolve_conditioned_ensemble(spec, mu0, t_end, dt, n_particles, seed,
                                snapshot_times=None, mode="fv", y_top=None,
                                tables=None, jumps=None):
    """Evolve the conditioned law by particles; see the module docstring.

    mu0 is a point mass (scalar), explicit positions (one per particle),
    or a (nodes, weights) pair sampled on the init stream.  mode is
    "fleming_viot"/"fv" or "renormalize".  jumps (rate, level) ride along
    in renormalize mode only; the interacting system has no jump support.
    """
    if mode == "fleming_viot":
        mode = "fv"
    if jumps is not None and mode == "fv":
        raise ConfigError("the fv system does not support jump models; "
                          "use renormalize")
    if n_particles < 2:
        raise ConfigError("need at least two particles")
    if snapshot_times is None:
        n_snap = min(64, max(1, int(round(t_end / dt))))
        snapshot_times = t_end * np.arange(1, n_snap + 1) / n_snap
    y0 = _resolve_mu0(mu0, n_particles, seed)

    if mode == "renormalize":
        res = simulate_killed_paths(spec, y0, t_end, dt, n_particles, seed,
                                    snapshot_times=snapshot_times,
                                    jumps=jumps, y_top=y_top, tables=tables)
        positions = []
        n_alive = np.zeros(len(res.snapshot_times), dtype=np.int64)
        for j in range(len(res.snapshot_times)):
            col = res.snapshots[:, j]
            alive = col[~np.isnan(col)]
            if alive.size == 0:
                raise NumericError("ensemble extinct; increase n_particles")
            positions.append(alive.copy())
            n_alive[j] = alive.size
        return EnsembleResult(times=res.snapshot_times, positions=positions,
                              n_alive=n_alive, method=mode,
                              n_particles=n_particles)
    if mode != "fv":
        raise ConfigError("mode must be fleming_viot (fv) or renormalize")

    if tables is None:
        tables = make_tables(spec, y_top=y_top)
    n_steps = int(round(t_end / dt))
    dt = t_end / n_steps
    snap_ts = np.asarray(snapshot_times, dtype=float)
    if snap_ts.size == 0 or np.any(np.diff(snap_ts) <= 0):
        raise ConfigError("fv needs strictly increasing snapshot times")
    slice_edges = np.concatenate([[0], np.rint(snap_ts / dt).astype(np.int64)])
    if slice_edges[1] < 1 or slice_edges[-1] > n_steps:
        raise ConfigError("snapshot times must lie inside the horizon")
    if np.any(np.diff(slice_edges) < 1):
        raise ConfigError("snapshot times collide on the step grid")

    y = y0.copy()
    if np.any(y <= 0.0) or np.any(y > tables.y_top):
        raise ConfigError("start positions must lie in (0, y_top]")

    bases = path_bases(seed, KIND_PATH, 0, n_particles)
    rs_bases = path_bases(seed, KIND_RESAMPLE, 0, n_particles)
    absorb0 = np.int64(1 if getattr(spec, "absorbing_zero", True) else 0)
    a_kill = np.zeros(n_particles)
    e_kill = exponential_at(bases, np.full(n_particles, _kernels.KILL_CTR,
                                           dtype=np.uint64))
    alive = np.ones(n_particles, dtype=bool)
    rebirth_count = np.zeros(n_particles, dtype=np.int64)
    out_state = np.empty(n_particles, dtype=np.int64)

    positions = []
    rebirths = np.zeros(len(snap_ts), dtype=np.int64)
    for j in range(len(snap_ts)):
        step0 = int(slice_edges[j])
        n_sl = int(slice_edges[j + 1] - slice_edges[j])
        _kernels.fv_slice(bases, y, a_kill, e_kill, alive, step0, n_sl, dt,
                          tables.du, tables.sig, tables.dri, tables.kap,
                          tables.y_top, absorb0, out_state)
        dead = np.flatnonzero(~alive)
        donors = np.flatnonzero(alive)
        if donors.size == 0:
            raise NumericError("ensemble extinct; increase n_particles")
        for i in dead:
            u = float(uniform_at(rs_bases[i:i + 1],
                                 np.array([rebirth_count[i]], dtype=np.uint64))[0])
            y[i] = y[donors[min(int(u * donors.size), donors.size - 1)]]
            a_kill[i] = 0.0
            e_kill[i] = float(exponential_at(
                bases[i:i + 1],
                np.array([_kernels.KILL_CTR + np.uint64(1)
                          + np.uint64(rebirth_count[i])], dtype=np.uint64))[0])
            rebirth_count[i] += 1
            alive[i] = True
        rebirths[j] = dead.size
        positions.append(y.copy())
    return EnsembleResult(times=snap_ts, positions=positions,
                          n_alive=np.full(len(snap_ts), n_particles,
                                          dtype=np.int64),
                          method="fv", rebirths=rebirths,
                          n_particles=n_particles)


def sqrt_edges(y_top, n_bins):
    """Bin edges uniform in sqrt(y), matching the engine's resolution."""
    u = np.linspace(0.0, math.sqrt(float(y_top)), n_bins + 1)
    return u * u


@dataclass
class QsdEstimate:
    """Histogram law on a grid, optionally bundled with the other
    quasi-stationary quantities estimated from the same model."""

    edges: np.ndarray
    alpha_hist: np.ndarray
    n_samples: int
    t_window: tuple
    lambda0: Optional["Lambda0Estimate"] = None
    eta_samples: Optional[list] = None
    tv_curve: Optional[list] = None


def estimate_qsd(ensemble, edges, t_from=None):
    """Histogram of the conditioned law, time-averaged over snapshots at or
    after t_from (default: the second half of the recorded window).  Each
    snapshot is normalized before averaging so shrinking renormalize
    ensembles stay comparable."""
    edges = np.asarray(edges, dtype=float)
    if t_from is None:
        t_from = 0.5 * float(ensemble.times[-1])
    use = np.flatnonzero(ensemble.times >= t_from)
    if use.size == 0:
        raise ConfigError("t_from is beyond the last snapshot")
    acc = np.zeros(edges.shape[0] - 1)
    n_samples = 0
    for j in use:
        pos = ensemble.positions[j]
        hist, _ = np.histogram(pos, bins=edges)
        tot = hist.sum()
        if tot == 0:
            raise NumericError("snapshot with no members inside the bins")
        acc += hist / tot
        n_samples += pos.size
    probs = acc / acc.sum()
    return QsdEstimate(edges=edges, alpha_hist=probs, n_samples=n_samples,
                       t_window=(float(ensemble.times[use[0]]),
                                 float(ensemble.times[use[-1]])))


def bin_weights(y_points, weights, edges):
    """Aggregate point weights (a discrete law) onto histogram bins."""
    y_points = np.asarray(y_points, dtype=float)
    w = np.asarray(weights, dtype=float)
    idx = np.searchsorted(edges, y_points, side="right") - 1
    idx = np.clip(idx, 0, len(edges) - 2)
    out = np.zeros(len(edges) - 1)
    np.add.at(out, idx, w)
    return out / out.sum()


def tv_distance(p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ConfigError("distributions must share their bins")
    return 0.5 * float(np.abs(p - q).sum())


@dataclass
class Lambda0Estimate:
    value: float
    ci_low: float
    ci_high: float
    window: tuple
    n_times: int
    survival: np.ndarray
    times: np.ndarray


def lambda0_from_survival(result, t_from=None, t_to=None, min_alive=30,
                          n_boot=200, boot_seed=0):
    """Decay rate from the survival curve of a killed-path run.

    Fits -d/dt log S(t) by weighted least squares over snapshot times in
    [t_from, t_to] that still hold at least min_alive paths (weights
    proportional to the inverse variance of log S).  The CI is a path
    bootstrap: resample paths, refit, take the 2.5/97.5 percentiles.
    """
    if not isinstance(result, PathsResult):
        raise ConfigError("lambda0_from_survival wants a killed-path result")
    times = result.snapshot_times
    alive_mat = ~np.isnan(result.snapshots)
    n_paths = alive_mat.shape[0]
    counts = alive_mat.sum(axis=0)
    S = counts / n_paths
    if t_from is None:
        t_from = 0.5 * float(times[-1])
    if t_to is None:
        t_to = float(times[-1])
    sel = (times >= t_from) & (times <= t_to) & (counts >= min_alive)
    if sel.sum() < 4:
        raise NumericError("fewer than 4 usable survival points in the "
                           "window; lengthen the run or add paths")
    t_fit = times[sel]

    def _slope(surv):
        w = counts[sel] * surv / np.maximum(1.0 - surv, 1.0 / n_paths)
        A = np.vstack([t_fit, np.ones_like(t_fit)]).T
        W = np.sqrt(w)
        coef, *_ = np.linalg.lstsq(A * W[:, None], np.log(surv) * W,
                                   rcond=None)
        return -coef[0]

    lam = _slope(S[sel])
    rng = np.random.default_rng(boot_seed)
    lams = np.empty(n_boot)
    cols = alive_mat[:, sel]
    for b in range(n_boot):
        idx = rng.integers(0, n_paths, n_paths)
        sb = cols[idx].mean(axis=0)
        sb = np.maximum(sb, 1.0 / n_paths)
        lams[b] = _slope(sb)
    lo, hi = np.percentile(lams, [2.5, 97.5])
    return Lambda0Estimate(value=float(lam), ci_low=float(lo),
                           ci_high=float(hi),
                           window=(float(t_fit[0]), float(t_fit[-1])),
                           n_times=int(sel.sum()), survival=S, times=times)


def estimate_lambda0(spec, x0, t_grid, n_paths, dt, seed, min_alive=100,
                     settle_tv=0.05, n_bins=48, y_top=None, tables=None,
                     n_boot=200, jumps=None):
    """Decay rate with a self-selected quasi-stationary window.

    Runs independent killed paths from x0 with snapshots on t_grid.  The
    fit window starts at the first snapshot whose conditional law sits
    within settle_tv total variation of the conditional law one unit of
    time earlier (the limit defining the rate kicks in only past the
    mixing transient) and ends while at least min_alive paths survive.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size < 6 or np.any(np.diff(t_grid) <= 0):
        raise ConfigError("t_grid must be increasing with at least 6 times")
    if tables is None:
        tables = make_tables(spec, y_top=y_top)
    res = simulate_killed_paths(spec, x0, float(t_grid[-1]), dt, n_paths,
                                seed, snapshot_times=t_grid, jumps=jumps,
                                tables=tables)
    alive_mat = ~np.isnan(res.snapshots)
    counts = alive_mat.sum(axis=0)
    edges = sqrt_edges(tables.y_top, n_bins)

    hists = []
    for j in range(t_grid.size):
        col = res.snapshots[:, j]
        vals = col[alive_mat[:, j]]
        if vals.size == 0:
            hists.append(None)
            continue
        h, _ = np.histogram(vals, bins=edges)
        hists.append(h / h.sum())

    t_start = None
    for j in range(t_grid.size):
        i = int(np.searchsorted(t_grid, t_grid[j] - 1.0, side="right")) - 1
        if i < 0 or t_grid[j] - t_grid[i] < 0.5:
            continue
        if hists[j] is None or hists[i] is None:
            break
        if tv_distance(hists[j], hists[i]) < settle_tv:
            t_start = float(t_grid[j])
            break
    usable = counts >= min_alive
    if t_start is None or not usable.any() \
            or (t_grid[usable] >= t_start).sum() < 4:
        raise NumericError("horizon too long for n_paths")
    t_end = float(t_grid[usable].max())
    return lambda0_from_survival(res, t_from=t_start, t_to=t_end,
                                 min_alive=min_alive, n_boot=n_boot,
                                 boot_seed=seed)


@dataclass
class EtaEstimate:
    """Eigenfunction profile samples with their normalization record."""

    x: np.ndarray
    value: np.ndarray
    se: np.ndarray
    t_star: float
    scale: float = 1.0   # pre-normalization constant divided out

    @property
    def pairs(self):
        return list(zip(self.x.tolist(), self.value.tolist()))

    def __call__(self, yy):
        return eta_profile_fn(self.x, self.value)(yy)


def eta_profile_fn(xs, vals):
    """Profile samples as a function: monotone cubic between samples,
    linear through the origin below the smallest one (the eigenfunction is
    bounded by a multiple of x near 0), frozen at the last value above."""
    from scipy.interpolate import PchipInterpolator
    xs = np.asarray(xs, dtype=float)
    vals = np.asarray(vals, dtype=float)
    order = np.argsort(xs)
    xs, vals = xs[order], vals[order]
    if xs.size < 2:
        raise ConfigError("eta profile needs at least two sample points")
    pch = PchipInterpolator(xs, vals, extrapolate=False)
    x0, v0, v_top = xs[0], vals[0], vals[-1]

    def fn(yy):
        yy = np.asarray(yy, dtype=float)
        out = np.empty_like(yy)
        low = yy < x0
        high = yy > xs[-1]
        mid = ~(low | high)
        if np.any(mid):
            out[mid] = pch(yy[mid])
        if np.any(low):
            out[low] = v0 * np.maximum(yy[low], 0.0) / x0
        if np.any(high):
            out[high] = v_top
        return out

    return fn


def _alpha_average(alpha, fn):
    """Integral of a function against a histogram law (mid-bin rule)."""
    if isinstance(alpha, QsdEstimate):
        edges, probs = alpha.edges, alpha.alpha_hist
    else:
        edges, probs = alpha
    edges = np.asarray(edges, dtype=float)
    probs = np.asarray(probs, dtype=float)
    mids = 0.5 * (edges[:-1] + edges[1:])
    return float(np.sum(probs * fn(mids)))


def estimate_eta(spec, x_grid, t_star, n_paths, dt, seed, lambda0,
                 alpha=None, y_top=None, tables=None, jumps=None):
    """Survival profile route to the eigenfunction.

    eta(y) is proportional to e^{lambda0 t} P_y(t < absorption) once t is
    past the mixing time.  The profile is normalized so its average
    against alpha (a QsdEstimate or an (edges, probs) pair; by default a
    fresh conditioned ensemble at t_star from the middle of x_grid) equals
    one; the constant divided out is recorded on the estimate.
    """
    x_grid = np.asarray(x_grid, dtype=float)
    if tables is None:
        tables = make_tables(spec, y_top=y_top)
    vals = np.empty(x_grid.shape[0])
    ses = np.empty(x_grid.shape[0])
    tilt = math.exp(float(lambda0) * t_star)
    for i, yp in enumerate(x_grid):
        res = simulate_killed_paths(spec, float(yp), t_star, dt, n_paths,
                                    seed, jumps=jumps, tables=tables,
                                    index0=i * n_paths)
        p = float(res.alive.mean())
        vals[i] = tilt * p
        ses[i] = tilt * math.sqrt(max(p * (1.0 - p), 1.0 / n_paths) / n_paths)

    if alpha is None:
        mid = float(np.median(x_grid))
        ens = evolve_conditioned_ensemble(
            spec, mid, t_star, dt, max(1000, min(n_paths, 4000)), seed + 1,
            mode="renormalize" if jumps is not None else "fv",
            tables=tables, jumps=jumps)
        alpha = estimate_qsd(ens, sqrt_edges(tables.y_top, 48))
    if np.any(vals <= 0.0):
        raise NumericError("survival profile vanished at a grid point; "
                           "lower t_star or add paths")
    scale = _alpha_average(alpha, eta_profile_fn(x_grid, vals))
    if scale <= 0.0:
        raise NumericError("alpha average of the profile is not positive")
    return EtaEstimate(x=x_grid, value=vals / scale, se=ses / scale,
                       t_star=float(t_star), scale=float(scale))


@dataclass
class RateFit:
    """Exponential-decay fit gamma with its scale and diagnostics."""

    gamma: float
    C: float
    r2: float
    ci_low: float
    ci_high: float
    n_points: int
    window: tuple


def fit_convergence_rate(times, tv_values=None, noise_floor=None,
                         min_points=4):
    """Exponential-decay fit of total-variation distances.

    Accepts (times, values) arrays or a single curve of (t, tv) pairs.
    Uses only the window where the values still sit above the noise floor
    (below it the statistic flattens at its sampling plateau and would
    drag the slope toward zero); the default floor sits 25% above the
    smallest positive value.  The CI is the standard two-sigma band of
    the fitted slope.
    """
    if tv_values is None:
        pairs = np.asarray(times, dtype=float)
        if pairs.ndim != 2 or pairs.shape[1] != 2:
            raise ConfigError("a tv curve is a sequence of (t, tv) pairs")
        times, tv = pairs[:, 0], pairs[:, 1]
    else:
        times = np.asarray(times, dtype=float)
        tv = np.asarray(tv_values, dtype=float)
    if noise_floor is None:
        pos = tv[tv > 0.0]
        noise_floor = 1.25 * float(pos.min()) if pos.size else 0.0
    use = tv > noise_floor
    if use.sum() < min_points:
        raise NumericError("insufficient decay window")
    t_fit = times[use]
    logv = np.log(tv[use])
    A = np.vstack([t_fit, np.ones(t_fit.shape[0])]).T
    coef, *_ = np.linalg.lstsq(A, logv, rcond=None)
    fitted = A @ coef
    resid = logv - fitted
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((logv - logv.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    n = t_fit.shape[0]
    if n > 2:
        s2 = ss_res / (n - 2)
        sxx = float(np.sum((t_fit - t_fit.mean()) ** 2))
        se = math.sqrt(s2 / sxx) if sxx > 0 else math.inf
    else:
        se = 0.0
    gamma = -float(coef[0])
    return RateFit(gamma=gamma, C=float(math.exp(coef[1])), r2=r2,
                   ci_low=gamma - 2.0 * se, ci_high=gamma + 2.0 * se,
                   n_points=int(n),
                   window=(float(t_fit[0]), float(t_fit[-1])))


def simulate_qprocess(spec, eta_fn, lambda0, x0, horizon, dt, seed,
                      index=0, y_top=None, tables=None):
    """One path of the surviving-forever dynamics, as a PathSample.

    Steps propose killed-process transitions conditioned on survival and
    accept with probability proportional to eta at the proposal; the
    e^{lambda0 dt} tilt is a per-step constant that cancels in the
    rejection normalization, so lambda0 only documents which eigenvalue
    the profile belongs to.  The path never hits 0.
    """
    if tables is None:
        tables = make_tables(spec, y_top=y_top)
    probe = np.linspace(tables.du, tables.y_top, 256)
    eta_probe = np.asarray(eta_fn(probe), dtype=float)
    if np.any(~np.isfinite(eta_probe)) or np.any(eta_probe <= 0.0):
        raise NumericError("invalid eigenfunction")
    res = _qprocess_ensemble(spec, eta_fn, float(x0), horizon, dt, 1, seed,
                             snap_every=1, tables=tables, index0=index)
    times = np.concatenate([[0.0], res.snapshot_times])
    states = np.concatenate([[float(x0)], res.snapshots[0]])
    outcome = AbsorptionOutcome(kind="alive", time=float(times[-1]),
                                final_state=float(states[-1]))
    return PathSample(times=times, states=states, outcome=outcome,
                      killing_clock_final=math.nan)

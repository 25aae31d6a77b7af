"""Spectral route: discretized generator, principal eigenpair, kernels.

The diffusion in natural scale is (d/dm)(d/dx) - dk/dm on (0, x_top] with an
absorbing boundary at 0 and a reflecting cap at x_top.  Discretization is the
lumped P1 scheme on a nonuniform grid x_0 < ... < x_{n-1}:

    (L f)_i = [ (f_{i+1}-f_i)/dx_i^+ - (f_i-f_{i-1})/dx_i^- ] / m_i
              - (k_i/m_i) f_i

with f_{-1} = 0 at the absorbing edge and the up-term dropped on the last
(reflecting) node.  The node weights m_i, k_i are hat-function integrals of
the speed and killing measures, not plain cell masses: near an exit boundary
the speed measure itself may be infinite while its first moment is finite,
and the hat weight of the first node only sees the first moment.  With these
weights -L is symmetric w.r.t. the m inner product, so the principal pair
comes from a symmetric tridiagonal matrix.

Grid nodes sit at y_i = ((i+1) du)^2 in the original coordinate (uniform in
u = sqrt(y), matching the path-engine tables) and are mapped through the
scale function.  The grid is capped where the scale exponent reaches ~560,
beyond which x differences leave float range; the measure mass out there is
astronomically small for every model with an entrance boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate as _sciint
from scipy.interpolate import PchipInterpolator
from scipy.linalg import expm

from .errors import ConfigError, NumericError
from .measures import natural_scale_form

__all__ = [
    "DiscretizedGenerator", "SpectralSolution", "AssumptionAReport",
    "build_grid", "discretize_generator", "principal_eigenpair",
    "survival_curve", "conditioned_law", "qprocess_kernel", "beta_weights",
    "verify_assumption_A", "lambda0_bracket",
]

_LOG_SAT = 560.0  # cap on |log s'| for grid placement


def build_grid(spec, n=2048, y_top=None):
    """Node positions in the original coordinate, uniform in sqrt(y).

    Returns (y_nodes, y_top_used).  y_top defaults to spec.y_max and is
    always pulled below the scale-saturation point.
    """
    if y_top is None:
        y_top = spec.y_max
    if y_top is None:
        raise ConfigError("no y_top: set y_max on the spec or pass one")
    y_top = float(y_top)
    s = spec.scale
    if s.log_derivative is not None:
        probe = np.geomspace(max(1e-6, y_top * 1e-6), y_top, 257)
        lsp = np.abs(np.asarray(s.log_derivative(probe), dtype=float))
        bad = probe[lsp > _LOG_SAT]
        if bad.size:
            y_top = float(bad[0])
    du = math.sqrt(y_top) / n
    u = (np.arange(n, dtype=float) + 1.0) * du
    return u * u, y_top


def _interval_masses(mu, s, y_edges):
    """(M0_j, M1_j) per interval: plain mass and s-weighted mass.

    Intervals are (y_edges[j], y_edges[j+1]).  Uses the stable log closures
    when present; the s-weighted integrand is built from log(s/s') plus the
    s'-free density part so the huge exponents cancel analytically.  A
    non-finite M0 next to an exit boundary is fine: only the s-weighted
    moment of the first interval is ever used.

    Each interval is integrated by composite Simpson on its own refined
    subgrid (never by differencing a cumulative: tail masses sit far below
    the running total's float resolution and would difference to zero).
    """
    refine = 8
    u_edges = np.sqrt(np.asarray(y_edges, dtype=float))
    n_int = u_edges.shape[0] - 1
    frac = np.arange(refine + 1, dtype=float) / refine
    u = u_edges[:-1, None] + (u_edges[1:] - u_edges[:-1])[:, None] * frac[None, :]
    y = np.maximum(u * u, 1e-300)

    if mu.log_density is not None:
        with np.errstate(over="ignore", under="ignore"):
            rho = np.exp(mu.log_density(y.ravel())).reshape(y.shape)
    elif mu.density is not None:
        rho = mu.density_at(y.ravel()).reshape(y.shape)
    else:
        rho = np.zeros_like(y)
    rho = np.where(np.isfinite(rho), rho, 0.0)

    if (mu.log_sprime_density is not None and s.log_ratio is not None):
        with np.errstate(over="ignore", under="ignore"):
            srho = np.exp(s.log_ratio(y.ravel())
                          + mu.log_sprime_density(y.ravel())).reshape(y.shape)
    else:
        with np.errstate(over="ignore", under="ignore"):
            srho = np.asarray(s(y.ravel()), dtype=float).reshape(y.shape) * rho
    srho = np.where(np.isfinite(srho), srho, 0.0)

    w = np.ones(refine + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    h = (u_edges[1:] - u_edges[:-1]) / refine
    jac = 2.0 * u
    m0 = (rho * jac) @ w * (h / 3.0)
    m1 = (srho * jac) @ w * (h / 3.0)
    return np.maximum(m0, 0.0), np.maximum(m1, 0.0)


def _hat_weights(m0, m1, x_nodes):
    """Hat-function node weights from interval masses.

    Interval j runs from x_{j-1} (ghost 0 for j = 0) to x_j.  The rising
    part weights node j, the falling part node j-1; the falling part of
    interval 0 lands on the absorbing boundary and is dropped, which is
    what keeps exit boundaries (infinite measure, finite first moment)
    finite here.
    """
    n = x_nodes.shape[0]
    x_lo = np.concatenate([[0.0], x_nodes[:-1]])
    dx = x_nodes - x_lo
    rising = (m1 - x_lo * m0) / dx
    falling = (x_nodes * m0 - m1) / dx
    rising = np.maximum(rising, 0.0)
    falling = np.maximum(falling, 0.0)
    w = rising.copy()
    w[:-1] += falling[1:]
    return w


@dataclass
class DiscretizedGenerator:
    """Lumped P1 discretization of the killed generator in natural scale.

    The lower edge is always absorbing (the first node leaks toward 0); the
    upper edge is reflecting by default, or absorbing with top="absorbing"
    (a Dirichlet virtual node one last-gap above the top).  The two top
    treatments bracket the untruncated decay rate.
    """

    y_nodes: np.ndarray
    x_nodes: np.ndarray
    m_nodes: np.ndarray
    k_nodes: np.ndarray
    spec: object = None
    top: str = "reflecting"

    def __post_init__(self):
        if np.any(self.m_nodes <= 0.0) or not np.all(np.isfinite(self.m_nodes)):
            raise NumericError("speed weights must be finite and positive")
        if np.any(self.k_nodes < 0.0) or not np.all(np.isfinite(self.k_nodes)):
            raise NumericError("killing weights must be finite and nonnegative")
        dx = np.diff(self.x_nodes)
        if np.any(dx <= 0.0):
            raise NumericError("grid positions must be strictly increasing")
        if self.top not in ("reflecting", "absorbing"):
            raise ConfigError("top must be 'reflecting' or 'absorbing'")

    @property
    def n(self):
        return self.y_nodes.shape[0]

    def _gaps(self):
        x = self.x_nodes
        return np.concatenate([[x[0]], np.diff(x)])

    def apply(self, f):
        """Generator action on a vector of node values."""
        f = np.asarray(f, dtype=float)
        dxm = self._gaps()
        flux_up = np.zeros_like(f)
        flux_up[:-1] = (f[1:] - f[:-1]) / dxm[1:]
        if self.top == "absorbing":
            flux_up[-1] = -f[-1] / dxm[-1]
        flux_dn = np.empty_like(f)
        flux_dn[0] = f[0] / dxm[0]
        flux_dn[1:] = (f[1:] - f[:-1]) / dxm[1:]
        return (flux_up - flux_dn) / self.m_nodes \
            - (self.k_nodes / self.m_nodes) * f

    def symmetric_tridiagonal(self):
        """(diag, off) of A = M^{-1/2}(T + K)M^{-1/2}, so -L = M^{-1/2} A M^{1/2}."""
        m = self.m_nodes
        dxm = self._gaps()
        t_diag = 1.0 / dxm
        t_diag[:-1] += 1.0 / dxm[1:]
        if self.top == "absorbing":
            t_diag[-1] += 1.0 / dxm[-1]
        diag = (t_diag + self.k_nodes) / m
        off = -1.0 / (dxm[1:] * np.sqrt(m[:-1] * m[1:]))
        return diag, off

    def as_matrix(self):
        """Dense sub-generator L: nonnegative off-diagonals, row sums <= 0
        with strict leak in the first row and wherever killing sits."""
        n = self.n
        m = self.m_nodes
        dxm = self._gaps()
        L = np.zeros((n, n))
        idx = np.arange(n - 1)
        up = 1.0 / (dxm[1:] * m[:-1])
        dn = 1.0 / (dxm[1:] * m[1:])
        L[idx, idx + 1] = up
        L[idx + 1, idx] = dn
        L[idx, idx] -= up
        L[idx + 1, idx + 1] -= dn
        L[0, 0] -= 1.0 / (dxm[0] * m[0])
        if self.top == "absorbing":
            L[-1, -1] -= 1.0 / (dxm[-1] * m[-1])
        L[np.diag_indices(n)] -= self.k_nodes / m
        return L


def discretize_generator(spec, n=2048, y_top=None, y_nodes=None,
                         top="reflecting"):
    """Build the discretized generator for a diffusion spec.

    Works in the original coordinate grid mapped through the scale map; the
    speed and killing weights are pulled back by substitution, so nothing
    here ever evaluates the natural-scale densities directly.  y_nodes, if
    given, is an explicit increasing grid in the original coordinate and
    overrides the automatic placement.
    """
    ns = natural_scale_form(spec)
    base_speed = ns.speed.transform[0] if ns.speed.transform else ns.speed
    base_kill = ns.killing.transform[0] if ns.killing.transform else ns.killing
    s = spec.scale
    if base_speed.density is None:
        raise ConfigError("spectral route needs a speed measure with a density")

    if y_nodes is not None:
        y_nodes = np.asarray(y_nodes, dtype=float)
        if y_nodes.ndim != 1 or y_nodes.shape[0] < 2:
            raise ConfigError("y_nodes must hold at least two levels")
        if y_nodes[0] <= 0.0 or np.any(np.diff(y_nodes) <= 0.0):
            raise ConfigError("y_nodes must be positive and increasing")
    else:
        y_nodes, y_top = build_grid(spec, n=n, y_top=y_top)
    x_nodes = np.asarray(s(y_nodes), dtype=float)
    if not np.all(np.isfinite(x_nodes)):
        raise NumericError("scale positions overflow; lower y_top")

    y_edges = np.concatenate([[0.0], y_nodes])
    m0, m1 = _interval_masses(base_speed, s, y_edges)
    m_nodes = _hat_weights(m0, m1, x_nodes)
    k0, k1 = _interval_masses(base_kill, s, y_edges)
    k_nodes = _hat_weights(k0, k1, x_nodes)

    if base_kill.atoms.size:
        for loc, mass in base_kill.atoms:
            if loc <= 0.0 or loc > y_nodes[-1]:
                continue
            xa = float(np.asarray(s(np.array([loc])))[0])
            j = int(np.searchsorted(x_nodes, xa))
            if j == 0:
                k_nodes[0] += mass * (xa / x_nodes[0])
            elif j >= len(x_nodes):
                k_nodes[-1] += mass
            else:
                w = (xa - x_nodes[j - 1]) / (x_nodes[j] - x_nodes[j - 1])
                k_nodes[j - 1] += mass * (1.0 - w)
                k_nodes[j] += mass * w

    return DiscretizedGenerator(y_nodes=y_nodes, x_nodes=x_nodes,
                                m_nodes=m_nodes, k_nodes=k_nodes, spec=spec,
                                top=top)


def _thomas(diag, off, rhs):
    """Solve the symmetric tridiagonal system (no pivoting; SPD systems)."""
    n = diag.shape[0]
    c = np.empty(n - 1)
    d = np.empty(n)
    d[0] = diag[0]
    if d[0] == 0.0:
        raise NumericError("singular tridiagonal solve")
    x = rhs.astype(float).copy()
    for i in range(1, n):
        c[i - 1] = off[i - 1] / d[i - 1]
        d[i] = diag[i] - off[i - 1] * c[i - 1]
        x[i] -= c[i - 1] * x[i - 1]
    x[-1] /= d[-1]
    for i in range(n - 2, -1, -1):
        x[i] = (x[i] - off[i] * x[i + 1]) / d[i]
    return x


def _inverse_iteration(diag, off, shift, ortho=(), tol=1e-13, max_iter=400):
    n = diag.shape[0]
    # generic deterministic start: all-ones degenerates whenever a deflated
    # direction is itself nearly constant (tiny grids)
    v = np.cos(1.7 * np.arange(n) + 0.3) + 0.5
    for q in ortho:
        v -= (q @ v) * q
    nrm0 = np.linalg.norm(v)
    if nrm0 < 1e-12:
        raise NumericError("inverse iteration broke down")
    v = v / nrm0
    lam = shift
    sh = shift
    for it in range(max_iter):
        w = _thomas(diag - sh, off, v)
        for q in ortho:
            w -= (q @ w) * q
        nrm = np.linalg.norm(w)
        if not np.isfinite(nrm) or nrm == 0.0:
            raise NumericError("inverse iteration broke down")
        v_new = w / nrm
        # Rayleigh quotient on the original matrix
        av = diag * v_new
        av[:-1] += off * v_new[1:]
        av[1:] += off * v_new[:-1]
        lam_new = float(v_new @ av)
        resid = np.linalg.norm(av - lam_new * v_new)
        aligned = 1.0 - abs(float(v_new @ v)) < 1e-15
        v = v_new
        if resid <= tol * max(abs(lam_new), 1e-30) and (aligned or it > 2):
            return lam_new, v, resid
        lam = lam_new
        if it >= 4 and it % 3 == 0:
            # late Rayleigh shifts accelerate without risking the wrong pair
            sh = lam - max(1e-12 * abs(lam), resid)
    return lam, v, resid


@dataclass
class SpectralSolution:
    """Principal decay rate, next rate, and the normalized eigendata.

    eta is scaled so that alpha(eta) = 1; alpha holds the node weights of
    the quasi-stationary law (hat-cell masses, summing to 1) on y_nodes.
    The stored residuals are sup norms of the two eigen identities,
    comparable against norm_L (the sup operator norm of the discretized
    generator).
    """

    lambda0: float
    lambda1: float
    eta_nodes: np.ndarray
    alpha: np.ndarray
    y_nodes: np.ndarray
    x_nodes: np.ndarray
    m_nodes: np.ndarray
    residual_eta: float = 0.0
    residual_alpha: float = 0.0
    norm_L: float = 0.0
    eta_fn: Optional[Callable] = None

    @property
    def eta(self):
        return self.eta_nodes

    @property
    def spectral_gap(self):
        return self.lambda1 - self.lambda0

    @property
    def gap(self):
        return self.lambda1 - self.lambda0

    @property
    def residuals(self):
        return {"eta": self.residual_eta, "alpha": self.residual_alpha}


def principal_eigenpair(gen, tol=1e-12, max_iter=400):
    """Two lowest eigenpairs of -L by shifted inverse iteration + deflation."""
    diag, off = gen.symmetric_tridiagonal()
    lam0, w0, r0 = _inverse_iteration(diag, off, 0.0, tol=tol, max_iter=max_iter)
    lam1, w1, r1 = _inverse_iteration(diag, off, 0.0, ortho=(w0,), tol=tol,
                                      max_iter=max_iter)
    if lam1 < lam0:
        lam0, lam1 = lam1, lam0
        w0, w1 = w1, w0
    if np.sum(w0) < 0:
        w0 = -w0
    if np.any(w0 < -1e-8 * np.max(np.abs(w0))):
        raise NumericError("principal eigenvector is not of one sign")
    sqm = np.sqrt(gen.m_nodes)
    eta = np.maximum(w0, 0.0) / sqm
    m_eta = gen.m_nodes * eta
    alpha = m_eta / m_eta.sum()
    eta = eta * (m_eta.sum() / float(m_eta @ eta))

    # sup-norm residuals of both eigen identities on the grid
    lam0 = float(lam0)
    r_eta = float(np.max(np.abs(gen.apply(eta) + lam0 * eta)))
    v = alpha / sqm
    av = diag * v
    av[:-1] += off * v[1:]
    av[1:] += off * v[:-1]
    r_alpha = float(np.max(np.abs(-sqm * av + lam0 * alpha)))
    m = gen.m_nodes
    dxm = gen._gaps()
    up = np.zeros(gen.n)
    up[:-1] = 1.0 / (dxm[1:] * m[:-1])
    dn = np.zeros(gen.n)
    dn[1:] = 1.0 / (dxm[1:] * m[1:])
    norm_L = float(np.max(diag + up + dn))

    eta_fn = _eta_interpolant(gen, eta)
    return SpectralSolution(lambda0=lam0, lambda1=float(lam1),
                            eta_nodes=eta, alpha=alpha, y_nodes=gen.y_nodes,
                            x_nodes=gen.x_nodes, m_nodes=gen.m_nodes,
                            residual_eta=r_eta, residual_alpha=r_alpha,
                            norm_L=norm_L, eta_fn=eta_fn)


def _eta_interpolant(gen, eta):
    """eta as a function of the original coordinate.

    Piecewise monotone interpolation over the nodes; below the first node
    eta continues linearly in the natural-scale position (the boundary
    behavior eta(x) <= C x), pinned through the first node.
    """
    y, x = gen.y_nodes, gen.x_nodes
    pch = PchipInterpolator(y, eta, extrapolate=False)
    s = gen.spec.scale if gen.spec is not None else None
    y0, x0, e0 = y[0], x[0], eta[0]
    e_top = eta[-1]

    def fn(yy):
        yy = np.asarray(yy, dtype=float)
        out = np.empty_like(yy)
        low = yy < y0
        high = yy > y[-1]
        mid = ~(low | high)
        if np.any(mid):
            out[mid] = pch(yy[mid])
        if np.any(low):
            if s is not None:
                xs = np.asarray(s(np.maximum(yy[low], 0.0)), dtype=float)
            else:
                xs = np.maximum(yy[low], 0.0)
            out[low] = e0 * xs / x0
        if np.any(high):
            out[high] = e_top
        return out

    return fn


def survival_curve(gen, init_weights, ts):
    """P(t < absorption) for the discretized process from given node weights."""
    diag, off = gen.symmetric_tridiagonal()
    sqm = np.sqrt(gen.m_nodes)
    w = np.asarray(init_weights, dtype=float)
    if w.shape != (gen.n,):
        raise ConfigError("init_weights must be one weight per node")
    # left action: row * e^{tL} = M^{1/2} e^{-tA} M^{-1/2} applied to weights
    v = w / sqm
    from scipy.sparse import diags as _sp_diags
    from scipy.sparse.linalg import expm_multiply
    A = _sp_diags([off, diag, off], [-1, 0, 1], format="csc")
    ts = np.asarray(ts, dtype=float)
    out = np.empty(ts.shape[0])
    for j, t in enumerate(ts):
        u = expm_multiply(-t * A, v)
        out[j] = float(np.sum(u * sqm))
    return out


def conditioned_law(gen, init_weights, t):
    """Node weights of the law at time t conditioned on survival."""
    diag, off = gen.symmetric_tridiagonal()
    sqm = np.sqrt(gen.m_nodes)
    v = np.asarray(init_weights, dtype=float) / sqm
    from scipy.sparse import diags as _sp_diags
    from scipy.sparse.linalg import expm_multiply
    A = _sp_diags([off, diag, off], [-1, 0, 1], format="csc")
    u = expm_multiply(-float(t) * A, v) * sqm
    u = np.maximum(u, 0.0)
    tot = u.sum()
    if tot <= 0.0:
        raise NumericError("mass fully absorbed; lower t")
    return u / tot


def _dense_propagator(gen, t):
    """e^{tL} as a dense row-substochastic matrix (moderate grids only)."""
    diag, off = gen.symmetric_tridiagonal()
    A = np.diag(diag)
    idx = np.arange(gen.n - 1)
    A[idx, idx + 1] = off
    A[idx + 1, idx] = off
    sqm = np.sqrt(gen.m_nodes)
    P = (sqm[:, None] ** -1) * expm(-float(t) * A) * sqm[None, :]
    return np.maximum(P, 0.0)


def qprocess_kernel(solution, gen, t, tol=1e-8):
    """Dense transition matrix of the surviving-forever process at time t.

    p~(i,j) = e^{lambda0 t} (eta_j / eta_i) p_t(i,j).  Rows sum to one up to
    eigen and truncation error; a deviation beyond tol means the eigendata
    does not belong to this generator.  Dense matrix exponential: intended
    for moderate grid sizes.  t = 0 returns the identity exactly.
    """
    if gen.n > 4100:
        raise ConfigError("dense transition kernel: use a coarser grid")
    if solution.eta_nodes.shape[0] != gen.n:
        raise NumericError("eigen data inconsistent with kernel")
    if float(t) == 0.0:
        return np.eye(gen.n)
    P = _dense_propagator(gen, t)
    eta = solution.eta_nodes
    tilt = math.exp(solution.lambda0 * float(t))
    K = tilt * (P * eta[None, :]) / eta[:, None]
    defect = float(np.max(np.abs(K.sum(axis=1) - 1.0)))
    if defect > tol:
        raise NumericError("eigen data inconsistent with kernel")
    return K


def beta_weights(sol):
    """Invariant node weights of the surviving-forever process."""
    b = sol.alpha * sol.eta_nodes
    return b / b.sum()


@dataclass
class AssumptionAReport:
    """Finite-grid witness for the two-sided conditional mixing bounds.

    For the pivot time t0, c1 is the Doeblin overlap of the time-t0
    conditional laws started from every node (nu is the shared component),
    and c2 the worst-case ratio (nu-survival / best node survival) over a
    dyadic time ladder.  Both strictly positive means the convergence
    mechanism bites on this truncation.
    """

    entries: list
    t0: Optional[float]
    c1: float
    c2: float
    nu: Optional[np.ndarray] = None
    note: str = ""

    @property
    def detected(self):
        return self.c1 > 0.0 and self.c2 > 0.0

    def as_dict(self):
        return {"t0": self.t0, "c1": self.c1, "c2": self.c2,
                "note": self.note,
                "entries": [dict(e) for e in self.entries]}


def verify_assumption_A(gen, t0_grid=(0.5, 1.0, 2.0), horizon_factors=(1, 2, 4, 8)):
    """Search a grid of pivot times for positive mixing constants (c1, c2).

    Every entry records the overlap constants at one pivot; the report keeps
    the best pivot (largest min(c1, c2)).  All overlaps vanishing is a
    resolution statement, not an error: the note says so and c1 = c2 = 0.
    """
    if gen.n > 1200:
        raise ConfigError("witness route is dense; use a coarser grid")
    entries = []
    best = None
    for t0 in np.asarray(t0_grid, dtype=float):
        P = _dense_propagator(gen, t0)
        surv = P.sum(axis=1)
        if np.any(surv <= 0.0):
            raise NumericError("a node is already fully absorbed at t0")
        R = P / surv[:, None]
        common = R.min(axis=0)
        c1 = float(common.sum())
        if c1 <= 0.0:
            entries.append({"t0": float(t0), "c1": 0.0, "c2": 0.0})
            continue
        nu = common / c1
        c2 = math.inf
        for fac in horizon_factors:
            ut = _dense_propagator(gen, fac * t0).sum(axis=1)
            c2 = min(c2, float((nu @ ut) / ut.max()))
        entries.append({"t0": float(t0), "c1": c1, "c2": c2})
        if best is None or min(c1, c2) > min(best[1], best[2]):
            best = (float(t0), c1, c2, nu)
    if best is None:
        return AssumptionAReport(entries=entries, t0=None, c1=0.0, c2=0.0,
                                 note="minorization not detected at this resolution")
    t0, c1, c2, nu = best
    return AssumptionAReport(entries=entries, t0=t0, c1=c1, c2=c2, nu=nu)


def lambda0_bracket(spec, n=2048, y_top=None):
    """Bracket the decay rate between the two top-boundary treatments.

    A reflecting cap under-estimates absorption, an absorbing cap
    over-estimates it; the untruncated rate sits in between once y_top is
    past the bulk of the quasi-stationary mass.  Returns a dict with the
    two endpoints and the width.
    """
    lo = principal_eigenpair(discretize_generator(spec, n=n, y_top=y_top))
    hi = principal_eigenpair(discretize_generator(spec, n=n, y_top=y_top,
                                                  top="absorbing"))
    return {"low": lo.lambda0, "high": hi.lambda0,
            "width": hi.lambda0 - lo.lambda0}

"""Measures, scale maps and diffusion data on the half line (0, infinity).

A one-dimensional diffusion absorbed at 0 is described here by a scale
function s, a speed measure m and a killing measure k.  The normalization is
the classical one: Brownian motion has speed measure 2*Lebesgue, and for
dY = sigma(Y) dB + b(Y) dt the speed density in the original coordinate is

    m(dy) = 2 dy / (s'(y) sigma(y)^2),        s'(y) = exp(-2 int_0^y b/sigma^2).

With this choice the divided-difference form (d/dm)(d/ds) generates the
process in physical time, so decay rates measured on simulated paths and
decay rates computed from the discretized operator live in the same units.
The killing measure is k = kappa * m, i.e. dk/dm is the killing rate per
unit time.

Numerical conventions:

- intervals are open; atoms sitting exactly on an endpoint do not count;
- improper integrals (endpoint 0 or infinity) are resolved over dyadic
  shells: a side is convergent when the fitted shell ratio stays below 0.95
  over the last six shells and the implied tail is below 1e-9 of the partial
  sum, divergent when the shell sums are non-decreasing over six consecutive
  shells, inconclusive otherwise;
- integrals against a pushforward measure mu o s^-1 are evaluated in the
  original coordinate by substitution (in the stretched coordinate the shell
  sums of a convergent integral can decay arbitrarily slowly);
- first-moment integrands x * (pushforward density) are formed as
  (s/s') * (s' * density): the two exponentials in s and s' reach 1e18 in
  the log for the models of interest and must cancel analytically, not in
  floating point.  PowerWeight marks integrands eligible for this route.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate as _sciint
from scipy.interpolate import PchipInterpolator

from .errors import NumericError

__all__ = [
    "CONVERGED", "DIVERGENT", "INCONCLUSIVE", "HOLDS", "FAILS",
    "IntegralResult", "Measure1D", "ScaleFunction", "SdeForm",
    "DiffusionSpec", "BoundaryReport", "PowerWeight",
    "integrate", "classify_boundaries", "pushforward", "scale_from_drift",
    "natural_scale_form", "spec_from_sde", "geometric_grid",
]

CONVERGED = "converged"
DIVERGENT = "divergent"
INCONCLUSIVE = "inconclusive"
HOLDS = "holds"
FAILS = "fails"

_SHELL_RATIO = 0.95
_SHELL_TAIL_REL = 1e-9
_MAX_SHELLS = 64


def geometric_grid(lo, hi, per_decade=64):
    """Geometrically spaced grid from lo to hi with ~per_decade points/decade."""
    if not (0 < lo < hi):
        raise ValueError("need 0 < lo < hi")
    n = max(2, int(round(per_decade * math.log10(hi / lo))) + 1)
    return np.geomspace(lo, hi, n)


class PowerWeight:
    """Weight f(y) = y**p, exposing its logarithm for stable products.

    Using this class instead of a bare lambda lets `integrate` form
    f * density in log space, and (for p = 1) route moment integrals of
    scale-transformed measures through the stable ratio s/s'.
    """

    def __init__(self, p):
        self.p = float(p)

    def __call__(self, y):
        return np.power(np.asarray(y, dtype=float), self.p)

    def log(self, y):
        return self.p * np.log(np.asarray(y, dtype=float))


@dataclass
class IntegralResult:
    """Value and convergence status of an improper integral."""

    value: float
    status: str
    shells_low: list = field(default_factory=list)
    shells_high: list = field(default_factory=list)
    message: str = ""

    @property
    def converged(self):
        return self.status == CONVERGED

    @property
    def divergent(self):
        return self.status == DIVERGENT

    def __float__(self):
        return float(self.value)


def _as_atoms(atoms):
    arr = np.asarray(atoms, dtype=float)
    if arr.size == 0:
        return np.empty((0, 2))
    arr = arr.reshape(-1, 2)
    locs, masses = arr[:, 0], arr[:, 1]
    if not np.all(np.isfinite(arr)):
        raise ValueError("atom locations and masses must be finite")
    if np.any(locs <= 0):
        raise ValueError("atom locations must be strictly positive")
    if np.any(np.diff(locs) <= 0):
        raise ValueError("atom locations must be strictly increasing")
    if np.any(masses <= 0):
        raise ValueError("atom masses must be strictly positive")
    return arr


@dataclass
class Measure1D:
    """Nonnegative measure on (0, inf): density part plus finitely many atoms.

    Parameters
    ----------
    density : callable or None
        Vectorized density w.r.t. Lebesgue on the support; None means purely
        atomic.
    atoms : array_like, shape (n, 2)
        Rows (location, mass), locations strictly increasing, masses > 0.
    support : pair
        Open interval outside which the density is treated as zero.
    log_density : callable, optional
        log of the density, for densities spanning extreme magnitudes.
    log_sprime_density : callable, optional
        log of density(y) * s'(y) where s is the scale map this measure will
        be pushed through; this factor is moderate even when density and s'
        separately overflow, and enables the stable moment route.
    transform : (Measure1D, ScaleFunction), optional
        Set by `pushforward`; marks this measure as base o s^-1 so that
        integrals against it are pulled back to the base coordinate.
    """

    density: Optional[Callable] = None
    atoms: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    support: tuple = (0.0, np.inf)
    log_density: Optional[Callable] = None
    log_sprime_density: Optional[Callable] = None
    transform: Optional[tuple] = None

    def __post_init__(self):
        self.atoms = _as_atoms(self.atoms)
        a, b = float(self.support[0]), float(self.support[1])
        if not (0.0 <= a < b):
            raise ValueError("support must satisfy 0 <= a < b")
        self.support = (a, b)

    def density_at(self, y):
        y = np.asarray(y, dtype=float)
        if self.density is None:
            return np.zeros_like(y)
        a, b = self.support
        inside = (y > a) & (y < b)
        out = np.zeros_like(y)
        if np.any(inside):
            vals = np.asarray(self.density(y[inside]), dtype=float)
            if np.any(vals < 0):
                raise ValueError("measure density is negative")
            out[inside] = vals
        return out

    def add(self, other):
        """Sum measure. Keeps the pullback route if both share one scale map."""
        atoms = np.concatenate([self.atoms, other.atoms])
        if atoms.size:
            order = np.argsort(atoms[:, 0], kind="stable")
            atoms = atoms[order]
            locs, masses = atoms[:, 0], atoms[:, 1]
            keep_locs, keep_masses = [], []
            for loc, mass in zip(locs, masses):
                if keep_locs and loc == keep_locs[-1]:
                    keep_masses[-1] += mass
                else:
                    keep_locs.append(loc)
                    keep_masses.append(mass)
            atoms = np.column_stack([keep_locs, keep_masses])
        support = (min(self.support[0], other.support[0]),
                   max(self.support[1], other.support[1]))

        dens = None
        if self.density is not None or other.density is not None:
            dens_a, dens_b = self.density_at, other.density_at
            dens = lambda y: dens_a(y) + dens_b(y)

        log_dens = _combine_logs(self, other, "log_density")
        log_spd = _combine_logs(self, other, "log_sprime_density")

        transform = None
        if (self.transform is not None and other.transform is not None
                and self.transform[1] is other.transform[1]):
            base = self.transform[0].add(other.transform[0])
            transform = (base, self.transform[1])
        return Measure1D(density=dens, atoms=atoms, support=support,
                         log_density=log_dens, log_sprime_density=log_spd,
                         transform=transform)

    def scaled(self, c):
        c = float(c)
        if c <= 0:
            raise ValueError("scale factor must be positive")
        atoms = self.atoms.copy()
        if atoms.size:
            atoms[:, 1] *= c
        dens = None
        if self.density is not None:
            base = self.density
            dens = lambda y: c * np.asarray(base(y), dtype=float)
        logc = math.log(c)
        log_dens = None
        if self.log_density is not None:
            lbase = self.log_density
            log_dens = lambda y: logc + lbase(y)
        log_spd = None
        if self.log_sprime_density is not None:
            lsbase = self.log_sprime_density
            log_spd = lambda y: logc + lsbase(y)
        transform = None
        if self.transform is not None:
            transform = (self.transform[0].scaled(c), self.transform[1])
        return Measure1D(density=dens, atoms=atoms, support=self.support,
                         log_density=log_dens, log_sprime_density=log_spd,
                         transform=transform)

    def validate_local_finiteness(self, intervals=None):
        """Quadrature check that the density is locally integrable."""
        if self.density is None:
            return True
        a, b = self.support
        if intervals is None:
            hi = min(b, 1e3)
            lo = max(a, 1e-9)
            if lo >= hi:
                return True
            cuts = np.geomspace(lo, hi, 5)
            intervals = list(zip(cuts[:-1], cuts[1:]))
        for (lo, hi) in intervals:
            val = _quad_interval(self.density_at, lo, hi)
            if not np.isfinite(val):
                raise ValueError("density is not locally integrable on "
                                 f"({lo:g}, {hi:g})")
        return True


def _combine_logs(mu_a, mu_b, attr):
    """log of the sum of two density parts, honoring purely atomic sides."""
    la, lb = getattr(mu_a, attr), getattr(mu_b, attr)
    if mu_b.density is None:
        return la
    if mu_a.density is None:
        return lb
    if la is not None and lb is not None:
        return lambda y: np.logaddexp(la(y), lb(y))
    return None


def _scalar(x):
    return float(np.asarray(x, dtype=float).reshape(-1)[0])


def _quad_interval(g, a, b):
    """Adaptive quadrature of a vectorizable integrand on a compact interval."""
    if b <= a:
        return 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        val, _ = _sciint.quad(lambda y: float(np.asarray(g(np.array([y])))[0]),
                              a, b, limit=100)
    return val


def _fit_shell_ratio(sums):
    """Least-squares geometric ratio of the last six |shell sums|."""
    tail = np.abs(np.asarray(sums[-6:], dtype=float))
    if np.any(tail <= 0.0):
        return 0.0
    n = np.arange(len(tail), dtype=float)
    slope = np.polyfit(n, np.log(tail), 1)[0]
    return math.exp(slope)


class _ShellJudge:
    """State machine for the dyadic shell protocol at one endpoint."""

    def __init__(self, zero_floor):
        self.sums = []
        self.zero_floor = zero_floor
        self.status = None

    def feed(self, s, partial_scale):
        if not np.isfinite(s):
            self.status = DIVERGENT
            return True
        self.sums.append(s)
        if len(self.sums) < 6:
            return False
        window = self.sums[-6:]
        mags = [abs(v) for v in window]
        if all(m <= self.zero_floor for m in mags[-3:]):
            self.status = CONVERGED
            return True
        if (all(v > self.zero_floor for v in window)
                and all(window[i + 1] >= window[i] * (1 - 1e-12)
                        for i in range(5))):
            self.status = DIVERGENT
            return True
        ratio = _fit_shell_ratio(self.sums)
        if 0.0 < ratio < _SHELL_RATIO:
            tail = abs(window[-1]) * ratio / (1.0 - ratio)
            if tail <= _SHELL_TAIL_REL * max(partial_scale, 1e-12):
                self.status = CONVERGED
                return True
        return False


def integrate(mu, f, interval, max_shells=_MAX_SHELLS):
    """Integrate f against mu over an open interval, judging convergence.

    Parameters
    ----------
    mu : Measure1D
    f : callable or PowerWeight
        Vectorized integrand.
    interval : (a, b) with 0 <= a < b <= inf
        Open interval; atoms at a or b are excluded.

    Returns
    -------
    IntegralResult
        value, status in {converged, divergent, inconclusive}, shell sums.
    """
    a, b = float(interval[0]), float(interval[1])
    if not (0.0 <= a < b):
        raise ValueError("interval must satisfy 0 <= a < b")

    if mu.transform is not None:
        base, s = mu.transform
        ya = _scalar(s.inv(a)) if a > 0.0 else 0.0
        yb = _scalar(s.inv(b)) if np.isfinite(b) else np.inf
        inner = _substituted_weight(f, s, base)
        return integrate(base, inner, (ya, yb), max_shells=max_shells)

    a = max(a, mu.support[0])
    b = min(b, mu.support[1])
    if a >= b:
        return IntegralResult(0.0, CONVERGED)

    atom_sum = 0.0
    if mu.atoms.size:
        locs, masses = mu.atoms[:, 0], mu.atoms[:, 1]
        inside = (locs > a) & (locs < b)
        if np.any(inside):
            fvals = np.asarray(f(locs[inside]), dtype=float)
            if not np.all(np.isfinite(fvals)):
                raise ValueError("integrand is non-finite at an atom location")
            atom_sum = float(np.sum(fvals * masses[inside]))

    if mu.density is None:
        return IntegralResult(atom_sum, CONVERGED)

    g = _integrand(mu, f)

    lo_improper = (a == 0.0)
    hi_improper = not np.isfinite(b)
    lo_anchor = min(1.0, b) if lo_improper else a
    hi_anchor = max(1.0, a) if hi_improper else b

    if lo_anchor < hi_anchor:
        probe = np.geomspace(max(lo_anchor, 1e-12), min(hi_anchor, 1e12), 7)
        if not np.all(np.isfinite(g(probe))):
            raise ValueError("integrand is non-finite at an interior point")

    core = _quad_interval(g, lo_anchor, hi_anchor)
    if not np.isfinite(core):
        raise ValueError("integrand is non-finite at an interior point")

    total = core + atom_sum
    shells_low, shells_high = [], []
    status_low = CONVERGED
    status_high = CONVERGED

    scale0 = max(abs(core), abs(atom_sum), 1e-12)
    zero_floor = 1e-14 * scale0

    if lo_improper:
        judge = _ShellJudge(zero_floor)
        status_low = INCONCLUSIVE
        for n in range(max_shells):
            s = _quad_interval(g, lo_anchor * 2.0 ** (-(n + 1)),
                               lo_anchor * 2.0 ** (-n))
            shells_low.append(s)
            if np.isfinite(s):
                total += s
            if judge.feed(s, abs(total)):
                status_low = judge.status
                break

    if hi_improper:
        judge = _ShellJudge(zero_floor)
        status_high = INCONCLUSIVE
        for n in range(max_shells):
            s = _quad_interval(g, hi_anchor * 2.0 ** n,
                               hi_anchor * 2.0 ** (n + 1))
            shells_high.append(s)
            if np.isfinite(s):
                total += s
            if judge.feed(s, abs(total)):
                status_high = judge.status
                break

    if DIVERGENT in (status_low, status_high):
        status = DIVERGENT
    elif INCONCLUSIVE in (status_low, status_high):
        status = INCONCLUSIVE
    else:
        status = CONVERGED
    return IntegralResult(total, status, shells_low, shells_high)


class _RatioMomentWeight:
    """Marker: integrate s(y) * density via (s/s') * (s' * density).

    Only the combination is finite: s and s' separately overflow float64 for
    the stretched scales this package works with, and even their logs cancel
    beyond float precision.  `_integrand` recognizes this class.
    """

    def __init__(self, s, base):
        self.s = s
        self.base = base

    def __call__(self, y):
        with np.errstate(over="ignore"):
            return np.exp(self.s.log_forward(np.asarray(y, dtype=float)))


class _ComposedWeight:
    """f o s for a generic integrand under substitution."""

    def __init__(self, f, s):
        self.f = f
        self.s = s

    def __call__(self, y):
        return np.asarray(self.f(self.s.forward(np.asarray(y, dtype=float))),
                          dtype=float)


def _substituted_weight(f, s, base):
    if (isinstance(f, PowerWeight) and f.p == 1.0
            and base.log_sprime_density is not None
            and s.log_ratio is not None):
        return _RatioMomentWeight(s, base)
    return _ComposedWeight(f, s)


def _integrand(mu, f):
    """Product f * density, in log space or ratio form when available."""
    if isinstance(f, _RatioMomentWeight) and mu.log_sprime_density is not None:
        log_r = f.s.log_ratio
        log_spd = mu.log_sprime_density
        a, b = mu.support

        def g(y):
            y = np.asarray(y, dtype=float)
            out = np.zeros(y.shape)
            inside = (y > a) & (y < b)
            if np.any(inside):
                with np.errstate(over="ignore", under="ignore"):
                    out[inside] = np.exp(log_r(y[inside]) + log_spd(y[inside]))
            return out

        return g

    f_log = getattr(f, "log", None)
    if f_log is not None and mu.log_density is not None:
        log_d = mu.log_density
        a, b = mu.support

        def g(y):
            y = np.asarray(y, dtype=float)
            out = np.zeros(y.shape)
            inside = (y > a) & (y < b)
            if np.any(inside):
                with np.errstate(divide="ignore", invalid="ignore",
                                 over="ignore", under="ignore"):
                    out[inside] = np.exp(f_log(y[inside]) + log_d(y[inside]))
            return out

        return g

    def g(y):
        y = np.asarray(y, dtype=float)
        d = mu.density_at(y)
        out = np.zeros_like(d)
        nz = d != 0.0
        if np.any(nz):
            out[nz] = np.asarray(f(y[nz]), dtype=float) * d[nz]
        return out

    return g


@dataclass
class ScaleFunction:
    """Strictly increasing map s with s(0) = 0 on the relevant domain.

    forward / inverse / derivative are vectorized; inverse and derivative
    fall back to numeric constructions when not supplied.  log_forward,
    log_derivative and log_ratio (log of s/s') exist for scale maps whose
    values overflow float64; log_ratio in particular must be computed from
    a cancellation-free formula, not as log_forward - log_derivative.
    """

    forward: Callable
    inverse: Optional[Callable] = None
    derivative: Optional[Callable] = None
    log_forward: Optional[Callable] = None
    log_derivative: Optional[Callable] = None
    log_ratio: Optional[Callable] = None
    is_identity: bool = False
    domain_hint: float = 1e6

    @classmethod
    def identity(cls):
        one = lambda y: np.ones_like(np.asarray(y, dtype=float))
        ident = lambda y: np.asarray(y, dtype=float)
        zero = lambda y: np.zeros_like(np.asarray(y, dtype=float))
        logf = lambda y: np.log(np.asarray(y, dtype=float))
        return cls(forward=ident, inverse=ident, derivative=one,
                   log_forward=logf, log_derivative=zero, log_ratio=logf,
                   is_identity=True)

    def __call__(self, y):
        return self.forward(np.asarray(y, dtype=float))

    def inv(self, x):
        if self.inverse is not None:
            return self.inverse(np.asarray(x, dtype=float))
        return self._numeric_inverse(x)

    def deriv(self, y):
        y = np.asarray(y, dtype=float)
        if self.derivative is not None:
            return self.derivative(y)
        h = np.maximum(1e-7 * np.maximum(np.abs(y), 1e-3), 1e-12)
        lo = np.maximum(y - h, 0.0)
        return (self.forward(y + h) - self.forward(lo)) / (y + h - lo)

    def _numeric_inverse(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        lo = np.zeros_like(x)
        hi = np.full_like(x, min(self.domain_hint, 1e300))
        grow = self.forward(hi) < x
        tries = 0
        while np.any(grow) and tries < 60:
            hi[grow] *= 2.0
            grow = self.forward(hi) < x
            tries += 1
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            below = self.forward(mid) < x
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        out = 0.5 * (lo + hi)
        return out if out.shape else float(out)

    def validate_roundtrip(self, grid, tol=1e-10):
        grid = np.asarray(grid, dtype=float)
        x = self.forward(grid)
        back = self.inv(x)
        again = self.forward(np.asarray(back, dtype=float))
        err = np.max(np.abs(again - x) / np.maximum(np.abs(x), 1e-300))
        if err > tol:
            raise NumericError(f"scale round-trip error {err:.3e} exceeds {tol:g}")
        if np.any(np.diff(x) <= 0):
            raise NumericError("scale function is not strictly increasing")
        return err


@dataclass
class SdeForm:
    """Coefficients of dY = sigma(Y) dB + drift(Y) dt with killing rate."""

    sigma: Callable
    drift: Callable
    kill_rate: Callable


@dataclass
class DiffusionSpec:
    """A diffusion with killing: scale, speed and killing measure.

    When built from an SDE, `sde_form` keeps the original coefficients (the
    path engine simulates in the original coordinate) and `scale` maps
    original to natural-scale positions.  `y_max` is a simulation truncation
    hint in the original coordinate; `absorbing_zero=False` turns the lower
    edge into a reflecting barrier (used by calibration toys).
    """

    scale: ScaleFunction
    speed: Measure1D
    killing: Measure1D
    sde_form: Optional[SdeForm] = None
    label: str = ""
    y_max: Optional[float] = None
    absorbing_zero: bool = True
    from_scale: Optional[ScaleFunction] = None
    meta: dict = field(default_factory=dict)

    @property
    def is_natural(self):
        return self.scale.is_identity


@dataclass
class BoundaryReport:
    """Verdicts for the two boundary conditions of the half line."""

    entrance_at_infinity: str
    zero_regular_or_exit: str
    evidence: dict = field(default_factory=dict)

    def summary(self):
        return {"entrance_at_infinity": self.entrance_at_infinity,
                "zero_regular_or_exit": self.zero_regular_or_exit}


def _verdict(result):
    if result.status == CONVERGED:
        return HOLDS
    if result.status == DIVERGENT:
        return FAILS
    return INCONCLUSIVE


def classify_boundaries(spec):
    """Boundary classification from first-moment integrals of m + k.

    infinity is an entrance boundary iff int_1^inf y (m+k)(dy) converges;
    0 is regular or exit iff int_0^1 y (m+k)(dy) converges.  For specs not
    in natural scale the integrals are the pushforward ones, evaluated by
    substitution in the original coordinate.
    """
    ns = natural_scale_form(spec)
    mu = ns.speed.add(ns.killing)
    w = PowerWeight(1.0)
    at_inf = integrate(mu, w, (1.0, np.inf))
    at_zero = integrate(mu, w, (0.0, 1.0))
    return BoundaryReport(
        entrance_at_infinity=_verdict(at_inf),
        zero_regular_or_exit=_verdict(at_zero),
        evidence={"moment_at_infinity": at_inf, "moment_at_zero": at_zero},
    )


def pushforward(mu, s):
    """Image measure mu o s^-1 for a strictly increasing scale map s.

    The returned measure remembers (mu, s) so that integrals against it are
    pulled back to the original coordinate.
    """
    if s.is_identity:
        return mu
    atoms = mu.atoms.copy()
    if atoms.size:
        atoms[:, 0] = np.asarray(s(atoms[:, 0]), dtype=float)
    a, b = mu.support
    sa = 0.0 if a == 0.0 else _scalar(s(a))
    sb = np.inf if not np.isfinite(b) else _scalar(s(b))

    dens = None
    log_dens = None
    if mu.density is not None:
        def dens(x):
            x = np.asarray(x, dtype=float)
            y = np.asarray(s.inv(x), dtype=float)
            return mu.density_at(y) / s.deriv(y)

        if mu.log_density is not None and s.log_derivative is not None:
            base_log = mu.log_density
            ld = s.log_derivative

            def log_dens(x):
                y = np.asarray(s.inv(np.asarray(x, dtype=float)), dtype=float)
                return base_log(y) - ld(y)

    return Measure1D(density=dens, atoms=atoms, support=(sa, sb),
                     log_density=log_dens, transform=(mu, s))


def scale_from_drift(h, y_max=None, per_decade=256):
    """Scale map s(y) = int_0^y exp(-2 int_0^u h(z) dz) du.

    Parameters
    ----------
    h : callable
        Local drift-to-variance ratio b/sigma^2 of the SDE, integrable at 0
        (evaluated down to 1e-9).
    y_max : float, optional
        Desired table coverage.  The table never extends past the point
        where |2 int h| reaches 600 (beyond which exp saturates float64);
        from there, log s, log s' and log(s/s') continue through quadrature
        of h and an endpoint (Laplace) expansion, which is all that boundary
        classification at infinity consumes.

    Returns
    -------
    ScaleFunction
        With log_forward / log_derivative / log_ratio closures.
    """
    y_probe = np.concatenate([geometric_grid(1e-9, 1.0, 64),
                              np.geomspace(1.0, 1e6, 2049)[1:]])
    h_probe = np.asarray(h(y_probe), dtype=float)
    if not np.all(np.isfinite(h_probe)):
        raise ValueError("drift ratio is non-finite on (0, 1e6)")
    H_probe = _sciint.cumulative_simpson(h_probe, x=y_probe, initial=0.0)
    big = np.nonzero(np.abs(2.0 * H_probe) > 600.0)[0]
    saturation = y_probe[big[0]] if big.size else np.inf

    want = 1e6 if y_max is None else min(max(float(y_max) * 1.05, 1.0), 1e6)
    y_stop = float(min(saturation, max(want, 2.0)))

    n_uniform = int(max(8192, min(400_000, 2000.0 * y_stop)))
    y_tab = np.concatenate([geometric_grid(1e-9, 1.0, per_decade),
                            np.linspace(1.0, y_stop, n_uniform)[1:]])
    h_tab = np.asarray(h(y_tab), dtype=float)
    H_tab = _sciint.cumulative_simpson(h_tab, x=y_tab, initial=0.0)
    sp_tab = np.exp(-2.0 * H_tab)
    s_tab = _sciint.cumulative_simpson(sp_tab, x=y_tab, initial=0.0)
    s_tab = s_tab + y_tab[0] * sp_tab[0]  # sliver (0, y_tab[0]], slope ~ s'(0)
    if np.any(np.diff(s_tab) <= 0):
        raise NumericError("scale table is not strictly increasing")

    H_interp = PchipInterpolator(y_tab, H_tab, extrapolate=False)
    s_interp = PchipInterpolator(y_tab, s_tab, extrapolate=False)
    log_s_interp = PchipInterpolator(y_tab, np.log(s_tab), extrapolate=False)
    y_lo, y_hi = float(y_tab[0]), float(y_tab[-1])
    H_top = float(H_tab[-1])
    s_top = float(s_tab[-1])
    log_s_top = math.log(s_top)
    sp0 = float(sp_tab[0])

    def _H(y):
        """Exponent integral int_0^y h, extended past the table by quadrature."""
        y = np.asarray(y, dtype=float)
        out = np.empty_like(y)
        low = y <= y_lo
        mid = (y > y_lo) & (y <= y_hi)
        high = y > y_hi
        if np.any(low):
            out[low] = np.asarray(h(y[low]), dtype=float) * y[low]
        if np.any(mid):
            out[mid] = H_interp(y[mid])
        if np.any(high):
            vals = []
            for yy in np.atleast_1d(y[high]):
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    tail, _ = _sciint.quad(lambda u: float(np.asarray(h(np.array([u])))[0]),
                                           y_hi, min(float(yy), 1e306), limit=200)
                vals.append(H_top + tail)
            out[high] = np.asarray(vals)
        return out

    def log_derivative(y):
        return -2.0 * _H(y)

    def _tail_parts(yy):
        """(log s', log tail integral, log s/s') for scalar yy > y_hi.

        The ratio is assembled inside one logaddexp: for the growing-slope
        branch log s - log s' = logaddexp(-log slope, log s_top - log s'),
        never as a difference of two exponents of order 1e18.
        """
        lsp_end = -2.0 * float(_H(np.array([yy]))[0])
        lsp_top = -2.0 * H_top
        if lsp_end > lsp_top + 2.0:
            # growing slope: endpoint (Laplace) estimate of int exp(-2H)
            hy = float(np.asarray(h(np.array([yy])))[0])
            slope = max(-2.0 * hy, 1e-300)
            log_tail = lsp_end - math.log(slope)
            log_rat = np.logaddexp(-math.log(slope), log_s_top - lsp_end)
            return lsp_end, log_tail, log_rat
        width = max(yy - y_hi, 1e-300)
        log_avg = np.logaddexp(lsp_top, lsp_end) - math.log(2.0)
        log_tail = log_avg + math.log(width)
        log_rat = np.logaddexp(log_s_top, log_tail) - lsp_end
        return lsp_end, log_tail, log_rat

    def log_forward(y):
        y = np.asarray(y, dtype=float)
        out = np.empty_like(y)
        low = y <= y_lo
        mid = (y > y_lo) & (y <= y_hi)
        high = y > y_hi
        if np.any(low):
            with np.errstate(divide="ignore"):
                out[low] = np.log(y[low] * sp0)
        if np.any(mid):
            out[mid] = log_s_interp(y[mid])
        if np.any(high):
            out[high] = [np.logaddexp(log_s_top, _tail_parts(float(yy))[1])
                         for yy in np.atleast_1d(y[high])]
        return out

    def log_ratio(y):
        """log(s/s'), formed without differencing the huge exponents."""
        y = np.asarray(y, dtype=float)
        out = np.empty_like(y)
        low = y <= y_lo
        mid = (y > y_lo) & (y <= y_hi)
        high = y > y_hi
        if np.any(low):
            with np.errstate(divide="ignore"):
                out[low] = np.log(y[low])
        if np.any(mid):
            # in-table exponents stay below ~600 by construction, so the
            # difference of the two interpolants is well conditioned here
            out[mid] = log_s_interp(y[mid]) + 2.0 * H_interp(y[mid])
        if np.any(high):
            out[high] = [_tail_parts(float(yy))[2]
                         for yy in np.atleast_1d(y[high])]
        return out

    def forward(y):
        y = np.asarray(y, dtype=float)
        out = np.empty_like(y)
        low = y <= y_lo
        mid = (y > y_lo) & (y <= y_hi)
        high = y > y_hi
        if np.any(low):
            out[low] = y[low] * sp0
        if np.any(mid):
            out[mid] = s_interp(y[mid])
        if np.any(high):
            with np.errstate(over="ignore"):
                out[high] = np.exp(log_forward(y[high]))
        return out

    def derivative(y):
        y = np.asarray(y, dtype=float)
        with np.errstate(over="ignore"):
            return np.exp(log_derivative(y))

    def inverse(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty_like(x)
        in_tab = x <= s_top
        if np.any(in_tab):
            xt = x[in_tab]
            lo = np.zeros_like(xt)
            hi = np.full_like(xt, y_hi)
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                below = forward(mid) < xt
                lo = np.where(below, mid, lo)
                hi = np.where(below, hi, mid)
            out[in_tab] = 0.5 * (lo + hi)
        if np.any(~in_tab):
            xo = x[~in_tab]
            target = np.log(xo)
            lo = np.full_like(xo, y_hi)
            hi = np.full_like(xo, 2.0 * y_hi + 1.0)
            grow = log_forward(hi) < target
            tries = 0
            while np.any(grow) and tries < 200:
                hi[grow] *= 2.0
                grow = log_forward(hi) < target
                tries += 1
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                below = log_forward(mid) < target
                lo = np.where(below, mid, lo)
                hi = np.where(below, hi, mid)
            out[~in_tab] = 0.5 * (lo + hi)
        return out if out.shape else float(out)

    return ScaleFunction(forward=forward, inverse=inverse,
                         derivative=derivative,
                         log_forward=log_forward,
                         log_derivative=log_derivative,
                         log_ratio=log_ratio,
                         domain_hint=y_hi)


def spec_from_sde(sigma, drift, kill_rate, label="", y_max=None,
                  kill_atoms=(), absorbing_zero=True, meta=None):
    """Build a DiffusionSpec from SDE coefficients on (0, inf).

    speed density 2/(s' sigma^2), killing = kill_rate * speed plus optional
    extra killing atoms (rows (location, mass)).
    """
    def h(y):
        y = np.asarray(y, dtype=float)
        return np.asarray(drift(y), dtype=float) / np.asarray(sigma(y), dtype=float) ** 2

    s = scale_from_drift(h, y_max=y_max)
    log2 = math.log(2.0)

    def log_sprime_speed(y):
        # log of speed density * s' = log(2 / sigma^2): no scale factor at all
        return log2 - 2.0 * np.log(np.asarray(sigma(np.asarray(y, dtype=float)), dtype=float))

    def log_speed(y):
        y = np.asarray(y, dtype=float)
        return log_sprime_speed(y) - s.log_derivative(y)

    def speed_dens(y):
        with np.errstate(over="ignore", under="ignore"):
            return np.exp(log_speed(y))

    speed = Measure1D(density=speed_dens, log_density=log_speed,
                      log_sprime_density=log_sprime_speed)

    if kill_rate is None:
        killing = Measure1D(density=None,
                            atoms=np.asarray(kill_atoms, dtype=float))
    else:
        def log_kill(y):
            y = np.asarray(y, dtype=float)
            with np.errstate(divide="ignore"):
                return np.log(np.asarray(kill_rate(y), dtype=float)) + log_speed(y)

        def log_sprime_kill(y):
            y = np.asarray(y, dtype=float)
            with np.errstate(divide="ignore"):
                return np.log(np.asarray(kill_rate(y), dtype=float)) + log_sprime_speed(y)

        def kill_dens(y):
            y = np.asarray(y, dtype=float)
            return np.asarray(kill_rate(y), dtype=float) * speed_dens(y)

        killing = Measure1D(density=kill_dens,
                            atoms=np.asarray(kill_atoms, dtype=float),
                            log_density=log_kill,
                            log_sprime_density=log_sprime_kill)
    return DiffusionSpec(scale=s, speed=speed, killing=killing,
                         sde_form=SdeForm(sigma=sigma, drift=drift,
                                          kill_rate=kill_rate),
                         label=label, y_max=y_max,
                         absorbing_zero=absorbing_zero, meta=dict(meta or {}))


def natural_scale_form(spec):
    """Image of a spec under its own scale map; identity specs pass through.

    The returned spec has identity scale, pushforward speed and killing
    measures (which remember the original coordinate for integration), and
    the natural-scale SDE coefficients when the original had an SDE form.
    """
    if spec.is_natural:
        return spec
    s = spec.scale
    m_x = pushforward(spec.speed, s)
    k_x = pushforward(spec.killing, s)
    sde_x = None
    if spec.sde_form is not None:
        sigma_y = spec.sde_form.sigma
        kappa_y = spec.sde_form.kill_rate

        def sigma_x(x):
            y = np.asarray(s.inv(np.asarray(x, dtype=float)), dtype=float)
            return s.deriv(y) * np.asarray(sigma_y(y), dtype=float)

        def kappa_x(x):
            y = np.asarray(s.inv(np.asarray(x, dtype=float)), dtype=float)
            return np.asarray(kappa_y(y), dtype=float)

        zero = lambda x: np.zeros_like(np.asarray(x, dtype=float))
        sde_x = SdeForm(sigma=sigma_x, drift=zero, kill_rate=kappa_x)
    y_max_x = None
    if spec.y_max is not None:
        y_max_x = _scalar(s(spec.y_max))
    return DiffusionSpec(scale=ScaleFunction.identity(), speed=m_x, killing=k_x,
                         sde_form=sde_x,
                         label=(spec.label + " (natural scale)") if spec.label else "",
                         y_max=y_max_x, absorbing_zero=spec.absorbing_zero,
                         from_scale=s, meta=dict(spec.meta))

"""Named model builders shared by the CLI, the tests and the benchmarks.

Two families come from SDE coefficients (a logistic branching diffusion
and a Brownian motion with superlinear downward drift, each with a choice
of killing), plus a handful of natural-scale presets defined directly by
their speed and killing measures.  Every builder is deterministic and
side-effect free; the same arguments always produce the same spec.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError
from .measures import (DiffusionSpec, Measure1D, ScaleFunction,
                       spec_from_sde)

__all__ = [
    "logistic", "logistic_coefficients", "drifted_bm",
    "drifted_bm_coefficients", "bm_on_interval", "reflecting_toy",
    "jump_extended", "natural_scale_preset", "three_state_chain",
]


def _arr(y):
    return np.asarray(y, dtype=float)


def logistic_coefficients(kill="cap"):
    """(h, kappa) for the logistic family dY = sqrt(Y) dB + Y h(Y) dt.

    kill="cap" is the bounded rate 1 and y; kill="rough" oscillates near 0
    (sin(1/y) or sqrt(y), whichever is larger) while staying bounded there
    and growing like sqrt(y) at infinity.
    """
    def h(y):
        return 1.0 - _arr(y)

    if kill == "cap":
        def kappa(y):
            return np.minimum(_arr(y), 1.0)
    elif kill == "rough":
        def kappa(y):
            y = _arr(y)
            with np.errstate(divide="ignore"):
                osc = np.sin(np.where(y > 0, 1.0 / np.maximum(y, 1e-300), 0.0))
            return np.maximum(osc, np.sqrt(np.maximum(y, 0.0)))
    elif kill == "none":
        def kappa(y):
            return np.zeros_like(_arr(y))
    else:
        raise ConfigError("logistic kill must be cap, rough or none")
    return h, kappa


def logistic(kill="cap", y_max=8.0):
    """Logistic branching diffusion dY = sqrt(Y) dB + Y(1-Y) dt with killing."""
    h, kappa = logistic_coefficients(kill)
    return spec_from_sde(sigma=lambda y: np.sqrt(np.maximum(_arr(y), 0.0)),
                         drift=lambda y: _arr(y) * h(y),
                         kill_rate=None if kill == "none" else kappa,
                         label="logistic-" + kill, y_max=y_max)


# default atom killing: a few point masses with summable weight
ATOM_ROWS = ((0.5, 0.4), (1.5, 0.3), (2.5, 0.2))


def drifted_bm_coefficients(kill="power"):
    """(h, kappa) for dY = dB - h(Y) dt with h(y) = y^2.

    kill="power" is the unbounded-at-0 rate y^(-1/2) or sqrt(y); "atoms"
    means no absolutely continuous killing (point masses added by the
    spec builder); "none" switches killing off.
    """
    def h(y):
        return _arr(y) ** 2

    if kill == "power":
        def kappa(y):
            y = np.maximum(_arr(y), 1e-300)
            return np.maximum(y ** -0.5, np.sqrt(y))
    elif kill in ("atoms", "none"):
        kappa = None
    else:
        raise ConfigError("drifted_bm kill must be power, atoms or none")
    return h, kappa


def drifted_bm(kill="power", y_max=6.0, atom_rows=ATOM_ROWS):
    """Brownian motion with drift -y^2 and the chosen killing."""
    h, kappa = drifted_bm_coefficients(kill)
    return spec_from_sde(sigma=lambda y: np.ones_like(_arr(y)),
                         drift=lambda y: -h(y),
                         kill_rate=kappa,
                         kill_atoms=atom_rows if kill == "atoms" else (),
                         label="drifted-bm-" + kill, y_max=y_max)


def bm_on_interval(y_max=1.0):
    """Driftless unit Brownian motion absorbed at 0, reflected at y_max.

    The decay rate is pi^2 / (8 y_max^2) exactly, which makes this the
    cheapest calibration target for the path engine.
    """
    return spec_from_sde(sigma=lambda y: np.ones_like(_arr(y)),
                         drift=lambda y: np.zeros_like(_arr(y)),
                         kill_rate=None, label="bm-interval", y_max=y_max)


def reflecting_toy(c=0.7, y_max=6.0):
    """Ornstein-Uhlenbeck-type motion reflected at 0 with constant killing.

    No absorption: the killing clock is an independent exponential, so the
    decay rate equals c exactly and the conditioned ensemble coincides with
    the unconditioned one when c = 0.
    """
    return spec_from_sde(sigma=lambda y: np.ones_like(_arr(y)),
                         drift=lambda y: -_arr(y),
                         kill_rate=(None if c == 0.0 else
                                    lambda y: np.full_like(_arr(y), c)),
                         label="reflecting-toy", y_max=y_max,
                         absorbing_zero=False)


def jump_extended(kill="cap", y_max=8.0, jump_rate=1.0, jump_level=1.0):
    """Logistic model plus unit upward jumps at Poisson times above a level.

    The jump parameters ride in spec.meta["jumps"]; the path engine applies
    them when asked, and a path that never reaches the level is unaffected.
    """
    spec = logistic(kill=kill, y_max=y_max)
    spec.label = "jump-extended"
    spec.meta["jumps"] = (float(jump_rate), float(jump_level))
    return spec


def _ns_spec(speed, killing, label, y_max=None, sde=None):
    kwargs = {} if sde is None else {"sde_form": sde}
    return DiffusionSpec(scale=ScaleFunction.identity(), speed=speed,
                         killing=killing, label=label, y_max=y_max, **kwargs)


def natural_scale_preset(preset="brownian", cut=1.0):
    """Specs given directly by (speed, killing) in natural scale.

    brownian          unit Brownian motion on (0, cut): speed density 2,
                      no killing.
    kill_slope        Lebesgue-type speed with a fast tail, killing density
                      1/y below the cut (integrable against y there).
    kill_x2           same speed, killing density y^(-2) below the cut; the
                      killing measure is infinite near 0 and its density
                      beats every C/y bound.
    heavy_tail_kill   bounded-support speed (density 2 on (0,1)), killing
                      density 1/y beyond 1, so the first moment of the
                      killing measure diverges.
    """
    if preset == "brownian":
        from .measures import SdeForm
        speed = Measure1D(density=lambda y: np.full_like(_arr(y), 2.0),
                          support=(0.0, float(cut)))
        sde = SdeForm(sigma=lambda y: np.ones_like(_arr(y)),
                      drift=lambda y: np.zeros_like(_arr(y)),
                      kill_rate=None)
        return _ns_spec(speed, Measure1D(density=None), "ns-brownian",
                        y_max=float(cut), sde=sde)

    def speed_density(y):
        y = _arr(y)
        return np.where(y <= cut, 1.0, np.exp(-(y - cut)))

    speed = Measure1D(density=speed_density, support=(0.0, np.inf))
    if preset == "kill_slope":
        kdens = lambda y: np.where(_arr(y) <= cut,
                                   1.0 / np.maximum(_arr(y), 1e-300), 0.0)
        return _ns_spec(speed, Measure1D(density=kdens,
                                         support=(0.0, float(cut))),
                        "ns-kill-slope")
    if preset == "kill_x2":
        kdens = lambda y: np.where(_arr(y) <= cut,
                                   np.maximum(_arr(y), 1e-300) ** -2.0, 0.0)
        return _ns_spec(speed, Measure1D(density=kdens,
                                         support=(0.0, float(cut))),
                        "ns-kill-x2")
    if preset == "heavy_tail_kill":
        speed = Measure1D(density=lambda y: np.full_like(_arr(y), 2.0),
                          support=(0.0, 1.0))
        kdens = lambda y: np.where(_arr(y) >= 1.0,
                                   1.0 / np.maximum(_arr(y), 1e-300), 0.0)
        return _ns_spec(speed, Measure1D(density=kdens,
                                         support=(1.0, np.inf)),
                        "ns-heavy-tail-kill")
    raise ConfigError("unknown natural-scale preset: %r" % (preset,))


def three_state_chain(a=1.0, b=1.0, leak=0.5):
    """Dense generator of a 3-state chain with killing, for estimator tests.

    Returns (L, lambda0, gap) where L is the sub-generator (tridiagonal
    movement, leak on the diagonal) and the eigen data are computed by a
    dense solve here, independently of the spectral module.
    """
    L = np.array([[-(a + leak), a, 0.0],
                  [b, -(a + b + leak), a],
                  [0.0, b, -(b + leak)]])
    w, v = np.linalg.eig(L.T)
    order = np.argsort(-w.real)
    lam0 = -float(w.real[order[0]])
    gap = float(w.real[order[0]] - w.real[order[1]])
    return L, lam0, gap

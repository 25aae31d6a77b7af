"""Measures, integrals, scale maps, boundary classification."""

import math

import numpy as np
import pytest

from qsdlab import zoo
from qsdlab.measures import (CONVERGED, DIVERGENT, FAILS, HOLDS, Measure1D,
                             PowerWeight, ScaleFunction, classify_boundaries,
                             geometric_grid, integrate, natural_scale_form,
                             pushforward, scale_from_drift, spec_from_sde)


def lebesgue(c=1.0, support=(0.0, np.inf)):
    return Measure1D(density=lambda y: np.full_like(np.asarray(y, float), c),
                     support=support)


def test_density_moment_closed_form():
    # int_0^1 y * 2 dy = 1
    res = integrate(lebesgue(2.0), PowerWeight(1.0), (0.0, 1.0))
    assert res.status == CONVERGED
    assert res.converged
    assert res.value == pytest.approx(1.0, rel=1e-9)


def test_divergence_at_zero_is_flagged():
    mu = Measure1D(density=lambda y: np.asarray(y, float) ** -2.0,
                   support=(0.0, 1.0))
    res = integrate(mu, PowerWeight(1.0), (0.0, 1.0))
    assert res.status == DIVERGENT
    assert not res.converged


def test_divergence_at_infinity_is_flagged():
    mu = Measure1D(density=lambda y: 1.0 / np.asarray(y, float),
                   support=(1.0, np.inf))
    res = integrate(mu, PowerWeight(0.0), (1.0, np.inf))
    assert res.status == DIVERGENT


def test_atom_integration():
    mu = Measure1D(atoms=np.array([(0.5, 0.4), (1.5, 0.3)]))
    whole = integrate(mu, PowerWeight(1.0), (0.0, np.inf))
    assert whole.value == pytest.approx(0.5 * 0.4 + 1.5 * 0.3, abs=1e-14)
    below = integrate(mu, PowerWeight(1.0), (0.0, 1.0))
    assert below.value == pytest.approx(0.2, abs=1e-14)


def test_pushforward_by_substitution():
    # s(y) = y^2; int f d(s#m) on (0, s(1)) pulls back to int f(s(y)) m(dy)
    s = ScaleFunction(forward=lambda y: np.asarray(y, float) ** 2,
                      inverse=lambda x: np.sqrt(np.asarray(x, float)),
                      derivative=lambda y: 2.0 * np.asarray(y, float))
    pf = pushforward(lebesgue(2.0, support=(0.0, 1.0)), s)
    res = integrate(pf, PowerWeight(1.0), (0.0, 1.0))
    assert res.value == pytest.approx(2.0 / 3.0, rel=1e-6)


def test_geometric_grid_shape():
    g = geometric_grid(1e-3, 1e3, per_decade=32)
    assert g[0] == pytest.approx(1e-3)
    assert g[-1] == pytest.approx(1e3)
    assert np.all(np.diff(g) > 0)


def test_sde_scale_derivative_logistic():
    # sigma^2 = y, drift y(1-y): s'(y) = exp(y^2 - 2y), so s'(1) = 1/e
    spec = zoo.logistic()
    assert float(spec.scale.derivative(1.0)) == pytest.approx(math.exp(-1.0),
                                                              rel=1e-6)


def test_scale_from_drift_matches_quadrature():
    # ratio h = -y (dY = dB - Y dt): s'(y) = exp(y^2),
    # s(1) = int_0^1 exp(t^2) dt = 1.46265...
    s = scale_from_drift(lambda y: -np.asarray(y, float))
    assert float(s.derivative(1.0)) == pytest.approx(math.exp(1.0), rel=1e-6)
    assert float(s(1.0)) == pytest.approx(1.4626517459, rel=1e-6)


def test_classify_boundaries_logistic():
    rep = classify_boundaries(zoo.logistic())
    assert rep.entrance_at_infinity == HOLDS
    assert rep.zero_regular_or_exit == HOLDS
    assert rep.evidence["moment_at_infinity"].converged


def test_classify_boundaries_heavy_tail():
    rep = classify_boundaries(zoo.natural_scale_preset("heavy_tail_kill"))
    assert rep.entrance_at_infinity == FAILS


def test_classify_boundaries_divergent_kill_at_zero():
    rep = classify_boundaries(zoo.natural_scale_preset("kill_x2"))
    assert rep.zero_regular_or_exit == FAILS


def test_spec_from_sde_keeps_atoms():
    spec = zoo.drifted_bm(kill="atoms")
    assert spec.killing.atoms.shape == (3, 2)
    assert np.array_equal(spec.killing.atoms, np.asarray(zoo.ATOM_ROWS))


def test_natural_scale_form_of_natural_spec_is_cheap():
    spec = zoo.natural_scale_preset("brownian")
    ns = natural_scale_form(spec)
    assert ns.is_natural
    res = integrate(ns.speed, PowerWeight(1.0), (0.0, 1.0))
    assert res.value == pytest.approx(1.0, rel=1e-9)


def test_scale_from_drift_rejects_nonfinite_ratio():
    def ratio(y):
        with np.errstate(divide="ignore"):
            return 1.0 / (np.asarray(y, float) - 1.0)

    with pytest.raises(ValueError):
        scale_from_drift(ratio)


def test_spec_from_sde_has_sde_form():
    spec = spec_from_sde(sigma=lambda y: np.ones_like(np.asarray(y, float)),
                         drift=lambda y: np.zeros_like(np.asarray(y, float)),
                         kill_rate=None, y_max=2.0)
    assert spec.sde_form is not None
    assert spec.is_natural is False or spec.scale.is_identity

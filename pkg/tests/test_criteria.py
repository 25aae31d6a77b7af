"""Criterion checkers on the model zoo: verdicts, evidence, stability."""

import numpy as np
import pytest

from qsdlab import zoo
from qsdlab.criteria import (SATISFIED, VIOLATED, check_condition_C,
                             check_condition_Cprime, check_condition_D,
                             check_drifted_bm, check_logistic_model,
                             check_matsumoto)
from qsdlab.errors import ConfigError


def test_logistic_rough_killing_satisfied():
    h, kappa = zoo.logistic_coefficients("rough")
    v = check_logistic_model(h, kappa)
    assert v.status == SATISFIED
    assert v.satisfied and not v.violated


def test_logistic_capped_killing_satisfied():
    h, kappa = zoo.logistic_coefficients("cap")
    assert check_logistic_model(h, kappa).status == SATISFIED


def test_drifted_bm_power_killing_satisfied():
    h, kappa = zoo.drifted_bm_coefficients("power")
    assert check_drifted_bm(h, kappa).status == SATISFIED


def test_atom_killing_goes_through_the_moment_route():
    v = check_condition_D(zoo.drifted_bm(kill="atoms"))
    assert v.status == SATISFIED


def test_quadratically_divergent_killing_is_violated():
    # int_0^1 y * y^-2 dy diverges: the necessary moment fails outright
    v = check_condition_C(zoo.natural_scale_preset("kill_x2"))
    assert v.status == VIOLATED
    assert v.status != SATISFIED


def test_linearly_divergent_killing_satisfied():
    v = check_condition_C(zoo.natural_scale_preset("kill_slope"))
    assert v.status == SATISFIED


def test_matsumoto_on_brownian_preset():
    v = check_matsumoto(zoo.natural_scale_preset("brownian"))
    assert v.status == SATISFIED


def test_heavy_tail_kill_fails_entrance():
    v = check_condition_C(zoo.natural_scale_preset("heavy_tail_kill"))
    assert v.status == VIOLATED


def test_verdict_evidence_is_auditable():
    h, kappa = zoo.logistic_coefficients("rough")
    v = check_logistic_model(h, kappa)
    assert len(v.evidence) >= 1
    d = v.as_dict()
    assert d["status"] == SATISFIED
    for row in d["evidence"]:
        assert set(row) == {"name", "value", "threshold", "diagnostic"}


def test_refinement_does_not_flip_verdicts():
    h2, k2 = zoo.logistic_coefficients("rough")
    h3, k3 = zoo.drifted_bm_coefficients("power")
    cases = (
        lambda pd: check_logistic_model(h2, k2, per_decade=pd).status,
        lambda pd: check_drifted_bm(h3, k3, per_decade=pd).status,
        lambda pd: check_condition_D(zoo.drifted_bm(kill="atoms"),
                                     per_decade=pd).status,
        lambda pd: check_condition_C(zoo.natural_scale_preset("kill_x2"),
                                     per_decade=pd).status,
    )
    for case in cases:
        assert case(64) == case(128)


def test_condition_Cprime_wants_bounded_killing_near_zero():
    from qsdlab.measures import natural_scale_form
    ok = check_condition_Cprime(natural_scale_form(zoo.logistic()))
    assert ok.status == SATISFIED
    # kappa = y^(-1/2) blows up at 0: the C' route must refuse it
    bad = check_condition_Cprime(
        natural_scale_form(zoo.drifted_bm(kill="power")))
    assert bad.status == VIOLATED
    assert "unbounded near 0" in bad.notes


def test_checkers_want_natural_scale_data():
    from qsdlab.errors import NumericError
    from qsdlab.measures import natural_scale_form
    spec = zoo.logistic()
    with pytest.raises(NumericError):
        check_condition_C(spec)
    v = check_condition_C(natural_scale_form(spec))
    assert v.status in (SATISFIED, VIOLATED, "inconclusive")


def test_unknown_kill_name_rejected():
    with pytest.raises(ConfigError):
        zoo.logistic_coefficients("bogus")

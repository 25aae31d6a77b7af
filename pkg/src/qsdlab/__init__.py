"""Numerical laboratory for one-dimensional diffusions with killing.

Build a diffusion from scale/speed/killing data or SDE coefficients,
check the published sufficient criteria for a unique quasi-stationary
distribution with exponential convergence, and estimate the QSD, the
decay rate, the eigenfunction and the surviving-forever dynamics by
Monte Carlo particle systems cross-validated against a spectral solve
of the discretized generator.
"""

from .errors import ConfigError, NumericError, QsdlabError
from .measures import (BoundaryReport, DiffusionSpec, Measure1D,
                       ScaleFunction, SdeForm, classify_boundaries,
                       natural_scale_form, pushforward, scale_from_drift,
                       spec_from_sde)
from .criteria import (Verdict, check_condition_C, check_condition_Cprime,
                       check_condition_D, check_drifted_bm,
                       check_logistic_model, check_matsumoto)
from .engine import (ComingDownResult, HittingCheck, PathSample, PathsResult,
                     coming_down_probability, feller_hitting_check,
                     simulate_chain_path, simulate_killed_paths,
                     simulate_sde_path, simulate_with_jumps)
from .qsd import (EnsembleResult, EtaEstimate, Lambda0Estimate,
                  ParticleEnsemble, QsdEstimate, RateFit,
                  estimate_eta, estimate_lambda0, estimate_qsd,
                  evolve_conditioned_ensemble, fit_convergence_rate,
                  lambda0_from_survival, simulate_qprocess, tv_distance)
from .spectral import (AssumptionAReport, DiscretizedGenerator,
                       SpectralSolution, discretize_generator,
                       lambda0_bracket, principal_eigenpair,
                       qprocess_kernel, verify_assumption_A)
from . import zoo

__version__ = "0.1.0"

__all__ = [
    "QsdlabError", "ConfigError", "NumericError",
    "Measure1D", "ScaleFunction", "SdeForm", "DiffusionSpec",
    "BoundaryReport", "classify_boundaries", "natural_scale_form",
    "pushforward", "scale_from_drift", "spec_from_sde",
    "Verdict", "check_matsumoto", "check_condition_C",
    "check_condition_Cprime", "check_condition_D", "check_logistic_model",
    "check_drifted_bm",
    "PathsResult", "PathSample", "ComingDownResult", "HittingCheck",
    "simulate_killed_paths", "simulate_sde_path", "simulate_with_jumps",
    "simulate_chain_path", "coming_down_probability", "feller_hitting_check",
    "ParticleEnsemble", "EnsembleResult", "QsdEstimate", "Lambda0Estimate",
    "EtaEstimate", "RateFit", "evolve_conditioned_ensemble", "estimate_qsd",
    "estimate_lambda0", "lambda0_from_survival", "estimate_eta",
    "fit_convergence_rate", "simulate_qprocess", "tv_distance",
    "DiscretizedGenerator", "SpectralSolution", "AssumptionAReport",
    "discretize_generator", "principal_eigenpair", "qprocess_kernel",
    "verify_assumption_A", "lambda0_bracket",
    "zoo", "__version__",
]

"""Bayesian broken-stick growth modelling with nonparametric velocity
clustering and child-specific change points."""

__version__ = "0.1.0"

from .clustering import ari, maximize_pear, psm_from_draws
from .dpmix import (NIWParams, crp_prior_simulate, expected_components,
                    niw_posterior_draw, resample_concentration)
from .geweke import geweke_joint_check
from .knots import KnotVector, knot_prior_logdensity, mh_knot_step
from .mcmc import ChainConfig, ChainOutput, PriorConfig, run_chain
from .model import (ChildRecord, ChildRegression, Cohort, GlobalParams,
                    basis_row, child_loglik, trajectory_eval)
from .simulate import SimSpec, generate_paired_cohorts

__all__ = [
    "ChainConfig", "ChainOutput", "ChildRecord", "ChildRegression", "Cohort",
    "GlobalParams", "KnotVector", "NIWParams", "PriorConfig", "SimSpec",
    "ari", "basis_row", "child_loglik", "crp_prior_simulate",
    "expected_components", "generate_paired_cohorts", "geweke_joint_check",
    "knot_prior_logdensity", "maximize_pear", "mh_knot_step",
    "niw_posterior_draw", "psm_from_draws", "resample_concentration",
    "run_chain", "trajectory_eval",
]

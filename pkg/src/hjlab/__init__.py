"""Numerical lab for Hamilton-Jacobi limits of spiked rank-one models."""

from .prior import DiscretePrior, PriorError, make_prior, prior_moments, quantize_prior
from .scalar_channel import PsiCurve, psi, psi_prime, tabulate_psi
from .hopf_lax import HopfLaxResult, dpp_check, hopf_lax_eval, variational_forms_eval
from .viscosity_pde import HJGrid, comparison_check, solve_hj
from .gibbs import (ModelParams, DisorderSample, GibbsReport, sample_disorder, gibbs_enumerate,
                    free_energy_stats, nishimori_check, hj_residual_report, concentration_report)
from .curie_weiss import CWRecord, cw_free_energy, cw_identity_check, cw_limit_eval
from .config import ExperimentConfig, load_config
from .harness import run_sweep, convergence_report, emit_plots

__version__ = "0.1.0"

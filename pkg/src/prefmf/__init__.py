"""Bayesian optimization that fuses numerical evaluations with pairwise preferences.

Three Gaussian-process surrogates (preference-only, coregionalized
multi-modal, hierarchical multi-modal) drive a phased optimization loop:
cheap numerical exploration first, human comparisons last.
"""

__version__ = "0.1.0"

from .acquisition import (
    CandidateSet,
    eubo,
    eubo_values,
    expected_improvement,
    integral_predictive_variance,
    ipv_values,
    maximize_pair,
    maximize_single,
)
from .bench import SimulatedDM, SyntheticPair, grid_optimum, make_synthetic_pair
from .design import Box, unit_box
from .engine import (
    PhaseSchedule,
    RunConfig,
    RunTrace,
    TruthOracle,
    recommend,
    regret,
    regret_at_hf_episode,
    replay_recommendations,
    run_mm_mf_bo,
    run_numerical_bo,
    run_pbo,
)
from .gp import (
    FitConfig,
    FittedGP,
    GaussianPrediction,
    NumericalDataset,
    condition_closed_form,
    conditional_at_test,
    fit_gp,
    fit_point_estimate,
    log_marginal_likelihood,
)
from .kernels import (
    AugmentedInput,
    CoregMatrix,
    Fidelity,
    KernelParams,
    coreg_B,
    icm_kernel,
    icm_kernel_matrix,
    kernel_eval,
    kernel_matrix,
)
from .likelihoods import (
    Comparison,
    MixedDataset,
    ar1_comparison_loglik,
    joint_multimodal_loglik,
    probit_pref_loglik,
)
from .mcmc import (
    HMCConfig,
    LogDensityModel,
    MCMCDivergenceError,
    PosteriorSampleSet,
    check_gradient,
    hmc_sample,
    posterior_predictive,
)
from .surrogates import (
    MultiModalAR1,
    MultiModalICM,
    NumericalGP,
    PreferenceGP,
    SurrogateConfig,
    SurrogateModel,
    fit_mm_ar1,
    fit_mm_icm,
    fit_numerical_gp,
    fit_pref_gp,
    load_model,
)

__all__ = [
    "AugmentedInput",
    "Box",
    "CandidateSet",
    "Comparison",
    "CoregMatrix",
    "Fidelity",
    "FitConfig",
    "FittedGP",
    "GaussianPrediction",
    "HMCConfig",
    "KernelParams",
    "LogDensityModel",
    "MCMCDivergenceError",
    "MixedDataset",
    "MultiModalAR1",
    "MultiModalICM",
    "NumericalDataset",
    "NumericalGP",
    "PhaseSchedule",
    "PosteriorSampleSet",
    "PreferenceGP",
    "RunConfig",
    "RunTrace",
    "SimulatedDM",
    "SurrogateConfig",
    "SurrogateModel",
    "SyntheticPair",
    "TruthOracle",
    "ar1_comparison_loglik",
    "check_gradient",
    "condition_closed_form",
    "conditional_at_test",
    "coreg_B",
    "eubo",
    "eubo_values",
    "expected_improvement",
    "fit_gp",
    "fit_mm_ar1",
    "fit_mm_icm",
    "fit_numerical_gp",
    "fit_point_estimate",
    "fit_pref_gp",
    "grid_optimum",
    "hmc_sample",
    "icm_kernel",
    "icm_kernel_matrix",
    "integral_predictive_variance",
    "ipv_values",
    "joint_multimodal_loglik",
    "kernel_eval",
    "kernel_matrix",
    "load_model",
    "log_marginal_likelihood",
    "make_synthetic_pair",
    "maximize_pair",
    "maximize_single",
    "posterior_predictive",
    "probit_pref_loglik",
    "recommend",
    "regret",
    "regret_at_hf_episode",
    "replay_recommendations",
    "run_mm_mf_bo",
    "run_numerical_bo",
    "run_pbo",
    "unit_box",
    "__version__",
]

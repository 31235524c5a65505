"""Conservative intervention learning from observational data with Gaussian processes."""
from .dataset_io import Dataset, ScalingInfo, load_dataset, save_dataset, standardize
from .errors import InterveneError, NumericalError, ValidationError
from .gain import (
    GainDistribution,
    InterventionConstraints,
    RankedCandidate,
    Transformation,
    gaussian_quantile,
    individual_gain,
    objective,
    objective_gradient,
    population_gain,
    rank_candidates,
)
from .gp import (
    FitConfig,
    GpHyperparams,
    GpPosterior,
    condition,
    fit,
    log_marginal_likelihood,
    posterior_mean_cov,
    prior,
    smoothed,
)
from .harness import SimConfig, SimReport, baseline_linear_pickers, load_report, run_sem_study, run_simulation
from .kernels import BACKEND
from .optimize import (
    CovFixResult,
    OptimizerSettings,
    SparseShiftResult,
    continuation_maximize,
    forward_stepwise_covfix,
    personalized_intervention,
    project_box,
    proximal_maximize,
    soft_threshold,
    sparse_shift,
)
from .sem import (
    NoiseSpec,
    Sem,
    condition_a6,
    condition_a7,
    do_expected_outcome_change,
    optimal_fixing_set,
    optimal_single_shift,
    random_sem,
    sample_sem,
    verify_do_equality,
)

__version__ = "0.1.0"

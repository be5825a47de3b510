"""Local polynomial reconstruction and inference for functional data."""

from .errors import DataError, FdaError, NumericalError
from .estimation import (
    estimate_covariance,
    estimate_mean,
    estimate_noise_variance,
    ideal_covariance,
    ideal_mean,
    theoretical_amse,
)
from .flm import DesignMatrix, Restriction, coefficient_bands, fit_flm, restricted_fit
from .inference import (
    MixtureNull,
    TestReport,
    chi2_approx_params,
    covariance_eigen,
    global_test,
    p_value_boot,
    p_value_chi2,
    p_value_sim,
    standardized_process,
    test_statistic,
)
from .kernels import SmootherSpec, equivalent_kernel, eval_kernel, kernel_functionals
from .numerics import spawn_stream
from .smoothing import (
    CurveSet,
    EvaluationGrid,
    FunctionalDataset,
    gcv_score,
    lpk_weights,
    reconstruct,
    select_bandwidth,
)

__version__ = "0.1.0"

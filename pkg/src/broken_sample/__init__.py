"""Detection toolkit for the broken sample problem.

Given two samples observed without correspondence, decide whether they
are correlated through a hidden injection.  The package provides the
spectral machinery of the likelihood-ratio operator, samplers for
Gaussian, Bernoulli, and finite-discrete joint models, the exact null
second moment of the all-injections likelihood ratio, a family of
permutation-blind test statistics, their limiting laws for threshold
calibration, and a command line harness that sweeps ROC and power
curves to CSV.
"""

__version__ = "0.1.0"

from .spectrum import (
    Spectrum,
    GaussianSpectrumIndex,
    bernoulli_spectrum,
    chi2_information,
    discrete_spectrum,
    gaussian_spectrum,
    hermite_normalized,
    maximal_correlation,
    mehler_kernel,
)
from .models import (
    BernoulliModel,
    Dataset,
    DiscreteModel,
    GaussianModel,
    JointModel,
    derive_rng,
    load_dataset,
    model_from_config,
    sample_dataset,
    sample_injection,
    save_dataset,
)
from .second_moment import (
    PowerSeriesCoeffs,
    TwoCoreDecomposition,
    a_coefficients,
    a_limit_gap,
    brute_force_second_moment,
    count_extensions,
    second_moment,
    t_weights,
    two_core,
)
from .detectors import (
    DetectorReport,
    HistogramEmbedding,
    build_histogram_embedding,
    t_eigen,
    t_hist,
    t_inner,
    t_means,
    t_top,
    wasserstein_test,
)
from .asymptotics import (
    LimitLawSample,
    calibrate_threshold,
    h1_limit_law,
    limit_power,
    sample_xi,
    sample_xi_r,
)
from .errors import (
    BrokenSampleError,
    ConfigError,
    DegenerateStatisticError,
    UnsupportedCaseError,
)

__all__ = [name for name in dir() if not name.startswith("_")]

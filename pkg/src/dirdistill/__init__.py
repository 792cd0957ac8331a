"""Ensemble distribution distillation with proxy-Dirichlet targets.

Core layers:

    special      lgamma / digamma / trigamma scalar kernels
    dirichlet    Dirichlet density, uncertainty measures, KL
    ensemble     measures over raw member predictions
    proxy        proxy-Dirichlet target fitting
    losses       distillation objectives and exact logit gradients
    gradratio    first-order gradient-balance analysis
    classify     synthetic-blob classification distillation pipeline
    seq          toy autoregressive distillation pipeline
    cli          config-driven command line entry point
"""

__version__ = "0.1.0"
BUILD_ID = f"dirdistill {__version__}"

from .dirichlet import (  # noqa: F401
    DirichletParams,
    ProbVector,
    UncertaintyReport,
    dir_diff_entropy,
    dir_epkl,
    dir_kl,
    dir_log_pdf,
    dir_mean,
    dir_mutual_info,
    dir_report,
    dir_rmi,
    dir_total_uncertainty,
)
from .ensemble import EnsembleSlice, ens_epkl, ens_mean, ens_mkl, ens_report  # noqa: F401
from .losses import (  # noqa: F401
    LossValueGrad,
    dirichlet_nll,
    grad_aggregated,
    grad_temperature,
    kl_forward,
    kl_reverse,
    param_mean_precision,
    param_standard,
    soft_ce,
    with_plus_one,
)
from .proxy import PrecisionEstimator, ProxyConfig, fit_proxy  # noqa: F401
from .special import digamma, lgamma, trigamma  # noqa: F401

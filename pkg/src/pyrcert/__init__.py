"""Convergence certificates and spectral diagnostics for deep pyramidal
networks trained by full-batch gradient descent."""

from .activation import ActivationParams, deriv, deriv2, evaluate, gap_bound, uniform_gap
from .certificates import (
    Certificate,
    certify,
    check_assumption,
    lambda_f,
    monitor_invariants,
    predicted_decay,
    rate_constants,
    spectral_quantities,
)
from .gradients import (
    GradientBundle,
    TrainConfig,
    TrainLog,
    grad,
    jacobian_block,
    pl_lower_bound,
    train,
)
from .initializers import (
    InitConfig,
    WidthPlan,
    init_certifiable,
    init_lecun,
    required_width_lecun,
    sphere_data,
    tune_gain,
)
from .lambda_star import (
    GramEstimate,
    HermiteSpec,
    gram_hermite,
    gram_mc,
    hermite_coeff,
    hermite_coeffs,
    hermite_poly,
    khatri_rao_power,
    kr_min_singular,
    lambda_star,
)
from .network import Dataset, ForwardTrace, Params, Shape, forward, loss, theta_distance, unvec, vec

__version__ = "0.1.0"

__all__ = [
    "ActivationParams",
    "Certificate",
    "Dataset",
    "ForwardTrace",
    "GradientBundle",
    "GramEstimate",
    "HermiteSpec",
    "InitConfig",
    "Params",
    "Shape",
    "TrainConfig",
    "TrainLog",
    "WidthPlan",
    "certify",
    "check_assumption",
    "deriv",
    "deriv2",
    "evaluate",
    "forward",
    "gap_bound",
    "grad",
    "gram_hermite",
    "gram_mc",
    "hermite_coeff",
    "hermite_coeffs",
    "hermite_poly",
    "init_certifiable",
    "init_lecun",
    "jacobian_block",
    "khatri_rao_power",
    "kr_min_singular",
    "lambda_f",
    "lambda_star",
    "loss",
    "monitor_invariants",
    "pl_lower_bound",
    "predicted_decay",
    "rate_constants",
    "required_width_lecun",
    "spectral_quantities",
    "sphere_data",
    "theta_distance",
    "train",
    "tune_gain",
    "unvec",
    "uniform_gap",
    "vec",
]

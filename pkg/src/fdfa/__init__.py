"""Forward direct feedback alignment and the gradient estimators it is compared with."""
from .core import FitResult, RngStream, ShapeError, loglog_fit
from .data import Dataset, load_bundled_mnist, load_mnist_idx
from .estimators import (
    ESTIMATORS,
    FeedbackState,
    LocalHeads,
    dfa_feedback,
    estimate_bp,
    estimate_dfa,
    estimate_fga,
    estimate_fgw,
    estimate_lgfga,
    fdfa_feedback,
    fdfa_step,
)
from .experiments import (
    ExperimentConfig,
    load_config,
    run_alignment_scan,
    run_noise_sweep,
    run_train,
    run_variance_scan,
)
from .kernels import BACKEND
from .metrics import alignment, estimation_variance, make_sampler, variance_decomposition
from .network import MlpSpec, MlpState, backprop, forward, forward_with_tangent, kaiming_uniform_init
from .optim import OptimConfig, Optimizer

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Dataset", "ESTIMATORS", "ExperimentConfig", "FeedbackState", "FitResult",
    "LocalHeads", "MlpSpec", "MlpState", "OptimConfig", "Optimizer", "RngStream", "ShapeError",
    "alignment", "backprop", "dfa_feedback", "estimate_bp", "estimate_dfa", "estimate_fga",
    "estimate_fgw", "estimate_lgfga", "estimation_variance", "fdfa_feedback", "fdfa_step",
    "forward", "forward_with_tangent", "kaiming_uniform_init", "load_bundled_mnist",
    "load_config", "load_mnist_idx", "loglog_fit", "make_sampler", "run_alignment_scan",
    "run_noise_sweep", "run_train", "run_variance_scan", "variance_decomposition",
]

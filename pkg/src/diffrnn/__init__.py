"""Recurrent networks trained by Gaussian diffusion of the cost (continuation).

The closed-form smoothed activations live in :mod:`diffrnn.activations`, the
network and its smoothed forward pass in :mod:`diffrnn.model`, the smoothed
objective in :mod:`diffrnn.cost`, analytic gradients in :mod:`diffrnn.grad`,
the continuation loop and baselines in :mod:`diffrnn.optimizer`, and the adding
problem in :mod:`diffrnn.tasks`.
"""

from .activations import KINDS, DiffusedActivation, mc_convolution_oracle
from .cost import CostBreakdown, diffused_cost, mse, penalized_cost, plain_cost, quadratic_smoothing_identity_check
from .estimator import DiffusionRNNRegressor
from .exceptions import (
    ConfigError,
    DataFormatError,
    DiffRNNError,
    DivergenceError,
    DomainError,
    NumericError,
    ShapeError,
    UnsupportedOperationError,
    VersionMismatchError,
)
from .grad import FDReport, GradBlocks, fd_check, gradient, gradient_reference
from .model import Dims, ForwardTrace, RnnParams, forward, init_params, load_params, predict, save_params
from .optimizer import (
    ContinuationSchedule,
    StepRule,
    TrainLog,
    ackley,
    continuation_train,
    grid_diffuse_demo,
    mc_diffused_gradient,
    sgd_train,
    step_size,
)
from .tasks import SequenceDataset, gen_adding, load_dataset, save_dataset, split

__version__ = "0.1.0"

__all__ = [
    "KINDS",
    "DiffusedActivation",
    "mc_convolution_oracle",
    "CostBreakdown",
    "diffused_cost",
    "mse",
    "penalized_cost",
    "plain_cost",
    "quadratic_smoothing_identity_check",
    "DiffusionRNNRegressor",
    "ConfigError",
    "DataFormatError",
    "DiffRNNError",
    "DivergenceError",
    "DomainError",
    "NumericError",
    "ShapeError",
    "UnsupportedOperationError",
    "VersionMismatchError",
    "FDReport",
    "GradBlocks",
    "fd_check",
    "gradient",
    "gradient_reference",
    "Dims",
    "ForwardTrace",
    "RnnParams",
    "forward",
    "init_params",
    "load_params",
    "predict",
    "save_params",
    "ContinuationSchedule",
    "StepRule",
    "TrainLog",
    "ackley",
    "continuation_train",
    "grid_diffuse_demo",
    "mc_diffused_gradient",
    "sgd_train",
    "step_size",
    "SequenceDataset",
    "gen_adding",
    "load_dataset",
    "save_dataset",
    "split",
]

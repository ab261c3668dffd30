"""Joint bi-directional optical flow and occlusion estimation with
weight-shared iterative residual refinement, plus the synthetic data,
losses, metrics, and experiment harness to exercise it at desk scale.
"""

from irrflow.datagen import DataConfig, MotionSpec, SceneSample, make_sample
from irrflow.estimator import IRRFlowEstimator
from irrflow.metrics import EvalReport
from irrflow.model import (
    IRRFlowNet,
    IRRPWC,
    IterationState,
    ModelConfig,
    ModelOutput,
    build_model,
    count_parameters,
    parameter_registry,
)
from irrflow.train import TrainConfig, evaluate, load_model, train

__version__ = "0.1.0"

__all__ = [
    "DataConfig",
    "EvalReport",
    "IRRFlowEstimator",
    "IRRFlowNet",
    "IRRPWC",
    "IterationState",
    "ModelConfig",
    "ModelOutput",
    "MotionSpec",
    "SceneSample",
    "TrainConfig",
    "build_model",
    "count_parameters",
    "evaluate",
    "load_model",
    "make_sample",
    "parameter_registry",
    "train",
    "__version__",
]

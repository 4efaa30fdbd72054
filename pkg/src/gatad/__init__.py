"""Multivariate time-series anomaly detection.

Sliding windows are embedded by a temporal convolution, mixed by
feature-oriented and time-oriented graph attention, summarized by a GRU, and
scored by two heads trained jointly: a one-step forecaster and a variational
reconstructor. Scores are thresholded by a peaks-over-threshold tail fit and
evaluated with segment-aware protocols, including per-feature root-cause
ranking. Everything runs on an in-package reverse-mode autodiff tape.
"""

__version__ = "0.1.0"

from .config import RunConfig, ScoringConfig, load_run_config
from .errors import (
    CheckpointVersionError,
    ConfigError,
    ContractError,
    CorruptCheckpointError,
    DataError,
    DimensionError,
    DomainError,
    GatadError,
    NumericError,
    StateError,
)
from .evaluation import (
    EvalReport,
    delay_adjust,
    diagnose,
    event_peak,
    hitrate_at,
    ndcg_at,
    point_adjust,
    prf1,
)
from .network import (
    ForwardOutput,
    ModelConfig,
    forward,
    init_params,
    loss_forecast,
    loss_joint,
    loss_reconstruction,
    reconstruction_probability,
)
from .scoring import PotResult, ScoreSeries, detect, pot_fit, score_stream
from .tensor import Tape, Tensor, grad_check
from .trainer import (
    Adam,
    TrainConfig,
    TrainResult,
    load_checkpoint,
    make_windows,
    save_checkpoint,
    train,
)

__all__ = [
    "Tape",
    "Tensor",
    "grad_check",
    "ModelConfig",
    "ForwardOutput",
    "init_params",
    "forward",
    "loss_forecast",
    "loss_reconstruction",
    "loss_joint",
    "reconstruction_probability",
    "TrainConfig",
    "TrainResult",
    "Adam",
    "make_windows",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "ScoreSeries",
    "PotResult",
    "score_stream",
    "pot_fit",
    "detect",
    "point_adjust",
    "delay_adjust",
    "prf1",
    "EvalReport",
    "diagnose",
    "event_peak",
    "hitrate_at",
    "ndcg_at",
    "RunConfig",
    "ScoringConfig",
    "load_run_config",
    "GatadError",
    "DimensionError",
    "DomainError",
    "ConfigError",
    "DataError",
    "StateError",
    "ContractError",
    "NumericError",
    "CorruptCheckpointError",
    "CheckpointVersionError",
    "__version__",
]

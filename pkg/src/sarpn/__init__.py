"""Structure-aware residual pyramid network for monocular depth estimation."""

from .config import RunConfig, TrainConfig, load_config
from .errors import ConfigurationError, DataError, DivergenceError, FormatError, SarpnError
from .loss import LossConfig, build_gt_pyramid, total_loss
from .model import ABLATIONS, SARPN, ModelConfig

__version__ = "0.1.0"

__all__ = [
    "ABLATIONS",
    "ConfigurationError",
    "DataError",
    "DivergenceError",
    "FormatError",
    "LossConfig",
    "ModelConfig",
    "RunConfig",
    "SARPN",
    "SarpnError",
    "TrainConfig",
    "build_gt_pyramid",
    "load_config",
    "total_loss",
]

"""Twins-PCPVT / Twins-SVT vision transformers on a small numpy autodiff engine."""

from .models import BUILTIN_NAMES, ModelConfig, StageConfig, build, builtin_config, forward, micro_config
from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = [
    "BUILTIN_NAMES",
    "ModelConfig",
    "StageConfig",
    "Tensor",
    "backward",
    "build",
    "builtin_config",
    "forward",
    "micro_config",
    "no_grad",
]

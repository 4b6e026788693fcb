"""Interpretable feature extractor: non-overlapping conv encoding with spatial attention."""
from .envs import Catch, EnvConfig, make_env
from .geometry import ConvStackSpec, audit_report, displacement, receptive_field
from .model import AfeConfig, HueConfig, Model, ModelConfig

__all__ = [
    "AfeConfig", "Catch", "ConvStackSpec", "EnvConfig", "HueConfig", "Model", "ModelConfig",
    "audit_report", "displacement", "make_env", "receptive_field",
]
__version__ = "0.1.0"

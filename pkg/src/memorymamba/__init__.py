"""Memory-augmented selective-scan classifier for surface-defect images, on a
small numpy autodiff engine."""

from .config import LossConfig, ModelConfig, OptimConfig, RunConfig, load_config
from .model import ForwardOutputs, MemoryMamba

__version__ = "0.1.0"

__all__ = ["ForwardOutputs", "LossConfig", "MemoryMamba", "ModelConfig", "OptimConfig", "RunConfig", "load_config"]

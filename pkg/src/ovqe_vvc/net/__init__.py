from .checkpoint import checkpoint_config, load_weights, save_weights
from .enhance import enhance_sequence
from .model import ModelConfig, OVQENet, build_model, randomize_, zero_head_
from .ops import deformable_sample, frequency_decompose

__all__ = [
    "ModelConfig", "OVQENet", "build_model", "randomize_", "zero_head_", "enhance_sequence",
    "load_weights", "save_weights", "checkpoint_config", "deformable_sample", "frequency_decompose",
]

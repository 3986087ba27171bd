"""Fixed-point multi-domain GAN training and detection-by-removal evaluation."""

from .models import (
    ArchConfig,
    ConfigError,
    DiscriminatorNet,
    GeneratorNet,
    build_discriminator,
    build_generator,
    delta_map,
    discriminate,
    translate,
)
from .losses import LossWeights
from .training import TrainConfig, TrainState, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "ArchConfig",
    "ConfigError",
    "DiscriminatorNet",
    "GeneratorNet",
    "LossWeights",
    "TrainConfig",
    "TrainState",
    "build_discriminator",
    "build_generator",
    "delta_map",
    "discriminate",
    "load_checkpoint",
    "save_checkpoint",
    "train",
    "translate",
]

"""
hydra-sr: RGB to hyperspectral reconstruction through a spectral teacher's
latent space.
"""

__version__ = "1.0.0"

from .config import ModelConfig, RunConfig, StageConfig
from .data import HSICube, RGBImage, Sample
from .student import Student
from .teacher import Teacher

__all__ = [
	"HSICube",
	"ModelConfig",
	"RGBImage",
	"RunConfig",
	"Sample",
	"StageConfig",
	"Student",
	"Teacher",
	"__version__",
]

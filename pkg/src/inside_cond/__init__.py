"""Conditioning layers for segmentation networks, compared on procedural
scenes: FiLM, conditional instance normalization, the Guiding Block, and
per-channel Gaussian spatial attention with feature-wise modulation.
"""

from .config import ExperimentConfig
from .layers import (
    CinParams,
    FilmParams,
    GaussianParams,
    GuidingParams,
    Hypernet,
    attention_matrix,
    cin_forward,
    film_forward,
    gaussian_vector,
    guiding_block_forward,
    inside_forward,
)
from .losses import LossConfig, combined_loss, dice_loss, dice_score, focal_loss
from .networks import BackboneConfig, EncoderDecoder, UNet, build_model
from .optim import Adam, OptimizerConfig
from .tensor import Tensor, finite_difference_check

__all__ = [
    "Adam",
    "BackboneConfig",
    "CinParams",
    "EncoderDecoder",
    "ExperimentConfig",
    "FilmParams",
    "GaussianParams",
    "GuidingParams",
    "Hypernet",
    "LossConfig",
    "OptimizerConfig",
    "Tensor",
    "UNet",
    "attention_matrix",
    "build_model",
    "cin_forward",
    "combined_loss",
    "dice_loss",
    "dice_score",
    "film_forward",
    "finite_difference_check",
    "focal_loss",
    "gaussian_vector",
    "guiding_block_forward",
    "inside_forward",
]

"""Feed-forward prediction of splatter maps from four views."""
from . import autodiff
from .autodiff import Tensor, UnsupportedOpError
from .checkpoint import load_checkpoint, save_checkpoint
from .network import (
    N_VIEWS,
    ForwardResult,
    PredictorConfig,
    backward,
    build_inputs,
    forward,
    init_params,
    output_camera,
    ray_embedding,
    weight_keys,
)
from .train import ELEVATION_LIMIT_DEG, TrainResult, draw_sample, sample_elevation, sample_loss, train

__all__ = [
    "autodiff",
    "Tensor",
    "UnsupportedOpError",
    "load_checkpoint",
    "save_checkpoint",
    "N_VIEWS",
    "ForwardResult",
    "PredictorConfig",
    "backward",
    "build_inputs",
    "forward",
    "init_params",
    "output_camera",
    "ray_embedding",
    "weight_keys",
    "ELEVATION_LIMIT_DEG",
    "TrainResult",
    "draw_sample",
    "sample_elevation",
    "sample_loss",
    "train",
]

"""Gradient-based fitting of Gaussian frames to multi-view images."""
from .augment import AugmentDraw, Augmentation, bilinear_matrix, draw_augmentation, grid_distortion, jitter_camera
from .fit import (
    DECAY_KEYS,
    PARAM_KEYS,
    DivergenceError,
    FitConfig,
    FitResult,
    fit_frame,
    frame_loss,
    optimizer_step,
    smooth_trace,
    step,
)
from .loss import GradientPyramidMetric, PerceptualMetric, area_matrix, photometric_loss, resize, resize_adjoint
from .optim import AdamState, NonFiniteGradientError, adamw_update, clip_by_global_norm, cosine_lr, global_norm

__all__ = [
    "AugmentDraw",
    "Augmentation",
    "bilinear_matrix",
    "draw_augmentation",
    "grid_distortion",
    "jitter_camera",
    "DECAY_KEYS",
    "PARAM_KEYS",
    "DivergenceError",
    "FitConfig",
    "FitResult",
    "fit_frame",
    "frame_loss",
    "optimizer_step",
    "smooth_trace",
    "step",
    "GradientPyramidMetric",
    "PerceptualMetric",
    "area_matrix",
    "photometric_loss",
    "resize",
    "resize_adjoint",
    "AdamState",
    "NonFiniteGradientError",
    "adamw_update",
    "clip_by_global_norm",
    "cosine_lr",
    "global_norm",
]

"""Command-line pipeline, file formats, metrics and external-model interfaces."""
from . import io
from .config import ConfigError, PipelineConfig, config_help, dump_config, load_config, parse_config
from .interfaces import ENHANCERS, IdentityEnhancer, ImageEnhancer, MultiViewSource, SceneRenderSource, UnsharpEnhancer
from .metrics import mse, psnr, sequence_metrics, ssim

__all__ = [
    "io",
    "ConfigError",
    "PipelineConfig",
    "config_help",
    "dump_config",
    "load_config",
    "parse_config",
    "ENHANCERS",
    "IdentityEnhancer",
    "ImageEnhancer",
    "MultiViewSource",
    "SceneRenderSource",
    "UnsharpEnhancer",
    "mse",
    "psnr",
    "sequence_metrics",
    "ssim",
]

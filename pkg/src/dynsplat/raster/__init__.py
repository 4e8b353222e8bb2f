"""Tile-based differentiable Gaussian rasterizer."""
from .projection import COV2D_FLOOR, EXTENT_SIGMAS, Projected2D, ProjectionState, project, project_frame
from .render import (
    ALPHA_MAX,
    DEFAULT_SETTINGS,
    T_MIN,
    InvalidStateError,
    RasterSettings,
    RenderState,
    rasterize,
    render,
    render_backward,
    render_brute,
)
from .tiles import TILE_SIZE, BinnedTiles, TileBin, bin_gaussians, bin_tiles

__all__ = [
    "COV2D_FLOOR",
    "EXTENT_SIGMAS",
    "Projected2D",
    "ProjectionState",
    "project",
    "project_frame",
    "ALPHA_MAX",
    "DEFAULT_SETTINGS",
    "T_MIN",
    "InvalidStateError",
    "RasterSettings",
    "RenderState",
    "rasterize",
    "render",
    "render_backward",
    "render_brute",
    "TILE_SIZE",
    "BinnedTiles",
    "TileBin",
    "bin_gaussians",
    "bin_tiles",
]

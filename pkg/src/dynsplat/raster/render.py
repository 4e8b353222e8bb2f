from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Camera, GaussianFrame, ImageBuffer
from . import kernels
from .projection import COV2D_FLOOR, EXTENT_SIGMAS, ProjectionState, project_frame, projection_backward
from .tiles import TILE_SIZE, BinnedTiles, bin_gaussians

ALPHA_MAX = 0.99
T_MIN = 1e-4


class InvalidStateError(RuntimeError):
    """The forward state handed to the backward pass does not match its inputs."""


@dataclass(frozen=True)
class RasterSettings:
    tile_size: int = TILE_SIZE
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    early_stop: bool = True
    extent_sigmas: float = EXTENT_SIGMAS
    alpha_max: float = ALPHA_MAX
    t_min: float = T_MIN
    cov_floor: float = COV2D_FLOOR

    @property
    def power_cutoff(self) -> float:
        return 0.5 * self.extent_sigmas**2

    @property
    def bg(self) -> np.ndarray:
        return np.asarray(self.background, dtype=np.float64)


DEFAULT_SETTINGS = RasterSettings()


@dataclass
class RenderState:
    """Everything the backward pass replays from."""

    frame: GaussianFrame
    camera: Camera
    settings: RasterSettings
    proj: ProjectionState
    bins: BinnedTiles
    final_t: np.ndarray
    n_contrib: np.ndarray
    colors_overridden: bool = False


def rasterize(
    frame: GaussianFrame,
    cam: Camera,
    settings: RasterSettings = DEFAULT_SETTINGS,
    colors: np.ndarray | None = None,
) -> tuple[ImageBuffer, RenderState]:
    """Tiled forward pass; returns the RGBA image and the replay state."""
    proj = project_frame(frame, cam, settings.extent_sigmas, settings.cov_floor, colors=colors)
    bins = bin_gaussians(
        proj.mean2d, proj.radius, proj.depth, proj.visible, cam.width, cam.height, settings.tile_size
    )
    rgb, final_t, n_contrib = kernels.forward_tiles(
        bins.ranges, bins.ids, bins.tiles_x, bins.tile_size, cam.width, cam.height,
        proj.mean2d, proj.conic, proj.color, proj.alpha_peak, settings.bg,
        settings.power_cutoff, settings.alpha_max, settings.t_min, settings.early_stop,
    )
    img = np.concatenate([rgb, (1.0 - final_t)[..., None]], axis=2)
    state = RenderState(frame, cam, settings, proj, bins, final_t, n_contrib, colors is not None)
    return ImageBuffer(img), state


def render(frame: GaussianFrame, cam: Camera, settings: RasterSettings = DEFAULT_SETTINGS) -> ImageBuffer:
    """RGBA render: color composited over the background, alpha = 1 - transmittance."""
    return rasterize(frame, cam, settings)[0]


def render_brute(
    frame: GaussianFrame,
    cam: Camera,
    settings: RasterSettings = DEFAULT_SETTINGS,
    *,
    early_stop: bool = False,
    force_all: bool = False,
    truncate: bool = True,
) -> ImageBuffer:
    """Oracle renderer: every pixel blends every splat in global depth order.

    ``force_all`` skips frustum/footprint culling (only splats behind the
    camera are dropped) and ``truncate=False`` evaluates kernels without the
    footprint cutoff; together they expose what culling throws away.
    """
    proj = project_frame(frame, cam, settings.extent_sigmas, settings.cov_floor, cull=not force_all)
    idx = np.flatnonzero(proj.visible)
    order = idx[np.lexsort((idx, proj.depth[idx]))].astype(np.int64)
    rgb, final_t = kernels.forward_brute(
        order, cam.width, cam.height, proj.mean2d, proj.conic, proj.color, proj.alpha_peak,
        settings.bg, settings.power_cutoff, settings.alpha_max, settings.t_min, early_stop, truncate,
    )
    return ImageBuffer(np.concatenate([rgb, (1.0 - final_t)[..., None]], axis=2))


def render_backward(
    frame: GaussianFrame,
    cam: Camera,
    grad_image: np.ndarray,
    state: RenderState,
) -> dict[str, np.ndarray]:
    """Exact gradients of a scalar loss w.r.t. every parameter of ``frame``.

    ``grad_image`` is dL/d(image), shape (H, W, 3) or (H, W, 4); the fourth
    channel is the gradient w.r.t. the output alpha.
    """
    if state.frame is not frame and not state.frame.equals(frame):
        raise InvalidStateError("render state was produced for a different frame")
    if state.camera is not cam:
        same = (
            state.camera.width == cam.width
            and state.camera.height == cam.height
            and np.array_equal(state.camera.K, cam.K)
            and np.array_equal(state.camera.rotation, cam.rotation)
            and np.array_equal(state.camera.translation, cam.translation)
        )
        if not same:
            raise InvalidStateError("render state was produced for a different camera")
    g = np.asarray(grad_image, dtype=np.float64)
    if g.ndim != 3 or g.shape[:2] != (cam.height, cam.width) or g.shape[2] not in (3, 4):
        raise InvalidStateError(f"gradient image shape {g.shape} does not match the render")
    grad_rgb = np.ascontiguousarray(g[..., :3])
    grad_alpha = np.ascontiguousarray(g[..., 3]) if g.shape[2] == 4 else np.zeros(g.shape[:2])

    s = state.settings
    proj = state.proj
    d_mean, d_conic, d_color, d_opac = kernels.backward_tiles(
        state.bins.ranges, state.bins.ids, state.bins.tiles_x, state.bins.tile_size, cam.width, cam.height,
        proj.mean2d, proj.conic, proj.color, proj.alpha_peak, s.bg, s.power_cutoff, s.alpha_max,
        state.n_contrib, state.final_t, grad_rgb, grad_alpha, len(frame),
    )
    return projection_backward(frame, cam, proj, d_mean, d_conic, d_color, d_opac, state.colors_overridden)

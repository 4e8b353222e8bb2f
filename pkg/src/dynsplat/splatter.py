"""Splatter images: one Gaussian per pixel, placed along that pixel's camera ray.

Channel layout (14 channels, SH degree 0):

    0       depth_raw      view-space depth = near + sigmoid(depth_raw) * (far - near)
    1:3     xy_offset      sub-pixel offset, 0.5 * tanh(.) pixels
    3:6     log_scale
    6:10    rotation       unnormalized quaternion (wxyz, world frame)
    10      opacity_logit
    11:14   sh_dc

The ray direction is scaled to unit view-space z, so the decoded depth is the
Gaussian's camera-space z coordinate.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import Camera, GaussianFrame, InvalidInputError, logit, sigmoid

N_CHANNELS = 14
SL_DEPTH = slice(0, 1)
SL_OFFSET = slice(1, 3)
SL_SCALE = slice(3, 6)
SL_ROT = slice(6, 10)
SL_OPACITY = slice(10, 11)
SL_SH = slice(11, 14)
EMPTY_OPACITY_LOGIT = -10.0
_OFFSET_LIMIT = 1.0 - 1e-12


@dataclass(frozen=True, eq=False)
class SplatterMap:
    """(H, W, 14) pixel-wise Gaussian parameters expressed in ``camera``.

    ``source_index`` (filled by ``encode``) maps pixels to the frame index
    they came from, -1 for empty cells; ``dropped`` counts Gaussians lost to
    collisions or failed projection.
    """

    data: np.ndarray
    camera: Camera
    source_index: np.ndarray | None = None
    dropped: int = 0

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 3 or d.shape[2] != N_CHANNELS:
            raise InvalidInputError(f"splatter map must be HxWx{N_CHANNELS}, got {d.shape}")
        if d.shape[:2] != (self.camera.height, self.camera.width):
            raise InvalidInputError(f"map {d.shape[:2]} does not match camera {(self.camera.height, self.camera.width)}")
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @classmethod
    def empty(cls, cam: Camera) -> "SplatterMap":
        d = np.zeros((cam.height, cam.width, N_CHANNELS))
        d[..., SL_ROT.start] = 1.0
        d[..., SL_OPACITY] = EMPTY_OPACITY_LOGIT
        return cls(d, cam, np.full((cam.height, cam.width), -1, dtype=np.int64), 0)


def _pixel_grid(cam: Camera):
    py, px = np.mgrid[0 : cam.height, 0 : cam.width].astype(np.float64)
    return px.ravel(), py.ravel()


@dataclass
class DecodeCache:
    """Intermediates of ``decode`` needed by ``decode_backward``."""

    depth_sig: np.ndarray
    tanh_off: np.ndarray
    ray_world: np.ndarray
    depth: np.ndarray
    q_raw: np.ndarray


def decode(m: SplatterMap, timestamp: int = 1, return_cache: bool = False):
    """Back-project every pixel of ``m`` into a world-space Gaussian (H*W of them, row-major)."""
    d = m.data.reshape(-1, N_CHANNELS)
    if not np.all(np.isfinite(d)):
        raise InvalidInputError("splatter map contains non-finite values")
    cam = m.camera
    px, py = _pixel_grid(cam)
    tanh_off = np.tanh(d[:, SL_OFFSET])
    u = px + 0.5 + 0.5 * tanh_off[:, 0]
    v = py + 0.5 + 0.5 * tanh_off[:, 1]
    s = sigmoid(d[:, 0])
    depth = cam.near + s * (cam.far - cam.near)
    ray_cam = np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u)], axis=1)
    ray_world = ray_cam @ cam.rotation  # R^T applied to row vectors
    pos = cam.center + depth[:, None] * ray_world
    q_raw = d[:, SL_ROT]
    norms = np.linalg.norm(q_raw, axis=1)
    if np.any(norms == 0):
        raise InvalidInputError("zero rotation quaternion in splatter map")
    frame = GaussianFrame(
        pos,
        d[:, SL_SCALE],
        q_raw / norms[:, None],
        d[:, SL_OPACITY.start],
        d[:, SL_SH][:, :, None],
        timestamp=timestamp,
    )
    if return_cache:
        return frame, DecodeCache(s, tanh_off, ray_world, depth, q_raw)
    return frame


def decode_backward(m: SplatterMap, cache: DecodeCache, grads: Mapping[str, np.ndarray]) -> np.ndarray:
    """Chain frame-parameter gradients back to the (H, W, 14) map channels."""
    cam = m.camera
    g = np.zeros((m.height * m.width, N_CHANNELS))
    gp = grads["positions"]
    # position = center + depth * R^T (x_c, y_c, 1)
    g_depth = np.sum(gp * cache.ray_world, axis=1)
    g[:, 0] = g_depth * (cam.far - cam.near) * cache.depth_sig * (1 - cache.depth_sig)
    g_ray_cam = (gp * cache.depth[:, None]) @ cam.rotation.T
    g[:, 1] = g_ray_cam[:, 0] / cam.fx * 0.5 * (1 - cache.tanh_off[:, 0] ** 2)
    g[:, 2] = g_ray_cam[:, 1] / cam.fy * 0.5 * (1 - cache.tanh_off[:, 1] ** 2)
    g[:, SL_SCALE] = grads["log_scales"]
    q = cache.q_raw
    n = np.linalg.norm(q, axis=1, keepdims=True)
    qn = q / n
    gq = grads["rotations"]
    g[:, SL_ROT] = (gq - qn * np.sum(qn * gq, axis=1, keepdims=True)) / n
    g[:, SL_OPACITY.start] = grads["opacity_logits"]
    g[:, SL_SH] = grads["sh"][:, :, 0]
    return g.reshape(m.height, m.width, N_CHANNELS)


def encode(frame: GaussianFrame, cam: Camera) -> SplatterMap:
    """Write each Gaussian into the pixel its center projects to.

    Gaussians behind the near plane, beyond far, or off screen are dropped;
    when several share a pixel the nearest wins (ties by index).  Only the
    SH DC band is kept.
    """
    m = SplatterMap.empty(cam)
    data = np.array(m.data)
    src = np.array(m.source_index)
    n = len(frame)
    if n == 0:
        return m
    p = cam.world_to_camera(frame.positions)
    z = p[:, 2]
    in_depth = (z > cam.near) & (z < cam.far)
    zs = np.where(in_depth, z, 1.0)
    u = cam.fx * p[:, 0] / zs + cam.cx
    v = cam.fy * p[:, 1] / zs + cam.cy
    ix = np.floor(u).astype(np.int64)
    iy = np.floor(v).astype(np.int64)
    ok = in_depth & (ix >= 0) & (ix < cam.width) & (iy >= 0) & (iy < cam.height)
    order = np.flatnonzero(ok)
    order = order[np.lexsort((order, z[order]))]  # nearest first, stable on index
    dropped = n - order.size
    for i in order:
        if src[iy[i], ix[i]] >= 0:
            dropped += 1
            continue
        src[iy[i], ix[i]] = i
    sel = src.ravel() >= 0
    idx = src.ravel()[sel]
    flat = data.reshape(-1, N_CHANNELS)
    frac = (z[idx] - cam.near) / (cam.far - cam.near)
    flat[sel, 0] = logit(frac)
    du = np.clip(2.0 * (u[idx] - ix[idx] - 0.5), -_OFFSET_LIMIT, _OFFSET_LIMIT)
    dv = np.clip(2.0 * (v[idx] - iy[idx] - 0.5), -_OFFSET_LIMIT, _OFFSET_LIMIT)
    flat[sel, 1] = np.arctanh(du)
    flat[sel, 2] = np.arctanh(dv)
    flat[sel, SL_SCALE] = frame.log_scales[idx]
    flat[sel, SL_ROT] = frame.rotations[idx]
    flat[sel, SL_OPACITY.start] = frame.opacity_logits[idx]
    flat[sel, SL_SH] = frame.sh[idx, :, 0]
    return SplatterMap(data, cam, src, int(dropped))


def decode_views(maps: Sequence[SplatterMap], timestamp: int = 1) -> GaussianFrame:
    """Fuse several maps into one frame by plain union, in the given order."""
    if not maps:
        raise InvalidInputError("need at least one splatter map")
    frame = decode(maps[0], timestamp)
    for m in maps[1:]:
        frame = frame.concat(decode(m, timestamp))
    return frame

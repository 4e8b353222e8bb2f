"""Training-time augmentations: smooth grid distortion and camera jitter.

Both are expressed as sparse bilinear resampling matrices over the flattened
image, so a warp is ``S @ img`` and its adjoint (for the loss gradient) is
``S.T @ grad``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, sparse
from scipy.spatial.transform import Rotation

from ..core import Camera


def bilinear_matrix(u: np.ndarray, v: np.ndarray, width: int, height: int) -> sparse.csr_matrix:
    """Sampling matrix reading the source image at continuous pixel coords (u, v).

    ``u``/``v`` are per output pixel (row-major), pixel centers at k + 0.5.
    Taps outside the source read zero.
    """
    x = np.ravel(u) - 0.5
    y = np.ravel(v) - 0.5
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0
    rows, cols, vals = [], [], []
    out_idx = np.arange(x.size)
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            xi, yi = x0 + dx, y0 + dy
            ok = (xi >= 0) & (xi < width) & (yi >= 0) & (yi < height) & (wx * wy > 0)
            rows.append(out_idx[ok])
            cols.append(yi[ok] * width + xi[ok])
            vals.append((wx * wy)[ok])
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(x.size, width * height)
    )


def apply_warp(S: sparse.spmatrix, img: np.ndarray) -> np.ndarray:
    h, w, c = img.shape
    return np.asarray(S @ img.reshape(h * w, c)).reshape(h, w, c)


def apply_warp_adjoint(S: sparse.spmatrix, grad: np.ndarray) -> np.ndarray:
    h, w, c = grad.shape
    return np.asarray(S.T @ grad.reshape(h * w, c)).reshape(h, w, c)


def grid_distortion(rng: np.random.Generator, width: int, height: int, grid: int = 8, max_disp: float = 0.02):
    """Random smooth warp: control-grid offsets up to ``max_disp`` of the image size, cubic-interpolated."""
    ctrl = rng.uniform(-1.0, 1.0, size=(2, grid, grid)) * max_disp * np.array([width, height])[:, None, None]
    py, px = np.mgrid[0:height, 0:width].astype(np.float64)
    gy = (py + 0.5) / height * (grid - 1)
    gx = (px + 0.5) / width * (grid - 1)
    du = ndimage.map_coordinates(ctrl[0], [gy, gx], order=3, mode="nearest")
    dv = ndimage.map_coordinates(ctrl[1], [gy, gx], order=3, mode="nearest")
    return bilinear_matrix(px + 0.5 + du, py + 0.5 + dv, width, height)


def jitter_camera(rng: np.random.Generator, cam: Camera, max_rot_deg: float = 2.0, max_trans: float = 0.01):
    """Perturb the pose by a random rotation (<= max_rot_deg) and translation (<= max_trans).

    The perturbation acts in camera space: X' = dR X + dt.  Returns the new
    camera and (dR, dt).
    """
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = math.radians(rng.uniform(0.0, max_rot_deg))
    dR = Rotation.from_rotvec(axis * angle).as_matrix()
    d = rng.normal(size=3)
    dt = d / np.linalg.norm(d) * rng.uniform(0.0, max_trans)
    return cam.with_pose(dR @ cam.rotation, dR @ cam.translation + dt), dR, dt


def jitter_homography(cam: Camera, dR: np.ndarray, dt: np.ndarray, plane_depth: float) -> np.ndarray:
    """Pixel homography old -> new induced by the jitter on the fronto-parallel plane z = plane_depth."""
    n = np.array([0.0, 0.0, 1.0])
    K = cam.K
    return K @ (dR + np.outer(dt, n) / plane_depth) @ np.linalg.inv(K)


def homography_matrix(H: np.ndarray, width: int, height: int) -> sparse.csr_matrix:
    """Resampling that moves image content by H: out(p) = in(H^-1 p)."""
    py, px = np.mgrid[0:height, 0:width].astype(np.float64)
    pts = np.stack([px.ravel() + 0.5, py.ravel() + 0.5, np.ones(px.size)])
    src = np.linalg.inv(H) @ pts
    return bilinear_matrix(src[0] / src[2], src[1] / src[2], width, height)


@dataclass(frozen=True)
class Augmentation:
    """Grid distortion and camera jitter, each drawn independently with probability ``prob``."""

    prob: float = 0.5
    grid_size: int = 8
    max_displacement: float = 0.02
    max_rotation_deg: float = 2.0
    max_translation: float = 0.01  # fraction of scene_radius
    scene_radius: float = 1.0


@dataclass
class AugmentDraw:
    camera: Camera
    target_warp: sparse.csr_matrix | None = None  # applied to the target only (jitter compensation)
    shared_warp: sparse.csr_matrix | None = None  # applied to render and target (grid distortion)

    def target(self, img: np.ndarray) -> np.ndarray:
        if self.target_warp is not None:
            img = apply_warp(self.target_warp, img)
        if self.shared_warp is not None:
            img = apply_warp(self.shared_warp, img)
        return img

    def rendered(self, img: np.ndarray) -> np.ndarray:
        return img if self.shared_warp is None else apply_warp(self.shared_warp, img)

    def rendered_adjoint(self, grad: np.ndarray) -> np.ndarray:
        return grad if self.shared_warp is None else apply_warp_adjoint(self.shared_warp, grad)


def draw_augmentation(rng: np.random.Generator, cam: Camera, aug: Augmentation, plane_depth: float | None = None) -> AugmentDraw:
    """Sample one augmentation for ``cam``.

    Random numbers are consumed in a fixed pattern regardless of which
    branches fire, so trajectories stay aligned across configurations.
    """
    use_grid, use_jitter = rng.uniform(size=2) < aug.prob
    grid_rng, jitter_rng = rng.spawn(2)
    draw = AugmentDraw(cam)
    if use_jitter:
        new_cam, dR, dt = jitter_camera(jitter_rng, cam, aug.max_rotation_deg, aug.max_translation * aug.scene_radius)
        depth = plane_depth if plane_depth is not None else max(float(cam.translation[2]), cam.near * 2)
        H = jitter_homography(cam, dR, dt, depth)
        draw.camera = new_cam
        draw.target_warp = homography_matrix(H, cam.width, cam.height)
    if use_grid:
        draw.shared_warp = grid_distortion(grid_rng, cam.width, cam.height, aug.grid_size, aug.max_displacement)
    return draw

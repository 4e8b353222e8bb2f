"""Photometric losses on rendered images, with gradients w.r.t. the render.

The perceptual term is pluggable.  The built-in one compares gradient
magnitudes over a small image pyramid; it carries no learned weights.
"""
from __future__ import annotations

from functools import lru_cache
from typing import Protocol

import numpy as np

from ..core import InvalidInputError

GRAD_EPS = 1e-6


@lru_cache(maxsize=64)
def area_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) box-filter resampling matrix; rows sum to one.

    Output cell i covers [i*n_in/n_out, (i+1)*n_in/n_out) of the input and
    averages the overlapped input cells weighted by overlap length.
    """
    A = np.zeros((n_out, n_in))
    step = n_in / n_out
    for i in range(n_out):
        lo, hi = i * step, (i + 1) * step
        for j in range(int(np.floor(lo)), min(n_in, int(np.ceil(hi)))):
            w = min(hi, j + 1) - max(lo, j)
            if w > 0:
                A[i, j] = w
        A[i] /= A[i].sum()
    A.flags.writeable = False
    return A


def resize(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Area resample of an (H, W, C) array; identity when sizes match."""
    h, w = img.shape[:2]
    if (h, w) == (height, width):
        return img
    Ay, Ax = area_matrix(h, height), area_matrix(w, width)
    return np.einsum("jw,iwc->ijc", Ax, np.einsum("ih,hwc->iwc", Ay, img))


def resize_adjoint(grad: np.ndarray, height: int, width: int) -> np.ndarray:
    """Transpose of ``resize`` from (height, width) back to ``grad``'s source size."""
    h, w = grad.shape[:2]
    if (h, w) == (height, width):
        return grad
    Ay, Ax = area_matrix(height, h), area_matrix(width, w)
    return np.einsum("jw,hjc->hwc", Ax, np.einsum("ih,ijc->hjc", Ay, grad))


class PerceptualMetric(Protocol):
    def __call__(self, a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
        """Return the distance between two (H, W, 3) images and d/da."""
        ...


def _grad_mag(x: np.ndarray):
    dx = np.zeros_like(x)
    dy = np.zeros_like(x)
    dx[:, :-1] = x[:, 1:] - x[:, :-1]
    dy[:-1, :] = x[1:, :] - x[:-1, :]
    mag = np.sqrt(dx * dx + dy * dy + GRAD_EPS)
    return mag, dx, dy


def _grad_mag_backward(g_mag, mag, dx, dy):
    gdx = g_mag * dx / mag
    gdy = g_mag * dy / mag
    gx = np.zeros_like(g_mag)
    gx[:, 1:] += gdx[:, :-1]
    gx[:, :-1] -= gdx[:, :-1]
    gx[1:, :] += gdy[:-1, :]
    gx[:-1, :] -= gdy[:-1, :]
    return gx


class GradientPyramidMetric:
    """Mean squared difference of gradient magnitudes, summed over ``levels`` octaves."""

    def __init__(self, levels: int = 3):
        self.levels = levels

    def __call__(self, a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
        total = 0.0
        grads = []
        sizes = []
        xa, xb = a, b
        for _ in range(self.levels):
            ma, dxa, dya = _grad_mag(xa)
            mb, _, _ = _grad_mag(xb)
            diff = ma - mb
            total += float(np.mean(diff * diff))
            grads.append(_grad_mag_backward(2.0 * diff / diff.size, ma, dxa, dya))
            sizes.append(xa.shape[:2])
            h, w = xa.shape[:2]
            if min(h, w) < 4:
                break
            xa = resize(xa, h // 2, w // 2)
            xb = resize(xb, h // 2, w // 2)
        # fold the per-level gradients back through the pyramid, coarse to fine
        g = grads[-1]
        for lvl in range(len(grads) - 2, -1, -1):
            g = grads[lvl] + resize_adjoint(g, *sizes[lvl])
        return total, g


def photometric_loss(
    rendered: np.ndarray,
    target: np.ndarray,
    perceptual_weight: float = 0.0,
    perceptual_res: int | None = None,
    metric: PerceptualMetric | None = None,
) -> tuple[float, np.ndarray]:
    """MSE(rendered, target) + w * P(downsampled pair); returns (L, dL/drendered).

    Both images are (H, W, C) with the same shape.  The perceptual pair is
    area-resampled so its longer side equals ``perceptual_res``.
    """
    r = np.asarray(rendered, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if r.shape != t.shape:
        raise InvalidInputError(f"rendered {r.shape} and target {t.shape} differ in shape")
    diff = r - t
    loss = float(np.mean(diff * diff))
    grad = 2.0 * diff / diff.size
    if perceptual_weight:
        metric = metric or GradientPyramidMetric()
        h, w = r.shape[:2]
        res = perceptual_res or max(h, w)
        f = min(1.0, res / max(h, w))
        ph, pw = max(1, round(h * f)), max(1, round(w * f))
        p, gp = metric(resize(r, ph, pw), resize(t, ph, pw))
        loss += perceptual_weight * p
        grad = grad + perceptual_weight * resize_adjoint(gp, h, w)
    return loss, grad

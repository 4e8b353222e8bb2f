"""Image-sequence metrics (higher PSNR / SSIM is better)."""
from __future__ import annotations

import math
from typing import Mapping, Sequence

import numpy as np
from skimage.metrics import structural_similarity

from ..core import ImageBuffer, InvalidInputError


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, ImageBuffer) else np.asarray(x, dtype=np.float64)


def mse(a, b) -> float:
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr_from_mse(m: float) -> float:
    return math.inf if m == 0 else 10.0 * math.log10(1.0 / m)


def psnr(a, b) -> float:
    """10 log10(1 / MSE) for data in [0, 1]; inf on an exact match."""
    return psnr_from_mse(mse(a, b))


def ssim(a, b) -> float:
    """Mean SSIM with a 7x7 window, shrunk to the largest odd size that fits small images."""
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch: {a.shape} vs {b.shape}")
    side = min(a.shape[:2])
    if side < 3:
        raise InvalidInputError(f"SSIM needs images of at least 3x3, got {a.shape[:2]}")
    win = min(7, side - 1 + side % 2)
    if a.shape[2] == 1:
        return float(structural_similarity(a[..., 0], b[..., 0], data_range=1.0, win_size=win))
    return float(structural_similarity(a, b, data_range=1.0, channel_axis=-1, win_size=win))


def format_value(x: float) -> str | float:
    """JSON-safe value: infinities become the strings "inf" / "-inf"."""
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def sequence_metrics(
    a: Mapping[str, Sequence[ImageBuffer]], b: Mapping[str, Sequence[ImageBuffer]]
) -> dict[str, float]:
    """Pooled metrics over all views and frames: PSNR of the pooled MSE, mean SSIM."""
    if set(a) != set(b):
        raise InvalidInputError(f"view sets differ: {sorted(a)} vs {sorted(b)}")
    errs, sims, n = [], [], 0
    for v in sorted(a):
        if len(a[v]) != len(b[v]):
            raise InvalidInputError(f"view {v!r}: frame counts differ")
        for x, y in zip(a[v], b[v]):
            errs.append(mse(x, y))
            sims.append(ssim(x, y))
            n += 1
    if n == 0:
        raise InvalidInputError("no frames to compare")
    m = float(np.mean(errs))
    return {"psnr": psnr_from_mse(m), "mse": m, "ssim": float(np.mean(sims)), "frames": n}

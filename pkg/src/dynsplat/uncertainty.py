"""Per-pixel uncertainty of rendered views and the reliability mask M = 1(1/(2 sigma^2) > 1).

M = 1 marks reliable pixels; the refiner inpaints where M = 0.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

import numpy as np
from scipy import ndimage

from .core import ImageBuffer, InvalidInputError

SIGMA_MIN = 1e-4


@dataclass(frozen=True, eq=False)
class UncertaintyMap:
    sigma: ImageBuffer
    view_tag: str = "input"
    timestamp: int = 1

    def __post_init__(self):
        s = np.asarray(self.sigma.data if isinstance(self.sigma, ImageBuffer) else self.sigma, dtype=np.float64)
        if s.ndim == 2:
            s = s[..., None]
        if s.ndim != 3 or s.shape[2] != 1:
            raise InvalidInputError(f"sigma must be a single-channel image, got {s.shape}")
        object.__setattr__(self, "sigma", ImageBuffer(np.maximum(s, SIGMA_MIN)))

    @property
    def values(self) -> np.ndarray:
        return self.sigma.data[..., 0]


@dataclass(frozen=True, eq=False)
class ReliabilityMask:
    mask: ImageBuffer
    provenance: UncertaintyMap | None = None

    @property
    def values(self) -> np.ndarray:
        return self.mask.data[..., 0]


def _two_square(a: np.ndarray):
    """Error-free product: a*a == p + e exactly (Dekker split), for |a| < 1e150."""
    c = 134217729.0 * a
    hi = c - (c - a)
    lo = a - hi
    p = a * a
    e = ((hi * hi - p) + 2.0 * hi * lo) + lo * lo
    return p, e


def reliable(sigma) -> np.ndarray:
    """Exact indicator of 1/(2 sigma^2) > 1, i.e. sigma^2 < 1/2, for each float sigma.

    sigma^2 is formed exactly as p + e and compared against 1/2 without
    rounding, so the result never depends on how 1/(2 sigma^2) would round.
    The double nearest 1/sqrt(2) (0.7071067811865476 == sqrt(0.5)) lies above
    the true value and maps to 0; the next double down maps to 1.  Note that
    1/np.sqrt(2) evaluates to that lower neighbour, not to sqrt(0.5).
    """
    s = np.abs(np.asarray(sigma, dtype=np.float64))
    small = s < 1.0  # anything >= 1 is unreliable; also keeps the split in range
    p, e = _two_square(np.where(small, s, 0.0))
    two_p = 2.0 * p  # exact (power of two scaling)
    return small & ((two_p < 1.0) | ((two_p == 1.0) & (e < 0.0)))


def binarize(u: UncertaintyMap) -> ReliabilityMask:
    m = reliable(u.values).astype(np.float64)
    return ReliabilityMask(ImageBuffer(m[..., None]), u)


class UncertaintyEstimator(Protocol):
    def __call__(self, rendered: np.ndarray, reference: np.ndarray) -> np.ndarray:
        """(T, H, W, C) rendered and reference stacks of one view -> (T, H, W) sigma."""
        ...


class ResidualStatEstimator:
    """sigma = sqrt(mean squared residual over a (2*rt+1)-frame, k x k window).

    The residual is averaged over color channels; windows are truncated at
    the sequence and image borders (mean over the part that exists).
    """

    def __init__(self, patch: int = 5, temporal: int = 3):
        if patch < 1 or patch % 2 == 0 or temporal < 1 or temporal % 2 == 0:
            raise InvalidInputError("window sizes must be odd and positive")
        self.patch = patch
        self.temporal = temporal

    def __call__(self, rendered: np.ndarray, reference: np.ndarray) -> np.ndarray:
        r2 = np.mean((rendered[..., :3] - reference[..., :3]) ** 2, axis=-1)
        size = (self.temporal, self.patch, self.patch)
        num = ndimage.uniform_filter(r2, size=size, mode="constant", cval=0.0)
        den = ndimage.uniform_filter(np.ones_like(r2), size=size, mode="constant", cval=0.0)
        return np.sqrt(np.maximum(num / den, 0.0))


def _stack(seq: Sequence[ImageBuffer | np.ndarray]) -> np.ndarray:
    return np.stack([s.data if isinstance(s, ImageBuffer) else np.asarray(s, dtype=np.float64) for s in seq])


def estimate_uncertainty(
    rendered: Mapping[str, Sequence[ImageBuffer]],
    reference: Mapping[str, Sequence[ImageBuffer]],
    estimator: UncertaintyEstimator | None = None,
) -> dict[str, list[UncertaintyMap]]:
    """sigma maps for every view and frame; both inputs are view -> frames (t = 1..T)."""
    estimator = estimator or ResidualStatEstimator()
    if set(rendered) != set(reference):
        raise InvalidInputError(f"view sets differ: {sorted(rendered)} vs {sorted(reference)}")
    out = {}
    for view in rendered:
        a, b = _stack(rendered[view]), _stack(reference[view])
        if a.shape[0] != b.shape[0]:
            raise InvalidInputError(f"view {view!r}: T differs ({a.shape[0]} vs {b.shape[0]})")
        if a.shape[1:3] != b.shape[1:3] or min(a.shape[-1], b.shape[-1]) < 3:
            raise InvalidInputError(f"view {view!r}: image shapes differ ({a.shape} vs {b.shape})")
        sig = estimator(a, b)
        out[view] = [UncertaintyMap(ImageBuffer(sig[t][..., None]), view, t + 1) for t in range(sig.shape[0])]
    return out


def masks_for(maps: Mapping[str, Sequence[UncertaintyMap]]) -> dict[str, list[ReliabilityMask]]:
    return {v: [binarize(u) for u in seq] for v, seq in maps.items()}

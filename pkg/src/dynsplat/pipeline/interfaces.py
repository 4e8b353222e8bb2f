"""Pluggable external-model interfaces and their in-repo implementations."""
from __future__ import annotations

from typing import Mapping, Protocol

import numpy as np
from scipy import ndimage

from ..core import ImageBuffer, InvalidInputError
from ..scenes import CorruptionSpec, Scene, corrupt, render_views


class ImageEnhancer(Protocol):
    def __call__(self, img: ImageBuffer) -> ImageBuffer:
        """Same-size enhanced image."""
        ...


class IdentityEnhancer:
    def __call__(self, img: ImageBuffer) -> ImageBuffer:
        return img


class UnsharpEnhancer:
    """out = clamp(in + amount * (in - gaussian_blur(in, radius)), 0, 1), per channel."""

    def __init__(self, amount: float = 0.5, radius: float = 1.5):
        if amount < 0 or radius <= 0:
            raise InvalidInputError("amount >= 0 and radius > 0 required")
        self.amount = amount
        self.radius = radius

    def __call__(self, img: ImageBuffer) -> ImageBuffer:
        d = img.data
        blur = ndimage.gaussian_filter(d, sigma=(self.radius, self.radius, 0), mode="nearest")
        return ImageBuffer(np.clip(d + self.amount * (d - blur), 0.0, 1.0))


ENHANCERS = {"identity": IdentityEnhancer, "unsharp": UnsharpEnhancer}


class MultiViewSource(Protocol):
    def views(self) -> dict[str, list[ImageBuffer]]:
        """Per-view image sequences (front, left, back, right), t = 1..T."""
        ...


class SceneRenderSource:
    """Ground-truth renders of a synthetic scene, optionally with an injected corruption.

    A generative multi-view model would implement the same ``views`` method.
    """

    def __init__(self, scene: Scene, corruption: CorruptionSpec | None = None):
        self.scene = scene
        self.corruption = corruption

    def views(self) -> dict[str, list[ImageBuffer]]:
        imgs = render_views(self.scene.sequence, self.scene.cameras)
        return corrupt(imgs, self.corruption) if self.corruption is not None else imgs


def enhance_all(images: Mapping[str, list[ImageBuffer]], enhancer: ImageEnhancer) -> dict[str, list[ImageBuffer]]:
    return {v: [enhancer(im) for im in seq] for v, seq in images.items()}

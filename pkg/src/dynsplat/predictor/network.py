"""Toy asymmetric U-Net: four views plus ray embeddings -> four splatter maps.

Encoder stage i: conv3x3 -> group norm -> SiLU (kept as skip) -> 2x down.
Bottleneck: per-pixel softmax attention across the four views, concatenated
with its input and mixed by conv3x3 -> SiLU.  Decoder stage: 2x up -> concat
skip -> conv3x3 -> SiLU, stopping at ``output_res``; a final 1x1 conv gives
the 14 splatter channels.  A fixed offset (identity rotation, pixel-sized
log-scale) is added to the head so a zero head decodes to a valid sheet of
Gaussians at mid depth.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ..core import Camera, ImageBuffer, InvalidInputError
from ..splatter import N_CHANNELS, SL_ROT, SL_SCALE, SplatterMap
from . import autodiff as ad

N_VIEWS = 4
RAY_CHANNELS = 6


@dataclass(frozen=True)
class PredictorConfig:
    input_res: int = 64
    output_res: int = 32
    base_channels: int = 16
    depth: int = 3
    cross_view_attention: bool = True
    out_channels: int = N_CHANNELS
    groups: int = 4
    near: float = 2.5  # depth range of the decoded maps (scene sits around camera distance 4)
    far: float = 5.5
    head_init_std: float = 0.0

    def __post_init__(self):
        if self.out_channels != N_CHANNELS:
            raise InvalidInputError(f"out_channels must be {N_CHANNELS} (splatter layout)")
        if self.output_res > self.input_res:
            raise InvalidInputError("output_res must not exceed input_res")
        if self.depth < 1 or self.base_channels < self.groups or self.base_channels % self.groups:
            raise InvalidInputError("depth >= 1 and base_channels a positive multiple of groups required")
        if self.input_res % (2**self.depth):
            raise InvalidInputError("input_res must be divisible by 2**depth")
        ratio = self.output_res * 2**self.depth / self.input_res
        if ratio < 1 or ratio != int(ratio) or int(ratio) & (int(ratio) - 1):
            raise InvalidInputError("output_res must be input_res / 2**k with 0 <= k <= depth")
        if not 0 < self.near < self.far:
            raise InvalidInputError("need 0 < near < far")

    @property
    def channels(self) -> list[int]:
        return [self.base_channels * 2**i for i in range(self.depth)]

    @property
    def up_stages(self) -> int:
        return int(round(math.log2(self.output_res * 2**self.depth / self.input_res)))


def _conv_init(rng, cout, cin, k):
    return rng.normal(scale=math.sqrt(2.0 / (cin * k * k)), size=(cout, cin, k, k))


def init_params(cfg: PredictorConfig = PredictorConfig(), seed: int = 0) -> dict[str, np.ndarray]:
    """He-normal convolutions, unit group-norm gains, zero biases; head std ``cfg.head_init_std``."""
    rng = np.random.default_rng(seed)
    p: dict[str, np.ndarray] = {}
    cin = 3 + RAY_CHANNELS
    for i, c in enumerate(cfg.channels):
        p[f"enc{i}.w"] = _conv_init(rng, c, cin, 3)
        p[f"enc{i}.b"] = np.zeros(c)
        p[f"enc{i}.gamma"] = np.ones(c)
        p[f"enc{i}.beta"] = np.zeros(c)
        cin = c
    cb = cfg.channels[-1]
    if cfg.cross_view_attention:
        for n in "qkv":
            p[f"attn.{n}.w"] = _conv_init(rng, cb, cb, 1) * math.sqrt(0.5)
            p[f"attn.{n}.b"] = np.zeros(cb)
        p["mid.w"] = _conv_init(rng, cb, 2 * cb, 3)
    else:
        p["mid.w"] = _conv_init(rng, cb, cb, 3)
    p["mid.b"] = np.zeros(cb)
    cin = cb
    for j in range(cfg.up_stages):
        skip = cfg.channels[cfg.depth - 1 - j]
        p[f"dec{j}.w"] = _conv_init(rng, skip, cin + skip, 3)
        p[f"dec{j}.b"] = np.zeros(skip)
        cin = skip
    p["head.w"] = rng.normal(scale=cfg.head_init_std, size=(N_CHANNELS, cin, 1, 1))
    p["head.b"] = np.zeros(N_CHANNELS)
    return p


def weight_keys(params) -> tuple[str, ...]:
    """Convolution weights (the arrays that take weight decay)."""
    return tuple(k for k in params if k.endswith(".w"))


def ray_embedding(cam: Camera) -> np.ndarray:
    """(6, H, W) Pluecker coordinates (d, o x d) of the pixel-centre rays, d unit length in world space."""
    py, px = np.mgrid[0 : cam.height, 0 : cam.width].astype(np.float64)
    ray_cam = np.stack([(px + 0.5 - cam.cx) / cam.fx, (py + 0.5 - cam.cy) / cam.fy, np.ones_like(px)], axis=-1)
    d = ray_cam @ cam.rotation
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    m = np.cross(cam.center, d)
    return np.concatenate([d, m], axis=-1).transpose(2, 0, 1)


def output_camera(cam: Camera, cfg: PredictorConfig) -> Camera:
    """The camera a predicted map lives in: ``cam`` at output_res with the predictor's depth range."""
    return replace(cam.resized(cfg.output_res, cfg.output_res), near=cfg.near, far=cfg.far)


def output_offset(cam: Camera) -> np.ndarray:
    """Constant added to the head: identity rotation, half-pixel scale at mid depth."""
    off = np.zeros(N_CHANNELS)
    off[SL_ROT.start] = 1.0
    off[SL_SCALE] = math.log(0.5 * 0.5 * (cam.near + cam.far) / cam.fx)
    return off


@dataclass
class ForwardResult:
    maps: list[SplatterMap]
    output: ad.Tensor  # (4, 14, R, R) head activations, before the offset
    leaves: dict[str, ad.Tensor] = field(repr=False)
    inputs: np.ndarray = field(repr=False)  # (4, 9, S, S)


def build_inputs(images: Sequence[ImageBuffer | np.ndarray], cams: Sequence[Camera], cfg: PredictorConfig) -> np.ndarray:
    if len(images) != N_VIEWS or len(cams) != N_VIEWS:
        raise InvalidInputError(f"need exactly {N_VIEWS} views and cameras, got {len(images)} and {len(cams)}")
    xs = []
    for img, cam in zip(images, cams):
        a = img.rgb if isinstance(img, ImageBuffer) else np.asarray(img, dtype=np.float64)[..., :3]
        if a.shape[:2] != (cfg.input_res, cfg.input_res) or (cam.width, cam.height) != (cfg.input_res, cfg.input_res):
            raise InvalidInputError(f"views and cameras must be {cfg.input_res}x{cfg.input_res}, got {a.shape[:2]}")
        xs.append(np.concatenate([a.transpose(2, 0, 1), ray_embedding(cam)], axis=0))
    return np.stack(xs)


def forward(
    params: dict[str, np.ndarray],
    images: Sequence[ImageBuffer | np.ndarray],
    cams: Sequence[Camera],
    cfg: PredictorConfig = PredictorConfig(),
) -> ForwardResult:
    """Predict one splatter map per input view (in the order given)."""
    x_in = build_inputs(images, cams, cfg)
    P = {k: ad.parameter(v) for k, v in params.items()}
    h = ad.Tensor(x_in)
    skips = []
    for i in range(cfg.depth):
        h = ad.silu(ad.group_norm(ad.conv2d(h, P[f"enc{i}.w"], P[f"enc{i}.b"]), P[f"enc{i}.gamma"], P[f"enc{i}.beta"], cfg.groups))
        skips.append(h)
        h = ad.downsample2x(h)
    if cfg.cross_view_attention:
        q, k, v = (ad.conv2d(h, P[f"attn.{n}.w"], P[f"attn.{n}.b"]) for n in "qkv")
        h = ad.concat([h, ad.attention(q, k, v)])
    h = ad.silu(ad.conv2d(h, P["mid.w"], P["mid.b"]))
    for j in range(cfg.up_stages):
        h = ad.concat([ad.upsample2x(h), skips[cfg.depth - 1 - j]])
        h = ad.silu(ad.conv2d(h, P[f"dec{j}.w"], P[f"dec{j}.b"]))
    out = ad.conv2d(h, P["head.w"], P["head.b"])
    maps = []
    for vi, cam in enumerate(cams):
        oc = output_camera(cam, cfg)
        maps.append(SplatterMap(out.value[vi].transpose(1, 2, 0) + output_offset(oc), oc))
    return ForwardResult(maps, out, P, x_in)


def backward(result: ForwardResult, map_grads: Sequence[np.ndarray]) -> dict[str, np.ndarray]:
    """Parameter gradients given d(loss)/d(map data) for each (R, R, 14) map."""
    g = np.stack([np.asarray(m).transpose(2, 0, 1) for m in map_grads])
    for t in result.leaves.values():
        t.zero_grad()
    result.output.backward(g)
    return {k: (t.grad if t.grad is not None else np.zeros_like(t.value)) for k, t in result.leaves.items()}

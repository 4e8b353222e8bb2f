"""Training the predictor end to end through splatter decoding and rendering."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..fit import AdamState, FitConfig, frame_loss, optimizer_step
from ..raster import DEFAULT_SETTINGS, RasterSettings
from ..scenes import SceneSpec, TrainSample, training_sample
from ..splatter import decode, decode_backward
from .network import ForwardResult, PredictorConfig, backward, forward, weight_keys

ELEVATION_LIMIT_DEG = 30.0


def sample_elevation(rng: np.random.Generator, size=None, limit_deg: float = ELEVATION_LIMIT_DEG):
    """Input-view elevation, uniform on [-limit, limit] degrees."""
    return rng.uniform(-limit_deg, limit_deg, size)


def draw_sample(
    rng: np.random.Generator, spec: SceneSpec, cfg: PredictorConfig = PredictorConfig(), target_res: int = 32
) -> TrainSample:
    """Random frame, random base azimuth, elevation from ``sample_elevation``."""
    t = int(rng.integers(1, spec.T + 1))
    az = float(rng.uniform(0.0, 360.0))
    el = float(sample_elevation(rng))
    return training_sample(spec, t, az, el, cfg.input_res, target_res)


def sample_loss(
    params: dict[str, np.ndarray],
    sample: TrainSample,
    pcfg: PredictorConfig,
    fcfg: FitConfig,
    settings: RasterSettings = DEFAULT_SETTINGS,
    with_grad: bool = True,
):
    """Photometric loss of the decoded prediction against the sample's targets (and parameter grads)."""
    res: ForwardResult = forward(params, sample.images, sample.cameras, pcfg)
    decoded = [decode(m, return_cache=True) for m in res.maps]
    frame = decoded[0][0]
    for f, _ in decoded[1:]:
        frame = frame.concat(f)
    targets = [t.rgb for t in sample.targets]
    if not with_grad:
        return frame_loss(frame, targets, sample.target_cameras, fcfg, settings, with_grad=False)
    loss, g = frame_loss(frame, targets, sample.target_cameras, fcfg, settings)
    map_grads, start = [], 0
    for m, (f, cache) in zip(res.maps, decoded):
        n = len(f)
        map_grads.append(decode_backward(m, cache, {k: v[start : start + n] for k, v in g.items()}))
        start += n
    return loss, backward(res, map_grads)


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    losses: list[float] = field(default_factory=list)


def train(
    params: dict[str, np.ndarray],
    samples: Sequence[TrainSample],
    pcfg: PredictorConfig = PredictorConfig(),
    fcfg: FitConfig = FitConfig(),
    settings: RasterSettings = DEFAULT_SETTINGS,
    seed: int = 0,
) -> TrainResult:
    """``fcfg.steps`` optimizer steps, each on one sample drawn uniformly from ``samples``.

    Uses the same clipped AdamW step and cosine schedule as Gaussian fitting;
    weight decay applies to convolution weights only.
    """
    rng = np.random.default_rng(seed)
    params = {k: np.array(v) for k, v in params.items()}
    decay = weight_keys(params)
    state = AdamState()
    losses = []
    for i in range(fcfg.steps):
        s = samples[int(rng.integers(len(samples)))] if len(samples) > 1 else samples[0]
        loss, grads = sample_loss(params, s, pcfg, fcfg, settings)
        losses.append(float(loss))
        params, state = optimizer_step(params, grads, state, fcfg, i, decay=decay)
    return TrainResult(params, losses)

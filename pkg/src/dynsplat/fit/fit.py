"""Per-frame Gaussian fitting against multi-view target images."""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Mapping, Sequence

import numpy as np

from ..core import Camera, GaussianFrame, ImageBuffer, InvalidInputError
from ..raster import DEFAULT_SETTINGS, RasterSettings, rasterize, render_backward
from .augment import Augmentation, draw_augmentation
from .loss import PerceptualMetric, photometric_loss, resize
from .optim import AdamState, adamw_update, check_finite, clip_by_global_norm, cosine_lr

PARAM_KEYS = ("positions", "log_scales", "rotations", "opacity_logits", "sh")
DECAY_KEYS = ("log_scales", "sh", "opacity_logits")


class DivergenceError(RuntimeError):
    """The evaluation loss rose on too many consecutive checks."""

    def __init__(self, message: str, trace: Sequence[float] = ()):
        super().__init__(message)
        self.trace = list(trace)


@dataclass(frozen=True)
class FitConfig:
    lr: float = 4e-4
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    grad_clip_norm: float = 1.0
    steps: int = 1000
    full_res: int = 128
    perceptual_res: int = 64
    perceptual_weight: float = 0.0
    augment_prob: float = 0.5
    batch_views: int = 4
    seed: int = 0
    # per-parameter multipliers on the Adam step; 1.0 everywhere gives the
    # plain single-rate optimizer (see README, "Fitting")
    lr_positions: float = 10.0
    lr_log_scales: float = 10.0
    lr_rotations: float = 5.0
    lr_opacity_logits: float = 25.0
    lr_sh: float = 25.0
    scene_radius: float = 1.0
    eval_every: int = 50
    divergence_patience: int = 3
    divergence_tol: float = 0.01
    keep_best: bool = True  # return the evaluated iterate with the lowest loss

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidInputError("lr must be positive")
        if not 0.0 <= self.augment_prob <= 1.0:
            raise InvalidInputError("augment_prob must lie in [0, 1]")
        if self.perceptual_res > self.full_res:
            raise InvalidInputError("perceptual_res must not exceed full_res")
        if self.steps < 0 or self.batch_views < 1 or self.full_res < 1:
            raise InvalidInputError("steps >= 0, batch_views >= 1 and full_res >= 1 required")
        if self.grad_clip_norm <= 0:
            raise InvalidInputError("grad_clip_norm must be positive")

    @property
    def lr_scales(self) -> dict[str, float]:
        return {k: getattr(self, f"lr_{k}") for k in PARAM_KEYS}

    @classmethod
    def for_resolution(cls, res: int, **kw) -> "FitConfig":
        """Defaults at working resolution ``res``; perceptual_res is capped at ``res``."""
        return cls(full_res=res, perceptual_res=min(cls.perceptual_res, res), **kw)

    def replace(self, **kw) -> "FitConfig":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return FitConfig(**d)


def optimizer_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState | None,
    cfg: FitConfig,
    step_index: int,
    decay: Sequence[str] = DECAY_KEYS,
    lr_scales: Mapping[str, float] | None = None,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """Finite check, global-norm clip and one AdamW step at the cosine-scheduled rate."""
    check_finite(grads)
    clipped, _ = clip_by_global_norm(grads, cfg.grad_clip_norm)
    lr_t = cosine_lr(cfg.lr, step_index, cfg.steps)
    return adamw_update(
        params, clipped, state or AdamState(), lr_t,
        betas=(cfg.beta1, cfg.beta2), eps=cfg.eps, weight_decay=cfg.weight_decay,
        decay=decay, lr_scales=lr_scales,
    )


def step(
    frame: GaussianFrame,
    grads: Mapping[str, np.ndarray],
    state: AdamState | None,
    cfg: FitConfig,
    step_index: int,
) -> tuple[GaussianFrame, AdamState]:
    """Clip, AdamW-update and renormalize; one optimizer step on ``frame``."""
    params, state = optimizer_step(frame.params(), grads, state, cfg, step_index, DECAY_KEYS, cfg.lr_scales)
    q = params["rotations"]
    params["rotations"] = q / np.linalg.norm(q, axis=1, keepdims=True)
    return frame.replace(**params), state


@dataclass
class FitResult:
    frame: GaussianFrame
    losses: list[float]  # per optimizer step, augmented batch loss
    smoothed: list[float]  # running minimum of an EMA of ``losses``
    eval_losses: list[float] = field(default_factory=list)  # un-augmented, every eval_every steps
    best_step: int = -1  # optimizer step of the returned frame (== len(losses) for the last iterate)
    loss: float = float("nan")  # un-augmented loss of the returned frame


def _as_array(img) -> np.ndarray:
    return img.rgb if isinstance(img, ImageBuffer) else np.asarray(img, dtype=np.float64)[..., :3]


def _working_size(cam: Camera, full_res: int) -> tuple[int, int]:
    f = full_res / max(cam.width, cam.height)
    return max(1, round(cam.height * f)), max(1, round(cam.width * f))


def frame_loss(
    frame: GaussianFrame,
    targets: Sequence[np.ndarray],
    cams: Sequence[Camera],
    cfg: FitConfig,
    settings: RasterSettings = DEFAULT_SETTINGS,
    metric: PerceptualMetric | None = None,
    with_grad: bool = True,
):
    """Mean loss over views and (optionally) the summed parameter gradients."""
    total = 0.0
    grads = {k: np.zeros_like(v) for k, v in frame.params().items()} if with_grad else None
    for tgt, cam in zip(targets, cams):
        img, st = rasterize(frame, cam, settings)
        L, g = photometric_loss(img.rgb, tgt, cfg.perceptual_weight, cfg.perceptual_res, metric)
        total += L / len(cams)
        if with_grad:
            gv = render_backward(frame, cam, g / len(cams), st)
            for k in grads:
                grads[k] += gv[k]
    return (total, grads) if with_grad else total


def fit_frame(
    frame_init: GaussianFrame,
    targets: Sequence[ImageBuffer | np.ndarray],
    cams: Sequence[Camera],
    cfg: FitConfig,
    settings: RasterSettings = DEFAULT_SETTINGS,
    metric: PerceptualMetric | None = None,
    augmentation: Augmentation | None = None,
) -> FitResult:
    """Optimize ``frame_init`` so its renders match ``targets`` from ``cams``.

    Each step draws ``batch_views`` views without replacement, augments each
    one independently, and sums the per-view gradients (the loss is the batch
    mean).  The run is a pure function of its inputs and ``cfg.seed``.

    With ``cfg.keep_best`` the returned frame is the evaluated iterate (every
    ``eval_every`` steps and the last one) with the lowest un-augmented loss.
    Near a fixed point Adam amplifies rounding-level gradients up to steps of
    order lr, so a converged input would otherwise drift.
    """
    if len(targets) != len(cams) or not cams:
        raise InvalidInputError("need one target per camera and at least one view")
    if len(frame_init) == 0:
        raise InvalidInputError("cannot fit an empty frame")
    work_cams, work_tgts = [], []
    for tgt, cam in zip(targets, cams):
        arr = _as_array(tgt)
        if arr.shape[:2] != (cam.height, cam.width):
            raise InvalidInputError(f"target {arr.shape[:2]} does not match camera {(cam.height, cam.width)}")
        h, w = _working_size(cam, cfg.full_res)
        work_cams.append(cam.resized(w, h) if (h, w) != (cam.height, cam.width) else cam)
        work_tgts.append(resize(arr, h, w))

    aug = augmentation or Augmentation(prob=cfg.augment_prob, scene_radius=cfg.scene_radius)
    rng = np.random.default_rng(cfg.seed)
    n_views = len(work_cams)
    batch = min(cfg.batch_views, n_views)

    frame = frame_init
    state = AdamState()
    losses: list[float] = []
    evals: list[float] = []
    rises = 0
    best = (np.inf, frame, 0)
    for i in range(cfg.steps):
        if i % cfg.eval_every == 0:
            ev = frame_loss(frame, work_tgts, work_cams, cfg, settings, metric, with_grad=False)
            if not np.isfinite(ev):
                raise DivergenceError(f"non-finite evaluation loss at step {i}", losses)
            if evals and ev > evals[-1] * (1.0 + cfg.divergence_tol):
                rises += 1
                if rises >= cfg.divergence_patience:
                    raise DivergenceError(
                        f"evaluation loss rose {rises} checks in a row (last {evals[-rises:]} -> {ev:.6g}) at step {i}",
                        losses,
                    )
            else:
                rises = 0
            evals.append(float(ev))
            if ev < best[0]:
                best = (ev, frame, i)

        views = rng.permutation(n_views)[:batch] if batch < n_views else np.arange(n_views)
        grads = {k: np.zeros_like(v) for k, v in frame.params().items()}
        batch_loss = 0.0
        for vi in views:
            cam = work_cams[vi]
            draw = draw_augmentation(rng, cam, aug) if aug.prob > 0 else None
            rcam = draw.camera if draw else cam
            img, st = rasterize(frame, rcam, settings)
            rendered = img.rgb
            tgt = work_tgts[vi]
            if draw is not None:
                rendered = draw.rendered(rendered)
                tgt = draw.target(tgt)
            L, g = photometric_loss(rendered, tgt, cfg.perceptual_weight, cfg.perceptual_res, metric)
            if draw is not None:
                g = draw.rendered_adjoint(g)
            batch_loss += L / batch
            gv = render_backward(frame, rcam, g / batch, st)
            for k in grads:
                grads[k] += gv[k]
        if not np.isfinite(batch_loss):
            raise DivergenceError(f"non-finite loss at step {i}", losses)
        losses.append(batch_loss)
        frame, state = step(frame, grads, state, cfg, i)

    evals.append(float(frame_loss(frame, work_tgts, work_cams, cfg, settings, metric, with_grad=False)))
    if cfg.keep_best and best[0] < evals[-1]:
        loss, frame, best_step = best
    else:
        loss, best_step = evals[-1], cfg.steps
    return FitResult(frame, losses, smooth_trace(losses), evals, best_step, float(loss))


def smooth_trace(losses: Sequence[float], beta: float = 0.9) -> list[float]:
    """Bias-corrected EMA followed by a running minimum (non-increasing)."""
    out, m, best = [], 0.0, np.inf
    for k, x in enumerate(losses, 1):
        m = beta * m + (1 - beta) * x
        best = min(best, m / (1 - beta**k))
        out.append(float(best))
    return out

"""Uncertainty-guided refinement of multi-view sequences and the refit feedback loop.

One loop iteration: render every view and frame, compare the renders with
the reference frames, binarize the uncertainty, inpaint the unreliable
pixels of the renders (conditioned on the reference's first and last
frames), then refit each frame to the inpainted renders.  The reference
frames stay fixed across iterations.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from .core import Camera, GaussianFrame, GaussianSequence, ImageBuffer, InvalidInputError
from .fit import FitConfig, fit_frame
from .raster import DEFAULT_SETTINGS, RasterSettings, rasterize
from .uncertainty import ReliabilityMask, UncertaintyEstimator, estimate_uncertainty, masks_for

JACOBI_ITERS = 500
JACOBI_TOL = 1e-5


class UninpaintableError(RuntimeError):
    """A frame is unreliable everywhere and has no temporal anchor."""


class VideoRefiner(Protocol):
    def __call__(
        self,
        frames: Sequence[ImageBuffer],
        masks: Sequence[ReliabilityMask | np.ndarray],
        first: ImageBuffer | None,
        last: ImageBuffer | None,
    ) -> list[ImageBuffer]:
        """Same-shape frames; M = 1 pixels kept, frames 1 and T set to ``first``/``last``."""
        ...


def _mask_array(m) -> np.ndarray:
    a = m.values if isinstance(m, ReliabilityMask) else np.asarray(m, dtype=np.float64)
    if a.ndim == 3:
        a = a[..., 0]
    if not np.all((a == 0) | (a == 1)):
        raise InvalidInputError("masks must be binary")
    return a == 1


def _data(img) -> np.ndarray:
    return img.data if isinstance(img, ImageBuffer) else np.asarray(img, dtype=np.float64)


def laplace_fill(img: np.ndarray, known: np.ndarray, iters: int = JACOBI_ITERS, tol: float = JACOBI_TOL) -> np.ndarray:
    """Harmonic fill of the pixels where ``known`` is False (Jacobi, 4-neighbour).

    Known pixels are Dirichlet data; the image border is a zero-flux edge.
    Unknown pixels start at the mean of the known ones.
    """
    if not known.any():
        raise UninpaintableError("no reliable pixel to fill from")
    out = np.array(img, dtype=np.float64)
    hole = ~known
    if not hole.any():
        return out
    out[hole] = out[known].mean(axis=0)
    h, w = known.shape
    cnt = np.zeros((h, w))
    cnt[1:, :] += 1
    cnt[:-1, :] += 1
    cnt[:, 1:] += 1
    cnt[:, :-1] += 1
    for _ in range(iters):
        s = np.zeros_like(out)
        s[1:, :] += out[:-1, :]
        s[:-1, :] += out[1:, :]
        s[:, 1:] += out[:, :-1]
        s[:, :-1] += out[:, 1:]
        new = s / cnt[..., None]
        delta = np.max(np.abs(new[hole] - out[hole]))
        out[hole] = new[hole]
        if delta < tol:
            break
    return out


def reference_inpaint(
    frames: Sequence[ImageBuffer | np.ndarray],
    masks: Sequence[ReliabilityMask | np.ndarray],
    first: ImageBuffer | np.ndarray | None = None,
    last: ImageBuffer | np.ndarray | None = None,
) -> list[ImageBuffer]:
    """Temporal-then-spatial inpainting of the M = 0 pixels.

    Each unreliable pixel is linearly interpolated between the nearest
    earlier and later frames where it is reliable.  The conditioning images
    ``first``/``last`` replace frames 1 and T and are reliable everywhere.
    With a single anchor the anchor value is held; with none the pixel is
    filled harmonically from the reliable pixels of its own frame.
    """
    T = len(frames)
    if T == 0 or len(masks) != T:
        raise InvalidInputError("need one mask per frame and at least one frame")
    src = np.stack([_data(f) for f in frames])
    rel = np.stack([_mask_array(m) for m in masks])
    if rel.shape != src.shape[:3]:
        raise InvalidInputError(f"mask shape {rel.shape[1:]} does not match frames {src.shape[1:3]}")
    if first is not None:
        src[0] = _data(first)
        rel[0] = True
    if last is not None:
        src[-1] = _data(last)
        rel[-1] = True

    out = src.copy()
    tidx = np.arange(T)[:, None, None]
    # nearest reliable frame at or before / at or after each t, per pixel
    prev = np.where(rel, tidx, -1)
    prev = np.maximum.accumulate(prev, axis=0)
    nxt = np.where(rel, tidx, T)
    nxt = np.minimum.accumulate(nxt[::-1], axis=0)[::-1]
    for t in range(T):
        hole = ~rel[t]
        if not hole.any():
            continue
        t0 = prev[t]
        t1 = nxt[t]
        both = hole & (t0 >= 0) & (t1 < T)
        only0 = hole & (t0 >= 0) & (t1 >= T)
        only1 = hole & (t0 < 0) & (t1 < T)
        none = hole & (t0 < 0) & (t1 >= T)
        ys, xs = np.nonzero(both)
        if ys.size:
            a, b = t0[ys, xs], t1[ys, xs]
            wgt = ((t - a) / (b - a))[:, None]
            out[t, ys, xs] = (1 - wgt) * src[a, ys, xs] + wgt * src[b, ys, xs]
        ys, xs = np.nonzero(only0)
        out[t, ys, xs] = src[t0[ys, xs], ys, xs]
        ys, xs = np.nonzero(only1)
        out[t, ys, xs] = src[t1[ys, xs], ys, xs]
        if none.any():
            if not rel[t].any():
                raise UninpaintableError(f"frame {t + 1}: every pixel is unreliable and no frame anchors it")
            out[t] = laplace_fill(out[t], ~none)
    return [ImageBuffer(o) for o in out]


@dataclass(frozen=True)
class RefineConfig:
    loop_iterations: int = 2
    refit_steps_per_loop: int = 300
    views: tuple[str, ...] = ("front", "left", "back", "right")
    refiner: str = "reference"

    def __post_init__(self):
        if self.loop_iterations < 1:
            raise InvalidInputError("loop_iterations must be >= 1")
        if self.refit_steps_per_loop < 0:
            raise InvalidInputError("refit_steps_per_loop must be >= 0")
        if not self.views:
            raise InvalidInputError("views must be non-empty")
        if self.refiner not in REFINERS:
            raise InvalidInputError(f"unknown refiner {self.refiner!r}; available: {sorted(REFINERS)}")


REFINERS: dict[str, VideoRefiner] = {"reference": reference_inpaint}


def render_sequence(
    seq: GaussianSequence, cams: Mapping[str, Camera], settings: RasterSettings = DEFAULT_SETTINGS
) -> dict[str, list[ImageBuffer]]:
    return {v: [rasterize(f, cam, settings)[0].to_rgb() for f in seq] for v, cam in cams.items()}


ADJACENT = {"front": ("left", "right"), "left": ("back", "front"), "back": ("right", "left"), "right": ("front", "back")}


def disagreement(
    seq: GaussianSequence,
    cams: Mapping[str, Camera],
    regions: Mapping[str, Sequence[np.ndarray]] | None = None,
    settings: RasterSettings = DEFAULT_SETTINGS,
) -> float:
    """Cross-view photometric disagreement D.

    For every frame and every ordered pair of adjacent views (v, w), view v
    is rendered twice: with each Gaussian's own color for v, and with the
    color the same Gaussian shows towards camera w.  D is the mean over
    frames and pairs of the squared difference inside ``regions[v][t]``
    (boolean HxW; the whole image when omitted).  A field whose appearance
    does not depend on the viewing direction has D = 0.
    """
    from .core import sh_basis

    terms = []
    views = list(cams)
    for t, frame in enumerate(seq):
        for v in views:
            img_v, st = rasterize(frame, cams[v], settings)
            region = None if regions is None else np.asarray(regions[v][t], dtype=bool)
            for w in ADJACENT.get(v, ()):
                if w not in cams:
                    continue
                offs = frame.positions - cams[w].center
                dirs = offs / np.maximum(np.linalg.norm(offs, axis=1, keepdims=True), 1e-12)
                col = np.clip(np.einsum("nck,nk->nc", frame.sh, sh_basis(dirs, frame.sh_degree)) + 0.5, 0, 1)
                img_w, _ = rasterize(frame, cams[v], settings, colors=col)
                d2 = np.sum((img_v.rgb - img_w.rgb) ** 2, axis=-1) / 3.0
                if region is None:
                    terms.append(float(d2.mean()))
                else:
                    terms.append(float(d2[region].sum() / max(region.sum(), 1)))
    return float(np.mean(terms)) if terms else 0.0


@dataclass
class IterationReport:
    iteration: int
    mean_sigma: float
    masked_fraction: float
    disagreement: float
    refit_loss: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class RefineResult:
    sequence: GaussianSequence
    reports: list[IterationReport] = field(default_factory=list)
    refined: dict[str, list[ImageBuffer]] | None = None  # refiner output of the last iteration
    regions: dict[str, list[np.ndarray]] | None = None  # M = 0 pixels of the first iteration
    initial_disagreement: float = 0.0
    final_mean_sigma: float = 0.0  # renders after the last refit vs the reference


def refine_loop(
    seq: GaussianSequence,
    reference_views: Mapping[str, Sequence[ImageBuffer]],
    cams: Mapping[str, Camera],
    cfg: RefineConfig = RefineConfig(),
    fit_cfg: FitConfig | None = None,
    estimator: UncertaintyEstimator | None = None,
    refiner: VideoRefiner | None = None,
    settings: RasterSettings = DEFAULT_SETTINGS,
    report: Callable[[IterationReport], None] | None = None,
) -> RefineResult:
    """Run ``cfg.loop_iterations`` rounds of render -> mask -> inpaint -> refit.

    Refits warm-start from the current parameters.  D in the reports is
    measured on the pixels masked in the first iteration, so values are
    comparable across iterations.
    """
    views = [v for v in cfg.views]
    for v in views:
        if v not in reference_views or v not in cams:
            raise InvalidInputError(f"view {v!r} needs reference frames and a camera")
        if len(reference_views[v]) != seq.T:
            raise InvalidInputError(f"view {v!r}: {len(reference_views[v])} reference frames for T = {seq.T}")
    refiner = refiner or REFINERS[cfg.refiner]
    fit_cfg = (fit_cfg or FitConfig.for_resolution(max(cams[views[0]].width, cams[views[0]].height))).replace(
        steps=cfg.refit_steps_per_loop
    )
    cams = {v: cams[v] for v in views}
    refs = {v: [ImageBuffer(_data(img)[..., :3]) for img in reference_views[v]] for v in views}

    result = RefineResult(seq)
    for it in range(cfg.loop_iterations):
        renders = render_sequence(seq, cams, settings)
        sig = estimate_uncertainty(renders, refs, estimator)
        masks = masks_for(sig)
        if it == 0:
            result.regions = {v: [m.values == 0 for m in masks[v]] for v in views}
            result.initial_disagreement = disagreement(seq, cams, result.regions, settings)
        mean_sigma = float(np.mean([u.values.mean() for v in views for u in sig[v]]))
        masked = float(np.mean([1.0 - m.values.mean() for v in views for m in masks[v]]))

        refined = {v: refiner(renders[v], masks[v], refs[v][0], refs[v][-1]) for v in views}

        frames, last_losses = [], []
        for t, frame in enumerate(seq):
            targets = [refined[v][t] for v in views]
            fr = fit_frame(frame, targets, [cams[v] for v in views], fit_cfg, settings)
            frames.append(fr.frame)
            last_losses.append(fr.loss)
        seq = GaussianSequence(tuple(frames))
        result.refined = refined
        rep = IterationReport(
            it + 1, mean_sigma, masked, disagreement(seq, cams, result.regions, settings), float(np.mean(last_losses))
        )
        result.reports.append(rep)
        if report is not None:
            report(rep)
    result.sequence = seq
    final = estimate_uncertainty(render_sequence(seq, cams, settings), refs, estimator)
    result.final_mean_sigma = float(np.mean([u.values.mean() for v in views for u in final[v]]))
    return result

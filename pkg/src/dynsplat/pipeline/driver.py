"""Pipeline stages over files: scene -> views -> fit -> refine -> metrics / export.

Each stage reads its inputs from disk and writes its outputs, so stages can
run as separate CLI commands.  All randomness comes from config seeds.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Mapping, Sequence


from ..core import Camera, GaussianSequence, ImageBuffer, InvalidInputError
from ..fit import fit_frame, resize
from ..predictor import forward, init_params, load_checkpoint
from ..refine import IterationReport, refine_loop, render_sequence
from ..scenes import Scene, floater_candidates, generate, random_frame
from ..splatter import decode_views
from . import io
from .config import PipelineConfig
from .interfaces import ENHANCERS, SceneRenderSource, enhance_all
from .metrics import format_value, sequence_metrics

CAMERAS_FILE = "cameras.json"


def make_scene(cfg: PipelineConfig, out) -> Path:
    """Ground-truth sequence (PLY + manifest) and the four view cameras."""
    out = Path(out)
    scene = generate(cfg.scene)
    io.save_sequence(out, scene.sequence, cfg.io.ply_precision)
    io.save_cameras(out / CAMERAS_FILE, scene.cameras)
    return out


def render_views_to(cfg: PipelineConfig, seq_dir, cameras_file, out, corrupted: bool = False, enhance: bool = False) -> Path:
    """PNG frames per view; optionally with the configured corruption and enhancer."""
    seq = io.load_sequence(seq_dir)
    cams = io.load_cameras(cameras_file)
    src = SceneRenderSource(Scene(cfg.scene, seq, cams), cfg.corruption if corrupted else None)
    images = src.views()
    if enhance:
        images = enhance_all(images, ENHANCERS[cfg.pipeline.enhancer]())
    io.save_image_sequences(out, images)
    return Path(out)


def initial_sequence(cfg: PipelineConfig, T: int, cams: Mapping[str, Camera], init_seq: GaussianSequence | None):
    if cfg.pipeline.init == "truth":
        if init_seq is None:
            raise InvalidInputError("init = truth needs an initial sequence")
        frames = list(init_seq)
    else:
        b = cfg.scene.bounds
        frames = [
            random_frame(cfg.pipeline.init_count, cfg.pipeline.init_seed, b, cfg.scene.sh_degree, timestamp=t)
            for t in range(1, T + 1)
        ]
    if cfg.pipeline.floaters and cfg.corruption.view in cams:
        fl = floater_candidates(cams[cfg.corruption.view], cfg.corruption.patch, sh_degree=frames[0].sh_degree)
        frames = [f.concat(fl) for f in frames]
    return frames


def fit_sequence(
    cfg: PipelineConfig,
    images: Mapping[str, Sequence[ImageBuffer]],
    cams: Mapping[str, Camera],
    init_seq: GaussianSequence | None = None,
) -> tuple[GaussianSequence, list[list[float]]]:
    """fit_frame for every t against all views; returns the sequence and the loss traces."""
    views = [v for v in cfg.refine.views if v in images]
    if not views:
        raise InvalidInputError("no configured view has images")
    T = len(images[views[0]])
    init = initial_sequence(cfg, T, cams, init_seq)
    if len(init) != T:
        raise InvalidInputError(f"initial sequence has {len(init)} frames, images have {T}")
    frames, traces = [], []
    for t in range(T):
        fr = fit_frame(init[t], [images[v][t] for v in views], [cams[v] for v in views], cfg.fit)
        frames.append(fr.frame.replace(timestamp=t + 1))
        traces.append(fr.losses)
    return GaussianSequence(tuple(frames)), traces


def fit_to(cfg: PipelineConfig, views_dir, cameras_file, out, init_seq_dir=None) -> Path:
    images = io.load_image_sequences(views_dir)
    cams = io.load_cameras(cameras_file)
    init = io.load_sequence(init_seq_dir) if init_seq_dir is not None else None
    seq, traces = fit_sequence(cfg, images, cams, init)
    out = Path(out)
    io.save_sequence(out, seq, cfg.io.ply_precision)
    with open(out / "fit_losses.jsonl", "w") as f:
        for t, tr in enumerate(traces, 1):
            f.write(json.dumps({"t": t, "losses": tr}) + "\n")
    return out


def refine_to(cfg: PipelineConfig, seq_dir, refs_dir, cameras_file, out, report_path=None) -> Path:
    seq = io.load_sequence(seq_dir)
    refs = io.load_image_sequences(refs_dir, list(cfg.refine.views))
    cams = io.load_cameras(cameras_file)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    report_path = Path(report_path) if report_path else out / "refine_report.jsonl"
    with open(report_path, "w") as f:

        def emit(rep: IterationReport):
            f.write(rep.to_json() + "\n")
            f.flush()

        res = refine_loop(seq, refs, cams, cfg.refine, cfg.fit, report=emit)
    io.save_sequence(out, res.sequence, cfg.io.ply_precision)
    return out


def predict_to(cfg: PipelineConfig, views_dir, cameras_file, out) -> Path:
    """Predictor forward + splatter decode for every frame of a four-view image set."""
    pc = cfg.predictor
    views = list(cfg.refine.views)
    if len(views) != 4:
        raise InvalidInputError("predict needs exactly four views")
    images = io.load_image_sequences(views_dir, views)
    cams = io.load_cameras(cameras_file)
    params = load_checkpoint(cfg.io.checkpoint) if cfg.io.checkpoint else init_params(pc)
    in_cams = [cams[v].resized(pc.input_res, pc.input_res) for v in views]
    frames = []
    for t in range(len(images[views[0]])):
        imgs = [resize(images[v][t].rgb, pc.input_res, pc.input_res) for v in views]
        res = forward(params, imgs, in_cams, pc)
        frames.append(decode_views(res.maps, timestamp=t + 1))
    out = Path(out)
    io.save_sequence(out, GaussianSequence(tuple(frames)), cfg.io.ply_precision)
    return out


def metrics_report(a_dir, b_dir, out=None) -> dict:
    a = io.load_image_sequences(a_dir)
    b = io.load_image_sequences(b_dir, list(a))
    rec = {k: format_value(v) if isinstance(v, float) else v for k, v in sequence_metrics(a, b).items()}
    rec.update({"a": str(a_dir), "b": str(b_dir)})
    if out is not None:
        with open(out, "a") as f:
            f.write(json.dumps(rec) + "\n")
    return rec


def export_to(cfg: PipelineConfig, seq_dir, out, precision: str | None = None) -> Path:
    seq = io.load_sequence(seq_dir)
    io.save_sequence(out, seq, precision or cfg.io.ply_precision)
    return Path(out)


def render_sequence_to(seq_dir, cameras_file, out, views: Sequence[str]) -> Path:
    seq = io.load_sequence(seq_dir)
    cams = io.load_cameras(cameras_file)
    io.save_image_sequences(out, render_sequence(seq, {v: cams[v] for v in views}))
    return Path(out)


def run_pipeline(cfg: PipelineConfig, out, log: Callable[[str], None] = lambda s: None) -> dict:
    """make-scene -> render (clean and corrupted) -> fit -> metrics -> refine -> metrics.

    The field is fitted to the corrupted, enhanced views; refinement uses the
    clean renders as references.  Returns the pre/post metrics records.
    """
    out = Path(out)
    views = list(cfg.refine.views)
    make_scene(cfg, out / "scene")
    cams_file = out / "scene" / CAMERAS_FILE
    log("scene written")
    render_views_to(cfg, out / "scene", cams_file, out / "views_clean")
    render_views_to(cfg, out / "scene", cams_file, out / "views_input", corrupted=cfg.pipeline.corrupt, enhance=True)
    log("views rendered")
    fit_to(cfg, out / "views_input", cams_file, out / "fit", out / "scene" if cfg.pipeline.init == "truth" else None)
    render_sequence_to(out / "fit", cams_file, out / "render_fit", views)
    pre = metrics_report(out / "render_fit", out / "views_clean", out / "metrics.jsonl")
    log(f"fit done, PSNR vs clean {pre['psnr']}")
    refine_to(cfg, out / "fit", out / "views_clean", cams_file, out / "refined")
    render_sequence_to(out / "refined", cams_file, out / "render_refined", views)
    post = metrics_report(out / "render_refined", out / "views_clean", out / "metrics.jsonl")
    log(f"refine done, PSNR vs clean {post['psnr']}")
    return {"pre": pre, "post": post}

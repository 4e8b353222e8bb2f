"""Acceptance criteria: each test prints one CRITERION line, then asserts it."""
import math
import time

import numpy as np
from helpers import OP_CASES, fd_agreement, frame_fd, op_fd_pass_rate, random_camera, random_frame
from scipy.stats import chisquare

from dynsplat.core import ImageBuffer
from dynsplat.fit import FitConfig, fit_frame
from dynsplat.pipeline import io
from dynsplat.predictor import ELEVATION_LIMIT_DEG, PredictorConfig, draw_sample, forward, init_params, sample_elevation, train
from dynsplat.raster import rasterize, render, render_backward, render_brute
from dynsplat.refine import RefineConfig, refine_loop, reference_inpaint, render_sequence
from dynsplat.scenes import SceneSpec, corruption_benchmark, generate, held_out_camera, random_frame as scene_random_frame
from dynsplat.splatter import N_CHANNELS, SplatterMap, decode, encode
from dynsplat.uncertainty import UncertaintyMap, binarize


def psnr(a, b):
    return 10 * math.log10(1.0 / float(np.mean((a - b) ** 2)))


def test_c1_rasterizer_matches_brute_force(criterion):
    rng = np.random.default_rng(1)
    render(random_frame(rng, 3), random_camera(rng))  # compile the kernels outside the timed region
    render_brute(random_frame(rng, 3), random_camera(rng))
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 501))
        fr, cam = random_frame(rng, n), random_camera(rng, size=64)
        worst = max(worst, float(np.abs(render(fr, cam).data - render_brute(fr, cam).data).max()))
    dt = time.perf_counter() - t0
    ok = worst < 1e-3 and dt < 60
    criterion(1, "tiled vs brute-force render", ok, f"max err {worst:.2e} (< 1e-3), {dt:.1f} s for 50 scenes (< 60 s)")
    assert ok


def test_c2_gradient_fidelity(criterion):
    rng = np.random.default_rng(2)
    flags = []
    for _ in range(5):
        fr, cam = random_frame(rng, 20), random_camera(rng, size=32)
        target = rng.uniform(0, 1, (32, 32, 3))

        def loss(f):
            return float(np.mean((render(f, cam).rgb - target) ** 2))

        img, state = rasterize(fr, cam)
        g = np.zeros((32, 32, 4))
        g[..., :3] = 2 * (img.rgb - target) / img.rgb.size
        an = render_backward(fr, cam, g, state)
        fd = frame_fd(fr, loss, h=1e-3)
        flags += [fd_agreement(fd[k], an[k], rel=1e-3).ravel() for k in fd]
    render_rate = float(np.concatenate(flags).mean())
    op_rates = {name: op_fd_pass_rate(b, s, rng) for name, (b, s) in OP_CASES.items()}
    ok = render_rate >= 0.95 and min(op_rates.values()) >= 0.99
    worst_op = min(op_rates, key=op_rates.get)
    criterion(
        2, "analytic gradients vs central differences", ok,
        f"render {100 * render_rate:.1f}% (>= 95%), worst op {worst_op} {100 * op_rates[worst_op]:.1f}% (>= 99%)",
    )
    assert ok


def test_c3_mask_boundary(criterion):
    def m(s):
        return float(binarize(UncertaintyMap(ImageBuffer(np.full((1, 1, 1), s)))).values[0, 0])

    boundary = math.sqrt(0.5)
    cases = {0.7071: 1.0, np.nextafter(boundary, 0.0): 1.0, boundary: 0.0, np.nextafter(boundary, 1.0): 0.0, 1.0: 0.0}
    got = {s: m(s) for s in cases}
    ok = got == cases
    criterion(3, "mask strict inequality at 1/sqrt(2)", ok, ", ".join(f"M({s!r})={v:g}" for s, v in got.items()))
    assert ok


def test_c4_fit_convergence(criterion):
    spec = SceneSpec(T=8, gaussian_count=100, seed=0)
    sc = generate(spec)
    gt = sc.sequence[0]
    cams = sc.camera_list
    targets = [render(gt, c).rgb for c in cams]
    init = scene_random_frame(100, seed=1, sh_degree=0)
    t0 = time.perf_counter()
    res = fit_frame(init, targets, cams, FitConfig(steps=2000, full_res=64))
    dt = time.perf_counter() - t0
    ho = held_out_camera(spec)
    p = psnr(render(res.frame, ho).rgb, render(gt, ho).rgb)
    ok = p > 30 and dt < 600
    criterion(4, "2000-step fit, held-out view", ok, f"PSNR {p:.2f} dB (> 30), {dt:.1f} s (< 600 s)")
    assert ok


def test_c5_refinement_efficacy(criterion):
    b = corruption_benchmark()
    cams = b.scene.cameras

    def seq_psnr(seq):
        r = render_sequence(seq, cams)
        m = np.mean([np.mean((r[v][t].data - b.clean[v][t].data) ** 2) for v in cams for t in range(len(seq.frames))])
        return 10 * math.log10(1 / m)

    res = refine_loop(b.initial, b.clean, cams, RefineConfig())
    d0, d1 = res.initial_disagreement, res.reports[-1].disagreement
    reduction = 1 - d1 / d0
    p0, p1 = seq_psnr(b.initial), seq_psnr(res.sequence)
    sig = [r.mean_sigma for r in res.reports] + [res.final_mean_sigma]
    rises = [s1 / s0 - 1 for s0, s1 in zip(sig, sig[1:]) if s1 > s0]
    sigma_ok = len(rises) == 0 or (len(rises) == 1 and rises[0] <= 0.01)
    ok = len(res.reports) == 2 and reduction >= 0.5 and p1 - p0 >= 2 and sigma_ok
    criterion(
        5, "refine loop on injected corruption", ok,
        f"D {d0:.4g} -> {d1:.4g} ({100 * reduction:.0f}% reduction, >= 50%), "
        f"PSNR {p0:.2f} -> {p1:.2f} dB (+{p1 - p0:.2f}, >= 2), mean sigma {', '.join(f'{s:.4g}' for s in sig)}",
    )
    assert ok


def test_c6_refiner_contract(criterion):
    rng = np.random.default_rng(6)
    ok = True
    for _ in range(50):
        T = int(rng.integers(2, 7))
        fr = [rng.uniform(size=(12, 10, 3)) for _ in range(T)]
        masks = [(rng.uniform(size=(12, 10)) < rng.uniform()).astype(float) for _ in range(T)]
        first, last = rng.uniform(size=(12, 10, 3)), rng.uniform(size=(12, 10, 3))
        out = reference_inpaint(fr, masks, first, last)
        ok &= np.array_equal(out[0].data, first) and np.array_equal(out[-1].data, last)
        ok &= all(np.array_equal(out[t].data[masks[t] == 1], fr[t][masks[t] == 1]) for t in range(1, T - 1))
    criterion(6, "refiner keeps reliable pixels and conditioning frames", ok, "50 random sequences, bit-exact")
    assert ok


def test_c7_splatter_geometry(criterion):
    rng = np.random.default_rng(7)
    reproj, axis, rt = 0.0, 0.0, 0.0
    for _ in range(20):
        cam = random_camera(rng, size=16)
        d = np.empty((16, 16, N_CHANNELS))
        d[..., 0] = rng.uniform(-4, 4, (16, 16))
        d[..., 1:3] = rng.uniform(-2, 2, (16, 16, 2))
        d[..., 3:6] = rng.uniform(-4, -1, (16, 16, 3))
        q = rng.normal(size=(16, 16, 4))
        d[..., 6:10] = q / np.linalg.norm(q, axis=-1, keepdims=True)
        d[..., 10:] = rng.normal(size=(16, 16, 4))
        m = SplatterMap(d, cam)
        fr = decode(m)
        p = cam.world_to_camera(fr.positions)
        u, v = cam.fx * p[:, 0] / p[:, 2] + cam.cx, cam.fy * p[:, 1] / p[:, 2] + cam.cy
        py, px = np.mgrid[0:16, 0:16]
        cu, cv = px.ravel() + 0.5, py.ravel() + 0.5
        tu = cu + 0.5 * np.tanh(d[..., 1].ravel())
        tv = cv + 0.5 * np.tanh(d[..., 2].ravel())
        reproj = max(reproj, float(np.hypot(u - tu, v - tv).max()))
        axis = max(axis, float(np.maximum(np.abs(u - cu), np.abs(v - cv)).max()))
        rt = max(rt, float(np.abs(encode(fr, cam).data - d).max()))
    ok = reproj < 0.5 and axis < 0.5 and rt < 1e-5
    criterion(
        7, "splatter decode geometry and round trip", ok,
        f"reprojection vs centre + offset {reproj:.1e} px (< 0.5), per-axis distance from centre {axis:.3f} px (< 0.5), "
        f"round trip {rt:.1e} (< 1e-5)",
    )
    assert ok


def test_c8_predictor_desk_scale(criterion):
    pcfg = PredictorConfig()
    rng = np.random.default_rng(8)
    s = draw_sample(rng, SceneSpec(T=4, sh_degree=0), pcfg, target_res=32)
    shape = forward(init_params(pcfg), s.images, s.cameras, pcfg).output.shape
    tr = train(init_params(pcfg), [s], pcfg, FitConfig(steps=500))
    drop = 1 - tr.losses[-1] / tr.losses[0]
    e = sample_elevation(np.random.default_rng(0), 10_000)
    counts, _ = np.histogram(e, bins=20, range=(-ELEVATION_LIMIT_DEG, ELEVATION_LIMIT_DEG))
    p = chisquare(counts).pvalue
    in_range = bool(e.min() >= -30 and e.max() <= 30)
    ok = shape == (4, 14, 32, 32) and drop >= 0.9 and in_range and p > 0.01
    criterion(
        8, "predictor shape, overfit, elevation sampler", ok,
        f"shape {shape}, overfit drop {100 * drop:.1f}% (>= 90%), elevations in [-30, 30]: {in_range}, chi2 p {p:.3f} (> 0.01)",
    )
    assert ok


def test_c9_determinism_and_ply(criterion, tmp_path):
    spec = SceneSpec(T=2, gaussian_count=40, width=32, height=32)
    sc = generate(spec)
    targets = [render(sc.sequence[0], c).rgb for c in sc.camera_list]
    cfg = FitConfig(steps=60, full_res=32, perceptual_res=32, seed=3)
    runs = [fit_frame(scene_random_frame(40, seed=4), targets, sc.camera_list, cfg) for _ in range(2)]
    same_trace = runs[0].losses == runs[1].losses and runs[0].frame.equals(runs[1].frame)
    io.write_ply(tmp_path / "f.ply", runs[0].frame, "double")
    ply_exact = io.read_ply(tmp_path / "f.ply").equals(runs[0].frame)
    ok = same_trace and ply_exact
    criterion(9, "deterministic loss traces, PLY round trip", ok, f"identical traces: {same_trace}, PLY bit-exact: {ply_exact}")
    assert ok

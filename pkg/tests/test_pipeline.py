import json
import math

import numpy as np
import pytest
from helpers import random_camera, random_frame
from hypothesis import given, settings
from hypothesis import strategies as st

from dynsplat.core import GaussianSequence, ImageBuffer, InvalidInputError
from dynsplat.pipeline import (
    ConfigError,
    PipelineConfig,
    UnsharpEnhancer,
    config_help,
    dump_config,
    io,
    load_config,
    mse,
    parse_config,
    psnr,
    sequence_metrics,
    ssim,
)
from dynsplat.pipeline.cli import main
from dynsplat.pipeline.config import SECTIONS

# ---- PLY ----


@settings(max_examples=10)
@given(st.integers(0, 2**32 - 1), st.integers(0, 3), st.integers(0, 20))
def test_ply_double_round_trip_is_bit_exact(tmp_path_factory, seed, deg, n):
    rng = np.random.default_rng(seed)
    fr = random_frame(rng, n, deg=deg).replace(timestamp=7)
    p = tmp_path_factory.mktemp("ply") / "f.ply"
    io.write_ply(p, fr, "double")
    back = io.read_ply(p)
    assert back.timestamp == 7 and back.sh_degree == deg
    for k, v in fr.params().items():
        assert np.array_equal(getattr(back, k), v), k


def test_ply_float_round_trip_exact_for_float32_values(tmp_path, rng):
    fr = random_frame(rng, 30, deg=2)
    fr32 = type(fr)(**{k: v.astype(np.float32).astype(np.float64) for k, v in fr.params().items()})
    io.write_ply(tmp_path / "f.ply", fr32, "float")
    back = io.read_ply(tmp_path / "f.ply")
    assert all(np.array_equal(getattr(back, k), v) for k, v in fr32.params().items())
    # general doubles round to the nearest float32
    io.write_ply(tmp_path / "g.ply", fr, "float")
    g = io.read_ply(tmp_path / "g.ply")
    assert np.abs(g.positions - fr.positions).max() < 1e-6


def test_ply_header_uses_3dgs_layout(tmp_path, rng):
    io.write_ply(tmp_path / "f.ply", random_frame(rng, 2, deg=1))
    head = (tmp_path / "f.ply").read_bytes().split(b"end_header")[0].decode()
    props = [ln.split()[2] for ln in head.splitlines() if ln.startswith("property")]
    assert props[:9] == ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    assert props[-8:] == ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    assert sum(p.startswith("f_rest_") for p in props) == 9
    assert "binary_little_endian" in head


def test_ply_rejects_garbage(tmp_path):
    (tmp_path / "x.ply").write_bytes(b"not a ply")
    with pytest.raises(InvalidInputError):
        io.read_ply(tmp_path / "x.ply")
    with pytest.raises(InvalidInputError):
        io.write_ply(tmp_path / "y.ply", random_frame(np.random.default_rng(0), 2), precision="half")


def test_sequence_manifest_round_trip(tmp_path, rng):
    seq = GaussianSequence(tuple(random_frame(rng, 5).replace(timestamp=t) for t in (1, 2, 3)))
    io.save_sequence(tmp_path / "s", seq, "double")
    assert io.load_sequence(tmp_path / "s").equals(seq)
    (tmp_path / "s" / io.MANIFEST_NAME).write_text("dynsplat-sequence 1\nT 3\nframe 1 frame_0001.ply\n")
    with pytest.raises(InvalidInputError):
        io.load_sequence(tmp_path / "s")
    with pytest.raises(FileNotFoundError):
        io.load_sequence(tmp_path / "missing")


# ---- images, tensors, cameras ----


def test_png_round_trip_within_quantization(tmp_path, rng):
    a = rng.uniform(size=(9, 11, 3))
    io.save_png(tmp_path / "a.png", ImageBuffer(a))
    b = io.load_png(tmp_path / "a.png").data
    # 8-bit sRGB: half a code step in sRGB space, at most ~0.0021 in linear space near 1
    assert np.abs(io.linear_to_srgb(b) - io.linear_to_srgb(a)).max() <= 0.5 / 255 + 1e-12


def test_srgb_transfer_inverse(rng):
    x = rng.uniform(size=1000)
    assert np.allclose(io.srgb_to_linear(io.linear_to_srgb(x)), x, atol=1e-12)


def test_mask_png_is_linear(tmp_path):
    m = np.array([[0.0, 1.0], [1.0, 0.0]])
    io.save_png(tmp_path / "m.png", m)
    assert np.array_equal(io.load_png(tmp_path / "m.png").data[..., 0], m)


def test_tensor_round_trip_and_bad_magic(tmp_path, rng):
    a = rng.normal(size=(2, 3, 4)).astype(np.float32)
    io.save_tensor(tmp_path / "t.bin", a)
    assert np.array_equal(io.load_tensor(tmp_path / "t.bin"), a)
    raw = (tmp_path / "t.bin").read_bytes()
    (tmp_path / "u.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(InvalidInputError):
        io.load_tensor(tmp_path / "u.bin")
    (tmp_path / "v.bin").write_bytes(raw[:-4])
    with pytest.raises(InvalidInputError):
        io.load_tensor(tmp_path / "v.bin")


def test_camera_json_round_trip(tmp_path, rng):
    cams = {"a": random_camera(rng), "b": random_camera(rng, size=32)}
    io.save_cameras(tmp_path / "c.json", cams)
    back = io.load_cameras(tmp_path / "c.json")
    for k in cams:
        assert np.array_equal(back[k].rotation, cams[k].rotation)
        assert np.array_equal(back[k].translation, cams[k].translation)
        assert (back[k].fx, back[k].width, back[k].near) == (cams[k].fx, cams[k].width, cams[k].near)


# ---- config ----


def test_config_round_trip():
    text = "[scene]\nT = 3\nkind = pulsing-blob\n[fit]\nlr = 0.001\n[corruption]\npatch = 1, 2, 3, 4\nt_range = 1, 3\n"
    cfg = parse_config(text)
    assert cfg.scene.T == 3 and cfg.scene.kind == "pulsing-blob" and cfg.fit.lr == 0.001
    assert cfg.corruption.patch == (1, 2, 3, 4)
    assert parse_config(dump_config(cfg)) == cfg
    assert parse_config(dump_config(PipelineConfig())) == PipelineConfig()


@pytest.mark.parametrize(
    "text",
    [
        "[scene]\ncolour = red\n",
        "[scenery]\nT = 3\n",
        "[scene]\nT = three\n",
        "[scene]\nT = 0\n",
        "[fit]\nkeep_best = maybe\n",
        "not an ini file",
    ],
)
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_config_help_lists_every_key():
    h = config_help()
    cfg = PipelineConfig()
    for name in SECTIONS:
        assert f"[{name}]" in h
        for key in vars(getattr(cfg, name)):
            assert f"\n{key} = " in h


def test_load_config_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "nope.ini")


# ---- metrics ----


def test_psnr_examples():
    a = np.full((4, 4, 3), 0.5)
    assert psnr(a, a) == math.inf
    assert psnr(a, a + 0.1) == pytest.approx(20.0)
    checker = (np.indices((8, 8)).sum(0) % 2)[..., None].repeat(3, -1).astype(float)
    assert psnr(checker, np.zeros_like(checker)) == pytest.approx(10 * math.log10(2))
    with pytest.raises(InvalidInputError):
        mse(a, a[:2])


def test_ssim_identity_and_drop(rng):
    a = rng.uniform(size=(16, 16, 3))
    assert ssim(a, a) == pytest.approx(1.0)
    assert ssim(a, np.clip(a + rng.normal(0, 0.2, a.shape), 0, 1)) < 0.9


def test_sequence_metrics_pool(rng):
    a = {"v": [ImageBuffer(np.zeros((4, 4, 3))), ImageBuffer(np.zeros((4, 4, 3)))]}
    b = {"v": [ImageBuffer(np.zeros((4, 4, 3))), ImageBuffer(np.full((4, 4, 3), 0.2))]}
    r = sequence_metrics(a, b)
    assert r["frames"] == 2 and r["mse"] == pytest.approx(0.02)
    with pytest.raises(InvalidInputError):
        sequence_metrics(a, {"w": b["v"]})


def test_unsharp_keeps_shape_and_range(rng):
    img = ImageBuffer(rng.uniform(size=(10, 12, 3)))
    out = UnsharpEnhancer()(img)
    assert out.data.shape == img.data.shape
    assert out.data.min() >= 0 and out.data.max() <= 1
    flat = ImageBuffer(np.full((6, 6, 3), 0.3))
    assert np.allclose(UnsharpEnhancer()(flat).data, 0.3)


# ---- CLI ----


def test_cli_show_config(capsys):
    assert main(["show-config"]) == 0
    assert parse_config(capsys.readouterr().out) == PipelineConfig()


def test_cli_usage_error():
    with pytest.raises(SystemExit) as e:
        main(["fit"])
    assert e.value.code == 2


def test_cli_missing_file(tmp_path):
    assert main(["export", "--seq", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 3
    assert main(["show-config", "--config", str(tmp_path / "none.ini")]) == 3


def test_cli_bad_config(tmp_path):
    (tmp_path / "c.ini").write_text("[fit]\nsteps = -1\n")
    assert main(["show-config", "--config", str(tmp_path / "c.ini")]) == 4


def test_cli_invalid_input(tmp_path):
    (tmp_path / "s").mkdir()
    (tmp_path / "s" / io.MANIFEST_NAME).write_text("something else\n")
    assert main(["export", "--seq", str(tmp_path / "s"), "--out", str(tmp_path / "o")]) == 5


def test_cli_scene_export_render_metrics(tmp_path, capsys):
    (tmp_path / "c.ini").write_text("[scene]\nT = 2\ngaussian_count = 30\nwidth = 32\nheight = 32\n")
    c = ["--config", str(tmp_path / "c.ini")]
    assert main(["make-scene", "--out", str(tmp_path / "scene")] + c) == 0
    assert main(["export", "--seq", str(tmp_path / "scene"), "--out", str(tmp_path / "dbl"), "--precision", "double"] + c) == 0
    orig, dbl = io.load_sequence(tmp_path / "scene"), io.load_sequence(tmp_path / "dbl")
    assert dbl.equals(orig)
    cams = str(tmp_path / "scene" / "cameras.json")
    assert main(["render", "--seq", str(tmp_path / "scene"), "--cameras", cams, "--out", str(tmp_path / "r")] + c) == 0
    assert sorted(p.name for p in (tmp_path / "r").iterdir()) == ["back", "front", "left", "right"]
    capsys.readouterr()
    assert main(["metrics", "--a", str(tmp_path / "r"), "--b", str(tmp_path / "r")]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["psnr"] == "inf" and rec["frames"] == 8


@pytest.mark.slow
def test_cli_run_improves_psnr(tmp_path, capsys):
    assert main(["run", "--out", str(tmp_path / "run")]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["post"]["psnr"] - res["pre"]["psnr"] >= 2.0
    lines = (tmp_path / "run" / "refined" / "refine_report.jsonl").read_text().splitlines()
    assert len(lines) == PipelineConfig().refine.loop_iterations

import numpy as np
import pytest
from helpers import OP_CASES, fd_agreement, op_fd_pass_rate
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import kstest

from dynsplat.core import InvalidInputError
from dynsplat.fit import FitConfig
from dynsplat.predictor import (
    ELEVATION_LIMIT_DEG,
    PredictorConfig,
    UnsupportedOpError,
    autodiff,
    draw_sample,
    forward,
    init_params,
    load_checkpoint,
    ray_embedding,
    sample_elevation,
    sample_loss,
    save_checkpoint,
    train,
)
from dynsplat.scenes import SceneSpec, training_sample
from dynsplat.splatter import decode

ad = autodiff


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradients_match_fd(name, rng):
    build, shapes = OP_CASES[name]
    assert op_fd_pass_rate(build, shapes, rng) >= 0.99


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(1, 4), st.integers(2, 5))
def test_conv_and_norm_fd_random_shapes(seed, n, c, s):
    rng = np.random.default_rng(seed)
    conv = lambda x, w, b: ad.conv2d(x, w, b)  # noqa: E731
    assert op_fd_pass_rate(conv, [(n, c, s, s + 1), (2, c, 3, 3), (2,)], rng) >= 0.99
    gn = lambda x, g, b: ad.group_norm(x, g, b, 2)  # noqa: E731
    assert op_fd_pass_rate(gn, [(n, 2 * c, s, s), (2 * c,), (2 * c,)], rng) >= 0.99


def test_unknown_op_rejected():
    with pytest.raises(UnsupportedOpError):
        ad.apply("layer_norm", ad.parameter(np.zeros((1, 1, 2, 2))))
    x = ad.parameter(np.ones((1, 1, 2, 2)))
    with pytest.raises(UnsupportedOpError):
        x + x
    with pytest.raises(UnsupportedOpError):
        x * 2.0
    assert ad.apply("sigmoid", x).op == "sigmoid"


def test_detached_branch_gets_no_gradient(rng):
    a = ad.parameter(rng.normal(size=(1, 2, 3, 3)))
    b = ad.parameter(rng.normal(size=(1, 2, 3, 3)))
    out = ad.concat([ad.tanh(a), ad.sigmoid(b).detach()])
    out.backward(np.ones(out.shape))
    assert b.grad is None
    assert np.allclose(a.grad, 1 - np.tanh(a.value) ** 2)


def test_backward_accumulates_shared_input(rng):
    x = ad.parameter(rng.normal(size=(1, 1, 2, 2)))
    out = ad.concat([ad.tanh(x), ad.tanh(x)])
    out.backward(np.ones(out.shape))
    assert np.allclose(x.grad, 2 * (1 - np.tanh(x.value) ** 2))


# ---- network ----


@pytest.fixture(scope="module")
def sample():
    return training_sample(SceneSpec(T=4, sh_degree=0, gaussian_count=40), t=2, azimuth_deg=20.0, elevation_deg=10.0)


def test_output_shape(sample):
    cfg = PredictorConfig()
    res = forward(init_params(cfg), sample.images, sample.cameras, cfg)
    assert res.output.shape == (4, 14, 32, 32)
    assert all(m.data.shape == (32, 32, 14) for m in res.maps)
    assert all((m.camera.width, m.camera.height) == (32, 32) for m in res.maps)


def test_zero_head_decodes_to_mid_depth(sample):
    cfg = PredictorConfig()
    res = forward(init_params(cfg), sample.images, sample.cameras, cfg)
    for m in res.maps:
        fr = decode(m)
        z = m.camera.world_to_camera(fr.positions)[:, 2]
        assert np.allclose(z, 0.5 * (cfg.near + cfg.far), atol=1e-12)
        assert np.allclose(fr.rotations, [1, 0, 0, 0])


def test_forward_deterministic(sample):
    cfg = PredictorConfig(head_init_std=0.05)
    p = init_params(cfg, seed=3)
    a = forward(p, sample.images, sample.cameras, cfg).output.value
    b = forward(p, sample.images, sample.cameras, cfg).output.value
    assert np.array_equal(a, b)


def test_view_permutation_equivariance(sample):
    cfg = PredictorConfig(head_init_std=0.05)
    p = init_params(cfg, seed=3)
    perm = [2, 0, 3, 1]
    a = forward(p, sample.images, sample.cameras, cfg).output.value
    b = forward(p, [sample.images[i] for i in perm], [sample.cameras[i] for i in perm], cfg).output.value
    assert np.allclose(a[perm], b, rtol=1e-10, atol=1e-12)


def test_ray_embedding_is_pluecker(sample):
    cam = sample.cameras[0]
    e = ray_embedding(cam)
    d, m = e[:3], e[3:]
    assert np.allclose(np.linalg.norm(d, axis=0), 1.0)
    assert np.allclose(np.einsum("chw,chw->hw", d, m), 0.0, atol=1e-12)


def test_config_validation():
    with pytest.raises(InvalidInputError):
        PredictorConfig(output_res=128)
    with pytest.raises(InvalidInputError):
        PredictorConfig(output_res=24)
    with pytest.raises(InvalidInputError):
        PredictorConfig(near=3.0, far=2.0)
    with pytest.raises(InvalidInputError):
        PredictorConfig(out_channels=13)


def test_forward_rejects_wrong_view_count(sample):
    with pytest.raises(InvalidInputError):
        forward(init_params(), sample.images[:3], sample.cameras[:3])


def test_end_to_end_gradient_matches_fd():
    # small step: the alpha clamp and footprint cut-off make the loss piecewise smooth
    pcfg = PredictorConfig(head_init_std=0.05)
    p = init_params(pcfg, seed=1)
    s = draw_sample(np.random.default_rng(0), SceneSpec(T=4, sh_degree=0), pcfg, target_res=16)
    fcfg = FitConfig(augment_prob=0)
    _, g = sample_loss(p, s, pcfg, fcfg)
    assert all(np.all(np.isfinite(v)) for v in g.values())
    rng = np.random.default_rng(5)
    coords = [("head.b", (c,)) for c in range(14)]
    for k in ("head.w", "dec0.w", "mid.b", "enc0.w"):
        coords += [(k, tuple(int(rng.integers(n)) for n in p[k].shape)) for _ in range(3)]
    h = 1e-7
    fd, an = [], []
    for k, idx in coords:
        old = p[k][idx]
        p[k][idx] = old + h
        lp = sample_loss(p, s, pcfg, fcfg, with_grad=False)
        p[k][idx] = old - h
        lm = sample_loss(p, s, pcfg, fcfg, with_grad=False)
        p[k][idx] = old
        fd.append((lp - lm) / (2 * h))
        an.append(g[k][idx])
    ok = fd_agreement(fd, an, rel=1e-2, abs_floor=1e-8)
    assert ok.mean() >= 0.95, list(zip(coords, fd, an))


def test_zero_training_steps_leave_params(sample):
    pcfg = PredictorConfig()
    p = init_params(pcfg)
    tr = train(p, [sample], pcfg, FitConfig(steps=0))
    assert tr.losses == []
    assert all(np.array_equal(tr.params[k], p[k]) for k in p)


def test_short_training_reduces_loss():
    pcfg = PredictorConfig()
    s = draw_sample(np.random.default_rng(1), SceneSpec(T=4, sh_degree=0), pcfg, target_res=32)
    tr = train(init_params(pcfg), [s], pcfg, FitConfig(steps=40))
    assert np.all(np.isfinite(tr.losses))
    assert np.mean(tr.losses[-5:]) < tr.losses[0]


def test_checkpoint_round_trip(tmp_path):
    p = init_params(PredictorConfig(head_init_std=0.1), seed=2)
    save_checkpoint(tmp_path / "ck", p)
    q = load_checkpoint(tmp_path / "ck")
    assert set(q) == set(p)
    assert all(np.array_equal(q[k], p[k]) and q[k].shape == p[k].shape for k in p)


def test_checkpoint_bad_manifest(tmp_path):
    save_checkpoint(tmp_path / "ck", {"a.w": np.ones(3)})
    (tmp_path / "ck.manifest").write_text("garbage\n")
    with pytest.raises(InvalidInputError):
        load_checkpoint(tmp_path / "ck")


def test_elevation_sampler_range_and_uniformity():
    e = sample_elevation(np.random.default_rng(0), 5000)
    assert e.min() >= -ELEVATION_LIMIT_DEG and e.max() <= ELEVATION_LIMIT_DEG
    assert kstest(e, "uniform", args=(-ELEVATION_LIMIT_DEG, 2 * ELEVATION_LIMIT_DEG)).pvalue > 0.01

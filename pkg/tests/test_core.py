import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dynsplat.core import (
    SH_C0,
    Camera,
    Gaussian,
    GaussianFrame,
    GaussianSequence,
    ImageBuffer,
    InvalidInputError,
    axis_angle_quat,
    covariance,
    eval_gaussian,
    eval_sh,
    quat_to_rotmat,
    sh_basis,
)

finite = st.floats(-3, 3, allow_nan=False)
vec3 = arrays(np.float64, 3, elements=finite)
quat = arrays(np.float64, 4, elements=st.floats(-1, 1)).filter(lambda q: np.linalg.norm(q) > 1e-3)


def gauss(pos=(0, 0, 0), ls=(0, 0, 0), rot=(1, 0, 0, 0), op=0.0, sh=None):
    return Gaussian(np.array(pos, float), np.array(ls, float), np.array(rot, float), op, np.zeros((3, 1)) if sh is None else sh)


# ---- covariance ----


def test_covariance_identity():
    assert np.allclose(covariance(gauss()), np.eye(3))


def test_covariance_axis_scaling():
    assert np.allclose(covariance(gauss(ls=(math.log(2), 0, 0))), np.diag([4.0, 1.0, 1.0]))


def test_covariance_rotated_about_z():
    q = axis_angle_quat((0, 0, 1), math.pi / 2)
    assert np.allclose(covariance(gauss(ls=(math.log(2), 0, 0), rot=q)), np.diag([1.0, 4.0, 1.0]), atol=1e-12)


@given(vec3, quat)
def test_covariance_is_spd(ls, q):
    S = covariance(gauss(ls=ls, rot=q))
    assert np.allclose(S, S.T, atol=1e-12 * np.abs(S).max())
    assert np.all(np.linalg.eigvalsh(S) > 0)


@given(quat)
def test_rotation_matrix_orthonormal(q):
    R = quat_to_rotmat(q / np.linalg.norm(q))
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.isclose(np.linalg.det(R), 1.0)


# ---- eval_gaussian ----


def test_eval_at_mean_is_one():
    assert eval_gaussian(gauss(pos=(1, 2, 3)), np.array([1.0, 2, 3])) == 1.0


def test_eval_unit_distance():
    assert np.isclose(eval_gaussian(gauss(), np.array([0.0, 1.0, 0.0])), math.exp(-0.5))


def test_eval_anisotropic():
    g = gauss(ls=(math.log(2), 0, 0), rot=axis_angle_quat((0, 0, 1), math.pi / 2))
    inv = np.linalg.inv(covariance(g))
    assert np.isclose(eval_gaussian(g, np.array([1.0, 0, 0])), math.exp(-0.5 * inv[0, 0]))


@given(vec3, quat, arrays(np.float64, 3, elements=st.floats(-1, 1)).filter(lambda d: np.linalg.norm(d) > 1e-3))
def test_eval_monotone_along_rays(ls, q, d):
    g = gauss(pos=(0.3, -0.2, 0.1), ls=np.clip(ls, -1, 1), rot=q)
    d = d / np.linalg.norm(d)
    vals = [eval_gaussian(g, g.position + t * d) for t in np.linspace(0, 3, 12)]
    assert vals[0] == 1.0
    assert all(b <= a for a, b in zip(vals, vals[1:]))


@given(vec3, quat, quat, vec3)
def test_rotation_equivariance(ls, q, qr, x):
    g = gauss(pos=(0.1, 0.2, 0.3), ls=np.clip(ls, -1, 1), rot=q / np.linalg.norm(q))
    qr = qr / np.linalg.norm(qr)
    R = quat_to_rotmat(qr)
    from dynsplat.core import quat_multiply

    rotated = gauss(pos=g.position, ls=g.log_scale, rot=quat_multiply(qr, g.rotation))
    assert abs(eval_gaussian(rotated, R @ (x - g.position) + g.position) - eval_gaussian(g, x)) < 1e-6


# ---- SH ----


def test_sh_degree0_constant():
    c = np.array([[0.4], [-0.2], [1.0]])
    expected = np.clip(c[:, 0] * SH_C0 + 0.5, 0, 1)
    for d in ([0, 0, 1], [1, 0, 0], [0, -1, 0]):
        assert np.allclose(eval_sh(c, np.array(d, float)), expected)


def test_sh_zero_coeffs_gray():
    assert np.array_equal(eval_sh(np.zeros((3, 4)), np.array([0, 0, 1.0])), [0.5, 0.5, 0.5])


def test_sh_z_band_difference():
    c1 = 0.3
    sh = np.zeros((3, 4))
    sh[:, 2] = c1  # Y_1^0 is proportional to z
    y10 = sh_basis(np.array([[0, 0, 1.0]]), 1)[0, 2]
    diff = eval_sh(sh, np.array([0, 0, 1.0])) - eval_sh(sh, np.array([0, 0, -1.0]))
    assert np.allclose(diff, 2 * c1 * y10)
    assert np.isclose(y10, math.sqrt(3 / (4 * math.pi)))


def test_sh_degree_mismatch():
    with pytest.raises(InvalidInputError):
        eval_sh(np.zeros((3, 4)), np.array([0, 0, 1.0]), degree=2)
    with pytest.raises(InvalidInputError):
        eval_sh(np.zeros((3, 5)), np.array([0, 0, 1.0]))


def test_sh_rejects_non_unit_direction():
    with pytest.raises(InvalidInputError):
        eval_sh(np.zeros((3, 1)), np.array([0, 0, 2.0]))


# ---- types ----


def test_gaussian_rotation_normalized():
    g = gauss(rot=(2, 0, 0, 0))
    assert np.isclose(np.linalg.norm(g.rotation), 1.0)
    assert 0 < g.opacity < 1


def test_gaussian_rejects_bad_values():
    with pytest.raises(InvalidInputError):
        gauss(rot=(0, 0, 0, 0))
    with pytest.raises(InvalidInputError):
        gauss(ls=(1000, 0, 0))


def test_frame_from_gaussians_and_sequence():
    f = GaussianFrame.from_gaussians([gauss(), gauss(pos=(1, 0, 0))], timestamp=1)
    assert len(f) == 2
    seq = GaussianSequence((f, f.replace(timestamp=2)))
    assert seq.T == 2
    with pytest.raises(InvalidInputError):
        GaussianSequence((f, f))  # timestamps not increasing
    with pytest.raises(InvalidInputError):
        GaussianSequence(())


def test_frame_mixed_sh_degree_rejected():
    with pytest.raises(InvalidInputError):
        GaussianFrame.from_gaussians([gauss(), gauss(sh=np.zeros((3, 4)))])


def test_frames_may_differ_in_count():
    a = GaussianFrame.from_gaussians([gauss()], timestamp=1)
    b = GaussianFrame.from_gaussians([gauss(), gauss()], timestamp=2)
    assert GaussianSequence((a, b)).T == 2


def test_camera_validation():
    with pytest.raises(InvalidInputError):
        Camera(0, 1, 0, 0, 4, 4)
    with pytest.raises(InvalidInputError):
        Camera(1, 1, 0, 0, 4, 4, near=1, far=0.5)
    with pytest.raises(InvalidInputError):
        Camera(1, 1, 0, 0, 4, 4, rotation=np.diag([1, 1, 2.0]))


def test_look_at_points_at_target():
    cam = Camera.look_at((0, 0, 4), width=32, height=32)
    p = cam.world_to_camera(np.zeros((1, 3)))[0]
    assert np.allclose(p[:2], 0) and np.isclose(p[2], 4)
    assert np.allclose(cam.center, [0, 0, 4])


def test_image_buffer_validation():
    assert ImageBuffer(np.zeros((2, 3))).channels == 1
    with pytest.raises(InvalidInputError):
        ImageBuffer(np.zeros((2, 2, 2)))
    with pytest.raises(InvalidInputError):
        ImageBuffer(np.full((2, 2, 3), np.nan))

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dynsplat.core import ImageBuffer, InvalidInputError
from dynsplat.uncertainty import (
    SIGMA_MIN,
    ResidualStatEstimator,
    UncertaintyMap,
    binarize,
    estimate_uncertainty,
    masks_for,
    reliable,
)

BOUNDARY = math.sqrt(0.5)  # the double nearest 1/sqrt(2)


def seq(arrs):
    return [ImageBuffer(a) for a in arrs]


def stack_images(rng, T=3, H=32, W=32):
    return [rng.uniform(0, 1, (H, W, 3)) for _ in range(T)]


# ---- binarize ----


@pytest.mark.parametrize(
    "sigma,expected",
    [
        (0.5, 1.0),
        (BOUNDARY, 0.0),
        (np.nextafter(BOUNDARY, 0.0), 1.0),
        (np.nextafter(BOUNDARY, 1.0), 0.0),
        (0.7071, 1.0),
        (10.0, 0.0),
    ],
)
def test_binarize_examples(sigma, expected):
    u = UncertaintyMap(ImageBuffer(np.full((2, 2, 1), sigma)))
    assert np.all(binarize(u).values == expected)


def test_boundary_neighbours_straddle_true_value():
    lo = np.nextafter(BOUNDARY, 0.0)
    # exact rational check with Python's integer arithmetic: 2*s^2 vs 1
    from fractions import Fraction

    assert 2 * Fraction(BOUNDARY) ** 2 > 1
    assert 2 * Fraction(lo) ** 2 < 1
    assert 1 / np.sqrt(2) == lo


@given(st.floats(0, 10, allow_nan=False))
def test_reliable_is_exact(s):
    from fractions import Fraction

    assert bool(reliable(s)) == (2 * Fraction(s) ** 2 < 1)


@given(st.lists(st.floats(0, 3, allow_nan=False), min_size=2, max_size=50))
def test_binarize_monotone(vals):
    v = np.sort(np.array(vals))
    m = reliable(v)
    assert np.all(np.diff(m.astype(int)) <= 0)


def test_sigma_floor():
    u = UncertaintyMap(ImageBuffer(np.zeros((3, 3, 1))))
    assert np.all(u.values == SIGMA_MIN)
    with pytest.raises(InvalidInputError):
        UncertaintyMap(ImageBuffer(np.zeros((3, 3, 3))))


# ---- estimator ----


def test_identical_inputs_floor_and_all_reliable(rng):
    imgs = seq(stack_images(rng))
    maps = estimate_uncertainty({"front": imgs}, {"front": imgs})
    assert all(np.all(u.values == SIGMA_MIN) for u in maps["front"])
    assert all(np.all(m.values == 1) for m in masks_for(maps)["front"])
    assert [u.timestamp for u in maps["front"]] == [1, 2, 3]


def inverted_patch(T, frames, value=0.05):
    ref = [np.full((32, 32, 3), value) for _ in range(T)]
    ren = [r.copy() for r in ref]
    for t in frames:
        ren[t][8:24, 8:24] = 1.0 - ren[t][8:24, 8:24]
    return seq(ren), seq(ref)


def test_inverted_patch_masked_in_core():
    ren, ref = inverted_patch(3, range(3))
    u = estimate_uncertainty({"v": ren}, {"v": ref})["v"][1]
    core = u.values[10:22, 10:22]
    assert np.allclose(core, 0.9)
    m = binarize(u).values
    assert np.all(m[10:22, 10:22] == 0)
    assert np.all(m[:4] == 1)  # far from the patch


def test_inverted_patch_single_frame_value():
    # one corrupted frame in a 3-frame window: sigma = |r| / sqrt(3), below the threshold
    ren, ref = inverted_patch(5, [2])
    u = estimate_uncertainty({"v": ren}, {"v": ref})["v"][2]
    assert np.allclose(u.values[10:22, 10:22], 0.9 / math.sqrt(3))
    assert np.all(binarize(u).values[10:22, 10:22] == 1)


@pytest.mark.parametrize("a", [0.05, 0.2, 0.5])
def test_uniform_noise_sigma(a):
    rng = np.random.default_rng(3)
    ref = [np.full((48, 48, 3), 0.5) for _ in range(3)]
    ren = [r + rng.uniform(-a, a, r.shape) for r in ref]
    u = estimate_uncertainty({"v": seq(ren)}, {"v": seq(ref)})["v"][1]
    interior = u.values[4:-4, 4:-4]
    assert abs(interior.mean() / (a / math.sqrt(3)) - 1) < 0.1


@given(st.integers(0, 2**32 - 1), st.integers(-6, 6), st.integers(-6, 6))
def test_translation_covariance(seed, dy, dx):
    rng = np.random.default_rng(seed)
    ren, ref = stack_images(rng, 3, 40, 40), stack_images(rng, 3, 40, 40)
    est = ResidualStatEstimator()
    s0 = est(np.stack(ren), np.stack(ref))
    shift = lambda xs: np.stack([np.roll(x, (dy, dx), axis=(0, 1)) for x in xs])  # noqa: E731
    s1 = est(shift(ren), shift(ref))
    # interior pixels whose window does not touch the wrap-around seam or the border
    m = 2 + 6
    a = np.roll(s0, (dy, dx), axis=(1, 2))[:, m:-m, m:-m]
    assert np.allclose(a, s1[:, m:-m, m:-m], rtol=1e-12, atol=1e-15)


def test_estimator_window_validation():
    with pytest.raises(InvalidInputError):
        ResidualStatEstimator(patch=4)
    with pytest.raises(InvalidInputError):
        ResidualStatEstimator(temporal=0)


def test_estimate_rejects_mismatches(rng):
    a = seq(stack_images(rng, 3))
    with pytest.raises(InvalidInputError):
        estimate_uncertainty({"front": a}, {"left": a})
    with pytest.raises(InvalidInputError):
        estimate_uncertainty({"front": a}, {"front": a[:2]})
    with pytest.raises(InvalidInputError):
        estimate_uncertainty({"front": a}, {"front": seq(stack_images(rng, 3, 16, 16))})

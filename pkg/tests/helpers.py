"""Shared builders and finite-difference utilities for the tests."""
import numpy as np

from dynsplat.core import Camera, GaussianFrame, sh_coeff_count
from dynsplat.predictor import autodiff as ad


def random_frame(rng, n, deg=1, spread=1.0, scale=(0.05, 0.3)):
    return GaussianFrame(
        rng.uniform(-spread, spread, (n, 3)),
        rng.uniform(np.log(scale[0]), np.log(scale[1]), (n, 3)),
        rng.normal(size=(n, 4)),
        rng.normal(0, 1.5, n),
        rng.normal(0, 0.5, (n, 3, sh_coeff_count(deg))),
    )


def random_camera(rng, size=64, dist=3.0):
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    return Camera.look_at(dist * d, width=size, height=size, fov_deg=50, near=0.5, far=10.0)


def fd_agreement(fd, an, rel=1e-3, abs_floor=1e-10):
    """Per-coordinate pass flags: relative error below ``rel`` or both values negligible."""
    fd, an = np.asarray(fd), np.asarray(an)
    err = np.abs(fd - an) / np.maximum(np.maximum(np.abs(fd), np.abs(an)), 1e-300)
    return (err < rel) | ((np.abs(fd) < abs_floor) & (np.abs(an) < abs_floor))


def frame_fd(frame, loss, h=1e-3, keys=None):
    """Central differences of ``loss(frame)`` for every coordinate of every parameter array."""
    out = {}
    for k, arr in frame.params().items():
        if keys is not None and k not in keys:
            continue
        g = np.zeros(arr.size)
        for i in range(arr.size):
            p = frame.params()
            p[k].reshape(-1)[i] += h
            lp = loss(GaussianFrame(**p, timestamp=frame.timestamp))
            p = frame.params()
            p[k].reshape(-1)[i] -= h
            lm = loss(GaussianFrame(**p, timestamp=frame.timestamp))
            g[i] = (lp - lm) / (2 * h)
        out[k] = g.reshape(arr.shape)
    return out


# op name -> (builder over parameter tensors, parameter shapes)
OP_CASES = {
    "conv2d_3x3": (lambda x, w, b: ad.conv2d(x, w, b), [(2, 3, 5, 6), (4, 3, 3, 3), (4,)]),
    "conv2d_1x1": (lambda x, w, b: ad.conv2d(x, w, b), [(2, 3, 5, 6), (4, 3, 1, 1), (4,)]),
    "group_norm": (lambda x, g, b: ad.group_norm(x, g, b, 2), [(2, 4, 3, 3), (4,), (4,)]),
    "sigmoid": (ad.sigmoid, [(2, 2, 3, 3)]),
    "tanh": (ad.tanh, [(2, 2, 3, 3)]),
    "silu": (ad.silu, [(2, 2, 3, 3)]),
    "upsample2x": (ad.upsample2x, [(2, 2, 3, 3)]),
    "downsample2x": (ad.downsample2x, [(2, 2, 4, 4)]),
    "concat": (lambda a, b: ad.concat([a, b]), [(2, 2, 3, 3), (2, 3, 3, 3)]),
    "attention": (ad.attention, [(4, 3, 2, 2), (4, 3, 2, 2), (4, 5, 2, 2)]),
}


def op_fd_pass_rate(build, shapes, rng, h=1e-6):
    """Fraction of input coordinates whose analytic vjp matches central differences."""
    ps = [ad.parameter(rng.normal(size=s)) for s in shapes]
    out = build(*ps)
    G = rng.normal(size=out.shape)
    out.backward(G)
    flags = []
    for p in ps:
        for idx in np.ndindex(p.shape):
            old = p.value[idx]
            p.value[idx] = old + h
            fp = np.sum(build(*ps).value * G)
            p.value[idx] = old - h
            fm = np.sum(build(*ps).value * G)
            p.value[idx] = old
            flags.append(fd_agreement((fp - fm) / (2 * h), p.grad[idx], rel=1e-3, abs_floor=1e-9))
    return float(np.mean(flags))

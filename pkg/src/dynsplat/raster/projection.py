"""Perspective projection of 3D Gaussians to screen-space splats (EWA).

cov2d = J W Sigma W^T J^T + floor*I, with J the Jacobian of the pinhole
projection at the Gaussian's view-space mean.  The backward pass mirrors the
forward line by line, so both live here.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import Camera, Gaussian, GaussianFrame, sh_basis, sh_basis_grad, sigmoid, quat_to_rotmat

COV2D_FLOOR = 0.3
# Footprint extent in standard deviations: the kernel is 1e-6 of its peak
# here.  Cutting any closer (3 sigma leaves ~1% of the peak) puts visible
# steps in the image that break tiled/brute agreement and finite differences.
EXTENT_SIGMAS = math.sqrt(2.0 * math.log(1e6))


@dataclass(frozen=True)
class Projected2D:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    radius: float
    color: np.ndarray
    alpha_peak: float


@dataclass
class ProjectionState:
    """Batched projection of a whole frame plus what the backward pass needs."""

    visible: np.ndarray  # (N,) bool
    mean2d: np.ndarray  # (N,2)
    cov2d: np.ndarray  # (N,2,2) after the floor
    conic: np.ndarray  # (N,3) a, b, c of the inverse covariance
    depth: np.ndarray  # (N,)
    radius: np.ndarray  # (N,)
    color: np.ndarray  # (N,3)
    alpha_peak: np.ndarray  # (N,)
    # intermediates
    p_cam: np.ndarray
    J: np.ndarray
    M: np.ndarray
    sigma3d: np.ndarray
    R: np.ndarray
    scale: np.ndarray
    dirs: np.ndarray
    dist: np.ndarray
    basis: np.ndarray
    color_raw: np.ndarray

    def __len__(self) -> int:
        return self.visible.shape[0]


def project_frame(
    frame: GaussianFrame,
    cam: Camera,
    extent_sigmas: float = EXTENT_SIGMAS,
    cov_floor: float = COV2D_FLOOR,
    colors: np.ndarray | None = None,
    cull: bool = True,
) -> ProjectionState:
    """Project every Gaussian of ``frame``; culled ones get ``visible=False``.

    ``colors`` overrides the SH evaluation (used for cross-view diagnostics).
    With ``cull=False`` only Gaussians behind the camera plane are dropped.
    """
    n = len(frame)
    Wr = cam.rotation
    p_cam = frame.positions @ Wr.T + cam.translation
    z_raw = p_cam[:, 2]
    z = np.where(z_raw > 1e-9, z_raw, 1.0)
    x, y = p_cam[:, 0], p_cam[:, 1]

    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = cam.fx / z
    J[:, 0, 2] = -cam.fx * x / z**2
    J[:, 1, 1] = cam.fy / z
    J[:, 1, 2] = -cam.fy * y / z**2
    M = J @ Wr

    R = quat_to_rotmat(frame.rotations)
    scale = np.exp(frame.log_scales)
    RS = R * scale[:, None, :]
    sigma3d = RS @ np.swapaxes(RS, 1, 2)
    cov2d = M @ sigma3d @ np.swapaxes(M, 1, 2)
    cov2d[:, 0, 0] += cov_floor
    cov2d[:, 1, 1] += cov_floor
    A, B, C = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = A * C - B * B
    conic = np.stack([C / det, -B / det, A / det], axis=1)

    mean2d = np.stack([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy], axis=1)
    mid = 0.5 * (A + C)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = extent_sigmas * np.sqrt(lam_max)

    offs = frame.positions - cam.center
    dist = np.linalg.norm(offs, axis=1)
    dist = np.where(dist > 0, dist, 1.0)
    dirs = offs / dist[:, None]
    degree = frame.sh_degree
    basis = sh_basis(dirs, degree)
    if colors is None:
        color_raw = np.einsum("nck,nk->nc", frame.sh, basis) + 0.5
        color = np.clip(color_raw, 0.0, 1.0)
    else:
        color = np.asarray(colors, dtype=np.float64).reshape(n, 3)
        color_raw = color.copy()
    alpha_peak = np.atleast_1d(sigmoid(frame.opacity_logits))

    if cull:
        in_depth = (z_raw > cam.near) & (z_raw < cam.far)
        on_screen = (
            (mean2d[:, 0] + radius > 0)
            & (mean2d[:, 0] - radius < cam.width)
            & (mean2d[:, 1] + radius > 0)
            & (mean2d[:, 1] - radius < cam.height)
        )
        visible = in_depth & on_screen & (det > 0)
    else:
        visible = (z_raw > 1e-9) & (det > 0)

    return ProjectionState(
        visible=visible,
        mean2d=mean2d,
        cov2d=cov2d,
        conic=conic,
        depth=z_raw,
        radius=radius,
        color=color,
        alpha_peak=alpha_peak,
        p_cam=p_cam,
        J=J,
        M=M,
        sigma3d=sigma3d,
        R=R,
        scale=scale,
        dirs=dirs,
        dist=dist,
        basis=basis,
        color_raw=color_raw,
    )


def project(g: Gaussian, cam: Camera, extent_sigmas: float = EXTENT_SIGMAS) -> Projected2D | None:
    """Project one Gaussian; ``None`` means culled."""
    st = project_frame(GaussianFrame.from_gaussians([g]), cam, extent_sigmas=extent_sigmas)
    if not st.visible[0]:
        return None
    return Projected2D(
        mean2d=st.mean2d[0],
        cov2d=st.cov2d[0],
        depth=float(st.depth[0]),
        radius=float(st.radius[0]),
        color=st.color[0],
        alpha_peak=float(st.alpha_peak[0]),
    )


def _quat_backward(q: np.ndarray, gR: np.ndarray) -> np.ndarray:
    """dL/dq for raw (unnormalized) quaternions given dL/dR."""
    norm = np.linalg.norm(q, axis=1, keepdims=True)
    qn = q / norm
    w, x, y, z = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    g = gR
    gw = 2 * (-z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0] - x * g[:, 1, 2] - y * g[:, 2, 0] + x * g[:, 2, 1])
    gx = 2 * (
        y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0] - 2 * x * g[:, 1, 1] - w * g[:, 1, 2]
        + z * g[:, 2, 0] + w * g[:, 2, 1] - 2 * x * g[:, 2, 2]
    )
    gy = 2 * (
        -2 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2] + x * g[:, 1, 0] + z * g[:, 1, 2]
        - w * g[:, 2, 0] + z * g[:, 2, 1] - 2 * y * g[:, 2, 2]
    )
    gz = 2 * (
        -2 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2] + w * g[:, 1, 0] - 2 * z * g[:, 1, 1]
        + y * g[:, 1, 2] + x * g[:, 2, 0] + y * g[:, 2, 1]
    )
    gq = np.stack([gw, gx, gy, gz], axis=1)
    return (gq - qn * np.sum(qn * gq, axis=1, keepdims=True)) / norm


def projection_backward(
    frame: GaussianFrame,
    cam: Camera,
    st: ProjectionState,
    d_mean2d: np.ndarray,
    d_conic: np.ndarray,
    d_color: np.ndarray,
    d_alpha_peak: np.ndarray,
    colors_overridden: bool = False,
) -> dict[str, np.ndarray]:
    """Chain screen-space gradients back to the frame's parameters."""
    n = len(frame)
    Wr = cam.rotation
    z = np.where(st.depth > 1e-9, st.depth, 1.0)
    x, y = st.p_cam[:, 0], st.p_cam[:, 1]

    # conic -> cov2d
    a, b, c = d_conic[:, 0], d_conic[:, 1], d_conic[:, 2]
    G = np.empty((n, 2, 2))
    G[:, 0, 0] = a
    G[:, 1, 1] = c
    G[:, 0, 1] = G[:, 1, 0] = 0.5 * b
    Q = np.empty((n, 2, 2))
    Q[:, 0, 0] = st.conic[:, 0]
    Q[:, 1, 1] = st.conic[:, 2]
    Q[:, 0, 1] = Q[:, 1, 0] = st.conic[:, 1]
    g_cov = -Q @ G @ Q

    # cov2d = M Sigma M^T
    Mt = np.swapaxes(st.M, 1, 2)
    g_sigma = Mt @ g_cov @ st.M
    g_M = 2.0 * g_cov @ st.M @ st.sigma3d
    g_J = g_M @ Wr.T

    # J and mean2d -> p_cam
    g_p = np.zeros((n, 3))
    g_p[:, 0] = d_mean2d[:, 0] * cam.fx / z - g_J[:, 0, 2] * cam.fx / z**2
    g_p[:, 1] = d_mean2d[:, 1] * cam.fy / z - g_J[:, 1, 2] * cam.fy / z**2
    g_p[:, 2] = (
        -d_mean2d[:, 0] * cam.fx * x / z**2
        - d_mean2d[:, 1] * cam.fy * y / z**2
        - g_J[:, 0, 0] * cam.fx / z**2
        + g_J[:, 0, 2] * 2 * cam.fx * x / z**3
        - g_J[:, 1, 1] * cam.fy / z**2
        + g_J[:, 1, 2] * 2 * cam.fy * y / z**3
    )
    g_pos = g_p @ Wr

    # Sigma = (R S)(R S)^T
    RS = st.R * st.scale[:, None, :]
    g_RS = 2.0 * g_sigma @ RS
    g_scale = np.sum(g_RS * st.R, axis=1)
    g_log_scale = g_scale * st.scale
    g_R = g_RS * st.scale[:, None, :]
    g_rot = _quat_backward(frame.rotations, g_R)

    # color = clamp(sh . Y(dir) + 0.5)
    degree = frame.sh_degree
    if colors_overridden:
        g_sh = np.zeros_like(frame.sh)
    else:
        live = (st.color_raw > 0.0) & (st.color_raw < 1.0)
        g_raw = d_color * live
        g_sh = g_raw[:, :, None] * st.basis[:, None, :]
        if degree > 0:
            dB = sh_basis_grad(st.dirs, degree)  # (N,K,3)
            g_dir = np.einsum("nc,nck,nkj->nj", g_raw, frame.sh, dB)
            g_pos += (g_dir - st.dirs * np.sum(g_dir * st.dirs, axis=1, keepdims=True)) / st.dist[:, None]

    g_opacity = d_alpha_peak * st.alpha_peak * (1.0 - st.alpha_peak)

    return {
        "positions": g_pos,
        "log_scales": g_log_scale,
        "rotations": g_rot,
        "opacity_logits": g_opacity,
        "sh": g_sh,
    }

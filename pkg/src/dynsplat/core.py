"""Domain types shared by every module: Gaussians, frames, cameras, images.

Parameters are stored unconstrained (log-scales, opacity logits, raw SH
coefficients) so that gradient steps never leave the valid domain.  A frame
keeps its Gaussians as a struct of arrays; ``Gaussian`` is the per-splat view
used at API edges and in small tests.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "InvalidInputError",
    "Gaussian",
    "GaussianFrame",
    "GaussianSequence",
    "Camera",
    "ImageBuffer",
    "SH_C0",
    "SH_C1",
    "SH_C2",
    "sh_coeff_count",
    "sh_degree_from_count",
    "sigmoid",
    "logit",
    "quat_to_rotmat",
    "quat_multiply",
    "normalize_quat",
    "covariance",
    "covariances",
    "eval_gaussian",
    "sh_basis",
    "sh_basis_grad",
    "eval_sh",
]


class InvalidInputError(ValueError):
    """Raised when an input violates a documented precondition."""


SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
MAX_SH_DEGREE = 2


def sh_coeff_count(degree: int) -> int:
    return (degree + 1) ** 2


def sh_degree_from_count(count: int) -> int:
    for d in range(MAX_SH_DEGREE + 1):
        if sh_coeff_count(d) == count:
            return d
    raise InvalidInputError(f"{count} SH coefficients does not match any degree 0..{MAX_SH_DEGREE}")


def sigmoid(x):
    # split on sign so that exp never overflows
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


# ---------------------------------------------------------------------------
# quaternions (w, x, y, z)


def normalize_quat(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for (..., 4) quaternions; the input is normalized first."""
    q = normalize_quat(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b (rotation b first, then a)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def axis_angle_quat(axis: Sequence[float], angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[math.cos(angle / 2)], math.sin(angle / 2) * axis])


# ---------------------------------------------------------------------------
# Gaussians


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Gaussian:
    """One anisotropic splat.

    ``sh`` has shape (3, (L+1)**2): one row of real-SH coefficients per color
    channel, DC first.
    """

    position: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray
    opacity_logit: float
    sh: np.ndarray

    def __post_init__(self):
        pos = _readonly(self.position).reshape(3)
        ls = _readonly(self.log_scale).reshape(3)
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        n = np.linalg.norm(rot)
        if not np.isfinite(n) or n == 0:
            raise InvalidInputError("rotation quaternion must be finite and non-zero")
        if abs(n - 1.0) > 1e-6:
            rot = rot / n
        sh = np.asarray(self.sh, dtype=np.float64)
        if sh.ndim == 1:
            sh = sh.reshape(3, -1)
        sh_degree_from_count(sh.shape[-1])
        with np.errstate(over="ignore"):
            finite_scale = np.all(np.isfinite(np.exp(ls)))
        if not (np.all(np.isfinite(pos)) and finite_scale and np.all(np.isfinite(sh))):
            raise InvalidInputError("Gaussian parameters must be finite")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "log_scale", ls)
        object.__setattr__(self, "rotation", _readonly(rot))
        object.__setattr__(self, "opacity_logit", float(self.opacity_logit))
        object.__setattr__(self, "sh", _readonly(sh))

    @property
    def sh_degree(self) -> int:
        return sh_degree_from_count(self.sh.shape[-1])

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))


@dataclass(frozen=True, eq=False)
class GaussianFrame:
    """All Gaussians of one time step, stored as parallel arrays.

    positions (N,3), log_scales (N,3), rotations (N,4), opacity_logits (N,),
    sh (N,3,K).  ``timestamp`` is the 1-based frame index.
    """

    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray
    timestamp: int = 1

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = pos.shape[0]
        ls = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        rot = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        op = np.asarray(self.opacity_logits, dtype=np.float64).reshape(n)
        sh = np.asarray(self.sh, dtype=np.float64)
        if sh.ndim != 3 or sh.shape[0] != n or sh.shape[1] != 3:
            raise InvalidInputError(f"sh must have shape (N,3,K), got {sh.shape}")
        sh_degree_from_count(sh.shape[2])
        norms = np.linalg.norm(rot, axis=1)
        if np.any(norms == 0) or not np.all(np.isfinite(norms)):
            raise InvalidInputError("rotation quaternions must be finite and non-zero")
        off = np.abs(norms - 1.0) > 1e-6
        if np.any(off):
            rot = rot.copy()
            rot[off] /= norms[off, None]
        for name, arr in (("positions", pos), ("log_scales", ls), ("opacity_logits", op), ("sh", sh)):
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"non-finite values in {name}")
        if not np.all(np.isfinite(np.exp(ls))):
            raise InvalidInputError("exp(log_scale) overflows")
        object.__setattr__(self, "positions", _readonly(pos))
        object.__setattr__(self, "log_scales", _readonly(ls))
        object.__setattr__(self, "rotations", _readonly(rot))
        object.__setattr__(self, "opacity_logits", _readonly(op))
        object.__setattr__(self, "sh", _readonly(sh))
        object.__setattr__(self, "timestamp", int(self.timestamp))

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def sh_degree(self) -> int:
        return sh_degree_from_count(self.sh.shape[2])

    @property
    def gaussians(self) -> list[Gaussian]:
        return [self[i] for i in range(len(self))]

    def __iter__(self) -> Iterator[Gaussian]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i: int) -> Gaussian:
        return Gaussian(
            self.positions[i], self.log_scales[i], self.rotations[i], self.opacity_logits[i], self.sh[i]
        )

    @classmethod
    def from_gaussians(cls, gaussians: Sequence[Gaussian], timestamp: int = 1, sh_degree: int | None = None):
        if not gaussians:
            k = sh_coeff_count(1 if sh_degree is None else sh_degree)
            return cls.empty(timestamp=timestamp, sh_degree=sh_degree_from_count(k))
        degrees = {g.sh_degree for g in gaussians}
        if len(degrees) != 1:
            raise InvalidInputError(f"mixed SH degrees in one frame: {sorted(degrees)}")
        return cls(
            np.stack([g.position for g in gaussians]),
            np.stack([g.log_scale for g in gaussians]),
            np.stack([g.rotation for g in gaussians]),
            np.array([g.opacity_logit for g in gaussians]),
            np.stack([g.sh for g in gaussians]),
            timestamp=timestamp,
        )

    @classmethod
    def empty(cls, timestamp: int = 1, sh_degree: int = 1):
        k = sh_coeff_count(sh_degree)
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0), np.zeros((0, 3, k)), timestamp)

    def params(self) -> dict[str, np.ndarray]:
        """Writable copies of every parameter array, keyed by name."""
        return {
            "positions": self.positions.copy(),
            "log_scales": self.log_scales.copy(),
            "rotations": self.rotations.copy(),
            "opacity_logits": self.opacity_logits.copy(),
            "sh": self.sh.copy(),
        }

    def replace(self, **changes) -> "GaussianFrame":
        kw = {
            "positions": self.positions,
            "log_scales": self.log_scales,
            "rotations": self.rotations,
            "opacity_logits": self.opacity_logits,
            "sh": self.sh,
            "timestamp": self.timestamp,
        }
        kw.update(changes)
        return GaussianFrame(**kw)

    def concat(self, other: "GaussianFrame") -> "GaussianFrame":
        if len(other) and len(self) and other.sh_degree != self.sh_degree:
            raise InvalidInputError("cannot concatenate frames with different SH degrees")
        return GaussianFrame(
            np.concatenate([self.positions, other.positions]),
            np.concatenate([self.log_scales, other.log_scales]),
            np.concatenate([self.rotations, other.rotations]),
            np.concatenate([self.opacity_logits, other.opacity_logits]),
            np.concatenate([self.sh, other.sh]),
            timestamp=self.timestamp,
        )

    def subset(self, index) -> "GaussianFrame":
        return GaussianFrame(
            self.positions[index],
            self.log_scales[index],
            self.rotations[index],
            self.opacity_logits[index],
            self.sh[index],
            timestamp=self.timestamp,
        )

    def equals(self, other: "GaussianFrame") -> bool:
        """Bit-exact comparison of every parameter."""
        return (
            self.timestamp == other.timestamp
            and all(
                np.array_equal(getattr(self, k), getattr(other, k))
                for k in ("positions", "log_scales", "rotations", "opacity_logits", "sh")
            )
        )


@dataclass(frozen=True, eq=False)
class GaussianSequence:
    """Per-frame Gaussian fields stacked over t = 1..T."""

    frames: tuple[GaussianFrame, ...]

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise InvalidInputError("a sequence needs at least one frame")
        ts = [f.timestamp for f in frames]
        if ts != list(range(ts[0], ts[0] + len(ts))):
            raise InvalidInputError(f"timestamps must be contiguous and increasing, got {ts}")
        object.__setattr__(self, "frames", frames)

    @property
    def T(self) -> int:
        return len(self.frames)

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, i: int) -> GaussianFrame:
        return self.frames[i]

    def __iter__(self) -> Iterator[GaussianFrame]:
        return iter(self.frames)

    def equals(self, other: "GaussianSequence") -> bool:
        return self.T == other.T and all(a.equals(b) for a, b in zip(self.frames, other.frames))


# ---------------------------------------------------------------------------
# camera and images


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera, OpenCV axes (x right, y down, z forward).

    ``rotation``/``translation`` map world points into camera space:
    p_cam = rotation @ p_world + translation.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    near: float = 0.1
    far: float = 100.0

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError("focal lengths must be positive")
        if not (0 < self.near < self.far):
            raise InvalidInputError("need 0 < near < far")
        if int(self.width) <= 0 or int(self.height) <= 0:
            raise InvalidInputError("image size must be positive")
        if np.max(np.abs(R @ R.T - np.eye(3))) > 1e-6:
            raise InvalidInputError("world_to_camera rotation is not orthonormal")
        object.__setattr__(self, "rotation", _readonly(R))
        object.__setattr__(self, "translation", _readonly(t))
        for k in ("fx", "fy", "cx", "cy", "near", "far"):
            object.__setattr__(self, k, float(getattr(self, k)))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation

    def with_pose(self, rotation: np.ndarray, translation: np.ndarray) -> "Camera":
        return Camera(self.fx, self.fy, self.cx, self.cy, self.width, self.height, rotation, translation, self.near, self.far)

    def resized(self, width: int, height: int) -> "Camera":
        sx, sy = width / self.width, height / self.height
        return Camera(
            self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, width, height,
            self.rotation, self.translation, self.near, self.far,
        )

    @classmethod
    def look_at(
        cls,
        eye,
        target=(0.0, 0.0, 0.0),
        up=(0.0, 1.0, 0.0),
        *,
        width: int = 64,
        height: int = 64,
        fov_deg: float = 50.0,
        near: float = 0.1,
        far: float = 100.0,
    ) -> "Camera":
        eye = np.asarray(eye, dtype=np.float64)
        z = np.asarray(target, dtype=np.float64) - eye
        z /= np.linalg.norm(z)
        x = np.cross(z, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(x) < 1e-9:
            raise InvalidInputError("up vector is parallel to the viewing direction")
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        R = np.stack([x, y, z])
        f = 0.5 * width / math.tan(math.radians(fov_deg) / 2)
        return cls(f, f, width / 2, height / 2, width, height, R, -R @ eye, near, far)


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """H x W x C float image; C is 1 (mask / sigma), 3 (RGB) or 4 (RGBA)."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim == 2:
            d = d[..., None]
        if d.ndim != 3 or d.shape[2] not in (1, 3, 4):
            raise InvalidInputError(f"image must be HxWxC with C in (1,3,4), got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise InvalidInputError("image contains NaN/Inf")
        object.__setattr__(self, "data", _readonly(d))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def rgb(self) -> np.ndarray:
        return self.data[..., :3]

    @property
    def alpha(self) -> np.ndarray:
        if self.channels != 4:
            raise InvalidInputError("image has no alpha channel")
        return self.data[..., 3]

    def to_rgb(self) -> "ImageBuffer":
        return self if self.channels == 3 else ImageBuffer(self.data[..., :3])


# ---------------------------------------------------------------------------
# Gaussian math


def covariances(log_scales: np.ndarray, rotations: np.ndarray) -> np.ndarray:
    """Batched Sigma = R diag(s)^2 R^T for (N,3) log-scales and (N,4) quaternions."""
    R = quat_to_rotmat(rotations)
    M = R * np.exp(log_scales)[..., None, :]
    return M @ np.swapaxes(M, -1, -2)


def covariance(g: Gaussian) -> np.ndarray:
    return covariances(g.log_scale[None], g.rotation[None])[0]


def eval_gaussian(g: Gaussian, x) -> float:
    d = np.asarray(x, dtype=np.float64) - g.position
    cov = covariance(g)
    return float(np.exp(-0.5 * d @ np.linalg.solve(cov, d)))


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Real SH basis at unit directions (..., 3) -> (..., (degree+1)**2)."""
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    out = [np.full_like(x, SH_C0)]
    if degree >= 1:
        out += [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if degree >= 2:
        out += [
            SH_C2[0] * x * y,
            SH_C2[1] * y * z,
            SH_C2[2] * (2 * z * z - x * x - y * y),
            SH_C2[3] * x * z,
            SH_C2[4] * (x * x - y * y),
        ]
    return np.stack(out, axis=-1)


def sh_basis_grad(dirs: np.ndarray, degree: int) -> np.ndarray:
    """d basis / d dir, shape (..., K, 3)."""
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    zero = np.zeros_like(x)
    rows = [np.stack([zero, zero, zero], -1)]
    if degree >= 1:
        c = np.full_like(x, SH_C1)
        rows += [np.stack([zero, -c, zero], -1), np.stack([zero, zero, c], -1), np.stack([-c, zero, zero], -1)]
    if degree >= 2:
        rows += [
            SH_C2[0] * np.stack([y, x, zero], -1),
            SH_C2[1] * np.stack([zero, z, y], -1),
            SH_C2[2] * np.stack([-2 * x, -2 * y, 4 * z], -1),
            SH_C2[3] * np.stack([z, zero, x], -1),
            SH_C2[4] * np.stack([2 * x, -2 * y, zero], -1),
        ]
    return np.stack(rows, axis=-2)


def eval_sh(sh: np.ndarray, view_dir, degree: int | None = None) -> np.ndarray:
    """RGB = clamp(sum_k sh[c,k] Y_k(view_dir) + 0.5, 0, 1).

    ``sh`` is (..., 3, K); ``view_dir`` (..., 3) must be unit length.
    """
    sh = np.asarray(sh, dtype=np.float64)
    k = sh.shape[-1]
    inferred = sh_degree_from_count(k)
    if degree is not None and degree != inferred:
        raise InvalidInputError(f"declared SH degree {degree} but got {k} coefficients")
    d = np.asarray(view_dir, dtype=np.float64)
    if np.any(np.abs(np.linalg.norm(d, axis=-1) - 1.0) > 1e-6):
        raise InvalidInputError("view_dir must be unit length")
    basis = sh_basis(d, inferred)
    raw = np.einsum("...ck,...k->...c", sh, basis) + 0.5
    return np.clip(raw, 0.0, 1.0)

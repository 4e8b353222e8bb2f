"""Synthetic dynamic scenes with analytic motion, plus corruption injectors.

Every generated quantity is a deterministic function of the ``SceneSpec``.
Views follow the four-azimuth convention: front (0 deg), left (90 deg),
back (180 deg), right (270 deg), all at elevation 0 looking at the origin.
A camera at azimuth a sits at R_y(a) @ (0, 0, distance), so rotating the
scene by R_y(a) and the camera by the same angle leaves the image unchanged.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import SH_C0, Camera, GaussianFrame, GaussianSequence, ImageBuffer, InvalidInputError, quat_multiply, sh_coeff_count
from .raster import render

KINDS = ("orbiter", "pulsing-blob", "two-body")
VIEW_NAMES = ("front", "left", "back", "right")
VIEW_AZIMUTHS = {"front": 0.0, "left": 90.0, "back": 180.0, "right": 270.0}

DEFAULT_PALETTE = (
    (0.90, 0.25, 0.20),
    (0.20, 0.70, 0.30),
    (0.25, 0.35, 0.90),
    (0.95, 0.80, 0.20),
    (0.80, 0.30, 0.80),
    (0.20, 0.80, 0.85),
)


@dataclass(frozen=True)
class SceneSpec:
    kind: str = "orbiter"
    gaussian_count: int = 100
    T: int = 8
    seed: int = 0
    palette: tuple = DEFAULT_PALETTE
    bounds: tuple = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))
    clusters: int = 4
    angular_velocity: float | None = None  # rad per frame; default 2*pi/T
    sh_degree: int = 1
    width: int = 64
    height: int = 64
    camera_distance: float = 4.0
    fov_deg: float = 50.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown scene kind {self.kind!r}; expected one of {KINDS}")
        if self.gaussian_count < 1 or self.T < 1 or self.clusters < 1:
            raise InvalidInputError("gaussian_count, T and clusters must be >= 1")
        lo, hi = np.asarray(self.bounds[0], float), np.asarray(self.bounds[1], float)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
            raise InvalidInputError("bounds must be two 3-vectors with lo < hi")

    @property
    def omega(self) -> float:
        return 2 * math.pi / self.T if self.angular_velocity is None else float(self.angular_velocity)


@dataclass(frozen=True)
class CorruptionSpec:
    """Damage one view over frames t_range[0]..t_range[1] (1-based, inclusive; empty if stop < start).

    ``patch`` is (x, y, width, height) in pixels.  ``mode`` is "invert",
    "constant" (fills ``value``) or "noise" (adds U(-amplitude, amplitude)).
    """

    view: str = "front"
    t_range: tuple[int, int] = (1, 1)
    patch: tuple[int, int, int, int] = (0, 0, 16, 16)
    mode: str = "invert"
    value: float = 0.5
    amplitude: float = 0.1
    seed: int = 0


@dataclass
class Scene:
    spec: SceneSpec
    sequence: GaussianSequence
    cameras: dict[str, Camera]

    @property
    def camera_list(self) -> list[Camera]:
        return [self.cameras[v] for v in VIEW_NAMES]


def rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _quat_y(angle: float) -> np.ndarray:
    return np.array([math.cos(angle / 2), 0.0, math.sin(angle / 2), 0.0])


def orbit_camera(spec: SceneSpec, azimuth_deg: float, elevation_deg: float = 0.0) -> Camera:
    az, el = math.radians(azimuth_deg), math.radians(elevation_deg)
    # world +y is up; positive elevation looks down from above
    eye = spec.camera_distance * np.array([math.sin(az) * math.cos(el), math.sin(el), math.cos(az) * math.cos(el)])
    return Camera.look_at(eye, width=spec.width, height=spec.height, fov_deg=spec.fov_deg)


def view_cameras(spec: SceneSpec) -> dict[str, Camera]:
    return {v: orbit_camera(spec, VIEW_AZIMUTHS[v]) for v in VIEW_NAMES}


def held_out_camera(spec: SceneSpec, azimuth_deg: float = 45.0, elevation_deg: float = 20.0) -> Camera:
    """A fifth viewpoint between the orthogonal views, used for evaluation only."""
    return orbit_camera(spec, azimuth_deg, elevation_deg)


@dataclass(frozen=True)
class _Base:
    positions: np.ndarray
    cluster: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray


def _base(spec: SceneSpec) -> _Base:
    rng = np.random.default_rng(spec.seed)
    n, k = spec.gaussian_count, spec.clusters
    lo, hi = np.asarray(spec.bounds[0], float), np.asarray(spec.bounds[1], float)
    center, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    # orbit radius leaves room so positions stay inside the box at any angle
    r_xz = 0.55 * min(half[0], half[2])
    phase = rng.uniform(0, 2 * math.pi)
    ang = phase + 2 * math.pi * np.arange(k) / k
    centers = np.stack([r_xz * np.cos(ang), rng.uniform(-0.3, 0.3, k) * half[1], r_xz * np.sin(ang)], axis=1)
    cluster = np.arange(n) % k
    pos = centers[cluster] + rng.normal(scale=0.18, size=(n, 3)) * half
    # keep |xz| within the inscribed circle and y inside the box
    lim = 0.95 * min(half[0], half[2])
    rad = np.linalg.norm(pos[:, [0, 2]], axis=1)
    f = np.minimum(1.0, lim / np.maximum(rad, 1e-12))
    pos[:, 0] *= f
    pos[:, 2] *= f
    pos[:, 1] = np.clip(pos[:, 1], -0.9 * half[1], 0.9 * half[1])
    pos += center

    log_scales = np.log(rng.uniform(0.05, 0.12, size=(n, 3)) * half.mean())
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    opacity = rng.uniform(1.0, 3.0, size=n)
    palette = np.asarray(spec.palette, dtype=np.float64).reshape(-1, 3)
    color = np.clip(palette[cluster % len(palette)] + rng.normal(scale=0.05, size=(n, 3)), 0.05, 0.95)
    sh = np.zeros((n, 3, sh_coeff_count(spec.sh_degree)))
    sh[:, :, 0] = (color - 0.5) / SH_C0
    return _Base(pos, cluster, log_scales, q, opacity, sh)


def frame_at(spec: SceneSpec, t: int | float, base: _Base | None = None) -> GaussianFrame:
    """The analytic frame at time ``t`` (1-based; any real t is allowed)."""
    b = base or _base(spec)
    lo, hi = np.asarray(spec.bounds[0], float), np.asarray(spec.bounds[1], float)
    center = 0.5 * (lo + hi)
    p = b.positions - center
    ls = b.log_scales
    q = b.rotations
    phi = spec.omega * (t - 1)
    if spec.kind == "orbiter":
        p = p @ rot_y(phi).T
        q = quat_multiply(np.broadcast_to(_quat_y(phi), q.shape), q)
    elif spec.kind == "pulsing-blob":
        s = 1.0 + 0.25 * math.sin(phi)
        p = p * s
        ls = ls + math.log(s)
    else:  # two-body: even clusters orbit one way, odd clusters the other
        sign = np.where(b.cluster % 2 == 0, 1.0, -1.0)
        p = np.stack([rot_y(sg * phi) @ v for sg, v in zip(sign, p)]) if len(p) else p
        qs = np.stack([_quat_y(sg * phi) for sg in sign])
        q = quat_multiply(qs, q)
    t_int = int(t) if float(t).is_integer() else 1
    return GaussianFrame(p + center, ls, q, b.opacity_logits, b.sh, timestamp=t_int)


def generate(spec: SceneSpec) -> Scene:
    base = _base(spec)
    frames = tuple(frame_at(spec, t, base) for t in range(1, spec.T + 1))
    return Scene(spec, GaussianSequence(frames), view_cameras(spec))


def random_frame(
    n: int,
    seed: int = 0,
    bounds=((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0)),
    sh_degree: int = 1,
    scale: float = 0.1,
    timestamp: int = 1,
) -> GaussianFrame:
    """Unstructured initialization: uniform positions, isotropic scale, half opacity, gray."""
    rng = np.random.default_rng(seed)
    lo, hi = np.asarray(bounds[0], float), np.asarray(bounds[1], float)
    pos = rng.uniform(lo, hi, size=(n, 3))
    q = np.zeros((n, 4))
    q[:, 0] = 1.0
    return GaussianFrame(
        pos, np.full((n, 3), math.log(scale)), q, np.zeros(n), np.zeros((n, 3, sh_coeff_count(sh_degree))), timestamp
    )


def render_views(seq: GaussianSequence, cameras: Mapping[str, Camera], **kw) -> dict[str, list[ImageBuffer]]:
    """RGB renders of every frame from every named camera."""
    return {v: [render(f, cam, **kw).to_rgb() for f in seq] for v, cam in cameras.items()}


def corrupt(images: Mapping[str, Sequence[ImageBuffer]], spec: CorruptionSpec) -> dict[str, list[ImageBuffer]]:
    """Apply ``spec`` to the named view; all other pixels come back bit-identical."""
    if spec.view not in images:
        raise InvalidInputError(f"view {spec.view!r} not in {list(images)}")
    if spec.mode not in ("invert", "constant", "noise"):
        raise InvalidInputError(f"unknown corruption mode {spec.mode!r}")
    out = {v: list(seq) for v, seq in images.items()}
    seq = out[spec.view]
    x, y, w, h = spec.patch
    t0, t1 = spec.t_range
    if t1 < t0:
        return out
    if not (1 <= t0 and t1 <= len(seq)):
        raise InvalidInputError(f"t_range {spec.t_range} outside 1..{len(seq)}")
    H, W = seq[0].height, seq[0].width
    if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > W or y + h > H:
        raise InvalidInputError(f"patch {spec.patch} outside the {W}x{H} image")
    rng = np.random.default_rng(spec.seed)
    for t in range(t0, t1 + 1):
        d = np.array(seq[t - 1].data)
        region = d[y : y + h, x : x + w, :3]
        if spec.mode == "invert":
            d[y : y + h, x : x + w, :3] = 1.0 - region
        elif spec.mode == "constant":
            d[y : y + h, x : x + w, :3] = spec.value
        else:
            d[y : y + h, x : x + w, :3] = region + rng.uniform(-spec.amplitude, spec.amplitude, size=region.shape)
        seq[t - 1] = ImageBuffer(d)
    return out


def floater_candidates(
    cam: Camera, patch: tuple[int, int, int, int], depth: float = 1.5, grid: int = 4, sh_degree: int = 1
) -> GaussianFrame:
    """A grid x grid sheet of gray Gaussians on the rays through ``patch``.

    They sit ``depth`` units in front of ``cam`` (view-space z) and each one
    covers about one grid cell of the patch.  Close to one camera they fall
    outside the two side views and mostly behind the object for the opposite
    view, so they can absorb a corruption seen by that camera alone.
    """
    x, y, w, h = patch
    us = x + (np.arange(grid) + 0.5) * w / grid
    vs = y + (np.arange(grid) + 0.5) * h / grid
    U, V = np.meshgrid(us, vs)
    n = grid * grid
    ray = np.stack([(U.ravel() - cam.cx) / cam.fx, (V.ravel() - cam.cy) / cam.fy, np.ones(n)], axis=1)
    pos = cam.center + depth * ray @ cam.rotation
    scale = 0.6 * depth * max(w, h) / grid / cam.fx
    q = np.zeros((n, 4))
    q[:, 0] = 1.0
    return GaussianFrame(
        pos, np.full((n, 3), math.log(scale)), q, np.zeros(n), np.zeros((n, 3, sh_coeff_count(sh_degree)))
    )


# straddles the silhouette, so inverting it flips mostly dark background (|residual| ~ 0.9)
BENCHMARK_PATCH = (10, 12, 16, 16)


@dataclass
class CorruptionBenchmark:
    scene: Scene
    clean: dict[str, list[ImageBuffer]]
    corrupted: dict[str, list[ImageBuffer]]
    initial: GaussianSequence  # ground truth + floaters fitted to the corrupted views


def corruption_benchmark(
    spec: SceneSpec = SceneSpec(T=5),
    corruption: CorruptionSpec | None = None,
    pre_steps: int = 300,
    fit_cfg=None,
) -> CorruptionBenchmark:
    """A field that has absorbed a single-view corruption, plus clean references.

    Each ground-truth frame is extended with floater candidates in front of
    the corrupted camera and fitted for ``pre_steps`` steps to the corrupted
    four-view images.  The result reproduces the damage in that view only,
    which is what the refinement loop is meant to detect and remove.  The
    default corruption inverts ``BENCHMARK_PATCH`` of the front view in every frame.
    """
    from .fit import FitConfig, fit_frame  # fit depends on raster only; import here keeps scenes light

    corruption = corruption or CorruptionSpec(view="front", t_range=(1, spec.T), patch=BENCHMARK_PATCH, mode="invert")
    scene = generate(spec)
    cams = scene.cameras
    clean = render_views(scene.sequence, cams)
    bad = corrupt(clean, corruption)
    fl = floater_candidates(cams[corruption.view], corruption.patch, sh_degree=spec.sh_degree)
    cfg = (fit_cfg or FitConfig.for_resolution(max(spec.width, spec.height))).replace(steps=pre_steps)
    frames = []
    for i, f in enumerate(scene.sequence):
        res = fit_frame(f.concat(fl), [bad[v][i] for v in cams], [cams[v] for v in cams], cfg)
        frames.append(res.frame)
    return CorruptionBenchmark(scene, clean, bad, GaussianSequence(tuple(frames)))


@dataclass
class TrainSample:
    """Four input views of one frame plus supervision renders from the orthogonal views."""

    images: list[ImageBuffer]
    cameras: list[Camera]
    targets: list[ImageBuffer]
    target_cameras: list[Camera]


def training_sample(
    spec: SceneSpec,
    t: int,
    azimuth_deg: float,
    elevation_deg: float,
    input_res: int = 64,
    target_res: int = 32,
) -> TrainSample:
    """Frame ``t`` seen from azimuth + {0, 90, 180, 270} deg at ``elevation_deg``.

    Supervision targets come from the same four azimuths at elevation 0.
    """
    frame = frame_at(spec, t)
    azs = [azimuth_deg + 90.0 * k for k in range(4)]
    s_in = replace_spec(spec, width=input_res, height=input_res)
    s_tg = replace_spec(spec, width=target_res, height=target_res)
    cams = [orbit_camera(s_in, a, elevation_deg) for a in azs]
    tcams = [orbit_camera(s_tg, a, 0.0) for a in azs]
    return TrainSample(
        [render(frame, c).to_rgb() for c in cams], cams, [render(frame, c).to_rgb() for c in tcams], tcams
    )


def replace_spec(spec: SceneSpec, **kw) -> SceneSpec:
    return dataclasses.replace(spec, **kw)

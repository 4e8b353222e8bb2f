"""File formats: Gaussian PLY + sequence manifest, sRGB PNG, raw float tensors, camera JSON.

Images are linear RGB in memory; PNG files hold 8-bit sRGB.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

from ..core import Camera, GaussianFrame, GaussianSequence, ImageBuffer, InvalidInputError, sh_coeff_count

# ---- color ----


def linear_to_srgb(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1 / 2.4) - 0.055)


def srgb_to_linear(x: np.ndarray) -> np.ndarray:
    return np.where(x <= 0.04045, x / 12.92, np.power((x + 0.055) / 1.055, 2.4))


def save_png(path, img: ImageBuffer | np.ndarray, srgb: bool = True) -> None:
    """RGB(A) images are written sRGB-encoded; single-channel images (masks) are written as-is."""
    d = img.data if isinstance(img, ImageBuffer) else np.asarray(img, dtype=np.float64)
    if d.ndim == 2:
        d = d[..., None]
    if d.shape[2] == 1:
        v = np.clip(d[..., 0], 0, 1)
        Image.fromarray(np.round(v * 255).astype(np.uint8), mode="L").save(path)
        return
    rgb = linear_to_srgb(d[..., :3]) if srgb else np.clip(d[..., :3], 0, 1)
    Image.fromarray(np.round(rgb * 255).astype(np.uint8), mode="RGB").save(path)


def load_png(path, srgb: bool = True) -> ImageBuffer:
    with Image.open(path) as im:
        a = np.asarray(im.convert("L") if im.mode in ("L", "1", "I", "I;16") else im.convert("RGB"), dtype=np.float64)
    a = a / 255.0
    if a.ndim == 2:
        return ImageBuffer(a[..., None])
    return ImageBuffer(srgb_to_linear(a) if srgb else a)


def save_image_sequences(root, images: Mapping[str, Sequence[ImageBuffer]]) -> None:
    """``root/<view>/0001.png`` ... for every view."""
    for view, seq in images.items():
        d = Path(root) / view
        d.mkdir(parents=True, exist_ok=True)
        for t, img in enumerate(seq, 1):
            save_png(d / f"{t:04d}.png", img)


def load_image_sequences(root, views: Sequence[str] | None = None) -> dict[str, list[ImageBuffer]]:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"image directory {root} not found")
    views = views or sorted(p.name for p in root.iterdir() if p.is_dir())
    out = {}
    for v in views:
        files = sorted((root / v).glob("*.png"))
        if not files:
            raise FileNotFoundError(f"no PNG frames in {root / v}")
        out[v] = [load_png(f) for f in files]
    return out


# ---- raw float tensors ----

TENSOR_MAGIC = b"DSTN"


def save_tensor(path, a: np.ndarray) -> None:
    """Magic, uint32 ndim, uint32 dims, then little-endian float32 values (C order)."""
    a = np.asarray(a)
    with open(path, "wb") as f:
        f.write(TENSOR_MAGIC)
        f.write(struct.pack("<I", a.ndim))
        f.write(struct.pack(f"<{a.ndim}I", *a.shape))
        f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != TENSOR_MAGIC:
        raise InvalidInputError(f"{path}: bad tensor magic")
    (ndim,) = struct.unpack_from("<I", raw, 4)
    dims = struct.unpack_from(f"<{ndim}I", raw, 8)
    start = 8 + 4 * ndim
    n = int(np.prod(dims))
    if len(raw) - start != 4 * n:
        raise InvalidInputError(f"{path}: payload has {len(raw) - start} bytes, expected {4 * n}")
    return np.frombuffer(raw, dtype="<f4", offset=start).reshape(dims).astype(np.float64)


# ---- Gaussian PLY ----

PLY_TYPES = {"float": "<f4", "double": "<f8"}


def ply_properties(sh_degree: int) -> list[str]:
    """Vertex property order of the common 3DGS layout."""
    k = sh_coeff_count(sh_degree)
    names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(3 * (k - 1))]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    return names


def write_ply(path, frame: GaussianFrame, precision: str = "float") -> None:
    """Binary little-endian PLY. ``precision`` "float" (3DGS viewers) or "double" (lossless)."""
    if precision not in PLY_TYPES:
        raise InvalidInputError(f"precision must be one of {sorted(PLY_TYPES)}")
    n, k = len(frame), frame.sh.shape[2]
    names = ply_properties(frame.sh_degree)
    cols = np.concatenate(
        [
            frame.positions,
            np.zeros((n, 3)),
            frame.sh[:, :, 0],
            frame.sh[:, :, 1:].reshape(n, 3 * (k - 1)),  # channel-major, as 3DGS stores f_rest
            frame.opacity_logits[:, None],
            frame.log_scales,
            frame.rotations,
        ],
        axis=1,
    )
    header = ["ply", "format binary_little_endian 1.0", f"comment timestamp {frame.timestamp}", f"element vertex {n}"]
    header += [f"property {precision} {p}" for p in names]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(np.ascontiguousarray(cols, dtype=PLY_TYPES[precision]).tobytes())


def read_ply(path) -> GaussianFrame:
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply\n") or end < 0:
        raise InvalidInputError(f"{path}: not a PLY file")
    header = raw[:end].decode("ascii").splitlines()
    body = raw[end + len("end_header\n") :]
    n, props, types, timestamp = None, [], set(), 1
    for ln in header[1:]:
        parts = ln.split()
        if parts[0] == "format" and parts[1] != "binary_little_endian":
            raise InvalidInputError(f"{path}: only binary_little_endian PLY is supported")
        elif parts[0] == "comment" and len(parts) == 3 and parts[1] == "timestamp":
            timestamp = int(parts[2])
        elif parts[0] == "element":
            if parts[1] != "vertex" or n is not None:
                raise InvalidInputError(f"{path}: expected a single vertex element")
            n = int(parts[2])
        elif parts[0] == "property":
            if parts[1] not in PLY_TYPES:
                raise InvalidInputError(f"{path}: unsupported property type {parts[1]}")
            types.add(parts[1])
            props.append(parts[2])
    if n is None or len(types) != 1:
        raise InvalidInputError(f"{path}: need a vertex element with one property type")
    dt = PLY_TYPES[types.pop()]
    n_rest = sum(p.startswith("f_rest_") for p in props)
    k = n_rest // 3 + 1
    deg = int(round(np.sqrt(k))) - 1
    if sh_coeff_count(deg) != k or props != ply_properties(deg):
        raise InvalidInputError(f"{path}: property layout does not match the Gaussian layout")
    if len(body) != n * len(props) * np.dtype(dt).itemsize:
        raise InvalidInputError(f"{path}: vertex payload has the wrong size")
    a = np.frombuffer(body, dtype=dt).reshape(n, len(props)).astype(np.float64)
    col = {p: i for i, p in enumerate(props)}
    sh = np.empty((n, 3, k))
    sh[:, :, 0] = a[:, col["f_dc_0"] : col["f_dc_0"] + 3]
    sh[:, :, 1:] = a[:, col["f_dc_0"] + 3 : col["f_dc_0"] + 3 + n_rest].reshape(n, 3, k - 1)
    return GaussianFrame(
        a[:, 0:3],
        a[:, col["scale_0"] : col["scale_0"] + 3],
        a[:, col["rot_0"] : col["rot_0"] + 4],
        a[:, col["opacity"]],
        sh,
        timestamp=timestamp,
    )


MANIFEST_NAME = "sequence.manifest"
MANIFEST_HEADER = "dynsplat-sequence 1"


def save_sequence(root, seq: GaussianSequence, precision: str = "float") -> Path:
    """One PLY per frame plus ``sequence.manifest`` (T and the per-frame filenames)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    lines = [MANIFEST_HEADER, f"T {seq.T}"]
    for t, frame in enumerate(seq, 1):
        name = f"frame_{t:04d}.ply"
        write_ply(root / name, frame, precision)
        lines.append(f"frame {t} {name}")
    (root / MANIFEST_NAME).write_text("\n".join(lines) + "\n")
    return root / MANIFEST_NAME


def load_sequence(root) -> GaussianSequence:
    root = Path(root)
    man = root / MANIFEST_NAME if root.is_dir() else root
    if not man.exists():
        raise FileNotFoundError(f"sequence manifest {man} not found")
    lines = man.read_text().splitlines()
    if not lines or lines[0].strip() != MANIFEST_HEADER:
        raise InvalidInputError(f"{man}: not a sequence manifest")
    T, files = None, {}
    for ln in lines[1:]:
        parts = ln.split()
        if not parts:
            continue
        if parts[0] == "T" and len(parts) == 2:
            T = int(parts[1])
        elif parts[0] == "frame" and len(parts) == 3:
            files[int(parts[1])] = parts[2]
        else:
            raise InvalidInputError(f"{man}: malformed line {ln!r}")
    if T is None or sorted(files) != list(range(1, T + 1)):
        raise InvalidInputError(f"{man}: frames do not cover 1..T")
    return GaussianSequence(tuple(read_ply(man.parent / files[t]) for t in range(1, T + 1)))


# ---- cameras ----


def camera_to_dict(cam: Camera) -> dict:
    return {
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy, "width": cam.width, "height": cam.height,
        "rotation": cam.rotation.tolist(), "translation": cam.translation.tolist(), "near": cam.near, "far": cam.far,
    }


def camera_from_dict(d: Mapping) -> Camera:
    return Camera(
        d["fx"], d["fy"], d["cx"], d["cy"], int(d["width"]), int(d["height"]),
        np.array(d["rotation"]), np.array(d["translation"]), d["near"], d["far"],
    )


def save_cameras(path, cams: Mapping[str, Camera]) -> None:
    Path(path).write_text(json.dumps({v: camera_to_dict(c) for v, c in cams.items()}, indent=1))


def load_cameras(path) -> dict[str, Camera]:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"camera file {p} not found")
    return {v: camera_from_dict(d) for v, d in json.loads(p.read_text()).items()}

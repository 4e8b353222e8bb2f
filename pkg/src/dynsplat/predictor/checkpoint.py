"""Parameter checkpoints: one flat little-endian binary plus a text manifest.

Manifest lines: ``name dtype offset nbytes dim0xdim1x...`` after a header
line ``dynsplat-checkpoint 1``.  Names must not contain whitespace.
"""
from __future__ import annotations

from pathlib import Path
from typing import Mapping

import numpy as np

from ..core import InvalidInputError

HEADER = "dynsplat-checkpoint 1"
DTYPE = "<f8"


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    return p.with_suffix(".bin"), p.with_suffix(".manifest")


def save_checkpoint(path, params: Mapping[str, np.ndarray]) -> tuple[Path, Path]:
    """Write ``<path>.bin`` and ``<path>.manifest``; returns both paths."""
    bin_path, man_path = _paths(path)
    lines, offset = [HEADER], 0
    with open(bin_path, "wb") as f:
        for name in sorted(params):
            if not name or any(c.isspace() for c in name):
                raise InvalidInputError(f"invalid parameter name {name!r}")
            a = np.ascontiguousarray(params[name], dtype=DTYPE)
            buf = a.tobytes()
            f.write(buf)
            shape = "x".join(str(d) for d in a.shape) or "scalar"
            lines.append(f"{name} {DTYPE} {offset} {len(buf)} {shape}")
            offset += len(buf)
    man_path.write_text("\n".join(lines) + "\n")
    return bin_path, man_path


def load_checkpoint(path) -> dict[str, np.ndarray]:
    bin_path, man_path = _paths(path)
    lines = man_path.read_text().splitlines()
    if not lines or lines[0].strip() != HEADER:
        raise InvalidInputError(f"{man_path}: not a checkpoint manifest")
    raw = bin_path.read_bytes()
    out = {}
    for ln in lines[1:]:
        if not ln.strip():
            continue
        parts = ln.split()
        if len(parts) != 5:
            raise InvalidInputError(f"{man_path}: malformed line {ln!r}")
        name, dtype, off, nbytes, shape = parts
        off, nbytes = int(off), int(nbytes)
        if off + nbytes > len(raw):
            raise InvalidInputError(f"{man_path}: {name} extends past the end of {bin_path.name}")
        dims = () if shape == "scalar" else tuple(int(d) for d in shape.split("x"))
        a = np.frombuffer(raw[off : off + nbytes], dtype=np.dtype(dtype))
        if a.size != int(np.prod(dims)):
            raise InvalidInputError(f"{man_path}: {name} has {a.size} values for shape {dims}")
        out[name] = a.reshape(dims).astype(np.float64)
    return out

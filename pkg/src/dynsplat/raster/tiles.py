"""Tile binning: one (tile, depth) keyed instance per intersected tile, one sort."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Camera

TILE_SIZE = 16


@dataclass(frozen=True)
class TileBin:
    tile_id: int
    entries: list[tuple[int, int]]  # (sort_key, gaussian_index), ascending


@dataclass
class BinnedTiles:
    """Flat form consumed by the kernels: tile t owns ids[ranges[t,0]:ranges[t,1]]."""

    ids: np.ndarray
    keys: np.ndarray
    ranges: np.ndarray
    tiles_x: int
    tiles_y: int
    tile_size: int

    def as_bins(self) -> list[TileBin]:
        out = []
        for tid in range(self.ranges.shape[0]):
            s, e = self.ranges[tid]
            if e > s:
                out.append(TileBin(tid, list(zip(self.keys[s:e].tolist(), self.ids[s:e].tolist()))))
        return out


def tile_rects(mean2d: np.ndarray, radius: np.ndarray, width: int, height: int, tile: int):
    """Inclusive tile index ranges [x0, x1] x [y0, y1] covered by each footprint box."""
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    x0 = np.maximum(np.floor((mean2d[:, 0] - radius) / tile), 0).astype(np.int64)
    x1 = np.minimum(np.ceil((mean2d[:, 0] + radius) / tile) - 1, tiles_x - 1).astype(np.int64)
    y0 = np.maximum(np.floor((mean2d[:, 1] - radius) / tile), 0).astype(np.int64)
    y1 = np.minimum(np.ceil((mean2d[:, 1] + radius) / tile) - 1, tiles_y - 1).astype(np.int64)
    return x0, x1, y0, y1


def bin_gaussians(
    mean2d: np.ndarray,
    radius: np.ndarray,
    depth: np.ndarray,
    visible: np.ndarray,
    width: int,
    height: int,
    tile: int = TILE_SIZE,
) -> BinnedTiles:
    n = mean2d.shape[0]
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    n_tiles = tiles_x * tiles_y
    idx = np.flatnonzero(visible)

    # depth rank with index tie-break: exact, and fits next to the tile id in one int64
    order = np.lexsort((np.arange(n), depth))
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)

    x0, x1, y0, y1 = tile_rects(mean2d[idx], radius[idx], width, height, tile)
    counts = np.maximum(x1 - x0 + 1, 0) * np.maximum(y1 - y0 + 1, 0)
    total = int(counts.sum())
    ids = np.repeat(idx, counts)
    # enumerate each box's tiles
    start = np.repeat(np.cumsum(counts) - counts, counts)
    local = np.arange(total) - start
    w = np.repeat(x1 - x0 + 1, counts)
    tx = np.repeat(x0, counts) + local % np.maximum(w, 1)
    ty = np.repeat(y0, counts) + local // np.maximum(w, 1)
    tile_id = ty * tiles_x + tx
    keys = tile_id * max(n, 1) + rank[ids]

    perm = np.argsort(keys, kind="stable")
    keys = keys[perm]
    ids = ids[perm].astype(np.int64)
    tile_sorted = tile_id[perm]
    ranges = np.zeros((n_tiles, 2), dtype=np.int64)
    bounds = np.searchsorted(tile_sorted, np.arange(n_tiles + 1))
    ranges[:, 0] = bounds[:-1]
    ranges[:, 1] = bounds[1:]
    return BinnedTiles(ids, keys, ranges, tiles_x, tiles_y, tile)


def bin_tiles(projections, cam: Camera, tile: int = TILE_SIZE) -> list[TileBin]:
    """Bin a list of ``Projected2D`` (list order = gaussian index)."""
    if not projections:
        return []
    mean2d = np.array([p.mean2d for p in projections], dtype=np.float64).reshape(-1, 2)
    radius = np.array([p.radius for p in projections], dtype=np.float64)
    depth = np.array([p.depth for p in projections], dtype=np.float64)
    visible = np.ones(len(projections), dtype=bool)
    return bin_gaussians(mean2d, radius, depth, visible, cam.width, cam.height, tile).as_bins()

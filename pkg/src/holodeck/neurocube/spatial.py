"""Uniform-grid spatial index for cursor picking and culling.

Cell size targets order-one neurons per cell: extent diagonal divided by
the cube root of the neuron count, clamped to [1 unit, max_extent/4].
Neuron ids are bucketed CSR-style (ids ascending inside each cell), which
keeps nearest-neighbour queries allocation-light and deterministic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import NetworkDataset


@dataclass
class SpatialIndex:
    cell_size: float
    origin: np.ndarray  # (3,) f64
    dims: tuple[int, int, int]
    order: np.ndarray  # (n,) u32 neuron ids grouped by cell
    cell_offsets: np.ndarray  # (ncells+1,) i64
    cell_of: np.ndarray  # (n,) i64 flat cell per neuron
    n_points: int
    positions: np.ndarray  # reference to dataset positions

    @property
    def n_cells(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    def cell_coords(self, point) -> tuple[int, int, int]:
        """Lattice coordinates of a point; may fall outside the grid."""
        p = np.asarray(point, dtype=np.float64)
        c = np.floor((p - self.origin) / self.cell_size).astype(np.int64)
        return int(c[0]), int(c[1]), int(c[2])

    def flat(self, ix: int, iy: int, iz: int) -> int:
        nx, ny, _ = self.dims
        return ix + nx * (iy + ny * iz)

    def cell_ids(self, ix: int, iy: int, iz: int) -> np.ndarray:
        f = self.flat(ix, iy, iz)
        return self.order[self.cell_offsets[f]: self.cell_offsets[f + 1]]


def build_index(dataset: NetworkDataset, cell_size: Optional[float] = None) -> SpatialIndex:
    pos = dataset.positions
    n = len(pos)
    if n == 0:
        return SpatialIndex(
            cell_size=1.0, origin=np.zeros(3), dims=(1, 1, 1),
            order=np.zeros(0, dtype=np.uint32), cell_offsets=np.zeros(2, dtype=np.int64),
            cell_of=np.zeros(0, dtype=np.int64), n_points=0, positions=pos,
        )
    lo, hi = dataset.extent()
    span = hi - lo
    diag = float(np.linalg.norm(span))
    if cell_size is None:
        raw = diag / max(n, 1) ** (1.0 / 3.0) if diag > 0 else 1.0
        upper = max(float(span.max()) / 4.0, 1.0)
        cell_size = min(max(raw, 1.0), upper)
    dims = tuple(int(max(1, math.floor(s / cell_size) + 1)) for s in span)
    coords = np.floor((pos.astype(np.float64) - lo) / cell_size).astype(np.int64)
    np.clip(coords, 0, np.asarray(dims, dtype=np.int64) - 1, out=coords)
    flat = coords[:, 0] + dims[0] * (coords[:, 1] + dims[1] * coords[:, 2])
    order = np.argsort(flat, kind="stable").astype(np.uint32)
    counts = np.bincount(flat, minlength=dims[0] * dims[1] * dims[2])
    offsets = np.zeros(len(counts) + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return SpatialIndex(
        cell_size=float(cell_size), origin=lo, dims=dims, order=order,
        cell_offsets=offsets, cell_of=flat, n_points=n, positions=pos,
    )


def _ring_cells(index: SpatialIndex, center: tuple[int, int, int], r: int):
    """Grid cells at Chebyshev distance r from center, clipped to bounds."""
    cx, cy, cz = center
    nx, ny, nz = index.dims
    if r == 0:
        if 0 <= cx < nx and 0 <= cy < ny and 0 <= cz < nz:
            yield (cx, cy, cz)
        return
    x0, x1 = cx - r, cx + r
    y0, y1 = cy - r, cy + r
    z0, z1 = cz - r, cz + r
    for iz in range(max(z0, 0), min(z1, nz - 1) + 1):
        on_z = iz in (z0, z1)
        for iy in range(max(y0, 0), min(y1, ny - 1) + 1):
            on_y = iy in (y0, y1)
            if on_z or on_y:
                for ix in range(max(x0, 0), min(x1, nx - 1) + 1):
                    yield (ix, iy, iz)
            else:
                if 0 <= x0 < nx:
                    yield (x0, iy, iz)
                if x1 != x0 and 0 <= x1 < nx:
                    yield (x1, iy, iz)


def nearest_neuron(
    index: SpatialIndex, point, max_radius: float
) -> Optional[tuple[int, float]]:
    """Globally nearest neuron within max_radius; ties go to the lower id.

    Expanding-ring search: cells at Chebyshev distance r from the query
    cell are at least (r-1)*cell_size away, so the scan stops as soon as
    that bound exceeds the best hit (or the radius).
    """
    if index.n_points == 0 or max_radius < 0:
        return None
    p = np.asarray(point, dtype=np.float64)
    center = index.cell_coords(p)
    best_id = -1
    best_d2 = math.inf
    limit2 = float(max_radius) ** 2
    r = 0
    max_r = int(math.ceil(max_radius / index.cell_size)) + 1
    while True:
        bound = (r - 1) * index.cell_size
        if r > 0 and bound * bound > min(best_d2, limit2):
            break
        if r > max_r + 1:
            break
        for cell in _ring_cells(index, center, r):
            ids = index.cell_ids(*cell)
            if ids.size == 0:
                continue
            diff = index.positions[ids].astype(np.float64) - p
            d2 = np.einsum("ij,ij->i", diff, diff)
            i = int(np.argmin(d2))
            cand_d2 = float(d2[i])
            if cand_d2 < best_d2:
                ties = ids[d2 == cand_d2]
                best_d2 = cand_d2
                best_id = int(ties.min())
            elif cand_d2 == best_d2 and best_id >= 0:
                ties = ids[d2 == cand_d2]
                best_id = min(best_id, int(ties.min()))
        r += 1
    if best_id < 0 or best_d2 > limit2:
        return None
    return best_id, math.sqrt(best_d2)

"""Frame-budget rendering control: frustum culling, distance-tiered level
of detail, and the feedback controller driven by viewer frame times.

The draw list builder never emits more estimated work than one 60 fps frame
(16.67 ms). Near neurons render as sphere impostors (tier 0), mid-distance
ones as points (tier 1), far ones are omitted; the tier-0 radius is solved
from the budget and the point radius is twice that, so the scheme tunes
itself to scene density. Connections are admitted strongest-first under a
weight threshold that depends only on the budget, which keeps a halved
budget's draw list a strict subset of the full one.

Cells of the spatial grid are classified against the frustum with a
center-plus-extent test using a small margin: cells rejected or accepted
wholesale are provably on the right side of every plane, and only boundary
cells pay a per-neuron test, so cell-level shortcuts agree exactly with the
per-neuron brute-force oracle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import _lodkernels as _k
from .geometry import Pose
from .neurocube.model import NetworkDataset
from .neurocube.spatial import SpatialIndex

TARGET_FRAME_NS = 16_666_667  # 60 fps

_PLANE_MARGIN = 1e-7
_EXACT_CANDIDATE_LIMIT = 50_000
_FORCE_NUMPY = False  # tests flip this to exercise the fallback path


@dataclass(frozen=True)
class CameraState:
    """Tracked-headset camera: pose in the scene frame, symmetric frustum."""

    pose: Pose
    vertical_fov_rad: float = math.radians(70.0)
    aspect: float = 16.0 / 9.0
    near_m: float = 0.05
    far_m: float = 100.0

    def __post_init__(self):
        if not 0 < self.near_m < self.far_m:
            raise ValueError("need 0 < near < far")
        if not 0 < self.vertical_fov_rad < math.pi:
            raise ValueError("vertical fov must be in (0, pi)")


@dataclass(frozen=True)
class FrameBudget:
    """Primitive budget plus calibrated cost model and controller state.

    ``controller_update`` returns a new value; the budget itself is
    immutable so a session can publish snapshots without locking.
    """

    target_frame_ns: int = TARGET_FRAME_NS
    primitive_budget: int = 1_000_000
    cost_point_ns: float = 10.0
    cost_line_ns: float = 25.0
    cost_sphere_ns: float = 40.0
    neuron_fraction: float = 0.5
    floor_primitives: int = 1_000
    ceiling_primitives: int = 5_000_000
    over_frames: int = 0
    under_frames: int = 0
    samples: tuple = ()  # (spheres, points, lines, measured_ns)

    def __post_init__(self):
        if self.primitive_budget < 0:
            raise ValueError("primitive_budget must not be negative")
        if min(self.cost_point_ns, self.cost_line_ns, self.cost_sphere_ns) <= 0:
            raise ValueError("cost coefficients must be positive")


@dataclass(frozen=True)
class DrawList:
    neuron_ids: np.ndarray  # u32, ascending
    tiers: np.ndarray  # u8 aligned with neuron_ids: 0 sphere, 1 point
    connection_ids: np.ndarray  # u32, strongest-first order
    estimated_cost_ns: int
    d0: float
    d1: float
    w_min: float

    @property
    def n_spheres(self) -> int:
        return int(np.count_nonzero(self.tiers == 0))

    @property
    def n_points(self) -> int:
        return int(np.count_nonzero(self.tiers == 1))

    @property
    def n_lines(self) -> int:
        return len(self.connection_ids)


def frustum_planes(camera: CameraState) -> np.ndarray:
    """Six inward-pointing unit planes as rows (nx, ny, nz, offset).

    A point p is inside the closed frustum iff n . p + offset >= 0 for all
    six rows. The camera looks along -Z of its local frame.
    """
    tan_v = math.tan(camera.vertical_fov_rad / 2.0)
    tan_h = tan_v * camera.aspect
    local = [
        (0.0, 0.0, -1.0, -camera.near_m),  # near: -z >= near
        (0.0, 0.0, 1.0, camera.far_m),  # far: -z <= far
        (1.0, 0.0, -tan_h, 0.0),  # left
        (-1.0, 0.0, -tan_h, 0.0),  # right
        (0.0, 1.0, -tan_v, 0.0),  # bottom
        (0.0, -1.0, -tan_v, 0.0),  # top
    ]
    R = camera.pose.matrix()
    t = camera.pose.translation
    planes = np.zeros((6, 4), dtype=np.float64)
    for i, (nx, ny, nz, d) in enumerate(local):
        n_local = np.array([nx, ny, nz])
        scale = np.linalg.norm(n_local)
        n_local = n_local / scale
        d = d / scale
        n_world = R @ n_local
        planes[i, :3] = n_world
        planes[i, 3] = d - n_world @ t
    return planes


def _point_inside(points: np.ndarray, planes: np.ndarray,
                  dtype=np.float64) -> np.ndarray:
    """Closed-frustum containment per point (the brute-force form)."""
    d = points.astype(dtype, copy=False) @ planes[:, :3].T.astype(dtype)
    d += planes[:, 3].astype(dtype)
    return d.min(axis=1) >= 0.0


def _cell_centers(index: SpatialIndex) -> np.ndarray:
    nx, ny, nz = index.dims
    ix = np.arange(nx)
    iy = np.arange(ny)
    iz = np.arange(nz)
    gz, gy, gx = np.meshgrid(iz, iy, ix, indexing="ij")
    coords = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()]).astype(np.float64)
    return index.origin + (coords + 0.5) * index.cell_size


def _classify_cells(centers: np.ndarray, cell_size: float, planes: np.ndarray,
                    margin: float) -> tuple[np.ndarray, np.ndarray]:
    """(outside, inside) boolean masks per cell; everything else is boundary.

    One matmul in the centers' own dtype; the margin absorbs its rounding,
    so wholesale accepts/rejects stay consistent with the exact per-point
    test that boundary cells get.
    """
    h = cell_size / 2.0
    normals = planes[:, :3].T.astype(centers.dtype, copy=False)
    r = h * np.abs(planes[:, :3]).sum(axis=1) + margin  # (6,)
    G = centers @ normals
    # fold the per-plane slack into the offsets so one min-reduce decides
    lo = (G + (planes[:, 3] + r).astype(centers.dtype)).min(axis=1)
    hi = (G + (planes[:, 3] - r).astype(centers.dtype)).min(axis=1)
    outside = lo < 0  # some plane has the whole cell below -r
    inside = hi > 0  # every plane has the whole cell above +r
    inside &= ~outside
    return outside, inside


def _slot_indices(index: SpatialIndex, cell_flats: np.ndarray) -> np.ndarray:
    """Positions in the grid ``order`` array covered by the given cells."""
    starts = index.cell_offsets[cell_flats]
    counts = index.cell_offsets[cell_flats + 1] - starts
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    base = np.repeat(starts, counts)
    local = np.arange(total, dtype=np.int64) - np.repeat(
        np.cumsum(counts) - counts, counts
    )
    return base + local


def _gather_cells(index: SpatialIndex, cell_flats: np.ndarray) -> np.ndarray:
    """Concatenate the neuron id lists of many cells (vectorized multi-slice)."""
    if len(cell_flats) == 0:
        return np.zeros(0, dtype=np.uint32)
    slots = _slot_indices(index, cell_flats)
    return index.order[slots]


def frustum_cull(index: SpatialIndex, camera: CameraState) -> np.ndarray:
    """Neuron ids inside the closed view frustum, ascending.

    Cells fully inside contribute wholesale, cells fully outside are
    skipped, and only boundary cells run the per-neuron plane test, so the
    result equals the brute-force per-neuron test over the whole dataset.
    """
    if index.n_points == 0:
        return np.zeros(0, dtype=np.uint32)
    planes = frustum_planes(camera)
    margin = _PLANE_MARGIN * (1.0 + abs(camera.far_m))
    centers = _cell_centers(index)
    outside, inside = _classify_cells(centers, index.cell_size, planes, margin)
    inside_ids = _gather_cells(index, np.flatnonzero(inside))
    boundary_flats = np.flatnonzero(~outside & ~inside)
    boundary_candidates = _gather_cells(index, boundary_flats)
    if len(boundary_candidates):
        keep = _point_inside(index.positions[boundary_candidates], planes)
        boundary_ids = boundary_candidates[keep]
    else:
        boundary_ids = boundary_candidates
    return np.sort(np.concatenate([inside_ids, boundary_ids])).astype(np.uint32)


@dataclass
class RenderIndex:
    """Per-dataset precomputation for draw-list builds.

    Uses its own grid, coarser than the picking grid, so per-frame cell
    work touches fewer cells; caches f32 cell centers for the classify
    matmul and the global connection ordering by descending |weight| with
    endpoint arrays pre-permuted for sequential prefix scans.
    """

    spatial: SpatialIndex
    cell_centers: np.ndarray  # (ncells, 3) f32
    cell_counts: np.ndarray
    pos_by_order: np.ndarray  # (n, 3) f32 positions permuted into grid order
    conn_order: np.ndarray  # u32 connection indices, |weight| descending
    conn_pre_sorted: np.ndarray  # i32 endpoints aligned with conn_order
    conn_post_sorted: np.ndarray

    @staticmethod
    def build(dataset: NetworkDataset, spatial: Optional[SpatialIndex] = None,
              cell_scale: float = 2.0) -> "RenderIndex":
        from .neurocube.spatial import build_index

        base = spatial if spatial is not None else build_index(dataset)
        grid = build_index(dataset, cell_size=base.cell_size * cell_scale)
        centers = _cell_centers(grid).astype(np.float32)
        counts = np.diff(grid.cell_offsets)
        absw = np.abs(dataset.conn_weight)
        # stable sort on the negated weights: ties fall back to connection id
        order = np.argsort(-absw, kind="stable").astype(np.uint32)
        return RenderIndex(
            spatial=grid,
            cell_centers=centers,
            cell_counts=counts,
            pos_by_order=np.ascontiguousarray(dataset.positions[grid.order]),
            conn_order=order,
            conn_pre_sorted=dataset.conn_pre[order],
            conn_post_sorted=dataset.conn_post[order],
        )


def _solve_tier_radius(dist_sorted: np.ndarray, weights: np.ndarray,
                       cost0: float, cost1: float, budget_ns: float,
                       count_cap: int) -> tuple[float, int, int]:
    """Largest d0 such that spheres within d0 plus points within 2*d0 fit.

    ``dist_sorted`` are candidate distances ascending, ``weights`` the
    candidate count each entry stands for. The total cost is a nondecreasing
    step function of d0 with breakpoints at the candidate distances and
    their halves (where a candidate enters tier 1), so a binary search over
    that breakpoint grid finds the supremum. d0 may land below the nearest
    candidate: a camera far from the scene then draws a pure point shell.
    Returns (d0, tier0 unit count, tier1 unit count); d0 = -1 means nothing
    fits at all.
    """
    cum = np.cumsum(weights)
    if len(dist_sorted) == 0 or budget_ns <= 0 or count_cap <= 0:
        return -1.0, 0, 0
    total = int(cum[-1])

    def counts_at(d0):
        i0 = np.searchsorted(dist_sorted, d0, side="right")
        n0 = int(cum[i0 - 1]) if i0 > 0 else 0
        i1 = np.searchsorted(dist_sorted, 2.0 * d0, side="right")
        n1 = (int(cum[i1 - 1]) if i1 > 0 else 0) - n0
        return n0, n1

    def fits(d0):
        n0, n1 = counts_at(d0)
        return cost0 * n0 + cost1 * n1 <= budget_ns and n0 + n1 <= count_cap

    if cost0 * total <= budget_ns and total <= count_cap:
        return math.inf, total, 0
    breaks = np.unique(np.concatenate([dist_sorted, dist_sorted * 0.5]))
    if not fits(breaks[0]):
        return -1.0, 0, 0
    lo, hi = 0, len(breaks) - 1  # fits(breaks[lo]) holds, grow lo
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if fits(breaks[mid]):
            lo = mid
        else:
            hi = mid - 1
    n0, n1 = counts_at(breaks[lo])
    return float(breaks[lo]), n0, n1


def build_draw_list(
    dataset: NetworkDataset,
    index: RenderIndex,
    camera: CameraState,
    budget: FrameBudget,
) -> DrawList:
    """Assemble one frame's work order under the cost and count budgets.

    Candidates come from the frustum; distance ranking is per neuron for
    small candidate sets and per grid cell at scale (deterministic in both
    regimes). Connections are taken strongest-first from the precomputed
    global order, capped by the leftover budget before endpoint filtering,
    so the implied weight threshold depends only on the budget.
    """
    spatial = index.spatial
    target = budget.target_frame_ns
    cam_pos = camera.pose.translation
    planes = frustum_planes(camera)
    # f32 classify needs a wider (still conservative) margin than f64 cull
    margin = 1e-3 * (1.0 + abs(camera.far_m))
    nbins = 2048
    width = camera.far_m / nbins

    neuron_budget_ns = budget.neuron_fraction * target
    neuron_cap = int(budget.neuron_fraction * budget.primitive_budget)

    use_jit = _k.HAVE_NUMBA and not _FORCE_NUMPY
    cam32 = cam_pos.astype(np.float32)
    if use_jit:
        normals_t = np.ascontiguousarray(planes[:, :3].T.astype(np.float32))
        r = (spatial.cell_size / 2.0) * np.abs(planes[:, :3]).sum(axis=1) + margin
        cls, cell_bin, wsum = _k.classify_bin_cells(
            index.cell_centers, normals_t,
            (planes[:, 3] + r).astype(np.float32), (planes[:, 3] - r).astype(np.float32),
            cam32, width, nbins, index.cell_counts,
        )
        boundary_ids, b_bin, wadd = _k.filter_boundary(
            index.pos_by_order, spatial.order, spatial.cell_offsets, cls,
            normals_t, planes[:, 3].astype(np.float32), cam32, width, nbins,
        )
        inside_flats = None  # materialized lazily only if the exact path runs
        n_candidates = int(wsum.sum()) + len(boundary_ids)
    else:
        outside, inside = _classify_cells(index.cell_centers, spatial.cell_size, planes, margin)
        cls = np.where(outside, 0, np.where(inside, 2, 1)).astype(np.uint8)
        inside_flats = np.flatnonzero(inside)
        boundary_slots = _slot_indices(spatial, np.flatnonzero(~outside & ~inside))
        if len(boundary_slots):
            # ordered-position copy keeps this gather sequential in memory
            bpos = index.pos_by_order[boundary_slots]
            keep = _point_inside(bpos, planes, dtype=np.float32)
            boundary_ids = spatial.order[boundary_slots[keep]]
            bpos = bpos[keep]
        else:
            boundary_ids = np.zeros(0, dtype=np.uint32)
            bpos = np.zeros((0, 3), dtype=np.float32)
        bdiff = bpos - cam32
        b_bin = np.minimum(
            (np.sqrt(np.einsum("ij,ij->i", bdiff, bdiff).astype(np.float64)) / width)
            .astype(np.int64),
            nbins - 1,
        )
        n_candidates = int(index.cell_counts[inside_flats].sum()) + len(boundary_ids)

    if n_candidates == 0 or budget.primitive_budget == 0 or target == 0:
        empty_ids = np.zeros(0, dtype=np.uint32)
        return DrawList(empty_ids, np.zeros(0, dtype=np.uint8), empty_ids, 0, 0.0, 0.0, 0.0)

    if n_candidates <= _EXACT_CANDIDATE_LIMIT:
        if inside_flats is None:
            inside_flats = np.flatnonzero(cls == 2)
        ids = np.sort(np.concatenate([_gather_cells(spatial, inside_flats), boundary_ids]))
        pos = spatial.positions[ids].astype(np.float64)
        dist = np.linalg.norm(pos - cam_pos, axis=1)
        order = np.lexsort((ids, dist))
        ids_sorted = ids[order]
        dist_sorted = dist[order]
        d0, n0, n1 = _solve_tier_radius(
            dist_sorted, np.ones(len(ids), dtype=np.int64),
            budget.cost_sphere_ns, budget.cost_point_ns, neuron_budget_ns, neuron_cap,
        )
        if math.isinf(d0):
            n0, n1 = len(ids_sorted), 0
        drawn_ids = ids_sorted[: n0 + n1]
        tiers = np.zeros(n0 + n1, dtype=np.uint8)
        tiers[n0:] = 1
        drawn_mask = None
    else:
        # cell regime: whole cells share their center distance on a fixed
        # bin grid, so no per-camera sort is needed
        if use_jit:
            wsum = wsum + wadd
        else:
            diff = index.cell_centers[inside_flats] - cam32
            cell_bin_in = np.minimum(
                (np.sqrt(np.einsum("ij,ij->i", diff, diff).astype(np.float64)) / width)
                .astype(np.int64),
                nbins - 1,
            )
            wsum = np.bincount(cell_bin_in, weights=index.cell_counts[inside_flats],
                               minlength=nbins).astype(np.int64)
            wsum += np.bincount(b_bin, minlength=nbins).astype(np.int64)
        occupied = np.flatnonzero(wsum)
        edges = (occupied + 1.0) * width
        d0, _, _ = _solve_tier_radius(
            edges, wsum[occupied],
            budget.cost_sphere_ns, budget.cost_point_ns, neuron_budget_ns, neuron_cap,
        )
        d1 = 2.0 * d0
        if math.isinf(d0):
            d0 = d1 = float(camera.far_m) * 4.0  # beyond every bin edge
        if use_jit:
            drawn_ids, tiers, drawn_mask, n0 = _k.materialize(
                cls, cell_bin, spatial.cell_offsets, spatial.order,
                boundary_ids, b_bin, d0, d1, width, dataset.n_neurons,
            )
            n1 = len(tiers) - n0
        else:
            # compare on the same edge floats the solver saw
            cell_edge = (cell_bin_in + 1).astype(np.float64) * width
            b_edge = (b_bin + 1).astype(np.float64) * width
            cell_tier = np.where(cell_edge <= d0, 0,
                                 np.where(cell_edge <= d1, 1, 2)).astype(np.uint8)
            csel = cell_tier < 2
            sel_flats = inside_flats[csel]
            counts_sel = index.cell_counts[sel_flats]
            cell_ids_drawn = _gather_cells(spatial, sel_flats)
            cell_tiers_drawn = np.repeat(cell_tier[csel], counts_sel)
            b_tier = np.where(b_edge <= d0, 0, np.where(b_edge <= d1, 1, 2)).astype(np.uint8)
            bsel = b_tier < 2
            drawn_ids = np.concatenate([cell_ids_drawn, boundary_ids[bsel]])
            tiers = np.concatenate([cell_tiers_drawn, b_tier[bsel]])
            n0 = int(counts_sel[cell_tier[csel] == 0].sum()) + int(
                np.count_nonzero(b_tier[bsel] == 0)
            )
            n1 = len(tiers) - n0
            drawn_mask = None

    d1 = 2.0 * d0
    neuron_cost = budget.cost_sphere_ns * n0 + budget.cost_point_ns * n1

    # connections get their own budget share, fixed up front: the admission
    # prefix then depends only on the budget, never on the neuron outcome,
    # which keeps smaller budgets producing subset draw lists
    line_ns = (1.0 - budget.neuron_fraction) * target
    line_cap = budget.primitive_budget - neuron_cap
    k_cap = int(min(line_ns // budget.cost_line_ns, line_cap))
    k_cap = max(k_cap, 0)
    if k_cap > 0 and dataset.n_connections > 0 and len(drawn_ids) > 0:
        k = min(k_cap, dataset.n_connections)
        if drawn_mask is None:
            drawn_mask = np.zeros(dataset.n_neurons, dtype=bool)
            drawn_mask[drawn_ids] = True
        if use_jit:
            conn_ids = _k.line_prefix(
                drawn_mask, index.conn_pre_sorted, index.conn_post_sorted,
                index.conn_order, k,
            )
        else:
            # test the cheap endpoint first, second gather only on survivors
            hit = np.flatnonzero(drawn_mask[index.conn_pre_sorted[:k]])
            hit = hit[drawn_mask[index.conn_post_sorted[hit]]]
            conn_ids = index.conn_order[hit]
        w_min = float(abs(dataset.conn_weight[index.conn_order[k - 1]]))
    else:
        conn_ids = np.zeros(0, dtype=np.uint32)
        w_min = math.inf if dataset.n_connections else 0.0

    cost = int(round(neuron_cost + budget.cost_line_ns * len(conn_ids)))
    return DrawList(
        neuron_ids=drawn_ids.astype(np.uint32),
        tiers=tiers,
        connection_ids=conn_ids.astype(np.uint32),
        estimated_cost_ns=cost,
        d0=max(float(d0), 0.0),
        d1=max(float(d1), 0.0),
        w_min=w_min,
    )


# --- feedback controller --------------------------------------------------

_OVER_WINDOW = 3
_UNDER_WINDOW = 30
_DECREASE = 0.8
_INCREASE = 1.05
_UNDER_RATIO = 0.8
_MAX_SAMPLES = 128
_MIN_FIT_SAMPLES = 4


def _refit_costs(budget: FrameBudget) -> FrameBudget:
    """Least-squares refit of the per-primitive costs from telemetry.

    Ridge-anchored at the current coefficients so frames that exercise only
    one primitive type cannot send the others off to nonsense values.
    """
    A = np.array([(s, p, l) for s, p, l, _ in budget.samples], dtype=np.float64)
    y = np.array([m for _, _, _, m in budget.samples], dtype=np.float64)
    prior = np.array([budget.cost_sphere_ns, budget.cost_point_ns, budget.cost_line_ns])
    lam = 1e-6 * max(float((A * A).sum()) / max(len(A), 1), 1.0)
    A_full = np.vstack([A, math.sqrt(lam) * np.eye(3)])
    y_full = np.concatenate([y, math.sqrt(lam) * prior])
    coef, *_ = np.linalg.lstsq(A_full, y_full, rcond=None)
    coef = np.clip(coef, 0.5, 1e5)
    return replace(
        budget,
        cost_sphere_ns=float(coef[0]),
        cost_point_ns=float(coef[1]),
        cost_line_ns=float(coef[2]),
    )


def controller_update(
    budget: FrameBudget,
    measured_frame_ns: float,
    drawn_spheres: Optional[int] = None,
    drawn_points: Optional[int] = None,
    drawn_lines: Optional[int] = None,
) -> FrameBudget:
    """One telemetry step: AIMD on the primitive budget plus, when draw
    counts accompany the sample, an online refit of the cost model.

    Multiplicative decrease (x0.8) after 3 consecutive frames over target;
    additive increase (+5%) after 30 consecutive frames under 0.8x target.
    The windows reset on any frame that breaks the streak, which is the
    hysteresis that stops the budget oscillating faster than the windows.
    """
    target = budget.target_frame_ns
    over = budget.over_frames
    under = budget.under_frames
    pb = budget.primitive_budget
    if measured_frame_ns > target:
        over += 1
        under = 0
        if over >= _OVER_WINDOW:
            pb = max(budget.floor_primitives, int(pb * _DECREASE))
            over = 0
    elif measured_frame_ns < _UNDER_RATIO * target:
        under += 1
        over = 0
        if under >= _UNDER_WINDOW:
            pb = min(budget.ceiling_primitives, int(pb * _INCREASE) + 1)
            under = 0
    else:
        over = 0
        under = 0

    out = replace(budget, primitive_budget=pb, over_frames=over, under_frames=under)
    if drawn_spheres is not None or drawn_points is not None or drawn_lines is not None:
        sample = (
            int(drawn_spheres or 0),
            int(drawn_points or 0),
            int(drawn_lines or 0),
            float(measured_frame_ns),
        )
        samples = (out.samples + (sample,))[-_MAX_SAMPLES:]
        out = replace(out, samples=samples)
        if len(samples) >= _MIN_FIT_SAMPLES:
            out = _refit_costs(out)
    return out

"""Rigid-body tracking from unlabeled 3D marker clouds.

Each tracked body carries a constellation of optical markers whose pairwise
distances are mutually distinct, so bodies can be identified in a cloud of
unlabeled points by distance-consistent correspondence search. Six markers
per headset leave enough redundancy to survive occlusion of up to three.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .geometry import Pose, matrix_to_quat

DEFAULT_VOLUME_M = (6.0, 6.0, 3.0)

# matching tolerances in meters; 0.1 mm capture accuracy leaves wide margin
DELTA_SIG_M = 0.005
TAU_MATCH_M = 0.002
R_GATE_M = 0.030

_COLLINEAR_RTOL = 1e-9


class TrackingError(Exception):
    pass


class InsufficientMarkers(TrackingError):
    pass


class DegenerateConfiguration(TrackingError):
    pass


class AmbiguousMatch(TrackingError):
    pass


class InvalidConstellation(TrackingError):
    pass


class Status(Enum):
    TRACKED = "tracked"
    LOST = "lost"


@dataclass(frozen=True)
class MarkerCloud:
    """One capture frame: unlabeled marker positions in meters, world frame."""

    frame_id: int
    timestamp_ns: int
    points: np.ndarray
    volume_m: tuple = DEFAULT_VOLUME_M

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("marker coordinates must be finite")
        hx, hy, hz = (v / 2.0 for v in self.volume_m)
        # volume is centered in x/y, floor-based in z
        if pts.size and (
            np.any(np.abs(pts[:, 0]) > hx)
            or np.any(np.abs(pts[:, 1]) > hy)
            or np.any(pts[:, 2] < 0.0)
            or np.any(pts[:, 2] > self.volume_m[2])
        ):
            raise ValueError("marker outside configured capture volume")
        object.__setattr__(self, "points", pts)


def _pairwise_distances(points: np.ndarray) -> np.ndarray:
    d = points[:, None, :] - points[None, :, :]
    return np.sqrt((d * d).sum(axis=2))


@dataclass(frozen=True)
class Constellation:
    """Rigid marker arrangement fixed to one tracked body.

    ``point_body=True`` admits a single-marker pointer that is tracked by
    position only (no orientation); rigid bodies need at least four markers.
    """

    body_id: int
    name: str
    local_points: np.ndarray
    point_body: bool = False
    distance_signature: np.ndarray = field(init=False)

    def __post_init__(self):
        pts = np.asarray(self.local_points, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "local_points", pts)
        if self.point_body:
            if len(pts) != 1:
                raise InvalidConstellation("point body must have exactly one marker")
            object.__setattr__(self, "distance_signature", np.zeros(0))
            return
        if len(pts) < 4:
            raise InvalidConstellation(f"body {self.body_id}: need >=4 markers, got {len(pts)}")
        centered = pts - pts.mean(axis=0)
        s = np.linalg.svd(centered, compute_uv=False)
        if s[1] < _COLLINEAR_RTOL * s[0]:
            raise InvalidConstellation(f"body {self.body_id}: markers are collinear")
        dists = _pairwise_distances(pts)
        sig = np.sort(dists[np.triu_indices(len(pts), k=1)])
        gaps = np.diff(sig)
        if np.any(gaps <= DELTA_SIG_M):
            raise InvalidConstellation(
                f"body {self.body_id}: pairwise distances closer than {DELTA_SIG_M * 1000:.1f} mm"
            )
        object.__setattr__(self, "distance_signature", sig)

    @property
    def marker_count(self) -> int:
        return len(self.local_points)


def load_constellations(path) -> list[Constellation]:
    """Load body definitions from JSON: {bodies:[{id,name,markers:[[x,y,z],..]}]}."""
    doc = json.loads(Path(path).read_text())
    bodies = []
    for entry in doc["bodies"]:
        markers = np.asarray(entry["markers"], dtype=np.float64)
        bodies.append(
            Constellation(
                body_id=int(entry["id"]),
                name=str(entry.get("name", f"body{entry['id']}")),
                local_points=markers,
                point_body=len(markers) == 1,
            )
        )
    ids = [b.body_id for b in bodies]
    if len(set(ids)) != len(ids):
        raise InvalidConstellation("duplicate body ids in constellation file")
    return bodies


@dataclass(frozen=True)
class TrackResult:
    body_id: int
    pose: Pose
    residual_rms: float
    markers_used: int
    status: Status
    stale: bool = False
    via: str = "signature"  # instrumentation: signature | gated | held


def solve_rigid(
    local_points: np.ndarray,
    observed_points: np.ndarray,
    correspondences: Sequence[tuple[int, int]],
) -> tuple[Pose, float]:
    """Least-squares rigid transform taking local markers onto observed points.

    Centroid subtraction, 3x3 covariance, SVD orthogonal Procrustes with the
    determinant sign fix so the result is always a proper rotation, never a
    reflection. Minimizes sum ||R p_i + t - q_i||^2 over the correspondences.
    """
    if len(correspondences) < 3:
        raise InsufficientMarkers(f"need >=3 correspondences, got {len(correspondences)}")
    local = np.asarray(local_points, dtype=np.float64).reshape(-1, 3)
    obs = np.asarray(observed_points, dtype=np.float64).reshape(-1, 3)
    li = np.array([c[0] for c in correspondences], dtype=np.intp)
    oi = np.array([c[1] for c in correspondences], dtype=np.intp)
    P = local[li]
    Q = obs[oi]

    pc = P.mean(axis=0)
    qc = Q.mean(axis=0)
    Pc = P - pc
    Qc = Q - qc

    s = np.linalg.svd(Pc, compute_uv=False)
    if s[1] < _COLLINEAR_RTOL * max(s[0], 1.0):
        raise DegenerateConfiguration("corresponded local points are collinear")

    H = Pc.T @ Qc
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    t = qc - R @ pc

    residuals = P @ R.T + t - Q
    rms = math.sqrt(float((residuals * residuals).sum(axis=1).mean()))
    return Pose(t, matrix_to_quat(R)), rms


def _correspondence_search(
    local: np.ndarray,
    cloud: np.ndarray,
    available: np.ndarray,
    tau: float,
) -> list[tuple[int, int]]:
    """Largest distance-consistent assignment of local markers to cloud points.

    Backtracking over (marker, point) pairs, pruning any pair whose distance
    to every already-assigned pair disagrees with the constellation geometry
    by more than tau. Ties between equally large assignments are broken by
    the lexicographically smallest correspondence list, which makes the
    search deterministic.
    """
    n_local = len(local)
    cand_idx = np.flatnonzero(available)
    if len(cand_idx) == 0:
        return []
    local_d = _pairwise_distances(local)
    cloud_d = _pairwise_distances(cloud)

    best: list[tuple[int, int]] = []

    def extend(marker: int, assigned: list[tuple[int, int]], used: set):
        nonlocal best
        if len(assigned) + (n_local - marker) < max(len(best), 3):
            return  # cannot beat current best even if all remaining match
        if marker == n_local:
            if len(assigned) > len(best):
                best = list(assigned)
            return
        for j in cand_idx:
            if j in used:
                continue
            ok = True
            for (mi, pj) in assigned:
                if abs(local_d[marker, mi] - cloud_d[j, pj]) > tau:
                    ok = False
                    break
            if ok:
                assigned.append((marker, int(j)))
                used.add(int(j))
                extend(marker + 1, assigned, used)
                assigned.pop()
                used.discard(int(j))
        extend(marker + 1, assigned, used)  # marker occluded

    extend(0, [], set())
    return best if len(best) >= 3 else []


def match_bodies(
    cloud: MarkerCloud,
    constellations: Sequence[Constellation],
    tau: float = TAU_MATCH_M,
    delta_sig: float = DELTA_SIG_M,
) -> dict[int, list[tuple[int, int]]]:
    """Assign cloud points to bodies by pairwise-distance signature.

    Returns {body_id: [(marker_index, point_index), ...]}; bodies with fewer
    than 3 matched points are reported with an empty list. Each point ends up
    assigned to at most one body; contested points go to the assignment with
    the lower solve residual, ties to the lower body id.
    """
    rigid = [c for c in constellations if not c.point_body]
    for a, b in itertools.combinations(rigid, 2):
        if len(a.distance_signature) == len(b.distance_signature) and np.all(
            np.abs(a.distance_signature - b.distance_signature) <= delta_sig
        ):
            raise AmbiguousMatch(
                f"bodies {a.body_id} and {b.body_id} have indistinguishable signatures"
            )

    points = cloud.points
    available = np.ones(len(points), dtype=bool)

    candidates = []  # (residual, body_id, constellation, correspondences)
    for cons in sorted(rigid, key=lambda c: c.body_id):
        corr = _correspondence_search(cons.local_points, points, available, tau)
        if corr:
            _, rms = solve_rigid(cons.local_points, points, corr)
            candidates.append((rms, cons.body_id, cons, corr))
        else:
            candidates.append((math.inf, cons.body_id, cons, []))

    matched_sets = [(bid, frozenset(j for _, j in corr)) for _, bid, _, corr in candidates if corr]
    for (bid_a, set_a), (bid_b, set_b) in itertools.combinations(matched_sets, 2):
        if set_a == set_b:
            raise AmbiguousMatch(f"bodies {bid_a} and {bid_b} fit the same point subset")

    result: dict[int, list[tuple[int, int]]] = {}
    # lowest residual claims its points first; later bodies re-match on the rest
    for rms, body_id, cons, corr in sorted(candidates, key=lambda c: (c[0], c[1])):
        if corr and not all(available[j] for _, j in corr):
            corr = _correspondence_search(cons.local_points, points, available, tau)
        result[body_id] = corr
        for _, j in corr:
            available[j] = False
    return result


def _gate_correspondences(
    predicted: np.ndarray, points: np.ndarray, available: np.ndarray, r_gate: float
) -> list[tuple[int, int]]:
    corr = []
    taken = set()
    for mi in range(len(predicted)):
        best_j, best_d = -1, r_gate
        for j in np.flatnonzero(available):
            if int(j) in taken:
                continue
            d = float(np.linalg.norm(points[j] - predicted[mi]))
            if d < best_d or (d == best_d and best_j == -1):
                best_j, best_d = int(j), d
        if best_j >= 0:
            corr.append((mi, best_j))
            taken.add(best_j)
    return corr


def track_frame(
    cloud: MarkerCloud,
    constellations: Sequence[Constellation],
    previous: Optional[Sequence[TrackResult]] = None,
    tau: float = TAU_MATCH_M,
    r_gate: float = R_GATE_M,
) -> list[TrackResult]:
    """Track every configured body in one frame.

    With previous results, markers are first gated to the positions predicted
    by the held pose (nearest neighbour within ``r_gate``); full signature
    matching runs only for bodies the gate fails to recover. Lost bodies hold
    their last pose, flagged stale; poses are never extrapolated.
    """
    prev_by_id = {r.body_id: r for r in previous} if previous else {}
    points = cloud.points
    available = np.ones(len(points), dtype=bool)
    results: dict[int, TrackResult] = {}

    ordered = sorted(constellations, key=lambda c: c.body_id)

    # pass 1: temporal gating from held poses
    if prev_by_id:
        for cons in ordered:
            prev = prev_by_id.get(cons.body_id)
            if prev is None:
                continue
            predicted = prev.pose.apply(cons.local_points)
            corr = _gate_correspondences(predicted, points, available, r_gate)
            if cons.point_body:
                if corr:
                    j = corr[0][1]
                    results[cons.body_id] = TrackResult(
                        cons.body_id,
                        Pose(points[j], np.array([1.0, 0, 0, 0])),
                        0.0,
                        1,
                        Status.TRACKED,
                        via="gated",
                    )
                    available[j] = False
                continue
            if len(corr) >= 3:
                pose, rms = solve_rigid(cons.local_points, points, corr)
                if rms <= max(tau, 5e-4) * 5:
                    results[cons.body_id] = TrackResult(
                        cons.body_id, pose, rms, len(corr), Status.TRACKED, via="gated"
                    )
                    for _, j in corr:
                        available[j] = False

    # pass 2: signature matching for whatever the gate missed
    pending = [c for c in ordered if c.body_id not in results and not c.point_body]
    if pending:
        sub_cloud = MarkerCloud(cloud.frame_id, cloud.timestamp_ns, points[available], cloud.volume_m)
        index_map = np.flatnonzero(available)
        matches = match_bodies(sub_cloud, pending, tau=tau)
        for cons in pending:
            corr = [(mi, int(index_map[j])) for mi, j in matches.get(cons.body_id, [])]
            if len(corr) >= 3:
                pose, rms = solve_rigid(cons.local_points, points, corr)
                results[cons.body_id] = TrackResult(
                    cons.body_id, pose, rms, len(corr), Status.TRACKED, via="signature"
                )
                for _, j in corr:
                    available[j] = False

    # pass 3: un-gated point bodies take a uniquely remaining marker
    for cons in ordered:
        if not cons.point_body or cons.body_id in results:
            continue
        remaining = np.flatnonzero(available)
        if len(remaining) == 1:
            j = int(remaining[0])
            results[cons.body_id] = TrackResult(
                cons.body_id,
                Pose(points[j], np.array([1.0, 0, 0, 0])),
                0.0,
                1,
                Status.TRACKED,
                via="signature",
            )
            available[j] = False

    # pass 4: anything still missing holds its last pose, flagged stale
    out = []
    for cons in ordered:
        r = results.get(cons.body_id)
        if r is None:
            prev = prev_by_id.get(cons.body_id)
            held = prev.pose if prev is not None else Pose.identity()
            r = TrackResult(cons.body_id, held, math.nan, 0, Status.LOST, stale=True, via="held")
        out.append(r)
    return out

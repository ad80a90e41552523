import itertools
import math

import numpy as np
import pytest

from holodeck.geometry import Pose, random_quat
from holodeck.tracking import Constellation, MarkerCloud, solve_rigid


# Asymmetric 6-marker headset mount; all 15 pairwise distances separated
# by more than 7 mm so the signature identifies any 3-subset.
HEADSET_MARKERS = np.array(
    [
        [-0.008, 0.049, 0.091],
        [-0.068, 0.072, -0.105],
        [0.006, 0.019, 0.037],
        [0.108, -0.080, -0.002],
        [-0.095, 0.020, -0.060],
        [0.008, 0.007, -0.092],
    ]
)

POINTER_MARKER = np.array([[0.0, 0.0, 0.0]])


@pytest.fixture
def headset():
    return Constellation(body_id=1, name="headset", local_points=HEADSET_MARKERS)


@pytest.fixture
def pointer():
    return Constellation(body_id=2, name="pointer", local_points=POINTER_MARKER, point_body=True)


def make_cloud(points, frame_id=0, timestamp_ns=0):
    return MarkerCloud(frame_id=frame_id, timestamp_ns=timestamp_ns, points=np.asarray(points))


def room_pose(rng, span=2.0):
    """Random proper rigid transform placing a body inside the capture volume."""
    t = np.array([rng.uniform(-span, span), rng.uniform(-span, span), rng.uniform(0.5, 2.2)])
    return Pose(t, random_quat(rng))


def brute_force_match(local_points, cloud_points, tau):
    """Exhaustive subset/permutation search oracle for constellation matching.

    Tries every subset of cloud points of size >= 3 (largest first) and every
    injective assignment of local markers onto it, accepting the first size at
    which any distance-consistent assignment exists and returning the best
    (lowest solve residual, then lexicographically smallest) correspondence.
    Exponential; only usable on clouds of <= 10 points.
    """
    n_cloud = len(cloud_points)
    n_local = len(local_points)
    best = None
    for k in range(min(n_local, n_cloud), 2, -1):
        for marker_subset in itertools.combinations(range(n_local), k):
            for point_perm in itertools.permutations(range(n_cloud), k):
                ok = True
                for (a, b) in itertools.combinations(range(k), 2):
                    d_local = np.linalg.norm(
                        local_points[marker_subset[a]] - local_points[marker_subset[b]]
                    )
                    d_cloud = np.linalg.norm(
                        cloud_points[point_perm[a]] - cloud_points[point_perm[b]]
                    )
                    if abs(d_local - d_cloud) > tau:
                        ok = False
                        break
                if not ok:
                    continue
                corr = list(zip(marker_subset, point_perm))
                _, rms = solve_rigid(local_points, cloud_points, corr)
                key = (rms, corr)
                if best is None or key < best:
                    best = key
        if best is not None:
            return best[1]
    return []


def percentile_oracle(samples, q):
    """Nearest-rank percentile on a sorted copy; independent of any impl."""
    s = sorted(samples)
    if not s:
        raise ValueError("empty")
    rank = max(1, math.ceil(q / 100.0 * len(s)))
    return s[rank - 1]

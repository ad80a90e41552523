"""JIT-fused loops for the large-scene draw-list path.

The numpy vector pipeline in lod.py allocates several full-size temporaries
per frame, which busts the 16.67 ms build budget on one slow core at the
1.5M-neuron scale. These kernels fuse classify/bin/filter/materialize into
single passes. lod.py falls back to the numpy path when numba is missing;
both paths implement the same contract.
"""
from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba present in normal installs
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        if args and callable(args[0]):
            return args[0]
        return wrap


@njit(cache=True)
def classify_bin_cells(centers, normals_t, off_out, off_in, cam, width, nbins, counts):
    """Per cell: frustum class (0 out, 1 boundary, 2 in), distance bin, and
    the inside-cell weight histogram, in one pass."""
    nc = centers.shape[0]
    cls = np.empty(nc, np.uint8)
    bins = np.full(nc, -1, np.int64)
    wsum = np.zeros(nbins, np.int64)
    for c in range(nc):
        x = centers[c, 0]
        y = centers[c, 1]
        z = centers[c, 2]
        lo = np.float32(1e30)
        hi = np.float32(1e30)
        for p in range(6):
            d = x * normals_t[0, p] + y * normals_t[1, p] + z * normals_t[2, p]
            v_out = d + off_out[p]
            v_in = d + off_in[p]
            if v_out < lo:
                lo = v_out
            if v_in < hi:
                hi = v_in
        if lo < 0.0:
            cls[c] = 0
            continue
        dx = x - cam[0]
        dy = y - cam[1]
        dz = z - cam[2]
        b = int(math.sqrt(dx * dx + dy * dy + dz * dz) / width)
        if b > nbins - 1:
            b = nbins - 1
        bins[c] = b
        if hi > 0.0:
            cls[c] = 2
            wsum[b] += counts[c]
        else:
            cls[c] = 1
    return cls, bins, wsum


@njit(cache=True)
def filter_boundary(pos_by_order, order, cell_offsets, cls, normals_t, offs, cam,
                    width, nbins):
    """Exact per-point frustum test and distance bin for boundary cells."""
    nc = cls.shape[0]
    total = 0
    for c in range(nc):
        if cls[c] == 1:
            total += cell_offsets[c + 1] - cell_offsets[c]
    ids = np.empty(total, np.uint32)
    bins = np.empty(total, np.int64)
    wadd = np.zeros(nbins, np.int64)
    m = 0
    for c in range(nc):
        if cls[c] != 1:
            continue
        for s in range(cell_offsets[c], cell_offsets[c + 1]):
            x = pos_by_order[s, 0]
            y = pos_by_order[s, 1]
            z = pos_by_order[s, 2]
            ok = True
            for p in range(6):
                if x * normals_t[0, p] + y * normals_t[1, p] + z * normals_t[2, p] + offs[p] < 0.0:
                    ok = False
                    break
            if ok:
                dx = x - cam[0]
                dy = y - cam[1]
                dz = z - cam[2]
                b = int(math.sqrt(dx * dx + dy * dy + dz * dz) / width)
                if b > nbins - 1:
                    b = nbins - 1
                ids[m] = order[s]
                bins[m] = b
                wadd[b] += 1
                m += 1
    return ids[:m], bins[:m], wadd


@njit(cache=True)
def materialize(cls, bins, cell_offsets, order, b_ids, b_bins, d0, d1, width,
                n_neurons):
    """Write drawn ids, tiers and the drawn mask, cells ascending then
    boundary survivors, comparing the same bin-edge floats the tier solver
    used."""
    nc = cls.shape[0]
    total = 0
    for c in range(nc):
        if cls[c] == 2 and (bins[c] + 1) * width <= d1:
            total += cell_offsets[c + 1] - cell_offsets[c]
    for i in range(b_ids.shape[0]):
        if (b_bins[i] + 1) * width <= d1:
            total += 1
    ids = np.empty(total, np.uint32)
    tiers = np.empty(total, np.uint8)
    mask = np.zeros(n_neurons, np.bool_)
    m = 0
    n0 = 0
    for c in range(nc):
        if cls[c] != 2:
            continue
        edge = (bins[c] + 1) * width
        if edge <= d0:
            tier = 0
        elif edge <= d1:
            tier = 1
        else:
            continue
        for s in range(cell_offsets[c], cell_offsets[c + 1]):
            nid = order[s]
            ids[m] = nid
            tiers[m] = tier
            mask[nid] = True
            m += 1
            if tier == 0:
                n0 += 1
    for i in range(b_ids.shape[0]):
        edge = (b_bins[i] + 1) * width
        if edge <= d0:
            tier = 0
        elif edge <= d1:
            tier = 1
        else:
            continue
        nid = b_ids[i]
        ids[m] = nid
        tiers[m] = tier
        mask[nid] = True
        m += 1
        if tier == 0:
            n0 += 1
    return ids[:m], tiers[:m], mask, n0


@njit(cache=True)
def line_prefix(mask, pre_sorted, post_sorted, conn_order, k):
    """Connections in the strongest-k prefix whose endpoints are both drawn."""
    out = np.empty(k, np.uint32)
    m = 0
    for i in range(k):
        if mask[pre_sorted[i]] and mask[post_sorted[i]]:
            out[m] = conn_order[i]
            m += 1
    return out[:m]

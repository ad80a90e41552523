"""Procedural network generator: a desk-scale stand-in for real datasets.

Neurons fall uniformly in a cube; connections are rejection-sampled with a
distance-decaying acceptance probability so wiring is mostly local, the way
reservoir networks are laid out. Weights are signed (mostly excitatory),
spikes form a homogeneous Poisson stream. Everything is deterministic for
a given seed, and sampling runs in bounded-size batches so transient memory
stays small even at 15 million connections.
"""
from __future__ import annotations

import numpy as np

from .model import NetworkDataset

_BATCH = 2_000_000


def synth_network(
    n_neurons: int,
    n_connections: int,
    spike_rate_hz: float = 1.0,
    duration_s: float = 10.0,
    seed: int = 0,
    extent_mm: float = 100.0,
    decay_mm: float = 25.0,
    input_fraction: float = 0.1,
    excitatory_fraction: float = 0.8,
) -> NetworkDataset:
    rng = np.random.default_rng(seed)
    positions = rng.uniform(0.0, extent_mm, size=(n_neurons, 3)).astype(np.float32)
    kinds = (rng.random(n_neurons) < input_fraction).astype(np.uint8)

    pre_parts, post_parts = [], []
    accepted = 0
    if n_neurons >= 2:
        while accepted < n_connections:
            batch = min(_BATCH, max(4 * (n_connections - accepted), 1024))
            a = rng.integers(0, n_neurons, size=batch, dtype=np.int64)
            b = rng.integers(0, n_neurons, size=batch, dtype=np.int64)
            d = np.linalg.norm(
                positions[a].astype(np.float64) - positions[b].astype(np.float64), axis=1
            )
            keep = (a != b) & (rng.random(batch) < np.exp(-d / decay_mm))
            a, b = a[keep], b[keep]
            take = min(len(a), n_connections - accepted)
            pre_parts.append(a[:take].astype(np.int32))
            post_parts.append(b[:take].astype(np.int32))
            accepted += take
    conn_pre = np.concatenate(pre_parts) if pre_parts else np.zeros(0, dtype=np.int32)
    conn_post = np.concatenate(post_parts) if post_parts else np.zeros(0, dtype=np.int32)

    m = len(conn_pre)
    magnitude = rng.uniform(0.05, 1.0, size=m)
    sign = np.where(rng.random(m) < excitatory_fraction, 1.0, -1.0)
    conn_weight = (magnitude * sign).astype(np.float32)

    n_spikes = int(rng.poisson(n_neurons * spike_rate_hz * duration_s)) if n_neurons else 0
    spike_times = np.sort(rng.uniform(0.0, duration_s, size=n_spikes))
    spike_ids = rng.integers(0, max(n_neurons, 1), size=n_spikes, dtype=np.uint32)

    return NetworkDataset(
        name=f"synth-{n_neurons}x{n_connections}",
        positions=positions,
        kinds=kinds,
        conn_pre=conn_pre,
        conn_post=conn_post,
        conn_weight=conn_weight,
        spike_times=spike_times,
        spike_ids=spike_ids,
    )

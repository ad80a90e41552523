"""Dataset model for spiking neural networks at visualisation scale.

Storage is columnar numpy so a 1.5 million neuron network with ten times as
many connections stays within a few hundred megabytes: f32 positions in
millimeters, i32 connection endpoints, f32 signed weights (positive
excitatory, negative inhibitory), f64 spike times sorted ascending.
Adjacency is CSR over connection indices, rebuildable for verification.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

KIND_REGULAR = 0
KIND_INPUT = 1

_KIND_NAMES = {KIND_REGULAR: "regular", KIND_INPUT: "input"}

POTENTIAL_TAU_S = 0.05


class DatasetError(Exception):
    pass


class DanglingId(DatasetError):
    pass


class DuplicateNeuronId(DatasetError):
    pass


class NonDenseNeuronIds(DatasetError):
    pass


class MalformedRow(DatasetError):
    def __init__(self, path, line_no, reason):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.path = str(path)
        self.line_no = line_no
        self.reason = reason


class SelfConnection(DatasetError):
    pass


class UnknownId(DatasetError):
    pass


@dataclass(frozen=True)
class Neuron:
    id: int
    position: tuple[float, float, float]
    kind: str  # "input" | "regular"


@dataclass(frozen=True)
class Connection:
    index: int
    pre: int
    post: int
    weight: float


@dataclass(frozen=True)
class SpikeEvent:
    time_s: float
    neuron: int


def _build_csr(keys: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Connection indices grouped by key: (offsets[n+1], ordered conn idx)."""
    order = np.argsort(keys, kind="stable").astype(np.uint32)
    counts = np.bincount(keys, minlength=n) if len(keys) else np.zeros(n, dtype=np.int64)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return offsets, order


@dataclass
class NetworkDataset:
    name: str
    positions: np.ndarray  # (n, 3) f32, millimeters
    kinds: np.ndarray  # (n,) u8
    conn_pre: np.ndarray  # (m,) i32
    conn_post: np.ndarray  # (m,) i32
    conn_weight: np.ndarray  # (m,) f32
    spike_times: np.ndarray  # (s,) f64, sorted ascending
    spike_ids: np.ndarray  # (s,) u32
    units: str = "mm"
    warnings: list = field(default_factory=list)
    out_offsets: np.ndarray = None
    out_conn_idx: np.ndarray = None
    in_offsets: np.ndarray = None
    in_conn_idx: np.ndarray = None

    def __post_init__(self):
        if self.out_offsets is None:
            self.rebuild_adjacency()

    @property
    def n_neurons(self) -> int:
        return len(self.positions)

    @property
    def n_connections(self) -> int:
        return len(self.conn_pre)

    @property
    def n_spikes(self) -> int:
        return len(self.spike_times)

    def extent(self) -> tuple[np.ndarray, np.ndarray]:
        if self.n_neurons == 0:
            z = np.zeros(3, dtype=np.float64)
            return z, z
        return (
            self.positions.min(axis=0).astype(np.float64),
            self.positions.max(axis=0).astype(np.float64),
        )

    def rebuild_adjacency(self):
        n = self.n_neurons
        self.out_offsets, self.out_conn_idx = _build_csr(self.conn_pre, n)
        self.in_offsets, self.in_conn_idx = _build_csr(self.conn_post, n)

    def outgoing(self, neuron_id: int) -> np.ndarray:
        """Connection indices with ``neuron_id`` as the presynaptic side."""
        return self.out_conn_idx[self.out_offsets[neuron_id]: self.out_offsets[neuron_id + 1]]

    def incoming(self, neuron_id: int) -> np.ndarray:
        return self.in_conn_idx[self.in_offsets[neuron_id]: self.in_offsets[neuron_id + 1]]

    def neuron(self, neuron_id: int) -> Neuron:
        if not 0 <= neuron_id < self.n_neurons:
            raise UnknownId(f"neuron {neuron_id} not in [0, {self.n_neurons})")
        p = self.positions[neuron_id]
        return Neuron(int(neuron_id), (float(p[0]), float(p[1]), float(p[2])),
                      _KIND_NAMES[int(self.kinds[neuron_id])])

    def connection(self, index: int) -> Connection:
        return Connection(
            int(index), int(self.conn_pre[index]), int(self.conn_post[index]),
            float(self.conn_weight[index]),
        )

    def validate(self):
        """Re-check the structural invariants; raises DatasetError on violation."""
        n = self.n_neurons
        if self.n_connections:
            if self.conn_pre.min() < 0 or self.conn_pre.max() >= n:
                raise DanglingId("connection pre id out of range")
            if self.conn_post.min() < 0 or self.conn_post.max() >= n:
                raise DanglingId("connection post id out of range")
            if np.any(self.conn_pre == self.conn_post):
                raise SelfConnection("self connection present")
            if not np.all(np.isfinite(self.conn_weight)) or np.any(self.conn_weight == 0):
                raise DatasetError("connection weights must be finite and nonzero")
        if self.n_spikes:
            if np.any(np.diff(self.spike_times) < 0):
                raise DatasetError("spikes not sorted")
            if self.spike_ids.max() >= n:
                raise DanglingId("spike neuron id out of range")
        if not np.all(np.isfinite(self.positions)):
            raise DatasetError("non-finite neuron position")


def spikes_in(dataset: NetworkDataset, t0: float, t1: float) -> tuple[np.ndarray, np.ndarray]:
    """Events with t0 <= time < t1 as (times, neuron ids) views of the stream."""
    if t0 > t1:
        raise ValueError(f"t0 {t0} > t1 {t1}")
    i0 = np.searchsorted(dataset.spike_times, t0, side="left")
    i1 = np.searchsorted(dataset.spike_times, t1, side="left")
    return dataset.spike_times[i0:i1], dataset.spike_ids[i0:i1]


def potential_at(dataset: NetworkDataset, neuron_id: int, t: float,
                 tau_s: float = POTENTIAL_TAU_S) -> float:
    """Display potential: sum of exp(-(t - t_spike)/tau) over past spikes,
    clamped to [0, 1].

    This is a deterministic visualisation proxy reconstructed from the
    replayed spike train, not simulator state.
    """
    if not 0 <= neuron_id < dataset.n_neurons:
        raise UnknownId(f"neuron {neuron_id} not in [0, {dataset.n_neurons})")
    upto = np.searchsorted(dataset.spike_times, t, side="right")
    mask = dataset.spike_ids[:upto] == neuron_id
    times = dataset.spike_times[:upto][mask]
    if times.size == 0:
        return 0.0
    v = float(np.exp(-(t - times) / tau_s).sum())
    return min(max(v, 0.0), 1.0)


def neuron_info(dataset: NetworkDataset, neuron_id: int, t: float,
                tau_s: float = POTENTIAL_TAU_S) -> dict:
    """Pick payload: kind, display potential at t, incoming and outgoing
    connections."""
    neuron = dataset.neuron(neuron_id)
    return {
        "id": neuron.id,
        "kind": neuron.kind,
        "position": list(neuron.position),
        "potential": potential_at(dataset, neuron_id, t, tau_s),
        "incoming": [dataset.connection(i) for i in dataset.incoming(neuron_id)],
        "outgoing": [dataset.connection(i) for i in dataset.outgoing(neuron_id)],
    }

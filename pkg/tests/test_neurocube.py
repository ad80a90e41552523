import json
import math

import numpy as np
import pytest

from holodeck.neurocube import (
    DanglingId,
    DuplicateNeuronId,
    MalformedRow,
    NetworkDataset,
    NonDenseNeuronIds,
    PlaybackClock,
    SelfConnection,
    UnknownId,
    load_dataset,
    nearest_neuron,
    neuron_info,
    potential_at,
    spikes_in,
    synth_network,
)
from holodeck.neurocube.spatial import build_index


def write_dataset(tmp_path, neurons, connections, spikes, name="t"):
    (tmp_path / "neurons.csv").write_text(
        "id,x,y,z,kind\n" + "".join(f"{r}\n" for r in neurons)
    )
    (tmp_path / "connections.csv").write_text(
        "pre,post,weight\n" + "".join(f"{r}\n" for r in connections)
    )
    (tmp_path / "spikes.csv").write_text("time,neuron\n" + "".join(f"{r}\n" for r in spikes))
    manifest = tmp_path / "manifest.json"
    manifest.write_text(
        json.dumps(
            {
                "name": name,
                "neurons": "neurons.csv",
                "connections": "connections.csv",
                "spikes": "spikes.csv",
                "units": "mm",
            }
        )
    )
    return manifest


def linear_nearest(positions, point, max_radius):
    """Brute-force picking oracle."""
    if len(positions) == 0:
        return None
    diff = positions.astype(np.float64) - np.asarray(point, dtype=np.float64)
    d2 = np.einsum("ij,ij->i", diff, diff)
    best = d2.min()
    if best > max_radius * max_radius:
        return None
    idx = int(np.flatnonzero(d2 == best).min())
    return idx, math.sqrt(best)


class TestLoadDataset:
    def test_minimal_dataset(self, tmp_path):
        m = write_dataset(tmp_path, ["0,1.0,2.0,3.0,regular"], [], [])
        ds = load_dataset(m)
        assert ds.n_neurons == 1
        assert ds.n_connections == 0
        assert ds.n_spikes == 0
        assert ds.neuron(0).kind == "regular"

    def test_dangling_connection(self, tmp_path):
        m = write_dataset(
            tmp_path, ["0,0,0,0,regular", "1,1,1,1,input"], ["0,99,0.5"], []
        )
        with pytest.raises(DanglingId):
            load_dataset(m)

    def test_duplicate_neuron_id(self, tmp_path):
        m = write_dataset(tmp_path, ["0,0,0,0,regular", "0,1,1,1,input"], [], [])
        with pytest.raises(DuplicateNeuronId):
            load_dataset(m)

    def test_non_dense_ids(self, tmp_path):
        m = write_dataset(tmp_path, ["0,0,0,0,regular", "5,1,1,1,input"], [], [])
        with pytest.raises(NonDenseNeuronIds):
            load_dataset(m)

    def test_self_connection(self, tmp_path):
        m = write_dataset(tmp_path, ["0,0,0,0,regular", "1,1,1,1,input"], ["1,1,0.5"], [])
        with pytest.raises(SelfConnection):
            load_dataset(m)

    def test_malformed_row_reports_location(self, tmp_path):
        m = write_dataset(tmp_path, ["0,0,0,zzz,regular"], [], [])
        with pytest.raises(MalformedRow) as e:
            load_dataset(m)
        assert "neurons.csv" in str(e.value)
        assert ":2:" in str(e.value)

    def test_shuffled_spikes_sorted_with_warning(self, tmp_path):
        rng = np.random.default_rng(1)
        times = rng.uniform(0, 10, 10_000)
        neurons = [f"{i},{i},0,0,regular" for i in range(4)]
        spikes = [f"{t},{int(rng.integers(0, 4))}" for t in times]
        m = write_dataset(tmp_path, neurons, [], spikes)
        ds = load_dataset(m)
        assert np.array_equal(ds.spike_times, np.sort(times))
        assert any("unsorted" in w for w in ds.warnings)

    def test_unsorted_detection_equals_sort_oracle(self, tmp_path):
        times = [0.5, 0.1, 0.9, 0.3]
        neurons = ["0,0,0,0,regular"]
        m = write_dataset(tmp_path, neurons, [], [f"{t},0" for t in times])
        ds = load_dataset(m)
        assert list(ds.spike_times) == sorted(times)


class TestSynth:
    def test_empty_network(self):
        ds = synth_network(0, 0, seed=1)
        ds.validate()
        assert ds.n_neurons == 0

    def test_determinism(self):
        a = synth_network(1000, 5000, spike_rate_hz=2.0, duration_s=3.0, seed=42)
        b = synth_network(1000, 5000, spike_rate_hz=2.0, duration_s=3.0, seed=42)
        assert np.array_equal(a.positions, b.positions)
        assert np.array_equal(a.conn_pre, b.conn_pre)
        assert np.array_equal(a.conn_weight, b.conn_weight)
        assert np.array_equal(a.spike_times, b.spike_times)

    def test_valid_and_signed_weights(self):
        ds = synth_network(500, 5000, seed=3)
        ds.validate()
        assert ds.n_connections == 5000
        assert np.any(ds.conn_weight > 0) and np.any(ds.conn_weight < 0)

    def test_distance_decay_prefers_local(self):
        ds = synth_network(2000, 20000, seed=4, extent_mm=100.0, decay_mm=20.0)
        d = np.linalg.norm(
            ds.positions[ds.conn_pre].astype(np.float64)
            - ds.positions[ds.conn_post].astype(np.float64),
            axis=1,
        )
        rng = np.random.default_rng(0)
        a = rng.integers(0, 2000, 20000)
        b = rng.integers(0, 2000, 20000)
        baseline = np.linalg.norm(
            ds.positions[a].astype(np.float64) - ds.positions[b].astype(np.float64), axis=1
        )
        assert d.mean() < 0.75 * baseline.mean()


class TestAdjacency:
    def test_rebuild_idempotent(self):
        ds = synth_network(300, 3000, seed=5)
        out_off, out_idx = ds.out_offsets.copy(), ds.out_conn_idx.copy()
        in_off, in_idx = ds.in_offsets.copy(), ds.in_conn_idx.copy()
        ds.rebuild_adjacency()
        assert np.array_equal(ds.out_offsets, out_off)
        assert np.array_equal(ds.out_conn_idx, out_idx)
        assert np.array_equal(ds.in_offsets, in_off)
        assert np.array_equal(ds.in_conn_idx, in_idx)

    def test_adjacency_matches_connection_list(self):
        ds = synth_network(100, 800, seed=6)
        for nid in (0, 17, 99):
            got_out = sorted(int(i) for i in ds.outgoing(nid))
            want_out = sorted(int(i) for i in np.flatnonzero(ds.conn_pre == nid))
            assert got_out == want_out
            got_in = sorted(int(i) for i in ds.incoming(nid))
            want_in = sorted(int(i) for i in np.flatnonzero(ds.conn_post == nid))
            assert got_in == want_in


class TestSpatial:
    def test_single_neuron_at_origin(self):
        ds = NetworkDataset(
            name="one",
            positions=np.zeros((1, 3), dtype=np.float32),
            kinds=np.zeros(1, dtype=np.uint8),
            conn_pre=np.zeros(0, dtype=np.int32),
            conn_post=np.zeros(0, dtype=np.int32),
            conn_weight=np.zeros(0, dtype=np.float32),
            spike_times=np.zeros(0),
            spike_ids=np.zeros(0, dtype=np.uint32),
        )
        idx = build_index(ds)
        assert nearest_neuron(idx, (0, 0, 0), max_radius=1.0) == (0, 0.0)

    def test_every_neuron_in_exactly_one_cell(self):
        ds = synth_network(5000, 0, seed=7)
        idx = build_index(ds)
        assert idx.cell_offsets[-1] == 5000
        assert len(np.unique(idx.order)) == 5000

    def test_query_beyond_radius_returns_none(self):
        ds = synth_network(100, 0, seed=8, extent_mm=10.0)
        idx = build_index(ds)
        assert nearest_neuron(idx, (1000.0, 1000.0, 1000.0), max_radius=5.0) is None

    def test_oracle_equivalence_random(self):
        ds = synth_network(10_000, 0, seed=9, extent_mm=100.0)
        idx = build_index(ds)
        rng = np.random.default_rng(10)
        for _ in range(1000):
            # mix of interior, boundary, and outside queries
            p = rng.uniform(-20, 120, 3)
            radius = float(rng.uniform(0.5, 40.0))
            got = nearest_neuron(idx, p, radius)
            want = linear_nearest(ds.positions, p, radius)
            assert got == want

    def test_tie_break_lower_id(self):
        pos = np.array([[1, 0, 0], [-1, 0, 0], [0.5, 0, 0]], dtype=np.float32)
        ds = NetworkDataset(
            name="tie",
            positions=pos,
            kinds=np.zeros(3, dtype=np.uint8),
            conn_pre=np.zeros(0, dtype=np.int32),
            conn_post=np.zeros(0, dtype=np.int32),
            conn_weight=np.zeros(0, dtype=np.float32),
            spike_times=np.zeros(0),
            spike_ids=np.zeros(0, dtype=np.uint32),
        )
        idx = build_index(ds)
        got = nearest_neuron(idx, (0.0, 0.0, 0.0), max_radius=5.0)
        assert got == (2, 0.5)
        # exact tie between 0 and 1 at distance 1 once neuron 2 is excluded
        got = nearest_neuron(idx, (0.0, 3.0, 0.0), max_radius=5.0)
        oracle = linear_nearest(pos, (0.0, 3.0, 0.0), 5.0)
        assert got == oracle


class TestSpikeQueries:
    def test_empty_window(self):
        ds = synth_network(10, 0, spike_rate_hz=5.0, duration_s=2.0, seed=11)
        t, i = spikes_in(ds, 1.0, 1.0)
        assert len(t) == 0 and len(i) == 0

    def test_full_range(self):
        ds = synth_network(10, 0, spike_rate_hz=5.0, duration_s=2.0, seed=12)
        t, _ = spikes_in(ds, 0.0, math.inf)
        assert len(t) == ds.n_spikes

    def test_window_oracle_equivalence(self):
        ds = synth_network(50, 0, spike_rate_hz=100.0, duration_s=20.0, seed=13)
        assert ds.n_spikes >= 100_000 * 0.9
        rng = np.random.default_rng(14)
        for _ in range(200):
            a, b = np.sort(rng.uniform(-1.0, 21.0, 2))
            t, i = spikes_in(ds, a, b)
            mask = (ds.spike_times >= a) & (ds.spike_times < b)
            assert np.array_equal(t, ds.spike_times[mask])
            assert np.array_equal(i, ds.spike_ids[mask])

    def test_rejects_inverted_window(self):
        ds = synth_network(10, 0, seed=15)
        with pytest.raises(ValueError):
            spikes_in(ds, 2.0, 1.0)


class TestPotential:
    def make_ds(self, spike_times, neuron=0):
        return NetworkDataset(
            name="p",
            positions=np.zeros((2, 3), dtype=np.float32),
            kinds=np.zeros(2, dtype=np.uint8),
            conn_pre=np.array([0], dtype=np.int32),
            conn_post=np.array([1], dtype=np.int32),
            conn_weight=np.array([0.5], dtype=np.float32),
            spike_times=np.asarray(spike_times, dtype=np.float64),
            spike_ids=np.full(len(spike_times), neuron, dtype=np.uint32),
        )

    def test_no_spikes_zero_everywhere(self):
        ds = self.make_ds([])
        for t in (0.0, 1.0, 100.0):
            assert potential_at(ds, 0, t) == 0.0

    def test_single_spike_decay(self):
        ds = self.make_ds([1.0])
        tau = 0.05
        assert potential_at(ds, 0, 1.0) == pytest.approx(1.0)
        for dt in (0.01, 0.05, 0.2):
            assert potential_at(ds, 0, 1.0 + dt) == pytest.approx(math.exp(-dt / tau))
        assert potential_at(ds, 0, 0.999) == 0.0

    def test_clamped_to_unit_range(self):
        ds = self.make_ds([1.0, 1.001, 1.002])
        assert potential_at(ds, 0, 1.01) == 1.0

    def test_unknown_id(self):
        ds = self.make_ds([1.0])
        with pytest.raises(UnknownId):
            potential_at(ds, 5, 1.0)

    def test_neuron_info_payload(self):
        ds = self.make_ds([1.0])
        info = neuron_info(ds, 0, 1.0)
        assert info["kind"] == "regular"
        assert info["potential"] == pytest.approx(1.0)
        assert [c.post for c in info["outgoing"]] == [1]
        assert info["incoming"] == []
        info1 = neuron_info(ds, 1, 0.0)
        assert [c.pre for c in info1["incoming"]] == [0]


class TestPlaybackClock:
    def test_paused_clock_frozen(self):
        c = PlaybackClock(rate=0.0, start_time_s=2.0)
        c.advance(10.0)
        assert c.sim_time_s == 2.0

    def test_half_rate(self):
        c = PlaybackClock(rate=0.5)
        c.advance(2.0)
        assert c.sim_time_s == 1.0

    def test_seek_then_advance(self):
        c = PlaybackClock(rate=1.0)
        c.seek(5.0)
        c.advance(1.0)
        assert c.sim_time_s == 6.0

    def test_linearity_exact(self):
        rng = np.random.default_rng(16)
        for _ in range(50):
            rate = float(rng.uniform(0, 4))
            dt1, dt2 = float(rng.uniform(0, 10)), float(rng.uniform(0, 10))
            a = PlaybackClock(rate=rate)
            a.advance(dt1)
            a.advance(dt2)
            b = PlaybackClock(rate=rate)
            b.advance(dt1 + dt2)
            assert a.sim_time_s == b.sim_time_s  # bitwise, not approx

    def test_never_decreases_without_seek(self):
        c = PlaybackClock(rate=2.0)
        last = c.sim_time_s
        rng = np.random.default_rng(17)
        for _ in range(100):
            c.advance(float(rng.uniform(0, 0.1)))
            if rng.random() < 0.2:
                c.set_rate(float(rng.uniform(0, 3)))
            assert c.sim_time_s >= last
            last = c.sim_time_s

    def test_rejects_negative(self):
        c = PlaybackClock()
        with pytest.raises(ValueError):
            c.advance(-1.0)
        with pytest.raises(ValueError):
            c.set_rate(-0.5)

import math

import numpy as np
import pytest

from holodeck.geometry import Pose, quat_from_axis_angle, random_quat
from holodeck.lod import (
    CameraState,
    DrawList,
    FrameBudget,
    RenderIndex,
    build_draw_list,
    controller_update,
    frustum_cull,
    frustum_planes,
    _point_inside,
)
from holodeck.neurocube import synth_network
from holodeck.neurocube.spatial import build_index


def camera_at(position, quaternion=None, **kw):
    q = np.array([1.0, 0, 0, 0]) if quaternion is None else quaternion
    return CameraState(pose=Pose(np.asarray(position, dtype=np.float64), q), **kw)


def brute_force_cull(positions, camera):
    """Per-neuron six-plane containment oracle."""
    planes = frustum_planes(camera)
    keep = _point_inside(positions, planes)
    return np.flatnonzero(keep).astype(np.uint32)


def render_index(ds):
    return RenderIndex.build(ds, build_index(ds))


class TestFrustumCull:
    def test_everything_behind_camera(self):
        ds = synth_network(500, 0, seed=1, extent_mm=50.0)
        # camera above the cube looking along -z away from it... place cube at +z
        cam = camera_at((25.0, 25.0, -10.0))  # looks along -z, neurons at z>=0
        idx = build_index(ds)
        assert len(frustum_cull(idx, cam)) == 0

    def test_random_cameras_match_oracle(self):
        ds = synth_network(10_000, 0, seed=2, extent_mm=100.0)
        idx = build_index(ds)
        rng = np.random.default_rng(3)
        for _ in range(100):
            cam = CameraState(
                pose=Pose(rng.uniform(-20, 120, 3), random_quat(rng)),
                vertical_fov_rad=float(rng.uniform(0.3, 2.4)),
                aspect=float(rng.uniform(0.5, 2.5)),
                near_m=float(rng.uniform(0.01, 5.0)),
                far_m=float(rng.uniform(50.0, 400.0)),
            )
            got = frustum_cull(idx, cam)
            want = brute_force_cull(ds.positions, cam)
            assert np.array_equal(got, want)

    def test_point_exactly_on_near_plane_included(self):
        # camera at origin looking along -z with near=1: the plane is z=-1
        from holodeck.neurocube.model import NetworkDataset

        pos = np.array([[0, 0, -1.0], [0, 0, -0.5], [0, 0, -2.0]], dtype=np.float32)
        ds = NetworkDataset(
            name="plane",
            positions=pos,
            kinds=np.zeros(3, dtype=np.uint8),
            conn_pre=np.zeros(0, dtype=np.int32),
            conn_post=np.zeros(0, dtype=np.int32),
            conn_weight=np.zeros(0, dtype=np.float32),
            spike_times=np.zeros(0),
            spike_ids=np.zeros(0, dtype=np.uint32),
        )
        idx = build_index(ds)
        cam = camera_at((0.0, 0.0, 0.0), near_m=1.0, far_m=10.0)
        got = frustum_cull(idx, cam)
        assert 0 in got  # on the closed boundary
        assert 1 not in got  # in front of near plane
        assert 2 in got

    def test_culling_narrow_fov(self):
        ds = synth_network(3000, 0, seed=4, extent_mm=100.0)
        idx = build_index(ds)
        cam = camera_at((50.0, 50.0, 200.0), vertical_fov_rad=0.2, far_m=500.0)
        got = frustum_cull(idx, cam)
        want = brute_force_cull(ds.positions, cam)
        assert np.array_equal(got, want)
        assert 0 < len(got) < 3000


class TestBuildDrawList:
    def test_tiny_scene_all_tier0(self):
        ds = synth_network(100, 300, seed=5, extent_mm=50.0)
        ri = render_index(ds)
        cam = camera_at((25.0, 25.0, 300.0), far_m=1000.0)
        dl = build_draw_list(ds, ri, cam, FrameBudget())
        assert len(dl.neuron_ids) == 100
        assert np.all(dl.tiers == 0)
        # every connection between drawn endpoints is present
        assert len(dl.connection_ids) == 300

    def test_zero_budget_empty(self):
        ds = synth_network(100, 300, seed=6, extent_mm=50.0)
        ri = render_index(ds)
        cam = camera_at((25.0, 25.0, 300.0), far_m=1000.0)
        dl = build_draw_list(ds, ri, cam, FrameBudget(primitive_budget=0))
        assert len(dl.neuron_ids) == 0
        assert len(dl.connection_ids) == 0
        assert dl.estimated_cost_ns == 0

    def test_budget_halved_is_subset(self):
        ds = synth_network(20_000, 100_000, seed=7, extent_mm=100.0)
        ri = render_index(ds)
        rng = np.random.default_rng(8)
        for _ in range(5):
            cam = CameraState(
                pose=Pose(rng.uniform(0, 100, 3), random_quat(rng)),
                far_m=300.0,
            )
            # budgets sized to actually bind on this scene
            full = FrameBudget(primitive_budget=8000, target_frame_ns=400_000)
            half = FrameBudget(primitive_budget=4000, target_frame_ns=200_000)
            dl_full = build_draw_list(ds, ri, cam, full)
            dl_half = build_draw_list(ds, ri, cam, half)
            assert set(dl_half.neuron_ids.tolist()) <= set(dl_full.neuron_ids.tolist())
            assert set(dl_half.connection_ids.tolist()) <= set(dl_full.connection_ids.tolist())

    def test_cost_soundness(self):
        ds = synth_network(30_000, 200_000, seed=9, extent_mm=100.0)
        ri = render_index(ds)
        rng = np.random.default_rng(10)
        for _ in range(10):
            cam = CameraState(pose=Pose(rng.uniform(0, 100, 3), random_quat(rng)), far_m=250.0)
            budget = FrameBudget(
                primitive_budget=int(rng.integers(0, 50_000)),
                target_frame_ns=int(rng.integers(0, 2_000_000)),
            )
            dl = build_draw_list(ds, ri, cam, budget)
            assert dl.estimated_cost_ns <= budget.target_frame_ns
            assert len(dl.neuron_ids) + len(dl.connection_ids) <= max(budget.primitive_budget, 0)

    def test_connection_endpoints_always_drawn(self):
        ds = synth_network(5000, 40_000, seed=11, extent_mm=100.0)
        ri = render_index(ds)
        cam = camera_at((50.0, 50.0, 160.0), far_m=220.0)
        dl = build_draw_list(ds, ri, cam, FrameBudget(primitive_budget=3000, target_frame_ns=300_000))
        drawn = set(dl.neuron_ids.tolist())
        for c in dl.connection_ids:
            assert int(ds.conn_pre[c]) in drawn
            assert int(ds.conn_post[c]) in drawn
            assert abs(float(ds.conn_weight[c])) >= dl.w_min or math.isinf(dl.w_min) is False

    def test_deterministic(self):
        ds = synth_network(8000, 30_000, seed=12, extent_mm=100.0)
        ri = render_index(ds)
        cam = camera_at((50.0, 50.0, 120.0), far_m=300.0)
        b = FrameBudget(primitive_budget=5000, target_frame_ns=500_000)
        a = build_draw_list(ds, ri, cam, b)
        c = build_draw_list(ds, ri, cam, b)
        assert np.array_equal(a.neuron_ids, c.neuron_ids)
        assert np.array_equal(a.tiers, c.tiers)
        assert np.array_equal(a.connection_ids, c.connection_ids)
        assert a.estimated_cost_ns == c.estimated_cost_ns

    def test_drawn_ids_exist(self):
        ds = synth_network(2000, 10_000, seed=13, extent_mm=100.0)
        ri = render_index(ds)
        cam = camera_at((50.0, 50.0, 150.0), far_m=400.0)
        dl = build_draw_list(ds, ri, cam, FrameBudget())
        assert np.all(dl.neuron_ids < ds.n_neurons)
        assert np.all(dl.connection_ids < ds.n_connections)


class TestCellRegime:
    """Force the coarse (cell-quantized) path at small scale."""

    def test_jit_and_numpy_paths_agree(self, monkeypatch):
        import holodeck.lod as lod_mod

        ds = synth_network(6000, 30_000, seed=21, extent_mm=100.0)
        ri = render_index(ds)
        monkeypatch.setattr(lod_mod, "_EXACT_CANDIDATE_LIMIT", 0)
        rng = np.random.default_rng(22)
        for _ in range(5):
            cam = CameraState(pose=Pose(rng.uniform(0, 100, 3), random_quat(rng)), far_m=300.0)
            budget = FrameBudget(primitive_budget=3000, target_frame_ns=300_000)
            monkeypatch.setattr(lod_mod, "_FORCE_NUMPY", False)
            a = build_draw_list(ds, ri, cam, budget)
            monkeypatch.setattr(lod_mod, "_FORCE_NUMPY", True)
            b = build_draw_list(ds, ri, cam, budget)
            assert np.array_equal(a.neuron_ids, b.neuron_ids)
            assert np.array_equal(a.tiers, b.tiers)
            assert np.array_equal(a.connection_ids, b.connection_ids)
            assert a.estimated_cost_ns == b.estimated_cost_ns

    def test_cell_regime_invariants(self, monkeypatch):
        import holodeck.lod as lod_mod

        monkeypatch.setattr(lod_mod, "_EXACT_CANDIDATE_LIMIT", 0)
        ds = synth_network(8000, 40_000, seed=23, extent_mm=100.0)
        ri = render_index(ds)
        rng = np.random.default_rng(24)
        for _ in range(5):
            cam = CameraState(pose=Pose(rng.uniform(0, 100, 3), random_quat(rng)), far_m=300.0)
            full = FrameBudget(primitive_budget=4000, target_frame_ns=400_000)
            half = FrameBudget(primitive_budget=2000, target_frame_ns=200_000)
            dl_full = build_draw_list(ds, ri, cam, full)
            dl_half = build_draw_list(ds, ri, cam, half)
            assert dl_full.estimated_cost_ns <= full.target_frame_ns
            assert dl_half.estimated_cost_ns <= half.target_frame_ns
            assert set(dl_half.neuron_ids.tolist()) <= set(dl_full.neuron_ids.tolist())
            assert set(dl_half.connection_ids.tolist()) <= set(dl_full.connection_ids.tolist())
            drawn = set(dl_full.neuron_ids.tolist())
            for c in dl_full.connection_ids[:200]:
                assert int(ds.conn_pre[c]) in drawn and int(ds.conn_post[c]) in drawn


class TestController:
    def test_steady_at_target_unchanged(self):
        b = FrameBudget()
        for _ in range(100):
            nb = controller_update(b, b.target_frame_ns)
            assert nb.primitive_budget == b.primitive_budget
            b = nb

    def test_sustained_overload_decreases_to_floor(self):
        b = FrameBudget(primitive_budget=100_000, floor_primitives=1000)
        budgets = [b.primitive_budget]
        for _ in range(200):
            b = controller_update(b, 2 * b.target_frame_ns)
            budgets.append(b.primitive_budget)
        # strictly decreasing at every 3rd frame until the floor
        changes = [i for i in range(1, len(budgets)) if budgets[i] != budgets[i - 1]]
        assert changes[0] == 3
        assert all((b2 - b1) == 3 for b1, b2 in zip(changes, changes[1:]) if budgets[b2] > 1000)
        assert budgets[-1] == 1000

    def test_sustained_underload_rises_to_ceiling(self):
        b = FrameBudget(primitive_budget=10_000, ceiling_primitives=20_000)
        seen = [b.primitive_budget]
        for _ in range(40 * 30):
            b = controller_update(b, int(0.5 * b.target_frame_ns))
            seen.append(b.primitive_budget)
        assert seen[30] > seen[0]  # first rise after the 30-frame window
        assert max(seen) <= 20_000
        assert seen[-1] == 20_000

    def test_hysteresis_no_fast_oscillation(self):
        b = FrameBudget(primitive_budget=10_000)
        # alternating over/under never completes either window
        for i in range(100):
            measured = 2 * b.target_frame_ns if i % 2 == 0 else int(0.5 * b.target_frame_ns)
            b = controller_update(b, measured)
        assert b.primitive_budget == 10_000

    def _closed_loop(self, est_scale, true_sphere=40.0, true_line=25.0, frames=600):
        """Planner fills the frame from estimated costs; plant answers with
        the true linear cost model."""
        b = FrameBudget(
            cost_sphere_ns=40.0 * est_scale,
            cost_point_ns=10.0 * est_scale,
            cost_line_ns=25.0 * est_scale,
            primitive_budget=2_000_000,
        )
        target = b.target_frame_ns
        history = []
        for _ in range(frames):
            n_spheres = int(
                min(b.neuron_fraction * b.primitive_budget,
                    (b.neuron_fraction * target) // b.cost_sphere_ns)
            )
            n_lines = int(
                min((1 - b.neuron_fraction) * b.primitive_budget,
                    ((1 - b.neuron_fraction) * target) // b.cost_line_ns)
            )
            measured = n_spheres * true_sphere + n_lines * true_line
            history.append(measured)
            b = controller_update(b, measured, drawn_spheres=n_spheres,
                                  drawn_points=0, drawn_lines=n_lines)
        return history, b

    def test_convergence_from_overload(self):
        history, _ = self._closed_loop(est_scale=0.5)  # plant twice as slow as estimated
        target = FrameBudget().target_frame_ns
        assert history[0] > 1.9 * target
        tail = history[-50:]
        assert all(abs(m - target) / target <= 0.15 for m in tail)
        first_ok = next(i for i, m in enumerate(history) if abs(m - target) / target <= 0.15)
        assert first_ok <= 600

    def test_convergence_from_underload(self):
        history, _ = self._closed_loop(est_scale=2.0)
        target = FrameBudget().target_frame_ns
        assert history[0] < 0.6 * target
        tail = history[-50:]
        assert all(abs(m - target) / target <= 0.15 for m in tail)
        first_ok = next(i for i, m in enumerate(history) if abs(m - target) / target <= 0.15)
        assert first_ok <= 600

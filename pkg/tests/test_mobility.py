import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dtnrl.config import MobilitySpec
from dtnrl.mobility import (GroupMobility, ManhattanGrid, RandomWaypoint, TraceError, Trajectory,
                            generate_trajectory, load_trace, node_groups, waypoint_step)
from dtnrl.sim import adjacency_matrix


def test_waypoint_kinematics():
    new, arrived = waypoint_step(np.array([[0.0, 0.0]]), np.array([[30.0, 40.0]]), 5.0)
    np.testing.assert_allclose(new, [[3.0, 4.0]])
    assert not arrived[0]


def test_waypoint_arrival_snaps_to_destination():
    new, arrived = waypoint_step(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]]), 5.0)
    np.testing.assert_allclose(new, [[3.0, 4.0]])
    assert arrived[0]


@settings(max_examples=15, deadline=None)
@given(model=st.sampled_from(["rwp", "rpgm", "grid"]), seed=st.integers(0, 2**16),
       fast=st.integers(0, 10))
def test_positions_in_bounds_and_speed_capped(model, seed, fast):
    n = 10
    mix = (("slow", n - fast), ("fast", fast))
    spec = MobilitySpec(model=model, speed_mix=mix, group_count=2)
    traj = generate_trajectory(spec, n, 500.0, 500.0, 200, np.random.default_rng(seed), warmup=50)
    pos = traj.positions
    assert pos.min() >= -1e-9 and pos.max() <= 500 + 1e-9
    step = np.hypot(*np.diff(pos, axis=0).transpose(2, 0, 1))
    vmax = np.array([5.0] * (n - fast) + [17.0] * fast)
    assert np.all(step <= vmax + 1e-6)


def test_generation_is_deterministic():
    spec = MobilitySpec(model="rwp", speed_mix=(("slow", 5),))
    a = generate_trajectory(spec, 5, 500, 500, 100, np.random.default_rng(1), warmup=10)
    b = generate_trajectory(spec, 5, 500, 500, 100, np.random.default_rng(1), warmup=10)
    np.testing.assert_array_equal(a.positions, b.positions)


def test_rwp_mean_leg_speed_slow_class():
    rng = np.random.default_rng(0)
    m = RandomWaypoint(25, 500, 500, 1.0, 5.0, 0.0, rng)
    m.record_legs = True
    for _ in range(100_000 // 25):
        m.step()
    assert 2.9 <= np.mean(m.leg_speeds) <= 3.1


def test_rpgm_zero_radius_tracks_reference():
    rng = np.random.default_rng(2)
    g = GroupMobility(np.zeros(4, int), 500, 500, 0.0, np.full(4, 1.0), np.full(4, 5.0), 0.0, rng)
    for _ in range(50):
        pos = g.step()
        np.testing.assert_allclose(pos, np.repeat(g.ref.pos, 4, axis=0))


def test_two_groups_split_evenly():
    spec = MobilitySpec(model="rpgm", group_count=2, speed_mix=(("slow", 24),))
    assert np.bincount(node_groups(spec, 24)).tolist() == [12, 12]


def test_rpgm_one_group_degree_near_table_value():
    spec = MobilitySpec(model="rpgm", group_count=1)
    traj = generate_trajectory(spec, 25, 500, 500, 3000, np.random.default_rng(5), warmup=500)
    deg = np.mean([adjacency_matrix(p, 50.0).sum(axis=1).mean() for p in traj.positions[::5]])
    assert abs(deg - 13.6) <= 3.0


def test_degree_ordering_one_group_two_groups_rwp():
    degs = []
    for spec in (MobilitySpec(model="rpgm", group_count=1), MobilitySpec(model="rpgm", group_count=2),
                 MobilitySpec(model="rwp")):
        traj = generate_trajectory(spec, 25, 500, 500, 2000, np.random.default_rng(8), warmup=500)
        degs.append(np.mean([adjacency_matrix(p, 50.0).sum(axis=1).mean() for p in traj.positions[::5]]))
    assert degs[0] > degs[1] > degs[2]


def test_grid_stays_on_lines_and_turns_only_at_intersections():
    rng = np.random.default_rng(4)
    g = ManhattanGrid(8, 1000, 1000, 50.0, np.full(8, 1.0), np.full(8, 5.0), rng)
    prev_h = g.heading.copy()
    prev_p = g.pos.copy()
    for _ in range(2000):
        pos = g.step().copy()
        on_x = np.isclose(np.mod(pos[:, 0] + 1e-7, 50.0), 0.0, atol=1e-6)
        on_y = np.isclose(np.mod(pos[:, 1] + 1e-7, 50.0), 0.0, atol=1e-6)
        assert np.all(on_x | on_y)
        for i in np.flatnonzero(g.heading != prev_h):
            # the node passed through (or sits on) an intersection during this step
            lo, hi = np.minimum(prev_p[i], pos[i]), np.maximum(prev_p[i], pos[i])
            grid_x = np.floor(hi[0] / 50) * 50 >= lo[0] - 1e-6
            grid_y = np.floor(hi[1] / 50) * 50 >= lo[1] - 1e-6
            assert grid_x and grid_y
        prev_h, prev_p = g.heading.copy(), pos
    assert pos.min() >= -1e-9 and pos.max() <= 1000 + 1e-9


def test_grid_mid_edge_keeps_heading():
    rng = np.random.default_rng(0)
    g = ManhattanGrid(1, 1000, 1000, 50.0, np.array([1.0]), np.array([1.0]), rng)
    g.pos[0] = (100.0, 210.0)
    g.heading[0] = 1  # north along x=100
    h = g.heading[0]
    g.step()
    assert g.heading[0] == h
    np.testing.assert_allclose(g.pos[0], (100.0, 211.0))


def _write_trace(path, n=3, steps=10, skip=None):
    lines = ["t,node_id,x,y"]
    for t in range(steps):
        for i in range(n):
            if skip == (i, t):
                continue
            lines.append(f"{t},{i},{i * 10.0},{t * 1.5}")
    path.write_text("\n".join(lines) + "\n")


def test_trace_round_trip(tmp_path):
    f = tmp_path / "trace.csv"
    _write_trace(f)
    traj = load_trace(f)
    assert traj.steps == 10 and traj.node_ids == (0, 1, 2)
    assert len(list(traj.samples())) == 30
    out = tmp_path / "again.csv"
    traj.to_csv(out)
    np.testing.assert_array_equal(load_trace(out).positions, traj.positions)


def test_trace_gap_names_node_and_time(tmp_path):
    f = tmp_path / "gap.csv"
    _write_trace(f, skip=(1, 5))
    with pytest.raises(TraceError, match="node 1 has no sample at t=5"):
        load_trace(f)
    assert load_trace(f, persistent_only=True).node_ids == (0, 2)


def test_trace_malformed_line_number(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("t,node_id,x,y\n0,0,1.0,2.0\n0,1,abc,2.0\n")
    with pytest.raises(TraceError, match=":3:"):
        load_trace(f)


def test_trace_window_rebases_time(tmp_path):
    f = tmp_path / "trace.csv"
    _write_trace(f, steps=20)
    traj = load_trace(f, window=(5, 15))
    assert traj.steps == 10
    assert traj.position(0, 0) == (0.0, 7.5)


def test_trace_mobility_through_spec(tmp_path):
    f = tmp_path / "trace.csv"
    _write_trace(f)
    spec = MobilitySpec(model="trace", trace_path=str(f), speed_mix=())
    traj = generate_trajectory(spec, 3, 500, 500, 8, np.random.default_rng(0))
    assert isinstance(traj, Trajectory) and traj.steps == 8

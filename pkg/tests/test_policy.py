import numpy as np
import pytest

from dtnrl.cltrain import new_network
from dtnrl.config import SimConfig
from dtnrl.mobility import static_trajectory
from dtnrl.policy import (DELIVERY, DROP, STAY, TRANSMIT, DRLPolicy, Experience, decide,
                          drop_reward, emit_experience, reward_for, select_actions)
from dtnrl.qnet import QNetwork
from dtnrl.sim import World, run, step

from conftest import line_cfg, line_points


def test_reward_constants():
    assert [reward_for(k) for k in (STAY, TRANSMIT, DELIVERY, DROP)] == [-1.0, -2.0, 0.0, -200.0]
    assert drop_reward(0.9) == pytest.approx(-20.0)
    with pytest.raises(ValueError):
        reward_for("teleport")


class FixedQ:
    """Stand-in network returning a preset Q per candidate row (keyed on column 0)."""

    def __init__(self, values):
        self.values = values

    def predict(self, rows):
        return np.array([self.values[int(r[0])] for r in rows])


def test_single_candidate_stays():
    d = decide(FixedQ({0: 1.0}), np.zeros((1, 3)), np.array([4]), 0.0, np.random.default_rng(0))
    assert d.chosen == 4


def test_ties_go_to_lowest_id():
    rows = np.array([[0.0], [1.0], [2.0]])
    d = decide(FixedQ({0: 0.5, 1: 2.0, 2: 2.0}), rows, np.array([1, 3, 8]), 0.0, np.random.default_rng(0))
    assert d.chosen == 3


def test_vectorized_selection_ties_and_singletons():
    rows = np.array([[0.0], [1.0], [1.0], [0.0], [2.0]])
    net = FixedQ({0: 0.0, 1: 5.0, 2: 5.0})
    sizes, starts = np.array([1, 2, 2]), np.array([0, 1, 3])
    idx, explore, q = select_actions(net, rows, sizes, starts, 0.0, np.random.default_rng(0))
    assert idx.tolist() == [0, 0, 1] and not explore.any()
    assert np.isnan(q[0])


def test_epsilon_one_is_uniform():
    rng = np.random.default_rng(42)
    k, trials = 4, 100_000
    rows = np.zeros((k, 1))
    counts = np.zeros(k)
    sizes, starts = np.full(trials, k), np.arange(trials) * k
    idx, explore, _ = select_actions(FixedQ({0: 0.0}), np.tile(rows, (trials, 1)), sizes, starts, 1.0, rng)
    assert explore.all()
    counts = np.bincount(idx, minlength=k)
    sigma = np.sqrt(trials * (1 / k) * (1 - 1 / k))
    assert np.all(np.abs(counts - trials / k) < 3 * sigma)


def test_experience_terminal_consistency():
    with pytest.raises(ValueError):
        Experience(np.zeros(49), np.zeros(14), 0.0, np.zeros((2, 63)), True)
    e = emit_experience(np.arange(63.0), -1.0, np.ones((3, 63)))
    assert not e.terminal and e.state_feats.shape == (49,) and e.action_feats[0] == 49.0


def _line_world(n=3, steps=40, **kw):
    cfg = line_cfg(n, duration=steps, **kw)
    return World(cfg, static_trajectory(line_points(n), steps))


def test_drl_policy_greedy_is_deterministic():
    outs = []
    for _ in range(2):
        w = _line_world(4, steps=30)
        for k in range(3):
            w.add_packet(0, 3)
        pol = DRLPolicy(new_network(seed=1))
        run(w, pol)
        outs.append([(p.holder, p.status, p.forwards_count) for p in w.packets])
    assert outs[0] == outs[1]


def test_every_packet_yields_one_terminal_experience():
    cfg = SimConfig(tx_range=80.0, duration=600, cooldown=300, rng_seed=2, flow_arrival_rate=0.02,
                    initial_ttl=60, buffer_cap=3)
    w = World(cfg)
    sink = []
    pol = DRLPolicy(new_network(seed=0), epsilon=0.5, training=True, sink=sink)
    run(w, pol)
    assert pol.discard_pending() == 0
    # a packet rejected by a full source buffer never made a decision
    decided = [p for p in w.packets if not (p.status == "dropped-buffer" and p.forwards_count == 0)]
    assert all(p.status != "in-flight" for p in decided)
    assert sum(e.terminal for e in sink) == len(decided)
    assert {e.reward for e in sink} <= {-1.0, -2.0, 0.0, -200.0}


def test_stay_then_decide_links_same_node():
    w = _line_world(2, steps=5)
    w.adj[:] = False
    sink = []
    # isolate the pair by moving node 1 far away
    w.trajectory.positions[:, 1] = (400.0, 400.0)
    w.add_packet(0, 1)
    pol = DRLPolicy(new_network(seed=0), training=True, sink=sink)
    run(w, pol, steps=3)
    assert len(sink) == 2
    assert all(e.reward == -1.0 and not e.terminal for e in sink)
    assert all(len(e.next_candidates) == 1 for e in sink)


def test_ttl_drop_emits_terminal_penalty():
    w = _line_world(2, steps=5)
    w.trajectory.positions[:, 1] = (400.0, 400.0)
    w.add_packet(0, 1, ttl=1)
    sink = []
    step(w, DRLPolicy(new_network(seed=0), training=True, sink=sink))
    assert w.packets[0].status == "dropped-ttl"
    assert len(sink) == 1 and sink[0].terminal and sink[0].reward == -200.0


def test_delivery_emits_terminal_zero():
    w = _line_world(2, steps=3)
    w.add_packet(0, 1)
    sink = []
    net = QNetwork([63, 1])
    net.weights[0][...] = 0
    net.weights[0][-1] = 1.0  # prefer transmitting
    step(w, DRLPolicy(net, training=True, sink=sink))
    assert w.packets[0].status == "delivered"
    assert sink[0].terminal and sink[0].reward == 0.0

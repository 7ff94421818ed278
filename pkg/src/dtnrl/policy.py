"""Packet-agent forwarding policy: action selection, rewards and experiences."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import STATE_DIM, norm_bounded

R_STAY = -1.0
R_TRANSMIT = -2.0
R_DELIVERY = 0.0

STAY, TRANSMIT, DELIVERY, DROP = "stay", "transmit", "delivery", "drop"


def drop_reward(gamma=0.99):
    """Transmit penalty paid forever: ``r_transmit / (1 - gamma)``.

    Rounded to 9 decimals so that gamma=0.99 gives exactly -200.
    """
    return round(R_TRANSMIT / (1.0 - gamma), 9)


def reward_for(kind, gamma=0.99):
    if kind == STAY:
        return R_STAY
    if kind == TRANSMIT:
        return R_TRANSMIT
    if kind == DELIVERY:
        return R_DELIVERY
    if kind == DROP:
        return drop_reward(gamma)
    raise ValueError(f"unknown transition kind {kind!r}")


@dataclass
class Experience:
    state_feats: np.ndarray
    action_feats: np.ndarray
    reward: float
    next_candidates: np.ndarray  # (k, 63); empty iff terminal
    terminal: bool
    scenario_id: str = ""
    t: int = 0

    def __post_init__(self):
        if self.terminal != (len(self.next_candidates) == 0):
            raise ValueError("terminal experiences carry no candidates and vice versa")


@dataclass
class Decision:
    packet_id: int
    chosen: int
    candidates: np.ndarray
    q_values: np.ndarray
    explore: bool
    n_fast: int = 0
    n_slow: int = 0


def decide(net, rows, candidates, epsilon, rng, packet_id=-1):
    """ε-greedy choice over candidate rows (ascending id, so argmax ties go to the lowest id)."""
    q = net.predict(rows) if net is not None else np.zeros(len(candidates))
    return _select(q, candidates, epsilon, rng, packet_id)


def _select(q, candidates, epsilon, rng, packet_id):
    explore = bool(epsilon > 0 and rng.random() < epsilon)
    if explore:
        idx = int(rng.integers(len(candidates)))
    else:
        idx = int(np.argmax(q))
    return Decision(packet_id, int(candidates[idx]), candidates, q, explore)


def select_actions(net, rows, sizes, starts, epsilon, rng):
    """Vectorized ε-greedy over concatenated candidate blocks.

    Returns per-block chosen offsets, explore flags and the Q-values (NaN for
    single-candidate blocks, which are never evaluated).
    """
    n = len(sizes)
    q = np.full(len(rows), np.nan)
    multi = sizes > 1
    if multi.any():
        mask = np.repeat(multi, sizes)
        q[mask] = net.predict(rows[mask])
    explore = np.zeros(n, bool)
    if epsilon > 0:
        explore = rng.random(n) < epsilon
    idx = np.zeros(n, int)
    if multi.any():
        seg = np.where(np.isnan(q), -np.inf, q)
        segmax = np.maximum.reduceat(seg, starts)
        pos = np.arange(len(rows))
        first = np.where(seg == np.repeat(segmax, sizes), pos, len(rows))
        idx = np.minimum.reduceat(first, starts) - starts
        idx[~multi] = 0
    ex = np.flatnonzero(explore)
    if ex.size:
        idx[ex] = rng.integers(0, sizes[ex])
    return idx, explore, q


def emit_experience(prev, reward, current_rows=None, scenario_id="", t=0):
    """Complete the experience for ``prev = (chosen_row)`` given the next decision's rows.

    ``current_rows=None`` marks a terminal transition.
    """
    terminal = current_rows is None
    nxt = np.empty((0, len(prev))) if terminal else current_rows
    return Experience(prev[:STATE_DIM], prev[STATE_DIM:], float(reward), nxt, terminal, scenario_id, t)


class ForwardingPolicy:
    """Engine-facing interface. ``decide`` returns one node id per packet."""

    name = "policy"
    training = False

    def decide(self, world, packets):
        raise NotImplementedError

    def observe(self, world, outcomes):
        """Called after the step's transitions with ``[(packet, kind), ...]``."""

    def explore_flags(self):
        return None


class DRLPolicy(ForwardingPolicy):
    """Shared Q-network evaluated independently by every packet.

    In training mode each decision becomes an :class:`Experience` once the
    packet's next decision epoch (or terminal event) is known; experiences go
    to ``sink`` (anything with ``append``).
    """

    name = "drl"

    def __init__(self, net, epsilon=0.0, rng=None, training=False, sink=None,
                 scenario_id="", gamma=None):
        self.net = net
        self.epsilon = epsilon
        self.rng = rng
        self.training = training
        self.sink = sink if sink is not None else []
        self.scenario_id = scenario_id
        self.gamma = net.hyper.gamma if gamma is None else gamma
        self._pending = {}  # packet_id -> chosen row awaiting outcome
        self._completed = {}  # packet_id -> (row, reward) awaiting next decision
        self._explore = []
        self.last_decisions = []

    def decide(self, world, packets):
        if not packets:
            self._explore = []
            self.last_decisions = []
            return []
        rng = self.rng if self.rng is not None else world.policy_rng
        if not self.training and self.epsilon == 0:
            # isolated holders can only stay; skip building their rows
            deg = world.adj.sum(axis=1)
            lonely = [deg[p.holder] == 0 for p in packets]
            if any(lonely):
                busy = [p for p, alone in zip(packets, lonely) if not alone]
                sub = iter(self.decide(world, busy) if busy else [])
                sub_dec = iter(self.last_decisions)
                choices, decisions = [], []
                for p, alone in zip(packets, lonely):
                    if alone:
                        choices.append(p.holder)
                        decisions.append(Decision(p.packet_id, p.holder, np.array([p.holder]),
                                                  np.array([np.nan]), False))
                    else:
                        choices.append(next(sub))
                        decisions.append(next(sub_dec))
                self._explore = [False] * len(packets)
                self.last_decisions = decisions
                return choices
        ctx = world.feature_context()
        templates, cand_list = [], []
        ctx.prepare_blocks([(p.holder, p.dst) for p in packets])
        for p in packets:
            rows, cands = ctx._block(p.holder, p.dst)
            templates.append(rows)
            cand_list.append(cands)
        sizes = np.fromiter((len(c) for c in cand_list), int, len(cand_list))
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        allrows = np.vstack(templates)
        ttl = np.fromiter((p.ttl_remaining for p in packets), float, len(packets))
        allrows[:, 0] = np.repeat(norm_bounded(ttl, ctx.T), sizes)
        allrows[:, -2] = [1.0 if u in p.visited else 0.0
                          for p, cands in zip(packets, cand_list) for u in cands.tolist()]
        idx, explore, q = select_actions(self.net, allrows, sizes, starts, self.epsilon, rng)
        choices = []
        decisions = []
        for i, p in enumerate(packets):
            cands = cand_list[i]
            chosen = int(cands[idx[i]])
            choices.append(chosen)
            decisions.append(Decision(p.packet_id, chosen, cands,
                                      q[starts[i]:starts[i] + sizes[i]], bool(explore[i])))
            if self.training:
                block = allrows[starts[i]:starts[i] + sizes[i]]
                prev = self._completed.pop(p.packet_id, None)
                if prev is not None:
                    self.sink.append(emit_experience(prev[0], prev[1], block, self.scenario_id, world.t))
                self._pending[p.packet_id] = block[idx[i]]
        self._explore = explore.tolist()
        self.last_decisions = decisions
        return choices

    def explore_flags(self):
        return self._explore

    def observe(self, world, outcomes):
        if not self.training:
            return
        for p, kind in outcomes:
            row = self._pending.pop(p.packet_id)
            r = reward_for(kind, self.gamma)
            if kind in (DELIVERY, DROP):
                self.sink.append(emit_experience(row, r, None, self.scenario_id, world.t))
            else:
                self._completed[p.packet_id] = (row, r)

    def discard_pending(self):
        """Forget transitions that never reached a next decision (end of run)."""
        n = len(self._completed) + len(self._pending)
        self._completed.clear()
        self._pending.clear()
        return n

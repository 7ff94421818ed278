"""Heuristic forwarding strategies and the epidemic oracle."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .policy import ForwardingPolicy
from .sim import (DELIVERED, IN_FLIGHT, PacketRecord, TrafficGenerator, World,
                  adjacency_matrix, summarize)


def utility_decide(timers_v_d, nbrs, nbr_timers, v, theta, dst=None):
    """Forward to the neighbor with the smallest timer if it beats ours by more than ``theta``.

    A neighboring destination always receives the packet.
    """
    if len(nbrs) == 0:
        return v
    if dst is not None and dst in nbrs:
        return int(dst)
    k = int(np.argmin(nbr_timers))
    if nbr_timers[k] < timers_v_d - theta:
        return int(nbrs[k])
    return v


def random_decide(v, nbrs, rng):
    cands = np.sort(np.append(nbrs, v))
    return int(cands[rng.integers(cands.size)])


class UtilityPolicy(ForwardingPolicy):
    """Single-copy forwarding on transitive encounter timers."""

    name = "utility"

    def __init__(self, theta=10.0):
        self.theta = theta

    def decide(self, world, packets):
        timer = world.tables.timer
        out = []
        for p in packets:
            v, d = p.holder, p.dst
            nb = world.neighbors(v)
            out.append(utility_decide(timer[v, d], nb, timer[nb, d], v, self.theta, d))
        return out


class RandomPolicy(ForwardingPolicy):
    """Uniform over ``Nbr(v) ∪ {v}``."""

    name = "random"

    def __init__(self, rng=None):
        self.rng = rng

    def decide(self, world, packets):
        rng = self.rng if self.rng is not None else world.policy_rng
        return [random_decide(p.holder, world.neighbors(p.holder), rng) for p in packets]


@dataclass
class _SeekState:
    focused: bool = False
    last_progress: int = 0


class SeekFocusPolicy(ForwardingPolicy):
    """Two-phase seek-and-focus.

    Seek: while neither the holder nor any neighbor has information about the
    destination (timer at or above ``useful_timer``), hand the packet to a
    uniformly random neighbor with probability ``p_seek``. Focus: greedy
    utility descent with margin ``theta``; if no improving neighbor shows up
    for ``timeout`` steps the packet takes one random seek hop.
    """

    name = "seek-focus"

    def __init__(self, theta=10.0, p_seek=1.0, timeout=20, useful_timer=200.0, rng=None):
        self.theta = theta
        self.p_seek = p_seek
        self.timeout = timeout
        self.useful_timer = useful_timer
        self.rng = rng
        self.state = {}
        self.phases = {}

    def decide(self, world, packets):
        rng = self.rng if self.rng is not None else world.policy_rng
        timer = world.tables.timer
        t = world.t
        out = []
        for p in packets:
            v, d = p.holder, p.dst
            st = self.state.setdefault(p.packet_id, _SeekState(last_progress=t))
            nb = world.neighbors(v)
            own = timer[v, d]
            nbt = timer[nb, d]
            useful = own < self.useful_timer or (nb.size and nbt.min() < self.useful_timer)
            choice = v
            if d in nb:
                choice = d
                phase = "focus"
            elif not useful:
                st.focused = False
                if nb.size and rng.random() < self.p_seek:
                    choice = int(nb[rng.integers(nb.size)])
                phase = "seek"
            else:
                if not st.focused:
                    st.focused = True
                    st.last_progress = t
                greedy = utility_decide(own, nb, nbt, v, self.theta, d)
                if greedy != v:
                    choice = greedy
                    st.last_progress = t
                    phase = "focus"
                elif t - st.last_progress >= self.timeout and nb.size:
                    choice = int(nb[rng.integers(nb.size)])
                    st.last_progress = t
                    phase = "seek"
                else:
                    phase = "focus"
            self.phases[p.packet_id] = phase
            out.append(choice)
        return out


# -- epidemic oracle -------------------------------------------------------------

@dataclass
class OracleCopyRecord:
    packet_id: int
    parent: dict = field(default_factory=dict)  # node -> (parent node, forward time)
    first_delivery_t: int | None = None
    path_length: int | None = None

    def path(self, dst):
        if self.first_delivery_t is None:
            return None
        nodes = [dst]
        while nodes[-1] in self.parent and self.parent[nodes[-1]][0] is not None:
            nodes.append(self.parent[nodes[-1]][0])
        return nodes[::-1]


def oracle_run(cfg, trajectory=None, world=None):
    """Flood every packet to every contact, one hop per timestep, ignoring buffers.

    Traffic and mobility are drawn exactly as in :class:`World`, so packet ids
    line up with any single-copy run on the same config and seed. Returns
    ``(MetricsReport, {packet_id: OracleCopyRecord})``.
    """
    if world is None:
        world = World(cfg, trajectory)
    traj = world.trajectory
    traffic = TrafficGenerator(cfg, world.traffic_rng)
    n = cfg.node_count
    infected = np.zeros((0, n), bool)
    hops = np.zeros((0, n))
    meta = []  # (packet_id, src, dst, created)
    active = np.zeros(0, bool)
    delivered_at, forwards = [], []
    copies = []
    for t in range(cfg.duration):
        pos = traj.positions[t]
        adj = adjacency_matrix(pos, cfg.tx_range)
        _, births = traffic.generate(t)
        new = [(f.src, f.dst) for f, c in births for _ in range(c)]
        if new:
            k = len(new)
            inf_new = np.zeros((k, n), bool)
            hop_new = np.full((k, n), np.inf)
            for i, (s, d) in enumerate(new):
                pid = len(meta)
                meta.append((pid, s, d, t))
                inf_new[i, s] = True
                hop_new[i, s] = 0
                rec = OracleCopyRecord(pid)
                rec.parent[s] = (None, t)
                copies.append(rec)
                delivered_at.append(None)
                forwards.append(None)
            infected = np.vstack([infected, inf_new])
            hops = np.vstack([hops, hop_new])
            active = np.append(active, np.ones(k, bool))
        idx = np.flatnonzero(active)
        if idx.size == 0:
            continue
        inf = infected[idx]
        # candidate hop count via each infected neighbor; lowest parent id wins ties
        h = np.where(inf, hops[idx], np.inf)
        via = h[:, :, None] + np.where(adj[None], 1.0, np.inf)  # (p, u, w)
        best = via.min(axis=1)
        parent = via.argmin(axis=1)
        newly = np.isfinite(best) & ~inf
        for j, i in enumerate(idx):
            ws = np.flatnonzero(newly[j])
            if ws.size == 0:
                continue
            rec = copies[i]
            for w in ws:
                rec.parent[int(w)] = (int(parent[j, w]), t)
            infected[i, ws] = True
            hops[i, ws] = best[j, ws]
            d = meta[i][2]
            if newly[j, d]:
                delivered_at[i] = t + 1
                forwards[i] = int(best[j, d])
                rec.first_delivery_t = t + 1
                rec.path_length = forwards[i]
                active[i] = False
    records = []
    for (pid, s, d, c), da, fw in zip(meta, delivered_at, forwards):
        status = DELIVERED if da is not None else IN_FLIGHT
        records.append(PacketRecord(pid, s, d, c, status, da, fw or 0))
    report = summarize(records, cfg.scenario_id, cfg.rng_seed, "oracle")
    return report, {r.packet_id: r for r in copies}

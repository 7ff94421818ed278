"""Discrete-time packet-level simulation engine.

Each call to :func:`step` runs one 1 s timestep in a fixed phase order:
move, rebuild neighbors, exchange tables, generate traffic, decide, apply
transitions and TTL/buffer drops, notify the policy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import SimConfig
from .features import DEFAULT_SCHEMA, FeatureContext, KnowledgeTables
from .mobility import Trajectory, generate_trajectory, node_groups
from .policy import DELIVERY, DROP, STAY, TRANSMIT

IN_FLIGHT = "in-flight"
DELIVERED = "delivered"
DROPPED_TTL = "dropped-ttl"
DROPPED_BUFFER = "dropped-buffer"


class InFlightError(RuntimeError):
    pass


@dataclass(slots=True, eq=False)
class Packet:
    packet_id: int
    flow_id: int
    src: int
    dst: int
    created_at: int
    ttl_remaining: int
    holder: int
    visited: set
    status: str = IN_FLIGHT
    forwards_count: int = 0
    delivered_at: int | None = None
    path: list = field(default_factory=list)


@dataclass(slots=True)
class Flow:
    flow_id: int
    src: int
    dst: int
    start: int
    end: float


def flow_rate(n_nodes):
    return 0.001 * n_nodes / 25


class TrafficGenerator:
    """Poisson flow births, exponential flow lifetimes, Poisson packets per flow.

    Draws come only from its own RNG, so the packet sequence is identical for
    every policy run on the same seed.
    """

    def __init__(self, cfg: SimConfig, rng):
        self.cfg = cfg
        self.rng = rng
        self.active = []
        self.flows = []

    def generate(self, t):
        """New flows and ``(flow, count)`` packet births for timestep ``t``."""
        cfg = self.cfg
        if t >= cfg.traffic_end:
            return [], []
        self.active = [f for f in self.active if f.end > t]
        new = []
        for _ in range(int(self.rng.poisson(cfg.flow_arrival_rate))):
            src, dst = self.rng.choice(cfg.node_count, size=2, replace=False)
            dur = self.rng.exponential(cfg.flow_duration_mean)
            f = Flow(len(self.flows), int(src), int(dst), t, t + max(dur, 1e-9))
            self.flows.append(f)
            self.active.append(f)
            new.append(f)
        births = []
        if self.active:
            counts = self.rng.poisson(cfg.packet_rate, size=len(self.active))
            births = [(f, int(c)) for f, c in zip(self.active, counts) if c]
        return new, births


def generate_traffic(rng, cfg, t, generator=None):
    """Stateless-looking wrapper: returns ``(new_flows, births)`` for timestep ``t``."""
    gen = generator if generator is not None else TrafficGenerator(cfg, rng)
    return gen.generate(t)


def adjacency_matrix(pos, r):
    d = pos[:, None, :] - pos[None, :, :]
    a = (d[..., 0] ** 2 + d[..., 1] ** 2) <= r * r
    np.fill_diagonal(a, False)
    return a


@dataclass
class PacketRecord:
    packet_id: int
    src: int
    dst: int
    created: int
    status: str
    delivered_at: int | None
    forwards: int

    @property
    def delay(self):
        return None if self.delivered_at is None else self.delivered_at - self.created


@dataclass
class MetricsReport:
    scenario: str
    seed: int
    policy: str
    generated: int
    delivered: int
    delivery_rate: float
    mean_delay: float
    mean_forwards: float
    dropped_ttl: int
    dropped_buffer: int
    in_flight: int
    records: list

    def row(self):
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "policy": self.policy,
            "delivery_rate": self.delivery_rate,
            "mean_delay_s": self.mean_delay,
            "mean_forwards": self.mean_forwards,
        }

    def delays(self):
        return {r.packet_id: r.delay for r in self.records if r.delay is not None}


class World:
    """Mutable simulation state owned by a single writer."""

    def __init__(self, cfg: SimConfig, trajectory: Trajectory | None = None,
                 schema=DEFAULT_SCHEMA, log_decisions=False):
        self.cfg = cfg
        seeds = np.random.SeedSequence(cfg.rng_seed).spawn(3)
        self.mobility_rng = np.random.default_rng(seeds[0])
        self.traffic_rng = np.random.default_rng(seeds[1])
        self.policy_rng = np.random.default_rng(seeds[2])
        n = cfg.node_count
        if trajectory is None:
            trajectory = make_trajectory(cfg)
        if trajectory.n_nodes != n:
            raise ValueError(f"trajectory has {trajectory.n_nodes} nodes, config says {n}")
        if trajectory.steps < cfg.duration:
            raise ValueError(f"trajectory covers {trajectory.steps} steps < duration {cfg.duration}")
        self.trajectory = trajectory
        self.schema = schema
        self.tables = KnowledgeTables(n, schema, cfg.mobility.mean_speed() or 3.0)
        classes = cfg.mobility.node_classes()  # trace nodes take speed_mix labels in id order
        self.fast = np.array([c == "fast" for c in classes[:n]] + [False] * (n - len(classes)))
        self.groups = node_groups(cfg.mobility, n)
        self.traffic = TrafficGenerator(cfg, self.traffic_rng)
        self.queues = [[] for _ in range(n)]
        self.packets = []
        self.t = 0
        self.positions = trajectory.positions[0]
        self.adj = np.zeros((n, n), bool)
        self.counts = {DELIVERED: 0, DROPPED_TTL: 0, DROPPED_BUFFER: 0}
        self.log_decisions = log_decisions
        self.decision_log = []
        self._ctx = None

    @property
    def n(self):
        return self.cfg.node_count

    def neighbors(self, v):
        return np.flatnonzero(self.adj[v])

    def in_flight(self):
        return sum(len(q) for q in self.queues)

    def feature_context(self):
        if self._ctx is None:
            n = self.n
            qlen = np.array([len(q) for q in self.queues], float)
            dst_counts = np.zeros((n, n))
            for v, q in enumerate(self.queues):
                for p in q:
                    dst_counts[v, p.dst] += 1
            self._ctx = FeatureContext(self.tables, self.adj, self.positions, qlen, dst_counts,
                                       n, self.cfg.buffer_cap, self.cfg.initial_ttl)
        return self._ctx

    def _inject(self, births, t):
        B = self.cfg.buffer_cap
        for flow, count in births:
            for _ in range(count):
                p = Packet(len(self.packets), flow.flow_id, flow.src, flow.dst, t,
                           self.cfg.initial_ttl, flow.src, {flow.src}, path=[flow.src])
                self.packets.append(p)
                q = self.queues[flow.src]
                if len(q) >= B:
                    p.status = DROPPED_BUFFER
                    self.counts[DROPPED_BUFFER] += 1
                else:
                    q.append(p)


    def add_packet(self, src, dst, ttl=None):
        """Queue a scripted packet at ``src`` now (outside the traffic model)."""
        if src == dst:
            raise ValueError("src and dst must differ")
        flow = Flow(-1, int(src), int(dst), self.t, math.inf)
        before = len(self.packets)
        self._inject([(flow, 1)], self.t)
        p = self.packets[before]
        if ttl is not None:
            p.ttl_remaining = ttl
        return p


def make_trajectory(cfg: SimConfig):
    seeds = np.random.SeedSequence(cfg.rng_seed).spawn(3)
    rng = np.random.default_rng(seeds[0])
    return generate_trajectory(cfg.mobility, cfg.node_count, cfg.area_width,
                               cfg.area_height, cfg.duration, rng)


def step(world: World, policy):
    """Advance ``world`` by one timestep under ``policy``."""
    t = world.t
    cfg = world.cfg
    pos = world.trajectory.positions[t]
    world.positions = pos
    world.adj = adjacency_matrix(pos, cfg.tx_range)
    world.tables.tick(t, pos)
    world.tables.exchange(world.adj, pos)
    world._ctx = None

    _, births = world.traffic.generate(t)
    world._inject(births, t)

    packets = [p for q in world.queues for p in q]
    choices = policy.decide(world, packets) if packets else []
    if world.log_decisions and packets:
        _log_decisions(world, packets, choices, policy.explore_flags())

    outcomes = {}
    arrivals = []
    for p, c in zip(packets, choices):
        v = p.holder
        if c == v:
            outcomes[p.packet_id] = (p, STAY)
            continue
        if not world.adj[v, c]:
            raise ValueError(f"policy chose non-neighbor {c} for packet at {v}")
        world.queues[v].remove(p)
        p.forwards_count += 1
        if c == p.dst:
            p.status = DELIVERED
            p.delivered_at = t + 1
            p.holder = c
            p.path.append(c)
            world.counts[DELIVERED] += 1
            outcomes[p.packet_id] = (p, DELIVERY)
        else:
            arrivals.append((p, c))
    B = cfg.buffer_cap
    for p, c in arrivals:
        q = world.queues[c]
        if len(q) >= B:
            p.status = DROPPED_BUFFER
            world.counts[DROPPED_BUFFER] += 1
            outcomes[p.packet_id] = (p, DROP)
            continue
        q.append(p)
        p.holder = c
        p.visited.add(c)
        p.path.append(c)
        outcomes[p.packet_id] = (p, TRANSMIT)

    for q in world.queues:
        expired = False
        for p in q:
            p.ttl_remaining -= 1
            if p.ttl_remaining <= 0:
                p.status = DROPPED_TTL
                world.counts[DROPPED_TTL] += 1
                outcomes[p.packet_id] = (p, DROP)
                expired = True
        if expired:
            q[:] = [p for p in q if p.status == IN_FLIGHT]

    policy.observe(world, [outcomes[p.packet_id] for p in packets])
    world.t = t + 1
    return world


DECISION_FIELDS = ["t", "packet", "holder", "chosen", "explore", "n_fast", "n_slow", "chose_fast",
                   "dest_group_present", "chose_dest_group", "n_dest_group", "dst_neighbor"]
METRIC_FIELDS = ["scenario", "seed", "policy", "delivery_rate", "mean_delay_s", "mean_forwards"]
PACKET_FIELDS = ["packet_id", "src", "dst", "created", "status", "delivered_at", "forwards"]


def _log_decisions(world, packets, choices, explore):
    fast, groups = world.fast, world.groups
    for i, (p, c) in enumerate(zip(packets, choices)):
        nb = world.neighbors(p.holder)
        nf = int(fast[nb].sum())
        in_dst = groups[nb] == groups[p.dst]
        world.decision_log.append({
            "t": world.t,
            "packet": p.packet_id,
            "holder": p.holder,
            "chosen": c,
            "explore": int(bool(explore[i])) if explore else 0,
            "n_fast": nf,
            "n_slow": int(nb.size - nf),
            "chose_fast": "" if c == p.holder else int(fast[c]),
            "dest_group_present": int(in_dst.any() and (~in_dst).any()),
            "chose_dest_group": "" if c == p.holder else int(groups[c] == groups[p.dst]),
            "n_dest_group": int(in_dst.sum()),
            "dst_neighbor": int(bool(world.adj[p.holder, p.dst])),
        })


def run(world: World, policy, steps=None, callback=None):
    """Step until ``steps`` more timesteps have run (default: to ``cfg.duration``)."""
    end = world.cfg.duration if steps is None else world.t + steps
    while world.t < end:
        step(world, policy)
        if callback is not None:
            callback(world)
    return world


def collect_metrics(world: World, policy_name="", strict=True):
    """Aggregate per-packet outcomes.

    With ``strict`` a finished run that still has in-flight packets raises
    :class:`InFlightError`, since it means the cool-down was too short.
    """
    finished = world.t >= world.cfg.duration
    n_flight = world.in_flight()
    if strict and finished and n_flight:
        raise InFlightError(
            f"{n_flight} packets still in flight after cool-down in {world.cfg.scenario_id}"
        )
    records = [PacketRecord(p.packet_id, p.src, p.dst, p.created_at, p.status,
                            p.delivered_at, p.forwards_count) for p in world.packets]
    return summarize(records, world.cfg.scenario_id, world.cfg.rng_seed, policy_name)


def summarize(records, scenario, seed, policy_name):
    delivered = [r for r in records if r.status == DELIVERED]
    n = len(records)
    return MetricsReport(
        scenario=scenario,
        seed=seed,
        policy=policy_name,
        generated=n,
        delivered=len(delivered),
        delivery_rate=len(delivered) / n if n else math.nan,
        mean_delay=float(np.mean([r.delay for r in delivered])) if delivered else math.nan,
        mean_forwards=float(np.mean([r.forwards for r in delivered])) if delivered else math.nan,
        dropped_ttl=sum(r.status == DROPPED_TTL for r in records),
        dropped_buffer=sum(r.status == DROPPED_BUFFER for r in records),
        in_flight=sum(r.status == IN_FLIGHT for r in records),
        records=records,
    )


def simulate(cfg, policy, trajectory=None, strict=False, log_decisions=False):
    """Run a full scenario and return ``(world, MetricsReport)``."""
    world = World(cfg, trajectory, log_decisions=log_decisions)
    run(world, policy)
    return world, collect_metrics(world, getattr(policy, "name", ""), strict=strict)

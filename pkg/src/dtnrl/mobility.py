"""Node trajectories: random waypoint, group mobility, Manhattan grid and traces.

Every model produces a dense :class:`Trajectory` of shape ``(steps, nodes, 2)``
sampled at 1 Hz, which the engine consumes one timestep at a time.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .config import SPEED_CLASSES, MobilitySpec


class TraceError(ValueError):
    pass


@dataclass
class Trajectory:
    positions: np.ndarray  # (steps, nodes, 2)
    node_ids: tuple = None

    def __post_init__(self):
        if self.node_ids is None:
            self.node_ids = tuple(range(self.positions.shape[1]))

    @property
    def steps(self):
        return self.positions.shape[0]

    @property
    def n_nodes(self):
        return self.positions.shape[1]

    def position(self, node, t):
        x, y = self.positions[t, node]
        return float(x), float(y)

    def samples(self):
        for t in range(self.steps):
            for i, nid in enumerate(self.node_ids):
                x, y = self.positions[t, i]
                yield t, nid, float(x), float(y)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "node_id", "x", "y"])
            for t, nid, x, y in self.samples():
                w.writerow([t, nid, repr(x), repr(y)])


def waypoint_step(pos, dest, speed):
    """Advance each row of ``pos`` toward ``dest`` by ``speed``; returns (new_pos, arrived)."""
    delta = dest - pos
    dist = np.hypot(delta[:, 0], delta[:, 1])
    arrived = dist <= speed
    frac = np.where(arrived, 1.0, speed / np.where(dist > 0, dist, 1.0))
    new = pos + delta * frac[:, None]
    new[arrived] = dest[arrived]
    return new, arrived


def _class_bounds(classes):
    lo = np.array([SPEED_CLASSES[c][0] for c in classes])
    hi = np.array([SPEED_CLASSES[c][1] for c in classes])
    return lo, hi


class RandomWaypoint:
    """Zero-or-fixed-pause random waypoint walkers, vectorized over nodes."""

    def __init__(self, n, width, height, lo, hi, pause, rng):
        self.width, self.height = width, height
        self.lo, self.hi = np.broadcast_to(lo, (n,)).astype(float), np.broadcast_to(hi, (n,)).astype(float)
        self.pause = pause
        self.rng = rng
        self.pos = self._uniform(n)
        self.dest = self._uniform(n)
        self.speed = rng.uniform(self.lo, self.hi)
        self.wait = np.zeros(n)
        self.leg_speeds = []  # speeds of completed legs, when record_legs is on
        self.record_legs = False

    def _uniform(self, k):
        pts = self.rng.uniform(size=(k, 2))
        pts[:, 0] *= self.width
        pts[:, 1] *= self.height
        return pts

    def step(self):
        moving = self.wait <= 0
        self.wait[~moving] -= 1
        new, arrived = waypoint_step(self.pos, self.dest, np.where(moving, self.speed, 0.0))
        arrived &= moving
        self.pos = new
        idx = np.flatnonzero(arrived)
        if idx.size:
            if self.record_legs:
                self.leg_speeds.extend(self.speed[idx].tolist())
            self.dest[idx] = self._uniform(idx.size)
            self.speed[idx] = self.rng.uniform(self.lo[idx], self.hi[idx])
            self.wait[idx] = self.pause
        return self.pos

    def warm_up(self, steps):
        for _ in range(steps):
            self.step()


class GroupMobility:
    """Reference point group mobility.

    Each group's reference point is a random waypoint walker. A member tracks
    ``reference + offset``, with the offset uniform in a disc and redrawn every
    time the reference reaches a waypoint. Members move at most their class
    maximum speed per step.
    """

    def __init__(self, groups, width, height, radius, lo, hi, pause, rng):
        self.groups = np.asarray(groups)
        n_groups = int(self.groups.max()) + 1
        self.width, self.height = width, height
        self.radius = radius
        self.rng = rng
        self.vmax = np.asarray(hi, float)
        # reference points walk at the speed of the group's first member class
        ref_lo = np.array([lo[np.flatnonzero(self.groups == g)[0]] for g in range(n_groups)])
        ref_hi = np.array([hi[np.flatnonzero(self.groups == g)[0]] for g in range(n_groups)])
        self.ref = RandomWaypoint(n_groups, width, height, ref_lo, ref_hi, pause, rng)
        self.offset = self._offsets(len(self.groups))
        self.pos = self._target()

    def _offsets(self, k):
        r = self.radius * np.sqrt(self.rng.uniform(size=k))
        th = 2 * np.pi * self.rng.uniform(size=k)
        return np.column_stack([r * np.cos(th), r * np.sin(th)])

    def _target(self):
        tgt = self.ref.pos[self.groups] + self.offset
        np.clip(tgt[:, 0], 0, self.width, out=tgt[:, 0])
        np.clip(tgt[:, 1], 0, self.height, out=tgt[:, 1])
        return tgt

    def step(self):
        before = self.ref.dest.copy()
        self.ref.step()
        changed = np.flatnonzero(np.any(self.ref.dest != before, axis=1))
        if changed.size:
            members = np.flatnonzero(np.isin(self.groups, changed))
            self.offset[members] = self._offsets(members.size)
        self.pos, _ = waypoint_step(self.pos, self._target(), self.vmax)
        return self.pos

    def warm_up(self, steps):
        for _ in range(steps):
            self.step()


_HEADINGS = np.array([[1, 0], [0, 1], [-1, 0], [0, -1]])  # E N W S


class ManhattanGrid:
    """Nodes move along grid lines and may turn only at intersections.

    At an intersection: straight 0.5, left 0.25, right 0.25, renormalized over
    the moves that stay inside the area; U-turn only when none do.
    """

    def __init__(self, n, width, height, block, lo, hi, rng):
        self.width, self.height, self.block = width, height, block
        self.lo, self.hi = np.asarray(lo, float), np.asarray(hi, float)
        self.rng = rng
        self.nx = int(round(width / block))
        self.ny = int(round(height / block))
        self.pos = np.zeros((n, 2))
        self.heading = np.zeros(n, dtype=int)
        self.speed = rng.uniform(self.lo, self.hi)
        for i in range(n):
            if rng.uniform() < 0.5:  # horizontal line
                y = rng.integers(0, self.ny + 1) * block
                x = rng.uniform(0, width)
                h = int(rng.choice([0, 2]))
            else:
                x = rng.integers(0, self.nx + 1) * block
                y = rng.uniform(0, height)
                h = int(rng.choice([1, 3]))
            self.pos[i] = x, y
            self.heading[i] = h
            if not self._inside(self.pos[i], h):
                self.heading[i] = (h + 2) % 4

    def _inside(self, p, h):
        q = p + _HEADINGS[h] * self.block
        eps = 1e-9
        return -eps <= q[0] <= self.width + eps and -eps <= q[1] <= self.height + eps

    def _turn(self, i):
        p, h = self.pos[i], self.heading[i]
        options = [(h, 0.5), ((h + 1) % 4, 0.25), ((h + 3) % 4, 0.25)]
        options = [(d, w) for d, w in options if self._inside(p, d)]
        if not options:
            self.heading[i] = (h + 2) % 4
        else:
            w = np.array([o[1] for o in options])
            k = self.rng.choice(len(options), p=w / w.sum())
            self.heading[i] = options[k][0]
        self.speed[i] = self.rng.uniform(self.lo[i], self.hi[i])

    def _dist_to_next(self, i):
        p, h = self.pos[i], self.heading[i]
        axis = 0 if h in (0, 2) else 1
        coord = p[axis] / self.block
        sign = _HEADINGS[h][axis]
        cell = math.floor(coord + 1e-9) if sign > 0 else math.ceil(coord - 1e-9)
        nxt = cell + sign
        return abs(nxt * self.block - p[axis]), axis, nxt * self.block

    def step(self):
        for i in range(len(self.pos)):
            remaining = self.speed[i]
            while remaining > 1e-12:
                dist, axis, target = self._dist_to_next(i)
                if remaining < dist:
                    self.pos[i, axis] += _HEADINGS[self.heading[i]][axis] * remaining
                    break
                self.pos[i, axis] = target
                remaining -= dist
                self._turn(i)
        return self.pos

    def warm_up(self, steps):
        for _ in range(steps):
            self.step()


class StaticPositions:
    def __init__(self, pos):
        self.pos = np.asarray(pos, float)

    def step(self):
        return self.pos

    def warm_up(self, steps):
        pass


def build_model(spec: MobilitySpec, n, width, height, rng):
    classes = spec.node_classes()
    lo, hi = _class_bounds(classes)
    if spec.model == "rwp":
        return RandomWaypoint(n, width, height, lo, hi, spec.pause, rng)
    if spec.model == "rpgm":
        groups = np.arange(n) * spec.group_count // n
        return GroupMobility(groups, width, height, spec.group_radius, lo, hi, spec.pause, rng)
    if spec.model == "grid":
        return ManhattanGrid(n, width, height, spec.block_size, lo, hi, rng)
    raise ValueError(f"no synthetic generator for model {spec.model!r}")


def node_groups(spec: MobilitySpec, n):
    """Group label per node (all zeros outside group mobility)."""
    if spec.model == "rpgm":
        return np.arange(n) * spec.group_count // n
    return np.zeros(n, dtype=int)


def generate_trajectory(spec: MobilitySpec, n, width, height, steps, rng, warmup=None):
    """Sample ``steps`` positions after a discarded warm-up of ``spec.warmup`` steps."""
    if spec.model == "trace":
        traj = load_trace(spec.trace_path)
        if traj.steps < steps:
            raise TraceError(f"trace has {traj.steps} steps, {steps} requested")
        return Trajectory(traj.positions[:steps], traj.node_ids)
    model = build_model(spec, n, width, height, rng)
    model.warm_up(spec.warmup if warmup is None else warmup)
    out = np.empty((steps, n, 2))
    for t in range(steps):
        out[t] = model.step()
    return Trajectory(out)


def static_trajectory(points, steps):
    pts = np.asarray(points, float)
    return Trajectory(np.broadcast_to(pts, (steps,) + pts.shape).copy())


def load_trace(path, window=None, persistent_only=False):
    """Read a ``t,node_id,x,y`` CSV into a dense trajectory.

    ``window=(start, stop)`` keeps timesteps in ``[start, stop)`` and rebases
    them to 0. With ``persistent_only`` nodes missing any sample in the window
    are dropped instead of raising a gap error.
    """
    rows = {}
    times = set()
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = [p.strip() for p in text.split(",")]
            if lineno == 1 and parts[0] == "t":
                continue
            if len(parts) != 4:
                raise TraceError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
            try:
                t = int(parts[0])
                x, y = float(parts[2]), float(parts[3])
            except ValueError:
                raise TraceError(f"{path}:{lineno}: malformed line {text!r}") from None
            node = parts[1]
            if not (math.isfinite(x) and math.isfinite(y)):
                raise TraceError(f"{path}:{lineno}: non-finite position")
            key = (t, node)
            if key in rows:
                raise TraceError(f"{path}:{lineno}: duplicate sample for node {node} at t={t}")
            rows[key] = (x, y)
            times.add(t)
    if not rows:
        raise TraceError(f"{path}: empty trace")
    if window is None:
        start, stop = min(times), max(times) + 1
    else:
        start, stop = window
    span = range(start, stop)
    nodes = sorted({n for (_, n) in rows}, key=_node_sort_key)
    keep = []
    for n in nodes:
        missing = [t for t in span if (t, n) not in rows]
        if missing:
            if persistent_only:
                continue
            if len(missing) < len(span):
                raise TraceError(f"{path}: gap: node {n} has no sample at t={missing[0]}")
            continue
        keep.append(n)
    if not keep:
        raise TraceError(f"{path}: no node present throughout [{start}, {stop})")
    pos = np.empty((len(span), len(keep), 2))
    for j, n in enumerate(keep):
        for i, t in enumerate(span):
            pos[i, j] = rows[(t, n)]
    return Trajectory(pos, tuple(_maybe_int(n) for n in keep))


def _node_sort_key(n):
    try:
        return (0, int(n), n)
    except ValueError:
        return (1, 0, n)


def _maybe_int(n):
    try:
        return int(n)
    except ValueError:
        return n

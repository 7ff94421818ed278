"""Per-node knowledge tables and the normalized state/action feature vectors.

Tables for all nodes are stored as dense ``(N, N)`` arrays indexed
``[holder, peer]``; row ``v`` is node ``v``'s view of the network.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

DEVICE_FEATURES = (
    "queue_len",
    "node_density",
    "node_degree",
    "dyn_conn_short",
    "dyn_conn_long",
    "dispersion_short",
    "dispersion_long",
    "encounter_age",
)
PATH_FEATURES = ("dst_queue_len", "euclid_dist", "transitive_timer", "aoi")
NODE_FEATURES = DEVICE_FEATURES + PATH_FEATURES
STATE_DIM = 1 + len(NODE_FEATURES) + 3 * len(NODE_FEATURES)
ACTION_DIM = len(NODE_FEATURES) + 2


@dataclass(frozen=True)
class FeatureSchema:
    S: int = 10
    L: float = 1500.0
    k: float = 0.01
    x_bar: float = 200.0
    delta_short: int = 100
    delta_long: int = 500
    tau_short: int = 10
    tau_long: int = 100
    beta: float = 0.5
    timer_init: float = 200.0
    dst_queue_init_frac: float = 0.1
    names: tuple = field(init=False)

    def __post_init__(self):
        names = ["ttl"]
        names += [f"v.{n}" for n in NODE_FEATURES]
        for stat in ("min", "max", "mean"):
            names += [f"nbr_{stat}.{n}" for n in NODE_FEATURES]
        names += [f"u.{n}" for n in NODE_FEATURES]
        names += ["u.visited", "u.transmit"]
        object.__setattr__(self, "names", tuple(names))

    @property
    def dim(self):
        return len(self.names)

    def params(self):
        return {
            "S": self.S, "L": self.L, "k": self.k, "x_bar": self.x_bar,
            "delta_short": self.delta_short, "delta_long": self.delta_long,
            "tau_short": self.tau_short, "tau_long": self.tau_long, "beta": self.beta,
            "timer_init": self.timer_init, "dst_queue_init_frac": self.dst_queue_init_frac,
        }

    def to_dict(self):
        return {"names": list(self.names), "params": self.params(), "hash": self.hash}

    @property
    def hash(self):
        blob = json.dumps({"names": list(self.names), "params": self.params()}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def dumps(self):
        return json.dumps(self.to_dict(), indent=1)


DEFAULT_SCHEMA = FeatureSchema()


# -- normalization ------------------------------------------------------------

def norm_bounded(x, upper):
    """``(x+1)/(upper+1)``, used for TTL, queue lengths, distances, dispersion."""
    return np.minimum(1.0, (np.asarray(x, float) + 1.0) / (upper + 1.0))


def norm_clamped(x, scale):
    return np.minimum(1.0, (np.asarray(x, float) + 1.0) / (scale + 1.0))


def norm_connectivity(x, n):
    return np.minimum(1.0, (np.asarray(x, float) + 1.0) / n)


def norm_timer(x, k=0.01, x_bar=200.0):
    """Shifted sigmoid ``1/(1+exp(-k(x-x_bar)))``; +inf maps to 1."""
    x = np.asarray(x, float)
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-k * (x - x_bar)))


# -- knowledge tables -----------------------------------------------------------

class KnowledgeTables:
    """Encounter timers, transitive timers, known locations with AoI, dispersion."""

    def __init__(self, n, schema=DEFAULT_SCHEMA, mean_speed=3.0):
        self.n = n
        self.schema = schema
        self.mean_speed = mean_speed
        init = schema.timer_init
        self.aoi = np.full((n, n), init)
        self.timer = np.full((n, n), init)
        np.fill_diagonal(self.aoi, 0.0)
        np.fill_diagonal(self.timer, 0.0)
        self.known_loc = np.full((n, n, 2), np.nan)
        self.met_elapsed = np.full((n, n), np.inf)
        np.fill_diagonal(self.met_elapsed, np.inf)
        self.disp_short = np.full(n, schema.L / 20)
        self.disp_long = np.full(n, schema.L / 5)
        self._window = np.zeros((schema.tau_long + 1, n, 2))
        self._filled = 0
        self._last_tick = None

    # position history ring buffer, newest at index (filled-1) % size
    def _push(self, pos):
        size = self._window.shape[0]
        self._window[self._filled % size] = pos
        self._filled += 1

    def window(self, tau):
        """Positions over the last ``tau+1`` ticks, oldest first: ``(tau+1, N, 2)``."""
        size = self._window.shape[0]
        if tau + 1 > size or tau + 1 > self._filled:
            raise ValueError("position window shorter than requested interval")
        idx = [(self._filled - tau - 1 + i) % size for i in range(tau + 1)]
        return self._window[idx]

    def tick(self, t, positions):
        """Advance all timers by one step and record this step's positions."""
        assert self._last_tick is None or t > self._last_tick, f"double tick at t={t}"
        self._last_tick = t
        self.aoi += 1.0
        self.timer += 1.0
        self.met_elapsed += 1.0
        np.fill_diagonal(self.aoi, 0.0)
        np.fill_diagonal(self.timer, 0.0)
        idx = np.arange(self.n)
        self.known_loc[idx, idx] = positions
        self._push(positions)
        s = self.schema
        for tau, attr in ((s.tau_short, "disp_short"), (s.tau_long, "disp_long")):
            if t > 0 and t % tau == 0 and self._filled >= tau + 1:
                setattr(self, attr, update_dispersion(getattr(self, attr), self.window(tau), s.beta))

    def on_meet(self, v, u, positions, snapshot=None):
        """Merge ``u``'s tables into ``v``'s (one direction).

        ``snapshot`` supplies u's values as they were before this timestep's
        exchanges; defaults to the live tables.
        """
        src = snapshot if snapshot is not None else self
        self.met_elapsed[v, u] = 0.0
        fresher = src.aoi[u] < self.aoi[v]
        self.aoi[v, fresher] = src.aoi[u, fresher]
        self.known_loc[v, fresher] = src.known_loc[u, fresher]
        pen = float(np.hypot(*(positions[u] - positions[v]))) / self.mean_speed
        self.timer[v] = np.minimum(self.timer[v], src.timer[u] + pen)
        self.timer[v, u] = 0.0

    def snapshot(self):
        snap = object.__new__(KnowledgeTables)
        snap.aoi = self.aoi.copy()
        snap.timer = self.timer.copy()
        snap.known_loc = self.known_loc.copy()
        return snap

    def exchange(self, adjacency, positions):
        """All neighbor pairs exchange simultaneously against a pre-exchange snapshot.

        Equivalent to calling :meth:`on_meet` for every ordered neighbor pair
        (ascending ``u``) with ``snapshot`` set to the pre-exchange tables.
        """
        vs, us = np.nonzero(adjacency)  # row-major: sorted by v then u
        if vs.size == 0:
            return
        n = self.n
        aoi0, timer0, loc0 = self.aoi.copy(), self.timer.copy(), self.known_loc.copy()
        starts = np.flatnonzero(np.r_[True, vs[1:] != vs[:-1]])
        heads = vs[starts]
        # AoI adoption with lowest-u tie break: encode (aoi, u) in one integer key
        key = aoi0[us].astype(np.int64) * n + us[:, None]
        best = np.minimum.reduceat(key, starts, axis=0)
        best_aoi = (best // n).astype(float)
        best_u = best % n
        cur = aoi0[heads]
        upd = best_aoi < cur
        rows, cols = np.nonzero(upd)
        self.aoi[heads[rows], cols] = best_aoi[rows, cols]
        self.known_loc[heads[rows], cols] = loc0[best_u[rows, cols], cols]
        # transitive timers
        pen = np.hypot(*(positions[us] - positions[vs]).T) / self.mean_speed
        cand = timer0[us] + pen[:, None]
        best_t = np.minimum.reduceat(cand, starts, axis=0)
        self.timer[heads] = np.minimum(timer0[heads], best_t)
        self.timer[vs, us] = 0.0
        self.met_elapsed[vs, us] = 0.0

    def dynamic_connectivity(self, delta):
        """Distinct peers met within the closed window ``[t-delta, t]``, per node."""
        return (self.met_elapsed <= delta).sum(axis=1)

    def encounter_age(self):
        return self.met_elapsed.min(axis=1)


def farthest_excursion(window):
    """``max_s |pos(s) - pos(start)|`` over a ``(steps, N, 2)`` window."""
    d = window - window[0]
    return np.hypot(d[..., 0], d[..., 1]).max(axis=0)


def update_dispersion(prev, window, beta):
    return beta * farthest_excursion(window) + (1.0 - beta) * prev


# -- feature assembly -----------------------------------------------------------

class FeatureContext:
    """Snapshot of everything needed to build feature rows at one timestep."""

    def __init__(self, tables, adjacency, positions, queue_len, dst_counts,
                 n_nodes, buffer_cap, initial_ttl):
        self.tables = tables
        self.schema = tables.schema
        self.adj = adjacency
        self.pos = positions
        self.queue_len = queue_len
        self.dst_counts = dst_counts  # (N, N): packets at holder destined to dst
        self.n = n_nodes
        self.B = buffer_cap
        self.T = initial_ttl
        self.degree = adjacency.sum(axis=1)
        self._closed = adjacency.astype(bool)  # closed neighborhoods: Nbr(v) plus v
        np.fill_diagonal(self._closed, True)
        self._device = None
        self._blocks = {}
        self._nodefeat = None

    @property
    def device(self):
        """Normalized device-level features, ``(N, 8)``."""
        if self._device is None:
            s, tb = self.schema, self.tables
            deg = self.degree
            self._device = np.column_stack([
                norm_bounded(self.queue_len, self.B),
                norm_clamped(deg, self.n),
                norm_clamped(deg, s.S),
                norm_connectivity(tb.dynamic_connectivity(s.delta_short), self.n),
                norm_connectivity(tb.dynamic_connectivity(s.delta_long), self.n),
                norm_bounded(tb.disp_short, s.L),
                norm_bounded(tb.disp_long, s.L),
                norm_timer(tb.encounter_age(), s.k, s.x_bar),
            ])
        return self._device

    def path(self, d):
        """Normalized path-level features of every node toward ``d``, ``(N, 4)``."""
        return self.all_node_features()[d, :, -4:]

    def node_features(self, d):
        """Device and path features of every node toward ``d``, ``(N, 12)``."""
        return self.all_node_features()[d]

    def all_node_features(self):
        """``(D, N, 12)``: device and path features of every node toward every destination."""
        if self._nodefeat is None:
            s, tb = self.schema, self.tables
            loc = tb.known_loc  # (holder, dst, 2)
            known = ~np.isnan(loc[..., 0])
            gap = self.pos[:, None, :] - np.where(known[..., None], loc, 0.0)
            dist = np.where(known, np.hypot(gap[..., 0], gap[..., 1]), s.L / 2)
            dq = np.where(known, self.dst_counts, s.dst_queue_init_frac * self.B)
            path = np.stack([
                norm_bounded(dq, self.B),
                norm_bounded(dist, s.L),
                norm_timer(tb.timer, s.k, s.x_bar),
                norm_timer(tb.aoi, s.k, s.x_bar),
            ], axis=-1).transpose(1, 0, 2)  # (dst, holder, 4)
            dev = np.broadcast_to(self.device, (self.n,) + self.device.shape)
            self._nodefeat = np.concatenate([dev, path], axis=-1)
        return self._nodefeat

    def neighbors(self, v):
        return np.flatnonzero(self.adj[v])

    def state_features(self, v, d, ttl):
        """49 reals: TTL, own 12 device+path features, neighborhood min/max/mean."""
        if not 0 <= d < self.n:
            raise KeyError(f"unknown destination {d}")
        m = self.node_features(d)
        nb = self.neighbors(v)
        nf = m.shape[1]
        out = np.empty(STATE_DIM)
        out[0] = min(1.0, (ttl + 1.0) / (self.T + 1.0))
        out[1:1 + nf] = m[v]
        if nb.size:
            agg = m[nb]
            out[1 + nf:1 + 2 * nf] = agg.min(axis=0)
            out[1 + 2 * nf:1 + 3 * nf] = agg.max(axis=0)
            out[1 + 3 * nf:] = agg.mean(axis=0)
        else:
            out[1 + nf:] = np.tile(m[v], 3)
        return out

    def action_features(self, u, v, d, visited):
        m = self.node_features(d)
        return np.hstack([m[u], [1.0 if u in visited else 0.0, 1.0 if u != v else 0.0]])

    def candidates(self, v):
        """Action set ``Nbr(v) ∪ {v}`` in ascending id order."""
        return np.flatnonzero(self._closed[v])

    def _block(self, v, d):
        # rows shared by every packet at v heading to d; TTL and visit flags filled per packet
        key = (v, d)
        blk = self._blocks.get(key)
        if blk is None:
            cands = self.candidates(v)
            state = self.state_features(v, d, 0)
            m = self.node_features(d)
            rows = np.empty((cands.size, STATE_DIM + ACTION_DIM))
            rows[:, :STATE_DIM] = state
            rows[:, STATE_DIM:STATE_DIM + len(NODE_FEATURES)] = m[cands]
            rows[:, -1] = cands != v
            blk = self._blocks[key] = (rows, cands)
        return blk

    def prepare_blocks(self, keys):
        """Build the ``_block`` templates for many ``(v, d)`` pairs in one vectorized pass."""
        missing = sorted({k for k in keys if k not in self._blocks})
        if not missing:
            return
        vs = np.array([k[0] for k in missing])
        ds = np.array([k[1] for k in missing])
        if ds.min() < 0 or ds.max() >= self.n:
            raise KeyError(f"unknown destination in {missing}")
        m = self.all_node_features()[ds]  # (K, N, 12)
        mask = self.adj[vs][:, :, None]
        own = m[np.arange(len(vs)), vs]
        deg = self.degree[vs][:, None]
        has = deg > 0
        lo = np.where(has, np.where(mask, m, np.inf).min(axis=1), own)
        hi = np.where(has, np.where(mask, m, -np.inf).max(axis=1), own)
        mean = np.where(has, (m * mask).sum(axis=1) / np.maximum(deg, 1), own)
        states = np.empty((len(vs), STATE_DIM))
        states[:, 0] = norm_bounded(0, self.T)
        nf = own.shape[1]
        states[:, 1:1 + nf] = own
        states[:, 1 + nf:1 + 2 * nf] = lo
        states[:, 1 + 2 * nf:1 + 3 * nf] = hi
        states[:, 1 + 3 * nf:] = mean
        ks, us = np.nonzero(self._closed[vs])  # candidates grouped by key, ascending ids
        rows = np.empty((ks.size, STATE_DIM + ACTION_DIM))
        rows[:, :STATE_DIM] = states[ks]
        rows[:, STATE_DIM:STATE_DIM + nf] = m[ks, us]
        rows[:, -2] = 0.0
        rows[:, -1] = us != vs[ks]
        ends = np.cumsum(np.bincount(ks, minlength=len(vs))).tolist()
        for key, a, b in zip(missing, [0] + ends[:-1], ends):
            self._blocks[key] = (rows[a:b], us[a:b])

    def candidate_rows(self, v, d, ttl, visited):
        """``(k, 63)`` input rows, one per candidate, plus the candidate ids."""
        template, cands = self._block(v, d)
        rows = template.copy()
        rows[:, 0] = norm_bounded(ttl, self.T)
        rows[:, -2] = [1.0 if u in visited else 0.0 for u in cands.tolist()]
        return rows, cands


def build_state_features(ctx, v, packet):
    return ctx.state_features(v, packet.dst, packet.ttl_remaining)


def build_action_features(ctx, u, packet):
    return ctx.action_features(u, packet.holder, packet.dst, packet.visited)


assert STATE_DIM == 49 and ACTION_DIM == 14 and DEFAULT_SCHEMA.dim == 63

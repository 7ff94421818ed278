"""Round-based training, continual learning with balanced replay, and fine-tuning."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, SimConfig, load_config
from .features import DEFAULT_SCHEMA
from .policy import DRLPolicy
from .qnet import Hyper, QNetwork, SchemaMismatch, bellman_targets, default_dims
from .sim import World, run

FEATURE_DIM = DEFAULT_SCHEMA.dim


def new_network(seed=0, hyper=None, schema=DEFAULT_SCHEMA):
    return QNetwork(default_dims(schema.dim), schema.hash, hyper=hyper, seed=seed)


# -- experience storage -----------------------------------------------------------

class ExperienceDataset:
    """Append-only experiences of one scenario in compact arrays.

    Each experience is the chosen input row (state + action features), its
    reward, a terminal flag and the candidate rows of the next decision
    (stored flat with a pointer array).
    """

    def __init__(self, scenario_id, schema_hash=DEFAULT_SCHEMA.hash, dim=FEATURE_DIM):
        self.scenario_id = scenario_id
        self.schema_hash = schema_hash
        self.dim = dim
        self.frozen = False
        self._rows = np.empty((0, dim))
        self._rewards = np.empty(0)
        self._terminal = np.empty(0, bool)
        self._t = np.empty(0, np.int64)
        self._next = np.empty((0, dim))
        self._ptr = np.zeros(1, np.int64)
        self._pending = []

    def append(self, exp):
        if self.frozen:
            raise ValueError(f"dataset {self.scenario_id!r} is frozen")
        self._pending.append(exp)

    def extend(self, exps):
        for e in exps:
            self.append(e)

    def __len__(self):
        return len(self._rewards) + len(self._pending)

    def _flush(self):
        if not self._pending:
            return
        p = self._pending
        self._pending = []
        rows = np.array([np.concatenate([e.state_feats, e.action_feats]) for e in p])
        if rows.shape[1] != self.dim:
            raise SchemaMismatch(f"experience width {rows.shape[1]} != dataset width {self.dim}")
        sizes = np.array([len(e.next_candidates) for e in p], np.int64)
        nxt = [e.next_candidates for e in p if len(e.next_candidates)]
        self._rows = np.vstack([self._rows, rows])
        self._rewards = np.concatenate([self._rewards, [e.reward for e in p]])
        self._terminal = np.concatenate([self._terminal, [e.terminal for e in p]])
        self._t = np.concatenate([self._t, [e.t for e in p]])
        if nxt:
            self._next = np.vstack([self._next] + nxt)
        self._ptr = np.concatenate([self._ptr, self._ptr[-1] + np.cumsum(sizes)])

    def freeze(self):
        self._flush()
        for a in (self._rows, self._rewards, self._terminal, self._t, self._next, self._ptr):
            a.flags.writeable = False
        self.frozen = True
        return self

    def take(self, idx):
        """``(rows, rewards, next_rows, next_ptr, terminal)`` for experiences ``idx``."""
        self._flush()
        idx = np.asarray(idx, np.int64)
        lo, hi = self._ptr[idx], self._ptr[idx + 1]
        sizes = hi - lo
        ptr = np.concatenate([[0], np.cumsum(sizes)])
        if sizes.sum():
            flat = np.concatenate([np.arange(a, b) for a, b in zip(lo, hi) if b > a])
            nxt = self._next[flat]
        else:
            nxt = np.empty((0, self.dim))
        return self._rows[idx], self._rewards[idx], nxt, ptr, self._terminal[idx]

    def arrays(self):
        self._flush()
        return {
            "rows": self._rows,
            "rewards": self._rewards,
            "terminal": self._terminal,
            "t": self._t,
            "next_rows": self._next,
            "next_ptr": self._ptr,
        }

    def save(self, path, meta=None):
        header = {"scenario_id": self.scenario_id, "schema_hash": self.schema_hash,
                  "dim": self.dim, **(meta or {})}
        with open(path, "wb") as fh:
            np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), **self.arrays())

    @classmethod
    def load(cls, path, schema_hash=None):
        with np.load(path) as z:
            header = json.loads(str(z["header"]))
            if schema_hash is not None and header["schema_hash"] != schema_hash:
                raise SchemaMismatch(
                    f"{path}: schema hash {header['schema_hash']} != runtime {schema_hash}"
                )
            ds = cls(header["scenario_id"], header["schema_hash"], header["dim"])
            ds._rows, ds._rewards = z["rows"], z["rewards"]
            ds._terminal, ds._t = z["terminal"], z["t"]
            ds._next, ds._ptr = z["next_rows"], z["next_ptr"]
        return ds.freeze()


class ReplayStore:
    """Ordered scenario datasets; all but the last are frozen."""

    def __init__(self, schema_hash=DEFAULT_SCHEMA.hash):
        self.schema_hash = schema_hash
        self.datasets = {}

    def open(self, scenario_id):
        if scenario_id in self.datasets:
            raise ValueError(f"duplicate scenario id {scenario_id!r} in replay store")
        for ds in self.datasets.values():
            if not ds.frozen:
                ds.freeze()
        ds = self.datasets[scenario_id] = ExperienceDataset(scenario_id, self.schema_hash)
        return ds

    def add(self, dataset):
        if dataset.schema_hash != self.schema_hash:
            raise SchemaMismatch(f"dataset {dataset.scenario_id!r} has a different schema hash")
        self.datasets[dataset.scenario_id] = dataset.freeze()

    def ordered(self):
        return list(self.datasets.values())

    def __len__(self):
        return len(self.datasets)


# -- sampling ---------------------------------------------------------------------

def sample_size(sizes, alpha):
    """Per-dataset sample size: ``max_i alpha*|D_i|`` capped at the current set's size."""
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    if len(sizes) == 0:
        raise ValueError("need at least one dataset")
    n = max(math.ceil(alpha * s) for s in sizes)
    return min(n, sizes[-1])


def balanced_sample(sizes, alpha, rng):
    """Index samples of equal size ``n`` from each dataset (the last is the current one).

    Returns ``None`` when the current dataset is empty. Sets smaller than ``n``
    are sampled with replacement, all others without.
    """
    sizes = [int(s) for s in sizes]
    if sizes[-1] == 0:
        return None
    n = sample_size(sizes, alpha)
    out = []
    for s in sizes:
        if s == 0:
            out.append(np.empty(0, np.int64))
        elif n <= s:
            out.append(rng.choice(s, size=n, replace=False))
        else:
            out.append(rng.integers(0, s, size=n))
    return out


def interleave_batches(samples, b, rng):
    """Split each sample into batches of ``b`` and draw them in random dataset order.

    At each draw a dataset is chosen uniformly among those with batches left and
    its next batch is emitted. Returns ``[(dataset_index, batch), ...]``.
    """
    if b < 1:
        raise ValueError("batch size must be >= 1")
    queues = [[s[i:i + b] for i in range(0, len(s), b)] for s in samples]
    heads = [0] * len(queues)
    live = [k for k, q in enumerate(queues) if q]
    out = []
    while live:
        j = int(rng.integers(len(live)))
        k = live[j]
        out.append((k, queues[k][heads[k]]))
        heads[k] += 1
        if heads[k] == len(queues[k]):
            live.pop(j)
    return out


# -- plans ------------------------------------------------------------------------

@dataclass
class CLPlan:
    scenarios: list
    alpha: float = 0.1
    batch: int = 32
    round_len: int = 1000
    epsilon: float = 0.1
    epochs: int | None = None
    lr: float | None = None
    seed: int = 0
    source: str | None = None

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ConfigError(f"alpha must be in (0, 1], got {self.alpha}", self.source)
        if self.batch < 1 or self.round_len < 1:
            raise ConfigError("batch and round_len must be >= 1", self.source)
        if not 0 <= self.epsilon <= 1:
            raise ConfigError("epsilon must be in [0, 1]", self.source)
        if not self.scenarios:
            raise ConfigError("plan needs at least one scenario", self.source)
        for cfg in self.scenarios:
            if cfg.duration % self.round_len:
                raise ConfigError(
                    f"round_len {self.round_len} does not divide duration {cfg.duration} "
                    f"of {cfg.scenario_id}", self.source)
        ids = [c.scenario_id for c in self.scenarios]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"scenario ids must be unique, got {ids}", self.source)


def default_scenarios(duration=100_000, cooldown=40_000):
    """RPGM 1-group r=50, then RWP 3 m/s r=50, then RWP-mix2 r=20 (training B/T)."""
    base = SimConfig(duration=duration, cooldown=cooldown)
    return [
        base.replace(scenario_id="rpgm1-r50", tx_range=50.0, model="rpgm", group_count=1),
        base.replace(scenario_id="rwp3-r50", tx_range=50.0, model="rwp"),
        base.replace(scenario_id="rwpmix2-r20", tx_range=20.0, model="rwp",
                     speed_mix=(("slow", 12), ("fast", 13))),
    ]


def default_plan(**kw):
    return CLPlan(default_scenarios(), **kw)


_PLAN_KEYS = {"scenarios", "alpha", "batch", "round_len", "epsilon", "epochs", "lr", "seed"}


def load_plan(path):
    """Plan file: flat ``key = value`` with ``scenarios`` a JSON list of config paths."""
    path = Path(path)
    vals = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", str(path), lineno)
        if key not in _PLAN_KEYS:
            raise ConfigError(f"unknown key {key!r}", str(path), lineno)
        if key in vals:
            raise ConfigError(f"duplicate key {key!r}", str(path), lineno)
        try:
            vals[key] = json.loads(value)
        except json.JSONDecodeError:
            raise ConfigError(f"bad value for {key!r}: {value.strip()!r}", str(path), lineno) from None
    if "scenarios" not in vals:
        raise ConfigError("plan has no 'scenarios' list", str(path))
    cfgs = []
    for ref in vals.pop("scenarios"):
        p = Path(ref)
        if not p.is_absolute():
            p = path.parent / p
        if not p.exists():
            raise ConfigError(f"scenario config {ref!r} not found", str(path))
        cfgs.append(load_config(p))
    return CLPlan(cfgs, source=str(path), **vals)


# -- training ---------------------------------------------------------------------

@dataclass
class RoundLog:
    scenario: str
    round: int
    t: int
    n_per_dataset: int
    n_batches: int
    dataset_sizes: list
    train_loss: float = math.nan
    val_loss: float = math.nan
    skipped: bool = False


@dataclass
class TrainHistory:
    rounds: list = field(default_factory=list)

    def rows(self):
        return [r.__dict__ for r in self.rounds]


def train_round(net, datasets, alpha, batch, rng, epochs=None, lr=None):
    """One end-of-round update over balanced, interleaved replay batches.

    Bellman targets come from a snapshot of ``net`` taken before the update.
    Returns ``(n, n_batches, LossTrace)`` or ``None`` if the round is skipped.
    """
    sizes = [len(d) for d in datasets]
    samples = balanced_sample(sizes, alpha, rng)
    if samples is None:
        return None
    snapshot = net.copy()
    xs, ys = [], []
    for ds, idx in zip(datasets, samples):
        if idx.size == 0:
            xs.append(np.empty((0, net.n_inputs)))
            ys.append(np.empty(0))
            continue
        rows, rewards, nxt, ptr, term = ds.take(idx)
        xs.append(rows)
        ys.append(bellman_targets(snapshot, rewards, nxt, ptr, term))
    order = interleave_batches([np.arange(len(y)) for y in ys], batch, rng)
    batches = [(xs[k][b], ys[k][b]) for k, b in order]
    trace = net.train_epochs(batches, epochs=epochs, lr=lr)
    return len(samples[-1]), len(batches), trace


def train_scenario(net, cfg, plan, store, rng, trajectory=None, replay=True, history=None):
    """Collect ε-greedy experience on ``cfg`` and retrain at the end of every round.

    With ``replay`` every stored dataset takes part in each update; without it
    only the current scenario's data does. Returns the scenario's frozen dataset.
    """
    if net.schema_hash != store.schema_hash:
        raise SchemaMismatch(f"network schema {net.schema_hash} != store schema {store.schema_hash}")
    world = World(cfg, trajectory)
    current = store.open(cfg.scenario_id)
    policy = DRLPolicy(net, epsilon=plan.epsilon, training=True, sink=current,
                       scenario_id=cfg.scenario_id)
    for r in range(cfg.duration // plan.round_len):
        run(world, policy, plan.round_len)
        sets = store.ordered() if replay else [current]
        out = train_round(net, sets, plan.alpha, plan.batch, rng, plan.epochs, plan.lr)
        if history is not None:
            log = RoundLog(cfg.scenario_id, r, world.t, 0, 0, [len(d) for d in sets])
            if out is None:
                log.skipped = True
            else:
                log.n_per_dataset, log.n_batches = out[0], out[1]
                log.train_loss = out[2].train[-1]
                log.val_loss = out[2].val[-1] if out[2].val else math.nan
            history.rounds.append(log)
    policy.discard_pending()
    return current.freeze()


def run_cl(plan, net=None, replay=True, trajectories=None, store=None):
    """Train across ``plan.scenarios`` in order. Returns ``(net, store, history)``.

    Weights and Adam moments carry over between scenarios.
    """
    if net is None:
        net = new_network(plan.seed, _hyper(plan))
    store = store if store is not None else ReplayStore(net.schema_hash)
    history = TrainHistory()
    for i, cfg in enumerate(plan.scenarios):
        rng = np.random.default_rng([plan.seed, i])
        traj = trajectories[i] if trajectories is not None else None
        train_scenario(net, cfg, plan, store, rng, traj, replay, history)
    return net, store, history


def _hyper(plan):
    h = Hyper(batch=plan.batch)
    if plan.epochs is not None:
        h.epochs = plan.epochs
    if plan.lr is not None:
        h.lr = plan.lr
    return h


def fine_tune(base_net, cfg, budget, round_len=50, epsilon=0.1, alpha=0.1, batch=32,
              seed=0, trajectory=None, epochs=None, lr=None, history=None):
    """Continue training a copy of ``base_net`` on ``budget`` steps of ``cfg``.

    The replay store holds only the fine-tuning data. A zero budget returns an
    unchanged copy.
    """
    if base_net.schema_hash != DEFAULT_SCHEMA.hash:
        raise SchemaMismatch(
            f"base model schema {base_net.schema_hash} != runtime {DEFAULT_SCHEMA.hash}"
        )
    net = base_net.copy()
    if budget == 0:
        return net
    if budget % round_len:
        raise ConfigError(f"round_len {round_len} does not divide budget {budget}")
    ft_cfg = cfg.replace(duration=budget, cooldown=0, scenario_id=f"{cfg.scenario_id}-ft")
    plan = CLPlan([ft_cfg], alpha=alpha, batch=batch, round_len=round_len, epsilon=epsilon,
                  epochs=epochs, lr=lr, seed=seed)
    store = ReplayStore(net.schema_hash)
    hist = history if history is not None else TrainHistory()
    train_scenario(net, ft_cfg, plan, store, np.random.default_rng([seed, 1]), trajectory,
                   True, hist)
    return net

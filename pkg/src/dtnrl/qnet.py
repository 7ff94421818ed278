"""Fully connected Q-value network with ReLU hidden layers, Adam and MSE, in numpy."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

FORMAT_NAME = "dtnrl-qnet"
FORMAT_VERSION = 1


class SchemaMismatch(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


def default_dims(n_inputs):
    return [n_inputs, 10 * n_inputs, n_inputs // 2, 1]


@dataclass
class Hyper:
    lr: float = 1e-4
    batch: int = 32
    epochs: int = 10
    val_split: float = 0.2
    gamma: float = 0.99
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class LossTrace:
    train: list = field(default_factory=list)
    val: list = field(default_factory=list)


class QNetwork:
    """``dims[0] -> ... -> 1`` network; ReLU on hidden layers, linear output."""

    def __init__(self, dims, schema_hash="", hyper=None, seed=0):
        self.dims = [int(d) for d in dims]
        self.schema_hash = schema_hash
        self.hyper = hyper or Hyper()
        self.meta = {}  # provenance (config digest, seed) written into saved files
        rng = np.random.default_rng(seed)
        params = []
        for fan_in, fan_out in zip(self.dims[:-1], self.dims[1:]):
            lim = math.sqrt(6.0 / fan_in)
            params += [rng.uniform(-lim, lim, size=(fan_in, fan_out)), np.zeros(fan_out)]
        self.set_params(params)
        self.reset_optimizer()

    def _shapes(self):
        out = []
        for a, b in zip(self.dims[:-1], self.dims[1:]):
            out += [(a, b), (b,)]
        return out

    def _views(self, flat):
        out, i = [], 0
        for shape in self._shapes():
            size = math.prod(shape)
            out.append(flat[i:i + size].reshape(shape))
            i += size
        return out

    def reset_optimizer(self):
        # moments live in flat buffers so one Adam step is a handful of vector ops
        self._m = np.zeros_like(self._flat)
        self._v = np.zeros_like(self._flat)
        self.adam_step = 0

    @property
    def m(self):
        return self._views(self._m)

    @property
    def v(self):
        return self._views(self._v)

    def set_moments(self, m, v):
        self._m = np.concatenate([np.ravel(a) for a in m]).astype(float)
        self._v = np.concatenate([np.ravel(a) for a in v]).astype(float)
        if self._m.size != self._flat.size or self._v.size != self._flat.size:
            raise SchemaMismatch("optimizer state does not match parameter count")

    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def set_params(self, params):
        shapes = [tuple(np.shape(p)) for p in params]
        if len(shapes) != 2 * (len(self.dims) - 1) or shapes != self._shapes():
            raise SchemaMismatch(f"parameter shapes {shapes} do not match dims {self.dims}")
        self._flat = np.concatenate([np.ravel(np.asarray(p, float)) for p in params])
        views = self._views(self._flat)
        self.weights, self.biases = views[0::2], views[1::2]

    def copy(self):
        net = object.__new__(QNetwork)
        net.dims = list(self.dims)
        net.schema_hash = self.schema_hash
        net.hyper = Hyper(**self.hyper.to_dict())
        net.meta = dict(self.meta)
        net.set_params(self.params())
        net._m = self._m.copy()
        net._v = self._v.copy()
        net.adam_step = self.adam_step
        return net

    @property
    def n_inputs(self):
        return self.dims[0]

    # -- forward / backward ---------------------------------------------------

    def predict(self, x):
        """Q-values for a ``(n, F)`` batch (or a single ``(F,)`` row)."""
        x = np.asarray(x, float)
        single = x.ndim == 1
        h = x[None] if single else x
        if h.shape[1] != self.dims[0]:
            raise SchemaMismatch(f"input width {h.shape[1]} != network input {self.dims[0]}")
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                np.maximum(h, 0.0, out=h)
        out = h[:, 0]
        return float(out[0]) if single else out

    def loss_and_grads(self, x, y):
        """MSE loss and its gradients w.r.t. ``params()`` order."""
        acts = [np.asarray(x, float)]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ w + b
            acts.append(np.maximum(z, 0.0) if i < last else z)
        pred = acts[-1][:, 0]
        err = pred - y
        loss = float(np.mean(err * err))
        g = (2.0 / len(y)) * err[:, None]
        flat = np.empty_like(self._flat)
        grads = self._views(flat)
        for i in range(last, -1, -1):
            np.matmul(acts[i].T, g, out=grads[2 * i])
            g.sum(axis=0, out=grads[2 * i + 1])
            if i > 0:
                g = (g @ self.weights[i].T) * (acts[i] > 0)
        self._last_flat_grad = flat
        return loss, grads

    def adam_update(self, grads, lr=None):
        h = self.hyper
        lr = h.lr if lr is None else lr
        self.adam_step += 1
        t = self.adam_step
        corr = lr * math.sqrt(1 - h.beta2 ** t) / (1 - h.beta1 ** t)
        g = getattr(self, "_last_flat_grad", None)
        if g is None or len(grads) != len(self._shapes()) or grads[0].base is not g:
            g = np.concatenate([np.ravel(a) for a in grads])
        self._last_flat_grad = None
        m, v = self._m, self._v
        m *= h.beta1
        m += (1 - h.beta1) * g
        v *= h.beta2
        v += (1 - h.beta2) * (g * g)
        step = np.sqrt(v)
        step += h.eps
        np.divide(m, step, out=step)
        step *= corr
        self._flat -= step

    def mse(self, x, y):
        err = self.predict(x) - y
        return float(np.mean(err * err))

    def train_epochs(self, batches, epochs=None, val_split=None, lr=None):
        """Adam/MSE over a fixed batch sequence for a fixed number of epochs.

        The trailing ``val_split`` fraction of batches is held out and only
        reported (no early stopping).
        """
        h = self.hyper
        epochs = h.epochs if epochs is None else epochs
        val_split = h.val_split if val_split is None else val_split
        batches = list(batches)
        if not batches:
            raise ValueError("no batches to train on")
        n_val = int(round(val_split * len(batches))) if len(batches) > 1 else 0
        train = batches[: len(batches) - n_val]
        val = batches[len(batches) - n_val:]
        trace = LossTrace()
        for epoch in range(epochs):
            total, count = 0.0, 0
            for x, y in train:
                loss, grads = self.loss_and_grads(x, y)
                if not math.isfinite(loss):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}, adam step {self.adam_step}, "
                        f"batch size {len(y)}, target range [{np.min(y)}, {np.max(y)}]"
                    )
                self.adam_update(grads, lr)
                total += loss * len(y)
                count += len(y)
            trace.train.append(total / count)
            if val:
                xs = np.vstack([x for x, _ in val])
                ys = np.concatenate([y for _, y in val])
                trace.val.append(self.mse(xs, ys))
        return trace

    # -- serialization --------------------------------------------------------

    def save(self, path, include_optimizer=True):
        header = {
            "version": FORMAT_VERSION,
            "dims": self.dims,
            "schema_hash": self.schema_hash,
            "hyper": self.hyper.to_dict(),
            "adam_step": self.adam_step,
            "optimizer": include_optimizer,
            "meta": self.meta,
        }
        with open(path, "w") as fh:
            fh.write(f"{FORMAT_NAME} {FORMAT_VERSION}\n")
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            blocks = [("param", self.params())]
            if include_optimizer:
                blocks += [("adam_m", self.m), ("adam_v", self.v)]
            for kind, arrays in blocks:
                for i, a in enumerate(arrays):
                    a2 = np.atleast_2d(a) if a.ndim == 1 else a
                    fh.write(f"{kind} {i} {' '.join(str(s) for s in a.shape)}\n")
                    for row in a2:
                        fh.write(" ".join(repr(float(x)) for x in row) + "\n")

    @classmethod
    def load(cls, path, schema_hash=None, n_inputs=None):
        with open(path) as fh:
            first = fh.readline().split()
            if len(first) != 2 or first[0] != FORMAT_NAME:
                raise SchemaMismatch(f"{path}: not a {FORMAT_NAME} file")
            if int(first[1]) != FORMAT_VERSION:
                raise SchemaMismatch(f"{path}: unsupported version {first[1]}")
            header = json.loads(fh.readline())
            if schema_hash is not None and header["schema_hash"] != schema_hash:
                raise SchemaMismatch(
                    f"{path}: schema hash {header['schema_hash']} != runtime {schema_hash}"
                )
            if n_inputs is not None and header["dims"][0] != n_inputs:
                raise SchemaMismatch(
                    f"{path}: model expects {header['dims'][0]} features, runtime has {n_inputs}"
                )
            blocks = {"param": [], "adam_m": [], "adam_v": []}
            while True:
                line = fh.readline()
                if not line:
                    break
                kind, _, *shape = line.split()
                shape = tuple(int(s) for s in shape)
                nrows = shape[0] if len(shape) == 2 else 1
                data = [fh.readline().split() for _ in range(nrows)]
                arr = np.array([[float(x) for x in r] for r in data]).reshape(shape)
                blocks[kind].append(arr)
        net = object.__new__(cls)
        net.dims = header["dims"]
        net.schema_hash = header["schema_hash"]
        net.hyper = Hyper(**header["hyper"])
        net.meta = header.get("meta", {})
        try:
            net.set_params(blocks["param"])
        except SchemaMismatch as exc:
            raise SchemaMismatch(f"{path}: {exc}") from None
        if header.get("optimizer"):
            net.set_moments(blocks["adam_m"], blocks["adam_v"])
            net.adam_step = header["adam_step"]
        else:
            net.reset_optimizer()
        return net


def q_value(net, state_feats, action_feats):
    x = np.concatenate([np.asarray(state_feats, float), np.asarray(action_feats, float)])
    if x.shape[0] != net.n_inputs:
        raise SchemaMismatch(f"input width {x.shape[0]} != network input {net.n_inputs}")
    return net.predict(x)


def bellman_targets(snapshot, rewards, next_rows, next_ptr, terminal, gamma=None):
    """``r`` for terminal transitions, ``r + gamma * max_a Q(s', a)`` otherwise.

    Candidate rows for transition ``i`` are ``next_rows[next_ptr[i]:next_ptr[i+1]]``.
    """
    gamma = snapshot.hyper.gamma if gamma is None else gamma
    rewards = np.asarray(rewards, float)
    terminal = np.asarray(terminal, bool)
    counts = np.diff(next_ptr)
    if np.any(counts[~terminal] == 0):
        bad = int(np.flatnonzero((counts == 0) & ~terminal)[0])
        raise ValueError(f"non-terminal transition {bad} has no next candidates")
    if np.any(counts[terminal] != 0):
        raise ValueError("terminal transitions must not carry next candidates")
    targets = rewards.copy()
    live = np.flatnonzero(~terminal)
    if live.size:
        q = snapshot.predict(next_rows) if len(next_rows) else np.empty(0)
        best = np.maximum.reduceat(q, next_ptr[live]) if q.size else np.empty(0)
        targets[live] += gamma * best
    return targets

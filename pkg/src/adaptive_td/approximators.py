"""Value-function approximators sharing a fit/predict contract.

Tabular and grid approximators solve the least-squares fit exactly (per-cell
means).  The MLP is trained by Adam on uniformly sampled minibatches.  Targets
are always plain arrays, so no gradient ever reaches target construction.
"""

from __future__ import annotations

import abc
import json
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1


class ValueApproximator(abc.ABC):
    #: fit() returns the exact least-squares minimizer in one call
    exact: bool = True
    kind: str = "approximator"

    @abc.abstractmethod
    def predict(self, states) -> np.ndarray:
        ...

    @abc.abstractmethod
    def fit(self, states, targets, budget: int | None = None) -> "ValueApproximator":
        ...

    @abc.abstractmethod
    def fresh(self, rng: np.random.Generator | None = None) -> "ValueApproximator":
        """Same architecture, newly initialized parameters."""

    @abc.abstractmethod
    def to_dict(self) -> dict:
        ...

    def __call__(self, states) -> np.ndarray:
        return self.predict(states)


def _check_fit_args(states, targets):
    targets = np.asarray(targets, dtype=np.float64)
    if len(targets) == 0:
        raise ValueError("cannot fit on empty data")
    if len(states) != len(targets):
        raise ValueError(f"{len(states)} states but {len(targets)} targets")
    if not np.all(np.isfinite(targets)):
        raise ValueError("targets must be finite")
    return targets


class _CellMeans(ValueApproximator):
    """Piecewise-constant approximator over a finite set of cells."""

    exact = True

    _CACHE_MIN = 1024

    def __init__(self, n_cells: int):
        self.n_cells = int(n_cells)
        self.values = np.zeros(self.n_cells)
        self.counts = np.zeros(self.n_cells, dtype=np.int64)
        self._cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    @abc.abstractmethod
    def _cells(self, states) -> np.ndarray:
        ...

    def cells(self, states) -> np.ndarray:
        # Cell lookups of large read-only arrays (dataset batches) are memoized.
        hit = self._cache.get(id(states))
        if hit is not None and hit[0] is states:
            return hit[1]
        c = self._cells(states)
        if (isinstance(states, np.ndarray) and len(states) >= self._CACHE_MIN
                and not states.flags.writeable):
            if len(self._cache) >= 8:
                self._cache.pop(next(iter(self._cache)))
            self._cache[id(states)] = (states, c)
        return c

    def predict(self, states):
        return self.values[self.cells(states)]

    def fit(self, states, targets, budget=None):
        targets = _check_fit_args(states, targets)
        c = self.cells(states)
        self.counts = np.bincount(c, minlength=self.n_cells)
        sums = np.bincount(c, weights=targets, minlength=self.n_cells)
        self.values = np.divide(sums, self.counts, out=np.zeros(self.n_cells),
                                where=self.counts > 0)
        return self


class TabularApprox(_CellMeans):
    kind = "tabular"

    def __init__(self, n_states: int):
        super().__init__(n_states)

    def _cells(self, states):
        ids = np.asarray(states, dtype=np.int64)
        if np.any((ids < 0) | (ids >= self.n_cells)):
            raise IndexError("state id out of range")
        return ids

    def fresh(self, rng=None):
        return type(self)(self.n_cells)

    def to_dict(self):
        return {"kind": self.kind, "n_states": self.n_cells, "values": self.values.tolist()}


class BiasedTabularApprox(TabularApprox):
    """Tabular values, except that clamped states always predict a forced value."""

    kind = "biased-tabular"

    def __init__(self, n_states: int, clamp: dict[int, float]):
        super().__init__(n_states)
        self.clamp = {int(k): float(v) for k, v in clamp.items()}
        self._clamp_ids = np.array(sorted(self.clamp), dtype=np.int64)
        self._clamp_vals = np.array([self.clamp[i] for i in self._clamp_ids])

    def predict(self, states):
        ids = self.cells(states)
        out = self.values[ids]
        if len(self._clamp_ids):
            pos = np.searchsorted(self._clamp_ids, ids)
            pos = np.minimum(pos, len(self._clamp_ids) - 1)
            hit = self._clamp_ids[pos] == ids
            out = np.where(hit, self._clamp_vals[pos], out)
        return out

    def fit(self, states, targets, budget=None):
        super().fit(states, targets, budget)
        self.values[self._clamp_ids] = self._clamp_vals
        return self

    def fresh(self, rng=None):
        return type(self)(self.n_cells, self.clamp)

    def to_dict(self):
        d = super().to_dict()
        d["clamp"] = {str(k): v for k, v in self.clamp.items()}
        return d


class GridApprox(_CellMeans):
    """Piecewise constant on square cells of side ``cell_size`` anchored at ``low``."""

    kind = "grid"

    def __init__(self, low, high, cell_size=19.0):
        self.low = np.asarray(low, dtype=float)
        self.high = np.asarray(high, dtype=float)
        self.cell_size = np.broadcast_to(np.asarray(cell_size, dtype=float), self.low.shape).copy()
        self.shape = tuple(int(n) for n in np.ceil((self.high - self.low) / self.cell_size))
        super().__init__(int(np.prod(self.shape)))

    def _cells(self, states):
        s = np.atleast_2d(np.asarray(states, dtype=float))
        ij = np.floor((s - self.low) / self.cell_size).astype(np.int64)
        ij = np.clip(ij, 0, np.array(self.shape) - 1)
        return np.ravel_multi_index(tuple(ij.T), self.shape)

    def fresh(self, rng=None):
        return type(self)(self.low, self.high, self.cell_size)

    def to_dict(self):
        return {
            "kind": self.kind,
            "low": self.low.tolist(),
            "high": self.high.tolist(),
            "cell_size": self.cell_size.tolist(),
            "values": self.values.tolist(),
        }


# ---------------------------------------------------------------------------
# MLP


def init_mlp(sizes, rng: np.random.Generator) -> list[np.ndarray]:
    """Glorot-uniform weights, zero biases: ``[W1, b1, W2, b2, ...]``."""
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return params


def mlp_forward(params, x):
    """Network output and the per-layer activations needed for backprop."""
    acts = [x]
    h = x
    n_layers = len(params) // 2
    for i in range(n_layers):
        z = h @ params[2 * i] + params[2 * i + 1]
        h = np.maximum(z, 0.0) if i < n_layers - 1 else z
        acts.append(h)
    return h[:, 0], acts


def mlp_loss(params, x, y) -> float:
    out, _ = mlp_forward(params, x)
    return float(np.mean((out - y) ** 2))


def mlp_gradient(params, x, y):
    """Mean squared error of the minibatch and its gradient w.r.t. every parameter."""
    out, acts = mlp_forward(params, x)
    resid = out - y
    n = len(y)
    grads = [None] * len(params)
    delta = (2.0 / n) * resid[:, None]
    n_layers = len(params) // 2
    for i in reversed(range(n_layers)):
        grads[2 * i] = acts[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params[2 * i].T) * (acts[i] > 0)
    return float(np.mean(resid**2)), grads


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class MlpApprox(ValueApproximator):
    """ReLU MLP on inputs rescaled to [-1, 1]; outputs are multiplied by ``out_scale``."""

    exact = False
    kind = "mlp"

    def __init__(self, low, high, hidden=(50, 50), lr=1e-3, beta1=0.9, beta2=0.999,
                 eps=1e-8, batch_size=512, budget=50000, out_scale=1.0,
                 rng: np.random.Generator | None = None):
        self.low = np.asarray(low, dtype=float)
        self.high = np.asarray(high, dtype=float)
        self.hidden = tuple(int(h) for h in hidden)
        self.adam_cfg = dict(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        self.batch_size = int(batch_size)
        self.budget = int(budget)
        self.out_scale = float(out_scale)
        self.rng = rng if rng is not None else np.random.default_rng()
        self.sizes = (len(self.low), *self.hidden, 1)
        self.params = init_mlp(self.sizes, self.rng)
        self.opt = Adam(self.params, **self.adam_cfg)

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def _inputs(self, states):
        s = np.atleast_2d(np.asarray(states, dtype=float))
        return 2.0 * (s - self.low) / (self.high - self.low) - 1.0

    def predict(self, states):
        out, _ = mlp_forward(self.params, self._inputs(states))
        return self.out_scale * out

    def step(self, states, targets) -> float:
        """One Adam update on the given minibatch; returns its loss (scaled units)."""
        x = self._inputs(states)
        y = np.asarray(targets, dtype=float) / self.out_scale
        loss, grads = mlp_gradient(self.params, x, y)
        self.opt.step(self.params, grads)
        return loss * self.out_scale**2

    def fit(self, states, targets, budget=None):
        targets = _check_fit_args(states, targets)
        states = np.asarray(states)
        budget = self.budget if budget is None else int(budget)
        n = len(targets)
        for _ in range(budget):
            idx = self.rng.integers(n, size=min(self.batch_size, n))
            self.step(states[idx], targets[idx])
        return self

    def fresh(self, rng=None):
        return MlpApprox(self.low, self.high, self.hidden, batch_size=self.batch_size,
                         budget=self.budget, out_scale=self.out_scale,
                         rng=rng if rng is not None else np.random.default_rng(),
                         **self.adam_cfg)

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat_params(self, flat) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {flat.size}")
        i = 0
        for p in self.params:
            p[...] = flat[i:i + p.size].reshape(p.shape)
            i += p.size

    def to_dict(self):
        return {
            "kind": self.kind,
            "low": self.low.tolist(),
            "high": self.high.tolist(),
            "hidden": list(self.hidden),
            "out_scale": self.out_scale,
            "batch_size": self.batch_size,
            "budget": self.budget,
            **self.adam_cfg,
            "params": self.flat_params().tolist(),
        }


class EnsembleMean(ValueApproximator):
    """Average prediction of a set of fitted members (the MC-ensemble estimator)."""

    kind = "ensemble-mean"

    def __init__(self, members):
        self.members = list(members)

    def predict(self, states):
        return np.mean([m.predict(states) for m in self.members], axis=0)

    def fit(self, states, targets, budget=None):
        raise TypeError("an ensemble mean is fitted through its members")

    def fresh(self, rng=None):
        return EnsembleMean([m.fresh(rng) for m in self.members])

    def to_dict(self):
        return {"kind": self.kind, "members": [m.to_dict() for m in self.members]}


def from_dict(d: dict) -> ValueApproximator:
    kind = d["kind"]
    if kind == "tabular":
        a = TabularApprox(d["n_states"])
    elif kind == "biased-tabular":
        a = BiasedTabularApprox(d["n_states"], {int(k): v for k, v in d["clamp"].items()})
    elif kind == "grid":
        a = GridApprox(d["low"], d["high"], d["cell_size"])
    elif kind == "mlp":
        a = MlpApprox(d["low"], d["high"], d["hidden"], lr=d["lr"], beta1=d["beta1"],
                      beta2=d["beta2"], eps=d["eps"], batch_size=d["batch_size"],
                      budget=d["budget"], out_scale=d["out_scale"],
                      rng=np.random.default_rng(0))
        a.set_flat_params(d["params"])
        return a
    elif kind == "ensemble-mean":
        return EnsembleMean([from_dict(m) for m in d["members"]])
    else:
        raise ValueError(f"unknown approximator kind {kind!r}")
    a.values = np.asarray(d["values"], dtype=float)
    if kind == "biased-tabular":
        a.values[a._clamp_ids] = a._clamp_vals
    return a


def save_checkpoint(approx: ValueApproximator | list, path) -> None:
    """Write one approximator, or a list of them, as a versioned JSON document."""
    if isinstance(approx, (list, tuple)):
        body = {"members": [a.to_dict() for a in approx]}
    else:
        body = {"model": approx.to_dict()}
    Path(path).write_text(json.dumps({"version": CHECKPOINT_VERSION, **body}))


def load_checkpoint(path):
    d = json.loads(Path(path).read_text())
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
    if "members" in d:
        return [from_dict(m) for m in d["members"]]
    return from_dict(d["model"])


def make_approximator(name: str, env, rng: np.random.Generator | None = None, **params):
    """Factory keyed by ``tabular``, ``biased-tabular``, ``grid`` or ``mlp``."""
    if name == "tabular":
        return TabularApprox(env.n_states)
    if name == "biased-tabular":
        beta = params.get("beta", 1.0)
        mu = env.cfg.mu
        return BiasedTabularApprox(env.n_states, {env.b1: mu + beta, env.b2: mu + beta})
    if name == "grid":
        return GridApprox(env.low, env.high, params.get("cell_size", _default_cell(env)))
    if name == "mlp":
        keys = ("hidden", "lr", "batch_size", "budget", "out_scale")
        return MlpApprox(env.low, env.high, rng=rng, **{k: params[k] for k in keys if k in params})
    raise ValueError(f"unknown approximator {name!r}")


def _default_cell(env):
    if env.env_id.startswith("labyrinth"):
        return 19.0
    # same cell count as the labyrinth grid, roughly 21 x 16
    return (env.high - env.low) / np.array([21.0, 16.0])

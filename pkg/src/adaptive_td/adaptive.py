"""Policy evaluators: Monte Carlo, TD(0), TD(lambda), MC ensemble and Adaptive TD.

Every evaluator goes through the same fitting loop so that runs differing
only in their targets share the exact optimization schedule:

* exact approximators (tabular, grid): one closed-form fit per epoch;
* the MLP: ``budget`` Adam steps on minibatches drawn uniformly with
  replacement.  Targets are rebuilt from the current estimate for every
  minibatch (``refresh="minibatch"``) or once per pass over the data
  (``refresh="epoch"``).

Adaptive TD freezes a confidence function fitted to Monte Carlo returns and
replaces every TD(0) target outside its interval by the interval midpoint
(or the nearest endpoint with ``fallback="clip"``).
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .approximators import EnsembleMean, ValueApproximator, make_approximator
from .confidence import ConfidenceFunction, Ensemble, train_ensemble
from .mdp import Batch, Dataset
from .targets import lambda_targets_batch, mc_targets, td0_targets

ALGORITHMS = ("mc", "td0", "td_lambda", "mc_ensemble", "adaptive_td")


@dataclass
class EvaluatorConfig:
    algorithm: str = "adaptive_td"
    lam: float = 0.75
    alpha: float = 0.95
    m: int = 3
    fallback: str = "midpoint"
    bootstrap: bool = True
    epochs: int = 1000
    tol: float = 0.0
    gamma: float | None = None
    approximator: str = "tabular"
    approx_params: dict = field(default_factory=dict)
    budget: int = 50000
    refresh: str = "minibatch"
    z: float | None = None  # overrides the t-quantile; inf -> TD(0), 0 -> ensemble mean
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.m < 2:
            raise ValueError("m must be >= 2")
        if self.fallback not in ("midpoint", "clip"):
            raise ValueError(f"unknown fallback {self.fallback!r}")
        if self.refresh not in ("minibatch", "epoch"):
            raise ValueError(f"unknown refresh mode {self.refresh!r}")
        if self.epochs < 1 or self.budget < 1:
            raise ValueError("epochs and budget must be positive")
        if self.z is not None and self.z < 0:
            raise ValueError("z must be non-negative")

    @property
    def label(self) -> str:
        if self.algorithm == "td_lambda":
            return f"td_lambda_{self.lam:g}"
        return self.algorithm

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["z"] is not None and math.isinf(d["z"]):
            d["z"] = "inf"
        return d


@dataclass
class RunResult:
    V: ValueApproximator
    config: EvaluatorConfig
    epochs: list[dict] = field(default_factory=list)
    gate_rate: float | None = None
    wall_time_ms: float = 0.0
    ensemble: Ensemble | None = None
    confidence: ConfidenceFunction | None = None

    def record(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "epochs": self.epochs,
            "gate_rate": self.gate_rate,
            "wall_time_ms": self.wall_time_ms,
        }


def select_target(td, L, U, fallback: str = "midpoint"):
    """Keep the TD target when strictly inside (L, U), otherwise fall back.

    Works elementwise on arrays; scalars in, scalar out.
    """
    td, L, U = np.asarray(td, float), np.asarray(L, float), np.asarray(U, float)
    if np.any(L > U):
        raise ValueError("inverted interval: L > U")
    inside = (L < td) & (td < U)
    if fallback == "midpoint":
        with np.errstate(invalid="ignore"):
            alt = 0.5 * (L + U)
    elif fallback == "clip":
        alt = np.clip(td, L, U)
    else:
        raise ValueError(f"unknown fallback {fallback!r}")
    out = np.where(inside, td, alt)
    return out[()] if out.ndim == 0 else out


def _rngs(seed):
    ens, init, loop = np.random.SeedSequence(seed).spawn(3)
    return ens, np.random.default_rng(init), np.random.default_rng(loop)


TargetFn = Callable[[np.ndarray | None], tuple[np.ndarray, int]]


def _values_snapshot(V):
    return V.values.copy() if hasattr(V, "values") else None


def fit_loop(batch: Batch, V: ValueApproximator, cfg: EvaluatorConfig,
             rng: np.random.Generator, make_targets: TargetFn,
             per_minibatch: bool = True, constant: bool = False) -> list[dict]:
    """Shared training schedule.  ``make_targets(index)`` returns (targets, n_gated).

    ``constant`` marks targets that do not depend on the current estimate;
    an exact approximator then needs a single epoch.
    """
    states = batch.states
    n = len(batch)
    log = []
    if V.exact:
        for epoch in range(1 if constant else cfg.epochs):
            targets, gated = make_targets(None)
            before = _values_snapshot(V)
            V.fit(states, targets)
            loss = float(np.mean((V.predict(states) - targets) ** 2))
            log.append({"epoch": epoch, "loss": loss, "gate_rate": gated / n})
            if cfg.tol > 0 and before is not None:
                change = np.max(np.abs(V.values - before))
                if change <= cfg.tol * max(1.0, float(np.max(np.abs(V.values)))):
                    break
        return log

    bs = min(V.batch_size, n)
    steps_per_epoch = max(1, math.ceil(n / bs))
    losses, gated_total, seen = [], 0, 0
    full_targets = None
    for step in range(cfg.budget):
        idx = rng.integers(n, size=bs)
        if per_minibatch:
            targets, gated = make_targets(idx)
        else:
            if step % steps_per_epoch == 0:
                full_targets, full_gated = make_targets(None)
                gated_total += full_gated
                seen += n
            targets, gated = full_targets[idx], 0
        losses.append(V.step(states[idx], targets))
        if per_minibatch:
            gated_total += gated
            seen += bs
        if (step + 1) % steps_per_epoch == 0 or step + 1 == cfg.budget:
            log.append({
                "epoch": len(log),
                "loss": float(np.mean(losses)),
                "gate_rate": gated_total / seen if seen else 0.0,
            })
            losses, gated_total, seen = [], 0, 0
    return log


def _gamma(cfg, gamma):
    g = cfg.gamma if cfg.gamma is not None else gamma
    if not 0 < g <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {g}")
    return g


def fit_to_targets(dataset: Dataset, targets: np.ndarray, factory, cfg: EvaluatorConfig):
    """Regress a fresh approximator on fixed per-transition targets with the standard schedule."""
    _, init_rng, loop_rng = _rngs(cfg.seed)
    V = factory(init_rng)
    targets = np.asarray(targets, dtype=float)
    log = fit_loop(dataset.batch, V, cfg, loop_rng, lambda idx: (
        targets if idx is None else targets[idx], 0), constant=True)
    return V, log


def run_baseline(dataset: Dataset, gamma: float, cfg: EvaluatorConfig, factory) -> RunResult:
    """MC, TD(0), TD(lambda) or the MC-ensemble mean."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    gamma = _gamma(cfg, gamma)
    t0 = time.perf_counter()
    ens_seed, init_rng, loop_rng = _rngs(cfg.seed)
    batch = dataset.batch
    alg = cfg.algorithm
    result = RunResult(None, cfg)
    if alg == "mc_ensemble":
        ens = train_ensemble(dataset, gamma, cfg.m, factory, cfg.bootstrap, ens_seed, cfg.budget)
        result.V, result.ensemble = EnsembleMean(ens.members), ens
    else:
        V = factory(init_rng)
        if alg == "mc":
            mc = mc_targets(dataset, gamma).values
            make = lambda idx: (mc if idx is None else mc[idx], 0)
            per_mb, constant = True, True
        elif alg == "td0":
            make = lambda idx: (td0_targets(batch, V, gamma, idx), 0)
            per_mb, constant = cfg.refresh == "minibatch", False
        elif alg == "td_lambda":
            # lambda-returns need whole trajectories; rebuilt once per pass
            make = lambda idx: (lambda_targets_batch(batch, V, gamma, cfg.lam), 0)
            per_mb, constant = False, False
        else:
            raise ValueError(f"{alg!r} is not a baseline; use run_adaptive_td")
        result.epochs = fit_loop(batch, V, cfg, loop_rng, make, per_mb, constant)
        result.V = V
    result.wall_time_ms = 1000.0 * (time.perf_counter() - t0)
    return result


def run_adaptive_td(dataset: Dataset, gamma: float, cfg: EvaluatorConfig, factory) -> RunResult:
    """Confidence-gated TD(0) against a frozen Monte Carlo ensemble interval."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    gamma = _gamma(cfg, gamma)
    t0 = time.perf_counter()
    ens_seed, init_rng, loop_rng = _rngs(cfg.seed)
    batch = dataset.batch
    ens = train_ensemble(dataset, gamma, cfg.m, factory, cfg.bootstrap, ens_seed, cfg.budget)
    cf = ConfidenceFunction(ens, cfg.alpha, cfg.z)
    L, U = cf.interval(batch.states)
    V = factory(init_rng)

    def make(idx):
        td = td0_targets(batch, V, gamma, idx)
        lo, hi = (L, U) if idx is None else (L[idx], U[idx])
        target = select_target(td, lo, hi, cfg.fallback)
        return target, int(np.count_nonzero(~((lo < td) & (td < hi))))

    epochs = fit_loop(batch, V, cfg, loop_rng, make, cfg.refresh == "minibatch")
    n_gated = sum(e["gate_rate"] for e in epochs)
    result = RunResult(V, cfg, epochs, n_gated / len(epochs) if epochs else 0.0,
                       1000.0 * (time.perf_counter() - t0), ens, cf)
    return result


def approximator_factory(env, cfg: EvaluatorConfig, dataset: Dataset | None = None):
    """Factory building fresh approximators of the configured kind for ``env``.

    The MLP output scale is fixed from the spread of the Monte Carlo returns so
    that all algorithms regress on comparably scaled targets.
    """
    params = dict(cfg.approx_params)
    if cfg.approximator == "mlp":
        params.setdefault("budget", cfg.budget)
        if "out_scale" not in params and dataset is not None:
            mc = mc_targets(dataset, _gamma(cfg, env.gamma)).values
            params["out_scale"] = max(1.0, float(np.std(mc)))
    return lambda rng: make_approximator(cfg.approximator, env, rng=rng, **params)


def evaluate(dataset: Dataset, env, cfg: EvaluatorConfig) -> RunResult:
    """Run the configured algorithm on ``dataset`` collected from ``env``."""
    factory = approximator_factory(env, cfg, dataset)
    if cfg.algorithm == "adaptive_td":
        return run_adaptive_td(dataset, env.gamma, cfg, factory)
    return run_baseline(dataset, env.gamma, cfg, factory)

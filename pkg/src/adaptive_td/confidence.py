"""Ensembles fitted to Monte Carlo returns and Student-t predictive intervals."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .approximators import ValueApproximator
from .mdp import Dataset
from .targets import mc_targets

# ---------------------------------------------------------------------------
# Student-t quantiles


def _betacf(a: float, b: float, x: float, max_iter: int = 10000, tol: float = 1e-15) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b})")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_central_prob(t: float, df: float) -> float:
    """P(|T| <= t) for a Student-t variable with ``df`` degrees of freedom."""
    if t <= 0:
        return 0.0
    return 1.0 - betainc_reg(0.5 * df, 0.5, df / (df + t * t))


@lru_cache(maxsize=None)
def t_quantile(df: float, alpha: float) -> float:
    """Two-sided quantile: the t with P(|T_df| <= t) = alpha, found by bisection."""
    if not df >= 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {df}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    lo, hi = 0.0, 1.0
    while t_central_prob(hi, df) < alpha:
        lo, hi = hi, 2.0 * hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if t_central_prob(mid, df) < alpha:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * hi:
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Ensembles


@dataclass
class Ensemble:
    members: list[ValueApproximator]
    resamples: list[np.ndarray | None] = field(default_factory=list)

    @property
    def m(self) -> int:
        return len(self.members)

    def member_predictions(self, states) -> np.ndarray:
        """Array of shape (m, n_states)."""
        return np.stack([mem.predict(states) for mem in self.members])


def _member_rngs(seed, m: int):
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in seed.spawn(m)]


def train_ensemble(dataset: Dataset, gamma: float, m: int,
                   factory: Callable[[np.random.Generator], ValueApproximator],
                   bootstrap: bool = True, seed=0, budget: int | None = None) -> Ensemble:
    """Fit ``m`` approximators to Monte Carlo returns.

    With ``bootstrap`` each member sees its own resample of whole trajectories
    (n draws with replacement); otherwise all members share the data and
    differ only through their initialization.
    """
    if m < 2:
        raise ValueError("an ensemble needs at least 2 members")
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    targets = mc_targets(dataset, gamma)
    offsets = dataset.batch.offsets
    n = len(dataset)
    members, resamples = [], []
    for rng in _member_rngs(seed, m):
        model = factory(rng)
        if bootstrap:
            pick = rng.integers(n, size=n)
            rows = np.concatenate([np.arange(offsets[i], offsets[i + 1]) for i in pick])
            resamples.append(pick)
        else:
            rows = slice(None)
            resamples.append(None)
        model.fit(targets.states[rows], targets.values[rows], budget)
        members.append(model)
    return Ensemble(members, resamples)


class ConfidenceFunction:
    """Per-state predictive interval mean +- z * sd * sqrt(1 + 1/m) from ensemble predictions.

    ``z`` defaults to the two-sided Student-t quantile at level ``alpha`` with
    m - 1 degrees of freedom; ``z=inf`` gives unbounded intervals and ``z=0``
    collapses them to the ensemble mean.
    """

    def __init__(self, ensemble: Ensemble, alpha: float = 0.95, z: float | None = None):
        self.ensemble = ensemble
        self.alpha = alpha
        self.z = t_quantile(ensemble.m - 1, alpha) if z is None else float(z)

    @property
    def m(self) -> int:
        return self.ensemble.m

    def interval(self, states) -> tuple[np.ndarray, np.ndarray]:
        preds = self.ensemble.member_predictions(states)
        return predictive_interval(preds, self.z)

    def midpoint(self, states) -> np.ndarray:
        return self.ensemble.member_predictions(states).mean(axis=0)


def predictive_interval(preds: np.ndarray, z: float) -> tuple[np.ndarray, np.ndarray]:
    """Interval bounds from member predictions of shape (m, ...)."""
    m = preds.shape[0]
    mean = preds.mean(axis=0)
    if math.isinf(z):
        half = np.full_like(mean, np.inf)
    else:
        sd = preds.std(axis=0, ddof=1)
        half = z * sd * math.sqrt(1.0 + 1.0 / m)
    return mean - half, mean + half


def interval(cf: ConfidenceFunction, states) -> tuple[np.ndarray, np.ndarray]:
    return cf.interval(states)

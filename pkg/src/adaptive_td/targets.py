"""Regression targets: Monte Carlo returns, TD(0) and forward-view lambda-returns.

All functions are pure.  Terminal states have value 0.  A trajectory cut by
``max_steps`` (non-terminal last transition) bootstraps from the value
estimate at the cut state when one is supplied.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .mdp import Batch, Dataset, Trajectory, Transition


@dataclass(frozen=True)
class TargetSet:
    states: np.ndarray
    values: np.ndarray
    traj_ids: np.ndarray
    steps: np.ndarray
    truncated: np.ndarray

    def __len__(self) -> int:
        return len(self.values)


def _reverse_recursion(a: np.ndarray, coef: float, batch: Batch) -> np.ndarray:
    """Solve G[t] = a[t] + coef * G[t+1] within each trajectory (G = a at the last step)."""
    out = np.empty_like(a)
    den = [1.0, -coef]
    for seg in batch.segments():
        out[seg] = lfilter([1.0], den, a[seg][::-1])[::-1]
    return out


def _bootstrap_values(batch: Batch, V, mask: np.ndarray) -> np.ndarray:
    vals = np.zeros(len(batch))
    if V is not None and mask.any():
        vals[mask] = V.predict(batch.next_states[mask])
    return vals


def mc_targets(dataset: Dataset, gamma: float, bootstrap=None) -> TargetSet:
    """Observed discounted tail return for every state occurrence.

    ``bootstrap`` (a value approximator) closes the tail of truncated
    trajectories; without it their missing reward mass counts as 0.
    """
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    b = dataset.batch
    cut = b.last & ~b.terminal
    v_next = _bootstrap_values(b, bootstrap, cut)
    a = b.rewards + gamma * ((~b.terminal & b.last) * v_next)
    values = _reverse_recursion(a, gamma, b)
    return TargetSet(b.states, values, b.traj_ids, b.steps, cut[b.offsets[1:] - 1][b.traj_ids])


def td0_target(transition: Transition, V, gamma: float) -> float:
    """r + gamma * V(s'), with V(s') = 0 after a terminal transition."""
    if transition.terminal:
        return transition.reward + gamma * 0.0
    v = float(V.predict(np.asarray([transition.next_state]))[0])
    if not np.isfinite(v):
        raise ValueError("value prediction is not finite")
    return transition.reward + gamma * v


def td0_targets(batch: Batch, V, gamma: float, index=None) -> np.ndarray:
    """Vectorized TD(0) targets for all (or the indexed) transitions of a batch."""
    if index is None:
        r, nxt, term = batch.rewards, batch.next_states, batch.terminal
    else:
        r, nxt, term = batch.rewards[index], batch.next_states[index], batch.terminal[index]
    v = V.predict(nxt)
    return r + gamma * ((~term) * v)


def lambda_targets_batch(batch: Batch, V, gamma: float, lam: float) -> np.ndarray:
    """Forward-view lambda-returns for every transition of a batch.

    Uses G[t] = r[t] + gamma * ((1 - lam) * V(s[t+1]) + lam * G[t+1]) inside
    a trajectory; the last step is the TD(0) target (0 after termination,
    V at a truncation cut).
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    v = V.predict(batch.next_states)
    cont = ~batch.terminal
    a = np.where(
        batch.last,
        batch.rewards + gamma * (cont * v),
        batch.rewards + gamma * ((1.0 - lam) * (cont * v)),
    )
    return _reverse_recursion(a, gamma * lam, batch)


def lambda_targets(trajectory: Trajectory, V, gamma: float, lam: float) -> np.ndarray:
    return lambda_targets_batch(Dataset([trajectory]).batch, V, gamma, lam)


def n_step_return(trajectory: Trajectory, V, gamma: float, t: int, n: int) -> float:
    """n-step return from step t; falls back to the full tail when the episode ends first."""
    T = len(trajectory)
    g, disc = 0.0, 1.0
    end = min(t + n, T)
    for j in range(t, end):
        g += disc * trajectory.rewards[j]
        disc *= gamma
    if end < T or not trajectory.terminal:
        g += disc * float(V.predict(trajectory.states[end:end + 1])[0])
    return g

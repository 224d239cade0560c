"""Environment and policy interfaces, trajectories, datasets and rollout collection.

States are stored as numpy arrays: discrete environments use integer ids
(shape ``(T,)``), continuous environments use real coordinates (shape
``(T, d)``).  A trajectory keeps ``T + 1`` states so that the next state of
transition ``t`` is, by construction, the state of transition ``t + 1``.
"""

from __future__ import annotations

import abc
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Iterator, Sequence

import numpy as np

FORMAT_VERSION = 1


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for trajectory ``index`` of a collection seeded by ``seed``."""
    return np.random.default_rng([int(seed), int(index)])


@dataclass(frozen=True)
class Transition:
    state: Any
    action: int
    reward: float
    next_state: Any
    terminal: bool


@dataclass(eq=False)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    terminal: bool

    def __post_init__(self):
        self.states = np.asarray(self.states)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        n = len(self.rewards)
        if n == 0:
            raise ValueError("trajectory must contain at least one transition")
        if len(self.states) != n + 1 or len(self.actions) != n:
            raise ValueError(
                f"inconsistent lengths: {len(self.states)} states, "
                f"{len(self.actions)} actions, {n} rewards"
            )
        if not np.all(np.isfinite(self.rewards)):
            raise ValueError("rewards must be finite")
        if self.states.dtype.kind == "f" and not np.all(np.isfinite(self.states)):
            raise ValueError("state coordinates must be finite")

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def next_states(self) -> np.ndarray:
        return self.states[1:]

    @property
    def truncated(self) -> bool:
        return not self.terminal

    @property
    def transitions(self) -> list[Transition]:
        n = len(self)
        return [
            Transition(
                _as_state(self.states[t]),
                int(self.actions[t]),
                float(self.rewards[t]),
                _as_state(self.states[t + 1]),
                bool(self.terminal and t == n - 1),
            )
            for t in range(n)
        ]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.terminal == other.terminal
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.actions, other.actions)
            and np.array_equal(self.rewards, other.rewards)
        )


def _as_state(x):
    if np.ndim(x) == 0:
        return int(x)
    return tuple(float(v) for v in x)


@dataclass(frozen=True)
class Batch:
    """All transitions of a dataset laid out as flat arrays."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminal: np.ndarray  # per transition
    last: np.ndarray  # final transition of its trajectory
    traj_ids: np.ndarray
    steps: np.ndarray
    offsets: np.ndarray  # start index of each trajectory, plus total length

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            getattr(self, name).flags.writeable = False

    def __len__(self) -> int:
        return len(self.rewards)

    def segments(self) -> Iterator[slice]:
        for a, b in zip(self.offsets[:-1], self.offsets[1:]):
            yield slice(int(a), int(b))


@dataclass(eq=False)
class Dataset:
    trajectories: list[Trajectory]
    env_id: str = ""
    policy_id: str = ""
    seed: int = 0

    def __len__(self) -> int:
        return len(self.trajectories)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            (self.env_id, self.policy_id, self.seed)
            == (other.env_id, other.policy_id, other.seed)
            and len(self) == len(other)
            and all(a == b for a, b in zip(self.trajectories, other.trajectories))
        )

    @property
    def n_transitions(self) -> int:
        return sum(len(t) for t in self.trajectories)

    @cached_property
    def batch(self) -> Batch:
        if not self.trajectories:
            raise ValueError("empty dataset")
        lengths = np.array([len(t) for t in self.trajectories])
        offsets = np.concatenate([[0], np.cumsum(lengths)])
        terminal = np.zeros(offsets[-1], dtype=bool)
        last = np.zeros(offsets[-1], dtype=bool)
        last[offsets[1:] - 1] = True
        for i, tr in enumerate(self.trajectories):
            terminal[offsets[i + 1] - 1] = tr.terminal
        return Batch(
            states=np.concatenate([t.states[:-1] for t in self.trajectories]),
            actions=np.concatenate([t.actions for t in self.trajectories]),
            rewards=np.concatenate([t.rewards for t in self.trajectories]),
            next_states=np.concatenate([t.states[1:] for t in self.trajectories]),
            terminal=terminal,
            last=last,
            traj_ids=np.repeat(np.arange(len(lengths)), lengths),
            steps=np.concatenate([np.arange(n) for n in lengths]),
            offsets=offsets,
        )

    def subset(self, indices: Sequence[int]) -> "Dataset":
        """Dataset made of the given trajectories (repeats allowed)."""
        return Dataset(
            [self.trajectories[i] for i in indices], self.env_id, self.policy_id, self.seed
        )

    def save(self, path) -> None:
        save_dataset(self, path)

    @classmethod
    def load(cls, path) -> "Dataset":
        return load_dataset(path)


class Policy(abc.ABC):
    policy_id: str = "policy"

    @abc.abstractmethod
    def sample(self, state, rng: np.random.Generator) -> int:
        ...


class Environment(abc.ABC):
    """Episodic MDP.  Instances are immutable; episode state lives with the caller."""

    env_id: str = "env"
    gamma: float = 1.0
    discrete: bool = True
    n_states: int | None = None
    state_dim: int | None = None
    # Bounding box of continuous states, used for input scaling and grids.
    low: np.ndarray | None = None
    high: np.ndarray | None = None

    @abc.abstractmethod
    def initial_state(self, rng: np.random.Generator):
        ...

    @abc.abstractmethod
    def step(self, state, action: int, rng: np.random.Generator) -> tuple[Any, float, bool]:
        ...

    @abc.abstractmethod
    def reference_policy(self) -> Policy:
        ...

    def true_value(self, states) -> np.ndarray | None:
        """Analytic ground truth when known, else ``None``."""
        return None

    def rollout(self, policy: Policy, rng: np.random.Generator, max_steps: int,
                start=None) -> Trajectory:
        state = self.initial_state(rng) if start is None else start
        states, actions, rewards = [state], [], []
        terminal = False
        for _ in range(max_steps):
            a = policy.sample(state, rng)
            state, r, terminal = self.step(state, a, rng)
            states.append(state)
            actions.append(a)
            rewards.append(r)
            if terminal:
                break
        return Trajectory(np.array(states), actions, rewards, terminal)

    def simulate_returns(self, starts: np.ndarray, policy: Policy, rng: np.random.Generator,
                         max_steps: int) -> np.ndarray:
        """Discounted return of one fresh episode from each start state.

        Environments with a vectorized simulator override this.
        """
        out = np.empty(len(starts))
        for i, s in enumerate(starts):
            tr = self.rollout(policy, rng, max_steps, start=s)
            out[i] = discounted_return(tr, self.gamma)
        return out


def _collect_one(args):
    env, policy, max_steps, seed, index = args
    return env.rollout(policy, trajectory_rng(seed, index), max_steps)


def collect_trajectories(env: Environment, policy: Policy | None, n: int, max_steps: int,
                         seed: int, workers: int = 1) -> Dataset:
    """Run ``n`` episodes of ``policy`` in ``env``.

    Each trajectory draws from its own stream keyed by ``(seed, index)``, so
    the result does not depend on ``workers``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    policy = policy if policy is not None else env.reference_policy()
    jobs = [(env, policy, max_steps, seed, i) for i in range(n)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            trajs = list(pool.map(_collect_one, jobs, chunksize=max(1, n // (4 * workers))))
    else:
        trajs = [_collect_one(j) for j in jobs]
    return Dataset(trajs, env.env_id, policy.policy_id, seed)


def discounted_return(trajectory: Trajectory, gamma: float, start: int = 0) -> float:
    """Sum of ``gamma**k * r[start + k]`` over the rest of the trajectory."""
    n = len(trajectory)
    if not 0 <= start < n:
        raise IndexError(f"start index {start} out of range for length {n}")
    g = 0.0
    for r in trajectory.rewards[start:][::-1]:
        g = float(r) + gamma * g
    return g


def save_dataset(dataset: Dataset, path) -> None:
    path = Path(path)
    with path.open("w") as f:
        header = {
            "format": FORMAT_VERSION,
            "env_id": dataset.env_id,
            "policy_id": dataset.policy_id,
            "seed": dataset.seed,
        }
        f.write(json.dumps(header) + "\n")
        for tr in dataset.trajectories:
            rec = {
                "states": tr.states.tolist(),
                "actions": tr.actions.tolist(),
                "rewards": tr.rewards.tolist(),
                "terminal": bool(tr.terminal),
            }
            f.write(json.dumps(rec) + "\n")


def load_dataset(path) -> Dataset:
    with Path(path).open() as f:
        header = json.loads(f.readline())
        if header.get("format") != FORMAT_VERSION:
            raise ValueError(f"unsupported dataset format {header.get('format')!r}")
        trajs = []
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            states = np.array(rec["states"])
            if states.dtype.kind in "iu":
                states = states.astype(np.int64)
            trajs.append(Trajectory(states, rec["actions"], rec["rewards"], rec["terminal"]))
    return Dataset(trajs, header["env_id"], header["policy_id"], header["seed"])

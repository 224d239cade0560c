"""Classic Mountain Car with an epsilon-greedy energy-pumping policy."""

from __future__ import annotations

import numpy as np

from ..mdp import Environment, Policy

MIN_POS, MAX_POS = -1.2, 0.6
MAX_SPEED = 0.07
GOAL_POS = 0.5
FORCE, GRAVITY = 0.001, 0.0025


class NearOptimalEps(Policy):
    """Push in the direction of motion (right when at rest); uniform with prob. eps."""

    def __init__(self, eps: float = 0.2):
        if not 0 <= eps <= 1:
            raise ValueError("eps must lie in [0, 1]")
        self.eps = eps
        self.policy_id = f"near-optimal-eps{eps:g}"

    def sample(self, state, rng):
        if rng.random() < self.eps:
            return int(rng.integers(3))
        return 0 if state[1] < 0 else 2

    def sample_batch(self, states, rng):
        greedy = np.where(states[:, 1] < 0, 0, 2)
        explore = rng.random(len(states)) < self.eps
        return np.where(explore, rng.integers(3, size=len(states)), greedy)


class MountainCarEnv(Environment):
    """Actions 0/1/2 push left / coast / push right."""

    discrete = False
    state_dim = 2
    env_id = "mountain-car"

    def __init__(self, gamma: float = 0.99, eps: float = 0.2):
        self.gamma = gamma
        self.eps = eps
        self.low = np.array([MIN_POS, -MAX_SPEED])
        self.high = np.array([MAX_POS, MAX_SPEED])

    def initial_state(self, rng):
        # Uniform over the non-terminal box so that training data covers the evaluation grid.
        return np.array([rng.uniform(MIN_POS, GOAL_POS), rng.uniform(-MAX_SPEED, MAX_SPEED)])

    @staticmethod
    def dynamics(pos, vel, action):
        vel = np.clip(vel + (action - 1) * FORCE - GRAVITY * np.cos(3 * pos), -MAX_SPEED, MAX_SPEED)
        pos = np.clip(pos + vel, MIN_POS, MAX_POS)
        vel = np.where((pos <= MIN_POS) & (vel < 0), 0.0, vel)
        return pos, vel

    def step(self, state, action, rng):
        if action not in (0, 1, 2):
            raise ValueError(f"invalid action {action}")
        pos, vel = self.dynamics(float(state[0]), float(state[1]), action)
        pos, vel = float(pos), float(vel)
        done = pos >= GOAL_POS
        return np.array([pos, vel]), -1.0, bool(done)

    def simulate_returns(self, starts, policy, rng, max_steps):
        states = np.array(starts, dtype=float)
        n = len(states)
        returns = np.zeros(n)
        discount = np.ones(n)
        idx = np.arange(n)
        batch = getattr(policy, "sample_batch", None)
        for _ in range(max_steps):
            if len(idx) == 0:
                break
            if batch is not None:
                acts = batch(states, rng)
            else:
                acts = np.array([policy.sample(s, rng) for s in states])
            pos, vel = self.dynamics(states[:, 0], states[:, 1], acts)
            returns[idx] -= discount[idx]
            discount[idx] *= self.gamma
            states = np.stack([pos, vel], axis=1)
            alive = pos < GOAL_POS
            idx, states = idx[alive], states[alive]
        return returns

    def reference_policy(self):
        return NearOptimalEps(self.eps)


def mountain_car_env(gamma: float = 0.99, eps: float = 0.2) -> MountainCarEnv:
    return MountainCarEnv(gamma, eps)

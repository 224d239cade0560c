"""Branching chain MDP: s0 -> s_i -> b_j -> q -> end, reward N(mu, sigma^2) on the last step."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..mdp import Environment, Policy, Trajectory


@dataclass(frozen=True)
class ChainConfig:
    k: int = 10
    p: int = 5
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"k must be > 1, got {self.k}")
        if not 0 < self.p < self.k:
            raise ValueError(f"p must satisfy 0 < p < k, got p={self.p}, k={self.k}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")


class ChainPolicy(Policy):
    policy_id = "uniform"

    def __init__(self, k: int):
        self.k = k

    def sample(self, state, rng):
        return int(rng.integers(self.k)) if state == 0 else 0


class ChainEnv(Environment):
    discrete = True
    gamma = 1.0

    def __init__(self, cfg: ChainConfig = ChainConfig()):
        self.cfg = cfg
        k = cfg.k
        self.s0 = 0
        self.branches = np.arange(1, k + 1)
        self.b1, self.b2, self.q, self.end = k + 1, k + 2, k + 3, k + 4
        self.n_states = k + 5
        self.env_id = f"chain-k{k}-p{cfg.p}-mu{cfg.mu:g}-sigma{cfg.sigma:g}"

    def initial_state(self, rng):
        return self.s0

    def bottleneck(self, state: int) -> int:
        return self.b1 if state <= self.cfg.p else self.b2

    def step(self, state, action, rng):
        if state == self.s0:
            if not 0 <= action < self.cfg.k:
                raise ValueError(f"invalid action {action} at s0")
            return 1 + int(action), 0.0, False
        if 1 <= state <= self.cfg.k:
            return self.bottleneck(state), 0.0, False
        if state in (self.b1, self.b2):
            return self.q, 0.0, False
        if state == self.q:
            return self.end, float(rng.normal(self.cfg.mu, self.cfg.sigma)), True
        raise ValueError(f"no transitions out of state {state}")

    def rollout(self, policy, rng, max_steps, start=None):
        if not isinstance(policy, ChainPolicy) or start not in (None, self.s0):
            return super().rollout(policy, rng, max_steps, start)
        i = 1 + int(rng.integers(self.cfg.k))
        states = [self.s0, i, self.bottleneck(i), self.q, self.end]
        reward = float(rng.normal(self.cfg.mu, self.cfg.sigma))
        n = min(4, max_steps)
        return Trajectory(
            np.array(states[: n + 1]), [i - 1, 0, 0, 0][:n], [0.0, 0.0, 0.0, reward][:n], n == 4
        )

    def reference_policy(self):
        return ChainPolicy(self.cfg.k)

    def true_value(self, states):
        return np.full(np.shape(states), self.cfg.mu, dtype=float)

    def evaluation_states(self) -> np.ndarray:
        """The intermediate states s_1..s_k on which errors are reported."""
        return self.branches.copy()


def chain_env(cfg: ChainConfig = ChainConfig()) -> ChainEnv:
    return ChainEnv(cfg)

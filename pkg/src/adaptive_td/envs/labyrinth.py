"""Labyrinth-2D: a random walker with fixed step length on a 400x300 map with walls and goal disks."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from ..mdp import Environment, Policy, Trajectory

N_MAPS = 6


@dataclass(frozen=True)
class LabMap:
    width: float = 400.0
    height: float = 300.0
    walls: tuple = ()  # (x, y, w, h)
    goals: tuple = ()  # (cx, cy, r)
    reward: float = 30.0
    p_end: float = 0.0005
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "walls", tuple(tuple(map(float, w)) for w in self.walls))
        object.__setattr__(self, "goals", tuple(tuple(map(float, g)) for g in self.goals))
        if self.width <= 0 or self.height <= 0:
            raise ValueError("map dimensions must be positive")
        for x, y, w, h in self.walls:
            if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > self.width or y + h > self.height:
                raise ValueError(f"wall {(x, y, w, h)} lies outside the map")
        for cx, cy, r in self.goals:
            if r <= 0 or cx - r < 0 or cy - r < 0 or cx + r > self.width or cy + r > self.height:
                raise ValueError(f"goal {(cx, cy, r)} lies outside the map")
            ang = np.linspace(0, 2 * np.pi, 16, endpoint=False)
            pts = [(cx, cy)] + [
                (cx + f * r * np.cos(a), cy + f * r * np.sin(a)) for f in (0.5, 0.95) for a in ang
            ]
            if not self.free(np.array(pts)).any():
                raise ValueError(f"goal {(cx, cy, r)} is fully covered by walls")

    @classmethod
    def from_dict(cls, d: dict, name: str = "custom") -> "LabMap":
        return cls(
            width=d.get("width", 400.0),
            height=d.get("height", 300.0),
            walls=tuple((w["x"], w["y"], w["w"], w["h"]) for w in d.get("walls", [])),
            goals=tuple((g["cx"], g["cy"], g["r"]) for g in d.get("goals", [])),
            reward=d.get("reward", 30.0),
            p_end=d.get("p_end", 0.0005),
            name=d.get("name", name),
        )

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "walls": [dict(zip("xywh", w)) for w in self.walls],
            "goals": [dict(zip(("cx", "cy", "r"), g)) for g in self.goals],
            "reward": self.reward,
            "p_end": self.p_end,
        }

    def free(self, pts: np.ndarray) -> np.ndarray:
        """True for points not strictly inside a wall."""
        pts = np.atleast_2d(pts)
        ok = np.ones(len(pts), dtype=bool)
        for x, y, w, h in self.walls:
            ok &= ~(
                (pts[:, 0] > x) & (pts[:, 0] < x + w) & (pts[:, 1] > y) & (pts[:, 1] < y + h)
            )
        return ok

    def in_goal(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        hit = np.zeros(len(pts), dtype=bool)
        for cx, cy, r in self.goals:
            hit |= (pts[:, 0] - cx) ** 2 + (pts[:, 1] - cy) ** 2 <= r * r
        return hit

    def blocked(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Moves p -> q that leave the map or touch a wall rectangle."""
        out = (q[:, 0] < 0) | (q[:, 0] > self.width) | (q[:, 1] < 0) | (q[:, 1] > self.height)
        d = q - p
        for rect in self.walls:
            out |= _segments_hit_rect(p, d, rect)
        return out


def _segments_hit_rect(p, d, rect):
    """Slab test of segments p + t*d, t in [0, 1], against a closed rectangle."""
    x, y, w, h = rect
    t0 = np.zeros(len(p))
    t1 = np.ones(len(p))
    miss = np.zeros(len(p), dtype=bool)
    for axis, lo, hi in ((0, x, x + w), (1, y, y + h)):
        pa, da = p[:, axis], d[:, axis]
        flat = da == 0
        miss |= flat & ((pa < lo) | (pa > hi))
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (lo - pa) / da
            tb = (hi - pa) / da
        lo_t = np.where(flat, -np.inf, np.minimum(ta, tb))
        hi_t = np.where(flat, np.inf, np.maximum(ta, tb))
        t0 = np.maximum(t0, lo_t)
        t1 = np.minimum(t1, hi_t)
    return ~miss & (t0 <= t1)


def _segment_hits_rect(px, py, dx, dy, rect) -> bool:
    x, y, w, h = rect
    t0, t1 = 0.0, 1.0
    for pa, da, lo, hi in ((px, dx, x, x + w), (py, dy, y, y + h)):
        if da == 0.0:
            if pa < lo or pa > hi:
                return False
            continue
        ta = (lo - pa) / da
        tb = (hi - pa) / da
        if ta > tb:
            ta, tb = tb, ta
        if ta > t0:
            t0 = ta
        if tb < t1:
            t1 = tb
        if t0 > t1:
            return False
    return True


def load_map(source) -> LabMap:
    """Load a map by built-in index (0-5) or from a JSON file path."""
    if isinstance(source, (int, np.integer)) or (isinstance(source, str) and source.isdigit()):
        idx = int(source)
        if not 0 <= idx < N_MAPS:
            raise ValueError(f"built-in maps are numbered 0-{N_MAPS - 1}")
        text = resources.files(__package__).joinpath(f"maps/map_{idx}.json").read_text()
        return LabMap.from_dict(json.loads(text), name=f"map{idx}")
    path = Path(source)
    return LabMap.from_dict(json.loads(path.read_text()), name=path.stem)


class RandomHeading(Policy):
    """Single action: the environment draws a uniformly random heading."""

    policy_id = "random-heading"

    def sample(self, state, rng):
        return 0


class LabyrinthEnv(Environment):
    discrete = False
    state_dim = 2
    gamma = 1.0

    def __init__(self, lab_map: LabMap, step_size: float = 5.0, p_end: float | None = None):
        if step_size <= 0:
            raise ValueError("step_size must be positive")
        p_end = lab_map.p_end if p_end is None else p_end
        if not 0 < p_end < 1:
            raise ValueError("p_end must lie in (0, 1)")
        self.map = lab_map
        self.step_size = float(step_size)
        self.p_end = float(p_end)
        self.low = np.array([0.0, 0.0])
        self.high = np.array([lab_map.width, lab_map.height])
        self.env_id = f"labyrinth-{lab_map.name}"
        self._walls = lab_map.walls
        self._goals = tuple((cx, cy, r * r) for cx, cy, r in lab_map.goals)

    def initial_state(self, rng):
        return self.sample_free(rng, 1)[0]

    def sample_free(self, rng, n: int) -> np.ndarray:
        out = np.empty((0, 2))
        while len(out) < n:
            pts = rng.uniform(self.low, self.high, size=(2 * (n - len(out)) + 8, 2))
            out = np.concatenate([out, pts[self.map.free(pts)]])
        return out[:n]

    def _move(self, x, y, angle):
        nx = x + self.step_size * math.cos(angle)
        ny = y + self.step_size * math.sin(angle)
        return self._resolve(x, y, nx, ny)

    def _resolve(self, x, y, nx, ny):
        if nx < 0.0 or ny < 0.0 or nx > self.map.width or ny > self.map.height:
            return x, y
        dx, dy = nx - x, ny - y
        for rect in self._walls:
            if _segment_hits_rect(x, y, dx, dy, rect):
                return x, y
        return nx, ny

    def _reward(self, x, y) -> float:
        for cx, cy, r2 in self._goals:
            if (x - cx) ** 2 + (y - cy) ** 2 <= r2:
                return self.map.reward
        return 0.0

    def step(self, state, action, rng):
        x, y = float(state[0]), float(state[1])
        x, y = self._move(x, y, rng.uniform(0.0, 2 * math.pi))
        terminal = bool(rng.random() < self.p_end)
        return np.array([x, y]), self._reward(x, y), terminal

    def rollout(self, policy, rng, max_steps, start=None):
        # Episode length is geometric; draw it up front, then the headings.
        state = self.initial_state(rng) if start is None else np.asarray(start, dtype=float)
        length = int(rng.geometric(self.p_end))
        terminal = length <= max_steps
        length = min(length, max_steps)
        angles = rng.uniform(0.0, 2 * math.pi, size=length)
        dxs = (self.step_size * np.cos(angles)).tolist()
        dys = (self.step_size * np.sin(angles)).tolist()
        xs = np.empty(length + 1)
        ys = np.empty(length + 1)
        rewards = np.empty(length)
        x, y = float(state[0]), float(state[1])
        xs[0], ys[0] = x, y
        resolve, reward = self._resolve, self._reward
        for t in range(length):
            x, y = resolve(x, y, x + dxs[t], y + dys[t])
            xs[t + 1], ys[t + 1] = x, y
            rewards[t] = reward(x, y)
        return Trajectory(np.stack([xs, ys], axis=1), np.zeros(length, dtype=np.int64),
                          rewards, terminal)

    def simulate_returns(self, starts, policy, rng, max_steps):
        pos = np.array(starts, dtype=float)
        n = len(pos)
        returns = np.zeros(n)
        idx = np.arange(n)
        for _ in range(max_steps):
            if len(idx) == 0:
                break
            ang = rng.uniform(0.0, 2 * math.pi, size=len(idx))
            cand = pos + self.step_size * np.stack([np.cos(ang), np.sin(ang)], axis=1)
            stay = self.map.blocked(pos, cand)
            pos = np.where(stay[:, None], pos, cand)
            returns[idx] += self.map.reward * self.map.in_goal(pos)
            alive = rng.random(len(idx)) >= self.p_end
            idx, pos = idx[alive], pos[alive]
        return returns

    def reference_policy(self):
        return RandomHeading()


def labyrinth_env(lab_map: LabMap | int | str = 0, step_size: float = 5.0,
                  p_end: float | None = None) -> LabyrinthEnv:
    if not isinstance(lab_map, LabMap):
        lab_map = load_map(lab_map)
    return LabyrinthEnv(lab_map, step_size, p_end)

"""Ground truth, MSVE scoring, normalizations, confidence-violation maps and sweeps."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
import traceback
import warnings
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from .adaptive import EvaluatorConfig, RunResult, evaluate
from .approximators import save_checkpoint
from .envs import ChainEnv, LabyrinthEnv, MountainCarEnv, make_env
from .mdp import Environment, collect_trajectories

log = logging.getLogger(__name__)

RESULT_COLUMNS = ("env_id", "algorithm", "n_rollouts", "seed", "msve", "gate_rate", "wall_time_ms")
LABELS = ("inside", "over", "under")


# ---------------------------------------------------------------------------
# Evaluation grids and ground truth


@dataclass(frozen=True)
class GridSpec:
    """Lattice of cell centers over the box [low, high] with ``shape`` cells per axis."""

    low: tuple
    high: tuple
    shape: tuple

    def centers(self) -> np.ndarray:
        axes = [
            lo + (np.arange(n) + 0.5) * (hi - lo) / n
            for lo, hi, n in zip(self.low, self.high, self.shape)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def indices(self) -> np.ndarray:
        mesh = np.meshgrid(*[np.arange(n) for n in self.shape], indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


def default_grid(env: Environment) -> GridSpec | None:
    if isinstance(env, LabyrinthEnv):
        return GridSpec((0.0, 0.0), (env.map.width, env.map.height), (40, 30))
    if isinstance(env, MountainCarEnv):
        # non-terminal part of the state box
        return GridSpec((-1.2, -0.07), (0.5, 0.07), (30, 30))
    return None


@dataclass
class GroundTruth:
    states: np.ndarray
    values: np.ndarray
    counts: np.ndarray
    cells: np.ndarray | None = None  # lattice indices of each state
    stderr: np.ndarray | None = None
    exact: bool = False
    env_id: str = ""

    def __len__(self) -> int:
        return len(self.values)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            dims = 1 if self.states.ndim == 1 else self.states.shape[1]
            cell_cols = [] if self.cells is None else ["cell_x", "cell_y"][: self.cells.shape[1]]
            w.writerow([*cell_cols, *[f"s{i}" for i in range(dims)], "value", "count", "stderr"])
            for i in range(len(self)):
                s = np.atleast_1d(self.states[i]).tolist()
                cells = [] if self.cells is None else self.cells[i].tolist()
                se = "" if self.stderr is None else repr(float(self.stderr[i]))
                w.writerow([*cells, *map(repr, s), repr(float(self.values[i])),
                            int(self.counts[i]), se])

    @classmethod
    def from_csv(cls, path, env_id: str = "") -> "GroundTruth":
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        head, body = rows[0], rows[1:]
        cell_cols = [i for i, h in enumerate(head) if h.startswith("cell_")]
        s_cols = [i for i, h in enumerate(head) if h.startswith("s") and h[1:].isdigit()]
        states = np.array([[float(r[i]) for i in s_cols] for r in body])
        if states.shape[1] == 1:
            states = states[:, 0].astype(np.int64)
        cells = np.array([[int(r[i]) for i in cell_cols] for r in body]) if cell_cols else None
        vi, ci, si = head.index("value"), head.index("count"), head.index("stderr")
        stderr = np.array([float(r[si]) for r in body]) if body and body[0][si] else None
        return cls(states, np.array([float(r[vi]) for r in body]),
                   np.array([int(r[ci]) for r in body]), cells, stderr, False, env_id)


def estimate_ground_truth(env: Environment, policy=None, grid: GridSpec | None = None,
                          episodes_per_state: int = 300, seed: int = 0,
                          max_steps: int = 50000, chunk: int = 60000) -> GroundTruth:
    """Per-state mean return of fresh episodes; analytic where the environment knows it.

    Lattice points inside walls are dropped.
    """
    if episodes_per_state < 1:
        raise ValueError("episodes_per_state must be >= 1")
    if isinstance(env, ChainEnv):
        states = env.evaluation_states()
        return GroundTruth(states, env.true_value(states), np.zeros(len(states), dtype=np.int64),
                           exact=True, env_id=env.env_id)
    grid = grid if grid is not None else default_grid(env)
    if grid is None:
        raise ValueError(f"no evaluation grid for {env.env_id}")
    policy = policy if policy is not None else env.reference_policy()
    states, cells = grid.centers(), grid.indices()
    if isinstance(env, LabyrinthEnv):
        keep = env.map.free(states)
        states, cells = states[keep], cells[keep]
    rng = np.random.default_rng(seed)
    k = episodes_per_state
    starts = np.repeat(states, k, axis=0)
    returns = np.empty(len(starts))
    for a in range(0, len(starts), chunk):
        returns[a:a + chunk] = env.simulate_returns(starts[a:a + chunk], policy, rng, max_steps)
    returns = returns.reshape(len(states), k)
    stderr = returns.std(axis=1, ddof=1) / math.sqrt(k) if k > 1 else None
    return GroundTruth(states, returns.mean(axis=1), np.full(len(states), k), cells, stderr,
                       False, env.env_id)


# ---------------------------------------------------------------------------
# Scores


def msve(V, gt: GroundTruth, weights=None) -> float:
    """Weighted mean squared error of V against the ground truth (uniform by default)."""
    if len(gt) == 0:
        raise ValueError("empty ground truth")
    pred = V.predict(gt.states) if hasattr(V, "predict") else np.asarray(V, dtype=float)
    err = (pred - gt.values) ** 2
    if weights is None:
        return float(np.mean(err))
    w = np.asarray(weights, dtype=float)
    return float(np.sum(w * err) / np.sum(w))


def normalize_by_max(results: Mapping[str, float]) -> dict[str, float]:
    """MSVE(A) / max_A' MSVE(A')."""
    if not results:
        raise ValueError("no results to normalize")
    top = max(results.values())
    if not top > 0:
        raise ValueError("all MSVEs are zero")
    return {a: v / top for a, v in results.items()}


class TiedScoresWarning(UserWarning):
    pass


def normalize_minmax(results: Mapping[str, float]) -> dict[str, float]:
    """(MSVE(A) - min) / (max - min); a full tie maps every algorithm to 0 with a warning."""
    if not results:
        raise ValueError("no results to normalize")
    lo, hi = min(results.values()), max(results.values())
    if hi == lo:
        warnings.warn("all algorithms tied; relative MSVE set to 0", TiedScoresWarning,
                      stacklevel=2)
        return {a: 0.0 for a in results}
    return {a: (v - lo) / (hi - lo) for a, v in results.items()}


def average_scenarios(tables: Iterable[Mapping[str, float]]) -> dict[str, float]:
    """Equal-weight mean across scenarios of per-scenario relative scores."""
    acc = defaultdict(list)
    for t in tables:
        for a, v in t.items():
            acc[a].append(v)
    return {a: float(np.mean(v)) for a, v in acc.items()}


# ---------------------------------------------------------------------------
# Violation maps


@dataclass
class ViolationMap:
    cells: np.ndarray
    labels: np.ndarray
    states: np.ndarray

    def fractions(self) -> dict[str, float]:
        return {lab: float(np.mean(self.labels == lab)) for lab in LABELS}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            f.write("# convention: over <=> reference > U; under <=> reference < L; "
                    "inside <=> L <= reference <= U\n")
            w = csv.writer(f)
            w.writerow(["cell_x", "cell_y", "label"])
            for (i, j), lab in zip(self.cells.tolist(), self.labels.tolist()):
                w.writerow([i, j, lab])


def read_violation_csv(path) -> list[tuple[int, int, str]]:
    with open(path, newline="") as f:
        lines = [ln for ln in f if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return [(int(a), int(b), c) for a, b, c in rows[1:]]


def violation_map(cf, reference, states: np.ndarray, cells: np.ndarray | None = None) -> ViolationMap:
    """Label each state by where ``reference`` falls relative to its interval [L, U].

    ``reference`` is an array of values on ``states`` or a callable on them.
    """
    ref = reference(states) if callable(reference) else np.asarray(reference, dtype=float)
    L, U = cf.interval(states)
    labels = np.full(len(ref), "inside", dtype=object)
    labels[ref > U] = "over"
    labels[ref < L] = "under"
    if cells is None:
        cells = np.stack([np.arange(len(ref)), np.zeros(len(ref), dtype=int)], axis=1)
    return ViolationMap(np.asarray(cells), labels.astype(str), states)


def td_reference(env: Environment, V, episodes: int = 1, seed: int = 0):
    """Expected one-step TD target r + gamma * V(s') at each state, by sampling one step."""
    def ref(states):
        rng = np.random.default_rng(seed)
        policy = env.reference_policy()
        out = np.zeros(len(states))
        for _ in range(episodes):
            for i, s in enumerate(states):
                a = policy.sample(s, rng)
                nxt, r, term = env.step(s, a, rng)
                out[i] += r + (0.0 if term else env.gamma * float(V.predict(np.array([nxt]))[0]))
        return out / episodes
    return ref


# ---------------------------------------------------------------------------
# Sweeps


@dataclass
class SweepConfig:
    envs: list = field(default_factory=lambda: [{"name": "chain"}])
    algorithms: list = field(default_factory=lambda: [{"algorithm": "mc"}, {"algorithm": "td0"}])
    n_rollouts: list = field(default_factory=lambda: [5, 10, 20, 50, 75, 100])
    seeds: list = field(default_factory=lambda: list(range(20)))
    max_steps: int = 50000
    episodes_per_state: int = 300
    ground_truth_seed: int = 12345
    violation_maps: bool = False
    save_runs: bool = False
    timing: bool = True
    workers: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown sweep config keys: {sorted(unknown)}")
        cfg = cls(**d)
        if isinstance(cfg.seeds, int):
            cfg.seeds = list(range(cfg.seeds))
        return cfg

    @classmethod
    def load(cls, path) -> "SweepConfig":
        path = Path(path)
        text = path.read_text()
        if path.suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # python < 3.11
                import tomli as tomllib
            return cls.from_dict(tomllib.loads(text))
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def env_label(spec: dict) -> str:
    if "label" in spec:
        return spec["label"]
    return build_env(spec).env_id


def build_env(spec: dict) -> Environment:
    return make_env(spec["name"], **spec.get("params", {}))


def algo_configs(spec: dict, seed: int) -> tuple[str, EvaluatorConfig]:
    spec = dict(spec)
    label = spec.pop("label", None)
    cfg = EvaluatorConfig(**spec, seed=seed)
    return label or cfg.label, cfg


@dataclass
class ExperimentResult:
    env_id: str
    algorithm: str
    n_rollouts: int
    seed: int
    msve: float
    gate_rate: float | None
    wall_time_ms: float
    predictions: np.ndarray | None = None

    @property
    def key(self) -> tuple:
        return (self.env_id, self.algorithm, self.n_rollouts, self.seed)

    def row(self, timing: bool = True) -> list[str]:
        return [
            self.env_id,
            self.algorithm,
            str(self.n_rollouts),
            str(self.seed),
            repr(float(self.msve)),
            "" if self.gate_rate is None else repr(float(self.gate_rate)),
            str(int(round(self.wall_time_ms))) if timing else "0",
        ]


def run_cell_group(env_spec: dict, algorithms: list, n: int, seed: int, gt: GroundTruth,
                   max_steps: int, skip: set = frozenset(), out_dir: Path | None = None,
                   violation_maps: bool = False, save_runs: bool = False):
    """Collect one dataset and run every algorithm on it.

    Returns (results, errors); a failing algorithm does not stop the others.
    """
    env = build_env(env_spec)
    label = env_label(env_spec)
    results, errors = [], []
    dataset = None
    for spec in algorithms:
        name, cfg = algo_configs(spec, seed)
        key = (label, name, n, seed)
        if key in skip:
            continue
        try:
            if dataset is None:
                dataset = collect_trajectories(env, None, n, max_steps, seed)
            run = evaluate(dataset, env, cfg)
            res = ExperimentResult(label, name, n, seed, msve(run.V, gt), run.gate_rate,
                                   run.wall_time_ms, run.V.predict(gt.states))
            results.append(res)
            if out_dir is not None and save_runs:
                _save_run(out_dir, res, run)
            if out_dir is not None and violation_maps and run.confidence is not None \
                    and gt.cells is not None:
                vdir = out_dir / "violations"
                vdir.mkdir(exist_ok=True)
                stem = f"{label}__{name}__n{n}__s{seed}"
                violation_map(run.confidence, gt.values, gt.states, gt.cells).to_csv(
                    vdir / f"{stem}__ground_truth.csv")
                violation_map(run.confidence, td_reference(env, run.V, seed=seed), gt.states,
                              gt.cells).to_csv(vdir / f"{stem}__td_target.csv")
        except Exception as exc:  # recorded per cell; the sweep carries on
            log.warning("cell %s failed: %s", key, exc)
            errors.append({"key": list(key), "error": repr(exc),
                           "traceback": traceback.format_exc()})
    return results, errors


def _save_run(out_dir: Path, res: ExperimentResult, run: RunResult) -> None:
    rdir = out_dir / "runs"
    rdir.mkdir(exist_ok=True)
    stem = f"{res.env_id}__{res.algorithm}__n{res.n_rollouts}__s{res.seed}"
    rec = run.record()
    rec["msve"] = res.msve
    rec["predictions"] = res.predictions.tolist()
    (rdir / f"{stem}.json").write_text(json.dumps(rec))
    save_checkpoint(run.V, rdir / f"{stem}__value.ckpt.json")
    if run.ensemble is not None:
        save_checkpoint(run.ensemble.members, rdir / f"{stem}__ensemble.ckpt.json")


def ground_truth_for(env_spec: dict, cfg: SweepConfig, out_dir: Path | None) -> GroundTruth:
    env = build_env(env_spec)
    label = env_label(env_spec)
    path = None
    if out_dir is not None:
        gdir = out_dir / "ground_truth"
        gdir.mkdir(parents=True, exist_ok=True)
        path = gdir / f"{label}.csv"
        if path.exists() and not isinstance(env, ChainEnv):
            return GroundTruth.from_csv(path, label)
    gt = estimate_ground_truth(env, episodes_per_state=cfg.episodes_per_state,
                               seed=cfg.ground_truth_seed, max_steps=cfg.max_steps)
    if path is not None:
        gt.to_csv(path)
    return gt


def read_results(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def _write_rows(path: Path, rows: list[list[str]]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        w.writerows(rows)


def results_csv_bytes(results: list[ExperimentResult], timing: bool = True) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in results:
        w.writerow(r.row(timing))
    return buf.getvalue().encode()


def run_sweep(cfg: SweepConfig, out_dir, progress: Callable[[str], None] | None = None) -> dict:
    """Run every (env, algorithm, n, seed) cell and write result tables to ``out_dir``.

    Completed cells found in an existing ``results.csv`` are reused.  The
    final table is written in canonical config order, so identical configs
    give identical bytes (with ``timing`` off).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "sweep_config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    results_path = out_dir / "results.csv"
    done: dict[tuple, list[str]] = {}
    if results_path.exists():
        for row in read_results(results_path):
            key = (row["env_id"], row["algorithm"], int(row["n_rollouts"]), int(row["seed"]))
            done[key] = [row[c] for c in RESULT_COLUMNS]
    else:
        _write_rows(results_path, [])

    jobs = []
    gts = {}
    for env_spec in cfg.envs:
        label = env_label(env_spec)
        gts[label] = ground_truth_for(env_spec, cfg, out_dir)
        for n in cfg.n_rollouts:
            for seed in cfg.seeds:
                jobs.append((env_spec, cfg.algorithms, n, seed, gts[label], cfg.max_steps,
                             set(done), out_dir, cfg.violation_maps, cfg.save_runs))

    errors = []

    def consume(results, errs):
        with open(results_path, "a", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            for r in results:
                row = r.row(cfg.timing)
                done[r.key] = row
                w.writerow(row)
        errors.extend(errs)
        if progress:
            for r in results:
                progress(f"{r.env_id} {r.algorithm} n={r.n_rollouts} seed={r.seed} "
                         f"msve={r.msve:.6g}")

    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            for res, errs in pool.map(_run_job, jobs):
                consume(res, errs)
    else:
        for job in jobs:
            consume(*_run_job(job))

    ordered = []
    for env_spec in cfg.envs:
        label = env_label(env_spec)
        for n in cfg.n_rollouts:
            for seed in cfg.seeds:
                for spec in cfg.algorithms:
                    name, _ = algo_configs(spec, seed)
                    key = (label, name, n, seed)
                    if key in done:
                        ordered.append(done[key])
    _write_rows(results_path, ordered)
    if errors:
        (out_dir / "errors.json").write_text(json.dumps(errors, indent=2))
    tables = write_report(results_path, out_dir)
    tables["errors"] = errors
    return tables


def _run_job(job):
    return run_cell_group(*job)


def summarize(rows: list[dict]) -> list[dict]:
    """Mean and mean +- 1.96 standard errors of MSVE over seeds, per (env, algorithm, n)."""
    groups = defaultdict(list)
    for r in rows:
        groups[(r["env_id"], r["algorithm"], int(r["n_rollouts"]))].append(float(r["msve"]))
    out = []
    for (env, alg, n), vals in groups.items():
        v = np.asarray(vals)
        se = v.std(ddof=1) / math.sqrt(len(v)) if len(v) > 1 else 0.0
        out.append({"env_id": env, "algorithm": alg, "n_rollouts": n, "n_seeds": len(v),
                    "mean_msve": float(v.mean()), "ci_low": float(v.mean() - 1.96 * se),
                    "ci_high": float(v.mean() + 1.96 * se)})
    return out


def write_report(results_path, out_dir) -> dict:
    """Summary, per-n normalized tables and the cross-scenario average from a results CSV."""
    out_dir = Path(out_dir)
    rows = read_results(results_path)
    summary = summarize(rows)
    means = defaultdict(dict)  # (env, n) -> {alg: mean msve}
    for s in summary:
        means[(s["env_id"], s["n_rollouts"])][s["algorithm"]] = s["mean_msve"]

    by_max, by_minmax = [], []
    for (env, n), table in means.items():
        try:
            for a, v in normalize_by_max(table).items():
                by_max.append({"env_id": env, "n_rollouts": n, "algorithm": a, "relative_msve": v})
        except ValueError:
            pass
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TiedScoresWarning)
            tied = len(set(table.values())) == 1
            for a, v in normalize_minmax(table).items():
                by_minmax.append({"env_id": env, "n_rollouts": n, "algorithm": a,
                                  "relative_msve": v, "tied": tied})

    overall = []
    per_n = defaultdict(list)
    for (env, n), table in means.items():
        per_n[n].append(table)
    for n in sorted(per_n):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TiedScoresWarning)
            avg = average_scenarios(normalize_minmax(t) for t in per_n[n])
        for a, v in avg.items():
            overall.append({"n_rollouts": n, "algorithm": a, "relative_msve": v,
                            "n_scenarios": len(per_n[n])})

    _dict_csv(out_dir / "summary.csv", summary)
    _dict_csv(out_dir / "normalized_max.csv", by_max)
    _dict_csv(out_dir / "normalized_minmax.csv", by_minmax)
    _dict_csv(out_dir / "overall_minmax.csv", overall)
    return {"summary": summary, "normalized_max": by_max, "normalized_minmax": by_minmax,
            "overall": overall}


def _dict_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        if not rows:
            return
        w = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)

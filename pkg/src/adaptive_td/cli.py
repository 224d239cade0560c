"""Command-line entry point: collect data, estimate ground truth, run evaluators and sweeps."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .adaptive import ALGORITHMS, EvaluatorConfig, evaluate
from .approximators import save_checkpoint
from .envs import ChainEnv, make_env
from .harness import (
    GroundTruth,
    SweepConfig,
    estimate_ground_truth,
    msve,
    run_sweep,
    write_report,
)
from .mdp import Dataset, collect_trajectories


def _env_params(args) -> dict:
    params = {}
    if args.map_file:
        params["map"] = args.map_file
    for kv in args.env_param or []:
        key, _, value = kv.partition("=")
        try:
            params[key] = json.loads(value)
        except json.JSONDecodeError:
            params[key] = value
    return params


def _build_env(args):
    name = "labyrinth" if args.map_file and args.env.startswith("labyrinth") else args.env
    return make_env(name, **_env_params(args))


def _seeds(text: str) -> list[int]:
    """``"7"`` -> [7]; ``"0:20"`` -> range(0, 20); ``"1,4,9"`` -> [1, 4, 9]."""
    if ":" in text:
        a, b = text.split(":")
        return list(range(int(a), int(b)))
    return [int(s) for s in text.split(",")]


def _add_env_args(p):
    p.add_argument("--env", default="chain",
                   help="chain, labyrinth-<0..5> or mountain-car (default: chain)")
    p.add_argument("--map-file", help="labyrinth map JSON, overrides the built-in map")
    p.add_argument("--env-param", action="append", metavar="KEY=VALUE",
                   help="environment parameter, e.g. sigma=5 (repeatable)")
    p.add_argument("--max-steps", type=int, default=50000)


def _add_algo_args(p):
    p.add_argument("--algorithm", choices=ALGORITHMS, default="adaptive_td")
    p.add_argument("--alpha", type=float, default=0.95)
    p.add_argument("--m", type=int, default=3, help="ensemble size")
    p.add_argument("--lam", type=float, default=0.75, help="lambda for td_lambda")
    p.add_argument("--fallback", choices=("midpoint", "clip"), default="midpoint")
    p.add_argument("--budget", type=int, default=50000, help="MLP minibatch steps")
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--approximator", default=None,
                   help="tabular, biased-tabular, grid or mlp (default depends on env)")
    p.add_argument("--no-bootstrap", action="store_true",
                   help="train ensemble members on the full dataset")


def _default_approximator(env) -> str:
    return "tabular" if env.discrete else "grid"


def cmd_collect(args) -> int:
    env = _build_env(args)
    ds = collect_trajectories(env, None, args.n, args.max_steps, args.seed, args.workers)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    ds.save(out)
    print(f"{len(ds)} trajectories, {ds.n_transitions} transitions -> {out}")
    return 0


def cmd_ground_truth(args) -> int:
    env = _build_env(args)
    gt = estimate_ground_truth(env, episodes_per_state=args.episodes, seed=args.seed,
                               max_steps=args.max_steps)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    gt.to_csv(out)
    print(f"{len(gt)} states -> {out}")
    return 0


def cmd_run(args) -> int:
    env = _build_env(args)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    gt = None
    if args.ground_truth:
        gt = GroundTruth.from_csv(args.ground_truth, env.env_id)
    elif isinstance(env, ChainEnv):
        gt = estimate_ground_truth(env)
    for seed in _seeds(args.seeds):
        if args.dataset:
            ds = Dataset.load(args.dataset)
        else:
            ds = collect_trajectories(env, None, args.n, args.max_steps, seed, args.workers)
        cfg = EvaluatorConfig(
            algorithm=args.algorithm, lam=args.lam, alpha=args.alpha, m=args.m,
            fallback=args.fallback, bootstrap=not args.no_bootstrap, epochs=args.epochs,
            approximator=args.approximator or _default_approximator(env),
            budget=args.budget, seed=seed,
        )
        run = evaluate(ds, env, cfg)
        rec = run.record()
        rec.update(env_id=env.env_id, n_rollouts=len(ds), seed=seed)
        if gt is not None:
            rec["msve"] = msve(run.V, gt)
        stem = f"{cfg.label}__s{seed}"
        (out / f"{stem}.json").write_text(json.dumps(rec, indent=2) + "\n")
        save_checkpoint(run.V, out / f"{stem}__value.ckpt.json")
        if run.ensemble is not None:
            save_checkpoint(run.ensemble.members, out / f"{stem}__ensemble.ckpt.json")
        msg = f"seed {seed}: {cfg.label}"
        if "msve" in rec:
            msg += f" msve={rec['msve']:.6g}"
        if run.gate_rate is not None:
            msg += f" gate_rate={run.gate_rate:.4f}"
        print(msg)
    return 0


def cmd_sweep(args) -> int:
    cfg = SweepConfig.load(args.config) if args.config else SweepConfig()
    if args.seeds:
        cfg.seeds = _seeds(args.seeds)
    if args.workers:
        cfg.workers = args.workers
    if args.no_timing:
        cfg.timing = False
    tables = run_sweep(cfg, args.output_dir, progress=print if args.verbose else None)
    n_err = len(tables["errors"])
    print(f"results -> {Path(args.output_dir) / 'results.csv'}"
          + (f" ({n_err} failed cells, see errors.json)" if n_err else ""))
    return 1 if n_err else 0


def cmd_report(args) -> int:
    results = Path(args.results)
    out = Path(args.output_dir) if args.output_dir else results.parent
    out.mkdir(parents=True, exist_ok=True)
    tables = write_report(results, out)
    for s in sorted(tables["summary"], key=lambda s: (s["env_id"], s["n_rollouts"],
                                                     s["algorithm"])):
        print(f"{s['env_id']:<32} n={s['n_rollouts']:<5} {s['algorithm']:<16} "
              f"msve={s['mean_msve']:.5g} [{s['ci_low']:.5g}, {s['ci_high']:.5g}]")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaptive-td", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="roll out the reference policy and save a JSONL dataset")
    _add_env_args(p)
    p.add_argument("--n", type=int, default=100, help="number of rollouts")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("ground-truth", help="estimate true values on the evaluation grid")
    _add_env_args(p)
    p.add_argument("--episodes", type=int, default=300, help="episodes per grid state")
    p.add_argument("--seed", type=int, default=12345)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_ground_truth)

    p = sub.add_parser("run", help="run one evaluator on fresh or saved data")
    _add_env_args(p)
    _add_algo_args(p)
    p.add_argument("--n", type=int, default=100, help="number of rollouts")
    p.add_argument("--seeds", default="0", help="e.g. 0, 0:20 or 1,4,9")
    p.add_argument("--dataset", help="JSONL dataset to use instead of collecting")
    p.add_argument("--ground-truth", help="ground-truth CSV for MSVE scoring")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--output-dir", default="runs")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a sweep described by a JSON or TOML config")
    p.add_argument("--config", help="sweep config file (defaults: chain, MC vs TD0)")
    p.add_argument("--seeds", help="override the config seeds, e.g. 0:20")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--no-timing", action="store_true",
                   help="write wall_time_ms as 0 for byte-reproducible output")
    p.add_argument("--output-dir", default="sweep")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summary and normalized tables from a results CSV")
    p.add_argument("results")
    p.add_argument("--output-dir", help="defaults to the results file's directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

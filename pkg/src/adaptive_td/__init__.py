"""Monte Carlo, TD and confidence-gated TD policy evaluation with an experiment harness."""

from .adaptive import (
    ALGORITHMS,
    EvaluatorConfig,
    RunResult,
    evaluate,
    run_adaptive_td,
    run_baseline,
    select_target,
)
from .approximators import (
    BiasedTabularApprox,
    GridApprox,
    MlpApprox,
    TabularApprox,
    ValueApproximator,
    load_checkpoint,
    make_approximator,
    save_checkpoint,
)
from .confidence import ConfidenceFunction, Ensemble, t_quantile, train_ensemble
from .envs import make_env
from .harness import (
    GroundTruth,
    SweepConfig,
    estimate_ground_truth,
    msve,
    normalize_by_max,
    normalize_minmax,
    run_sweep,
    violation_map,
)
from .mdp import Dataset, Trajectory, collect_trajectories, discounted_return
from .targets import lambda_targets, mc_targets, td0_targets

__version__ = "0.1.0"

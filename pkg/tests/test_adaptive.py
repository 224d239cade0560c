import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adaptive_td.adaptive import (
    EvaluatorConfig,
    approximator_factory,
    evaluate,
    fit_to_targets,
    run_adaptive_td,
    select_target,
)
from adaptive_td.envs import ChainConfig, chain_env, mountain_car_env
from adaptive_td.mdp import collect_trajectories
from adaptive_td.targets import td0_targets


class TestSelectTarget:
    def test_inside(self):
        assert select_target(5.0, 0.0, 10.0) == 5.0

    def test_midpoint(self):
        assert select_target(12.0, 0.0, 10.0, "midpoint") == 5.0

    def test_clip(self):
        assert select_target(12.0, 0.0, 10.0, "clip") == 10.0
        assert select_target(-3.0, 0.0, 10.0, "clip") == 0.0

    def test_boundary_counts_as_outside(self):
        assert select_target(10.0, 0.0, 10.0) == 5.0

    def test_degenerate_point_interval(self):
        assert select_target(2.0, 2.0, 2.0) == 2.0
        assert select_target(7.0, 2.0, 2.0) == 2.0

    def test_infinite_interval_keeps_td(self):
        assert select_target(1e9, -math.inf, math.inf) == 1e9

    def test_inverted(self):
        with pytest.raises(ValueError):
            select_target(1.0, 3.0, 2.0)

    def test_unknown_fallback(self):
        with pytest.raises(ValueError):
            select_target(1.0, 0.0, 2.0, "nearest")

    @given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.floats(0, 1e6),
           st.sampled_from(["midpoint", "clip"]))
    def test_gate_soundness(self, td, lo, width, fallback):
        hi = lo + width
        out = select_target(td, lo, hi, fallback)
        assert out == td or lo <= out <= hi

    def test_vectorized(self):
        out = select_target(np.array([5.0, 12.0]), np.zeros(2), np.full(2, 10.0), "clip")
        assert out.tolist() == [5.0, 10.0]


def _chain_data(n=200, sigma=1.0, seed=0, k=10):
    env = chain_env(ChainConfig(k=k, p=5, mu=0.0, sigma=sigma))
    return env, collect_trajectories(env, None, n, 10, seed=seed)


def _car_data(n=4):
    env = mountain_car_env()
    return env, collect_trajectories(env, None, n, 300, seed=0)


class TestRecoveryLimits:
    @pytest.mark.parametrize("approx", ["tabular", "biased-tabular"])
    def test_infinite_width_is_td0_exact(self, approx):
        env, ds = _chain_data()
        kw = dict(approximator=approx, epochs=30, seed=3)
        td = evaluate(ds, env, EvaluatorConfig(algorithm="td0", **kw))
        ad = evaluate(ds, env, EvaluatorConfig(algorithm="adaptive_td", z=math.inf, **kw))
        assert np.array_equal(td.V.values, ad.V.values)
        assert ad.gate_rate == 0.0

    @pytest.mark.parametrize("refresh", ["minibatch", "epoch"])
    def test_infinite_width_is_td0_mlp(self, refresh):
        env, ds = _car_data()
        kw = dict(approximator="mlp", budget=60, seed=1, refresh=refresh,
                  approx_params={"batch_size": 64})
        td = evaluate(ds, env, EvaluatorConfig(algorithm="td0", **kw))
        ad = evaluate(ds, env, EvaluatorConfig(algorithm="adaptive_td", z=math.inf, **kw))
        assert np.array_equal(td.V.flat_params(), ad.V.flat_params())

    def _mean_recovery(self, env, ds, cfg):
        ad = evaluate(ds, env, cfg)
        targets = ad.ensemble.member_predictions(ds.batch.states).mean(axis=0)
        ref, _ = fit_to_targets(ds, targets, approximator_factory(env, cfg, ds), cfg)
        return ad, ref

    def test_collapsed_is_ensemble_mean_fit_tabular(self):
        env, ds = _chain_data()
        cfg = EvaluatorConfig(algorithm="adaptive_td", z=0.0, epochs=5, seed=2)
        ad, ref = self._mean_recovery(env, ds, cfg)
        assert np.array_equal(ad.V.values, ref.values)

    def test_collapsed_is_ensemble_mean_fit_mlp(self):
        env, ds = _car_data()
        cfg = EvaluatorConfig(algorithm="adaptive_td", z=0.0, approximator="mlp", budget=40,
                              seed=2, approx_params={"batch_size": 64})
        ad, ref = self._mean_recovery(env, ds, cfg)
        assert np.array_equal(ad.V.flat_params(), ref.flat_params())


class TestBaselines:
    def test_td_lambda_one_is_mc(self):
        env, ds = _chain_data()
        mc = evaluate(ds, env, EvaluatorConfig(algorithm="mc", epochs=10))
        tl = evaluate(ds, env, EvaluatorConfig(algorithm="td_lambda", lam=1.0, epochs=10))
        assert np.array_equal(mc.V.values, tl.V.values)

    def test_td_lambda_zero_is_td0_exact(self):
        env, ds = _chain_data()
        td = evaluate(ds, env, EvaluatorConfig(algorithm="td0", epochs=10))
        tl = evaluate(ds, env, EvaluatorConfig(algorithm="td_lambda", lam=0.0, epochs=10))
        assert np.array_equal(td.V.values, tl.V.values)

    def test_td0_large_data_limit(self):
        n = 100_000
        env, ds = _chain_data(n=n)
        run = evaluate(ds, env, EvaluatorConfig(algorithm="td0", epochs=10))
        v = run.V.predict(env.evaluation_states())
        assert np.all(np.abs(v) <= 3 / math.sqrt(n))

    def test_mc_variance_law(self):
        k, n, reps = 10, 200, 300
        est = []
        for seed in range(reps):
            env, ds = _chain_data(n=n, seed=seed)
            est.append(evaluate(ds, env, EvaluatorConfig(algorithm="mc")).V.predict(
                env.evaluation_states()))
        var = np.var(np.array(est), axis=0, ddof=1).mean()
        assert var == pytest.approx(k / n, rel=0.2)

    def test_mc_ensemble_is_member_mean(self):
        env, ds = _chain_data()
        run = evaluate(ds, env, EvaluatorConfig(algorithm="mc_ensemble", m=4))
        s = np.arange(env.n_states)
        assert np.allclose(run.V.predict(s), run.ensemble.member_predictions(s).mean(axis=0))

    def test_mlp_runs_all_algorithms(self):
        env, ds = _car_data(3)
        for alg in ("mc", "td0", "td_lambda", "mc_ensemble", "adaptive_td"):
            cfg = EvaluatorConfig(algorithm=alg, approximator="mlp", budget=20,
                                  approx_params={"batch_size": 32})
            run = evaluate(ds, env, cfg)
            assert np.all(np.isfinite(run.V.predict(ds.batch.states[:10])))


class TestAdaptive:
    def test_deterministic(self):
        env, ds = _chain_data(sigma=5.0)
        cfg = EvaluatorConfig(algorithm="adaptive_td", approximator="biased-tabular",
                              epochs=20, seed=11)
        a, b = evaluate(ds, env, cfg), evaluate(ds, env, cfg)
        assert np.array_equal(a.V.values, b.V.values)
        assert a.epochs == b.epochs

    def test_gate_log_per_epoch(self):
        env, ds = _chain_data()
        run = evaluate(ds, env, EvaluatorConfig(algorithm="adaptive_td", epochs=7))
        assert [e["epoch"] for e in run.epochs] == list(range(7))
        assert all(0.0 <= e["gate_rate"] <= 1.0 for e in run.epochs)

    def test_biased_bottleneck_gates_branch_states(self):
        env, ds = _chain_data(n=4096)
        cfg = EvaluatorConfig(algorithm="adaptive_td", approximator="biased-tabular",
                              epochs=20)
        run = evaluate(ds, env, cfg)
        b = ds.batch
        at_branch = (b.states >= 1) & (b.states <= env.cfg.k)
        td = td0_targets(b, run.V, 1.0)[at_branch]
        L, U = run.confidence.interval(b.states[at_branch])
        outside = ~((L < td) & (td < U))
        assert outside.mean() > 0.9
        # the estimates at s_1..s_k are then MC-like, far below the clamp value 1
        assert np.all(np.abs(run.V.predict(env.evaluation_states())) < 0.5)

    def test_clip_fallback_runs(self):
        env, ds = _chain_data()
        run = evaluate(ds, env, EvaluatorConfig(algorithm="adaptive_td", fallback="clip",
                                                approximator="biased-tabular", epochs=10))
        assert np.all(np.isfinite(run.V.values))

    def test_empty_dataset(self):
        env, ds = _chain_data(n=3)
        ds.trajectories.clear()
        with pytest.raises(ValueError):
            run_adaptive_td(ds, 1.0, EvaluatorConfig(), lambda r: None)


class TestConfig:
    @pytest.mark.parametrize("kw", [
        dict(algorithm="sarsa"), dict(lam=1.5), dict(alpha=1.0), dict(m=1),
        dict(fallback="nearest"), dict(refresh="never"), dict(epochs=0), dict(z=-1.0),
    ])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            EvaluatorConfig(**kw)

    def test_label_and_dict(self):
        cfg = EvaluatorConfig(algorithm="td_lambda", lam=0.5, z=math.inf)
        assert cfg.label == "td_lambda_0.5"
        assert cfg.to_dict()["z"] == "inf"

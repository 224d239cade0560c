import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptive_td.approximators import TabularApprox
from adaptive_td.envs import ChainConfig, chain_env
from adaptive_td.mdp import Dataset, Trajectory, collect_trajectories, discounted_return
from adaptive_td.targets import (
    lambda_targets,
    lambda_targets_batch,
    mc_targets,
    n_step_return,
    td0_target,
    td0_targets,
)
from adaptive_td.mdp import Transition


def _traj(rewards, terminal=True):
    n = len(rewards)
    return Trajectory(np.arange(n + 1), np.zeros(n), rewards, terminal)


def _table(values):
    V = TabularApprox(len(values))
    V.values = np.asarray(values, dtype=float)
    return V


def brute_lambda(tr, V, gamma, lam, t):
    """(1 - lam) * sum_n lam^(n-1) G_t^(n) + lam^(T-t-1) * G_t (terminal tail)."""
    T = len(tr)
    tail = T - t
    g = sum((1 - lam) * lam ** (n - 1) * n_step_return(tr, V, gamma, t, n)
            for n in range(1, tail))
    return g + lam ** (tail - 1) * n_step_return(tr, V, gamma, t, tail)


class TestMc:
    def test_undiscounted(self):
        ds = Dataset([_traj([0, 0, 30])])
        assert mc_targets(ds, 1.0).values.tolist() == [30, 30, 30]

    def test_geometric(self):
        ds = Dataset([_traj([1, 1, 1])])
        assert mc_targets(ds, 0.5).values == pytest.approx([1.75, 1.5, 1.0])

    def test_chain_deterministic(self):
        env = chain_env(ChainConfig(k=4, p=2, mu=5, sigma=0))
        ds = collect_trajectories(env, None, 20, 10, seed=0)
        assert np.all(mc_targets(ds, 1.0).values == 5.0)

    def test_matches_discounted_return(self, rng):
        trs = [_traj(rng.normal(size=rng.integers(1, 20))) for _ in range(20)]
        ts = mc_targets(Dataset(trs), 0.9)
        for v, i, t in zip(ts.values, ts.traj_ids, ts.steps):
            assert v == pytest.approx(discounted_return(trs[i], 0.9, t), abs=1e-12)

    def test_truncated_bootstrap(self):
        ds = Dataset([_traj([1.0, 1.0], terminal=False), _traj([2.0])])
        V = _table([0, 0, 10.0])
        ts = mc_targets(ds, 0.5, bootstrap=V)
        assert ts.values[:2].tolist() == [1 + 0.5 * (1 + 0.5 * 10), 1 + 0.5 * 10]
        assert ts.truncated.tolist() == [True, True, False]
        assert mc_targets(ds, 0.5).values[1] == 1.0

    def test_bad_gamma(self):
        with pytest.raises(ValueError):
            mc_targets(Dataset([_traj([1.0])]), 0.0)


class TestTd0:
    def test_arithmetic(self):
        tr = Transition(0, 0, 1.0, 1, False)
        assert td0_target(tr, _table([0, 10.0]), 0.9) == pytest.approx(10.0)

    def test_terminal(self):
        tr = Transition(0, 0, 30.0, 1, True)
        assert td0_target(tr, _table([0, 1e6]), 0.9) == 30.0

    def test_fixed_point_on_chain(self):
        env = chain_env(ChainConfig(k=4, p=2, mu=5, sigma=0))
        ds = collect_trajectories(env, None, 10, 10, seed=0)
        V = _table(np.full(env.n_states, 5.0))
        V.values[env.end] = 0.0
        assert np.all(td0_targets(ds.batch, V, 1.0) == 5.0)

    def test_affine_in_next_value(self, rng):
        tr = Transition(0, 0, 0.3, 1, False)
        a, b = rng.normal(size=2)
        ta, tb = td0_target(tr, _table([0, a]), 0.8), td0_target(tr, _table([0, b]), 0.8)
        assert (ta - tb) == pytest.approx(0.8 * (a - b))

    def test_batch_matches_scalar(self, rng):
        trs = [_traj(rng.normal(size=5), terminal=bool(i % 2)) for i in range(4)]
        ds = Dataset(trs)
        V = _table(rng.normal(size=6))
        flat = [td0_target(t, V, 0.7) for tr in trs for t in tr.transitions]
        assert td0_targets(ds.batch, V, 0.7) == pytest.approx(flat)
        idx = np.array([3, 0, 7])
        assert td0_targets(ds.batch, V, 0.7, idx) == pytest.approx(np.array(flat)[idx])


class TestLambda:
    def test_lambda_zero_is_td0(self, rng):
        tr = _traj(rng.normal(size=6))
        V = _table(rng.normal(size=7))
        td = [td0_target(t, V, 0.9) for t in tr.transitions]
        assert np.array_equal(lambda_targets(tr, V, 0.9, 0.0), td)

    def test_lambda_one_is_mc(self, rng):
        tr = _traj(rng.normal(size=6))
        V = _table(rng.normal(size=7))
        assert np.array_equal(lambda_targets(tr, V, 0.9, 1.0),
                              mc_targets(Dataset([tr]), 0.9).values)

    def test_half_three_steps_brute_force(self):
        tr = _traj([1.0, -2.0, 4.0])
        V = _table([0.5, 3.0, -1.0, 7.0])
        got = lambda_targets(tr, V, 0.9, 0.5)
        # written out: G2 = 4; G1 = -2 + .9(.5*(-1) + .5*4); G0 = 1 + .9(.5*3 + .5*G1)
        g2 = 4.0
        g1 = -2.0 + 0.9 * (0.5 * -1.0 + 0.5 * g2)
        g0 = 1.0 + 0.9 * (0.5 * 3.0 + 0.5 * g1)
        assert got == pytest.approx([g0, g1, g2], abs=1e-12)
        assert got == pytest.approx([brute_lambda(tr, V, 0.9, 0.5, t) for t in range(3)])

    def test_brute_force_random(self, rng):
        for _ in range(30):
            n = int(rng.integers(1, 12))
            tr = _traj(rng.normal(size=n), terminal=bool(rng.integers(2)))
            V = _table(rng.normal(size=n + 1))
            g, lam = rng.uniform(0.3, 1.0), rng.uniform(0, 1)
            # n_step_return bootstraps at the cut state of truncated trajectories
            expected = [brute_lambda(tr, V, g, lam, t) for t in range(n)]
            assert lambda_targets(tr, V, g, lam) == pytest.approx(expected, abs=1e-10)

    def test_batch_equals_per_trajectory(self, rng):
        trs = [_traj(rng.normal(size=int(rng.integers(1, 8)))) for _ in range(6)]
        V = _table(rng.normal(size=9))
        flat = np.concatenate([lambda_targets(tr, V, 0.95, 0.6) for tr in trs])
        assert np.allclose(lambda_targets_batch(Dataset(trs).batch, V, 0.95, 0.6), flat,
                           atol=1e-12)

    def test_bad_lambda(self):
        with pytest.raises(ValueError):
            lambda_targets(_traj([1.0]), _table([0, 0]), 1.0, 1.5)

    @settings(max_examples=60, deadline=None)
    @given(
        rewards=st.lists(st.floats(-10, 10), min_size=1, max_size=8),
        values=st.lists(st.floats(-10, 10), min_size=9, max_size=9),
        gamma=st.floats(0.1, 1.0),
        lam=st.floats(0.0, 1.0),
    )
    def test_interpolation_bounds(self, rewards, values, gamma, lam):
        tr = _traj(rewards)
        V = _table(values)
        G = lambda_targets(tr, V, gamma, lam)
        T = len(tr)
        for t in range(T):
            cands = [n_step_return(tr, V, gamma, t, n) for n in range(1, T - t + 1)]
            assert min(cands) - 1e-9 <= G[t] <= max(cands) + 1e-9

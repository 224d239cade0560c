import numpy as np
import pytest

from adaptive_td.envs import ChainConfig, chain_env, labyrinth_env, mountain_car_env
from adaptive_td.mdp import (
    Dataset,
    Trajectory,
    collect_trajectories,
    discounted_return,
    load_dataset,
)


def _traj(rewards, terminal=True):
    n = len(rewards)
    return Trajectory(np.arange(n + 1), np.zeros(n), rewards, terminal)


class TestDiscountedReturn:
    def test_from_start(self):
        assert discounted_return(_traj([1, 0, 2]), 0.5, 0) == pytest.approx(1.5)

    def test_single_term(self):
        assert discounted_return(_traj([1, 0, 2]), 0.5, 2) == pytest.approx(2.0)

    @pytest.mark.parametrize("start", range(6))
    def test_terminal_reward_undiscounted(self, start):
        assert discounted_return(_traj([0] * 5 + [30]), 1.0, start) == 30.0

    def test_recursive_identity(self, rng):
        for _ in range(50):
            tr = _traj(rng.normal(size=rng.integers(2, 30)))
            g = rng.uniform(0.1, 1.0)
            for t in range(len(tr) - 1):
                lhs = discounted_return(tr, g, t)
                rhs = tr.rewards[t] + g * discounted_return(tr, g, t + 1)
                assert lhs == pytest.approx(rhs, abs=1e-12)

    @pytest.mark.parametrize("start", [-1, 3])
    def test_out_of_range(self, start):
        with pytest.raises(IndexError):
            discounted_return(_traj([1, 0, 2]), 0.5, start)


class TestTrajectory:
    def test_rejects_mismatched_lengths(self):
        with pytest.raises(ValueError):
            Trajectory(np.arange(3), [0, 0], [1.0, 2.0, 3.0], True)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            Trajectory(np.arange(1), [], [], True)

    def test_rejects_nonfinite_reward(self):
        with pytest.raises(ValueError):
            Trajectory(np.arange(2), [0], [np.nan], True)

    def test_only_last_transition_terminal(self):
        tr = _traj([1, 2, 3])
        flags = [t.terminal for t in tr.transitions]
        assert flags == [False, False, True]
        assert not any(t.terminal for t in _traj([1, 2], terminal=False).transitions)


class TestCollect:
    def test_chain_lengths(self):
        ds = collect_trajectories(chain_env(ChainConfig(k=4, p=2)), None, 3, 100, seed=0)
        assert len(ds) == 3
        assert all(len(t) == 4 and t.terminal for t in ds.trajectories)

    @pytest.mark.parametrize("make", [lambda: chain_env(), lambda: labyrinth_env(1),
                                      mountain_car_env])
    def test_determinism(self, make):
        env = make()
        a = collect_trajectories(env, None, 4, 3000, seed=7)
        b = collect_trajectories(env, None, 4, 3000, seed=7)
        assert a == b
        c = collect_trajectories(env, None, 4, 3000, seed=8)
        assert a != c

    def test_prefix_property(self):
        env = mountain_car_env()
        small = collect_trajectories(env, None, 3, 500, seed=3)
        big = collect_trajectories(env, None, 6, 500, seed=3)
        assert small.trajectories == big.trajectories[:3]

    def test_workers_match_serial(self):
        env = chain_env()
        a = collect_trajectories(env, None, 20, 10, seed=2, workers=1)
        b = collect_trajectories(env, None, 20, 10, seed=2, workers=2)
        assert a == b

    @pytest.mark.parametrize("make", [lambda: chain_env(), lambda: labyrinth_env(3),
                                      mountain_car_env])
    def test_chaining(self, make):
        ds = collect_trajectories(make(), None, 3, 2000, seed=1)
        for tr in ds.trajectories:
            tt = tr.transitions
            for a, b in zip(tt[:-1], tt[1:]):
                assert a.next_state == b.state

    def test_truncation_marks_non_terminal(self):
        ds = collect_trajectories(labyrinth_env(0), None, 5, 10, seed=0)
        for tr in ds.trajectories:
            assert len(tr) <= 10
        assert any(tr.truncated for tr in ds.trajectories)

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            collect_trajectories(chain_env(), None, 0, 10, seed=0)
        with pytest.raises(ValueError):
            collect_trajectories(chain_env(), None, 1, 0, seed=0)

    @pytest.mark.slow
    def test_labyrinth_mean_length(self):
        # geometric termination with p=0.0005 has mean 1/p = 2000
        ds = collect_trajectories(labyrinth_env(0), None, 1000, 50000, seed=0)
        mean = np.mean([len(t) for t in ds.trajectories])
        assert abs(mean - 2000) / 2000 < 0.10


class TestBatchAndIO:
    def test_batch_layout(self):
        ds = collect_trajectories(chain_env(ChainConfig(k=4, p=2)), None, 5, 10, seed=0)
        b = ds.batch
        assert len(b) == 20
        assert b.offsets.tolist() == [0, 4, 8, 12, 16, 20]
        assert b.last.sum() == 5 and b.terminal.sum() == 5
        for seg in b.segments():
            assert np.array_equal(b.states[seg][1:], b.next_states[seg][:-1])
        assert not b.states.flags.writeable

    def test_jsonl_round_trip(self, tmp_path):
        for env in (chain_env(), mountain_car_env()):
            ds = collect_trajectories(env, None, 3, 200, seed=5)
            path = tmp_path / "d.jsonl"
            ds.save(path)
            back = load_dataset(path)
            assert back == ds
            assert back.trajectories[0].states.dtype == ds.trajectories[0].states.dtype

    def test_bad_format_version(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"format": 99}\n')
        with pytest.raises(ValueError):
            Dataset.load(path)

    def test_subset_allows_repeats(self):
        ds = collect_trajectories(chain_env(), None, 3, 10, seed=0)
        sub = ds.subset([2, 2, 0])
        assert sub.trajectories[0] is ds.trajectories[2]
        assert len(sub) == 3

import numpy as np
import pytest

from pointroute import model as model_module
from pointroute.errors import ParameterError
from pointroute.instance import Instance, generate_instances, tour_length
from pointroute.model import (
    ModelConfig,
    advance_context,
    context_query,
    encode,
    featurize,
    init_params,
    initial_context,
    pointer_distribution,
    zero_pointer_params,
)
from pointroute.rollout import (
    Trajectory,
    best_of,
    decode_multistart,
    multi_start_rollout,
    rollout_batch,
    trajectory_log_prob,
)

LINE3 = Instance(coords=[[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]])


class TestMultiStartRollout:
    def test_every_start_yields_valid_permutation(self, tiny_config, tiny_store):
        inst = generate_instances(seed=2, n=3, count=1)[0]
        trajs = multi_start_rollout(tiny_store, tiny_config, inst, mode="greedy")
        assert [t.start for t in trajs] == [0, 1, 2]
        for t in trajs:
            assert sorted(t.order.tolist()) == [0, 1, 2]
            assert len(t.step_log_probs) == 2
            assert np.all(t.step_log_probs <= 0.0)

    def test_zero_weight_greedy_collinear(self, tiny_config):
        store = zero_pointer_params(tiny_config, seed=0)
        inst = Instance(coords=[[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]])
        trajs = multi_start_rollout(store, tiny_config, inst, mode="greedy")
        assert list(trajs[0].order) == [0, 1, 2]
        assert trajs[0].length == pytest.approx(2.0, abs=1e-12)

    def test_sample_mode_deterministic_for_seed(self, tiny_config, tiny_store):
        inst = generate_instances(seed=6, n=7, count=1)[0]
        a = multi_start_rollout(tiny_store, tiny_config, inst, mode="sample", seed=99)
        b = multi_start_rollout(tiny_store, tiny_config, inst, mode="sample", seed=99)
        for x, y in zip(a, b):
            assert np.array_equal(x.order, y.order)
            assert np.array_equal(x.step_log_probs, y.step_log_probs)

    def test_sample_mode_requires_seed(self, tiny_config, tiny_store):
        inst = generate_instances(seed=6, n=4, count=1)[0]
        with pytest.raises(ParameterError, match="seed"):
            multi_start_rollout(tiny_store, tiny_config, inst, mode="sample")

    def test_reward_matches_tour_length(self, tiny_config, tiny_store):
        inst = generate_instances(seed=10, n=9, count=1)[0]
        for traj in multi_start_rollout(tiny_store, tiny_config, inst, mode="greedy"):
            assert -traj.reward == tour_length(inst, traj.order)

    def test_greedy_deterministic(self, tiny_config, tiny_store):
        inst = generate_instances(seed=12, n=8, count=1)[0]
        a = multi_start_rollout(tiny_store, tiny_config, inst, mode="greedy")
        b = multi_start_rollout(tiny_store, tiny_config, inst, mode="greedy")
        for x, y in zip(a, b):
            assert np.array_equal(x.order, y.order)

    def test_encoder_runs_once_per_instance(self, tiny_config, tiny_store, monkeypatch):
        calls = []
        original = model_module.encode_with_state

        def counting(*args, **kwargs):
            calls.append(1)
            return original(*args, **kwargs)

        monkeypatch.setattr(model_module, "encode_with_state", counting)
        inst = generate_instances(seed=3, n=6, count=1)[0]
        multi_start_rollout(tiny_store, tiny_config, inst, mode="greedy")
        assert len(calls) == 1


class TestBatchedMatchesSequential:
    def test_greedy_agrees_with_stepwise_pointer_distribution(self, tiny_config, tiny_store):
        """The vectorized decoder is semantically the per-step operation."""
        inst = generate_instances(seed=17, n=7, count=1)[0]
        trajs = multi_start_rollout(tiny_store, tiny_config, inst, mode="greedy")
        emb = encode(tiny_store, tiny_config, featurize(inst))
        for start in range(inst.n):
            visited = np.zeros(inst.n, dtype=bool)
            visited[start] = True
            state = initial_context(emb, start)
            order = [start]
            logps = []
            while not visited.all():
                q = context_query(emb, state, inst.n)
                p = pointer_distribution(tiny_store, q, emb, order[-1], inst,
                                         visited, C=tiny_config.C)
                nxt = int(np.argmax(p))
                logps.append(float(np.log(p[nxt])))
                visited[nxt] = True
                order.append(nxt)
                advance_context(state, emb, nxt)
            assert order == trajs[start].order.tolist()
            np.testing.assert_allclose(trajs[start].step_log_probs, logps, atol=1e-6)


class TestSamplingStatistics:
    def test_first_step_frequencies_match_distribution(self, tiny_config, tiny_store):
        # 1e5 sampled decodes of one 4-node instance: the empirical first
        # choice from start 0 follows pointer_distribution within 3 SEs
        inst = generate_instances(seed=23, n=4, count=1)[0]
        emb = encode(tiny_store, tiny_config, featurize(inst))
        q = context_query(emb, initial_context(emb, 0), 4)
        visited = np.array([True, False, False, False])
        p = pointer_distribution(tiny_store, q, emb, 0, inst, visited, C=tiny_config.C)

        reps, chunk = 100_000, 20_000
        counts = np.zeros(4)
        for block in range(reps // chunk):
            coords = np.repeat(inst.coords[None], chunk, axis=0)
            res = decode_multistart(tiny_store, tiny_config, coords,
                                    mode="sample", seed=5000 + block)
            counts += np.bincount(res.orders[:, 0, 1], minlength=4)
        se = np.sqrt(p * (1 - p) * reps)
        assert counts[0] == 0
        assert np.all(np.abs(counts - reps * p) <= 3 * np.maximum(se, 1.0))


class TestBestOf:
    def _traj(self, order, length):
        return Trajectory(order=np.array(order), step_log_probs=np.zeros(len(order) - 1),
                          reward=-length)

    def test_picks_minimum(self):
        trajs = [self._traj([0, 1, 2], 5.0), self._traj([1, 2, 0], 4.0),
                 self._traj([2, 0, 1], 6.0)]
        assert best_of(trajs).length == 4.0
        assert list(best_of(trajs).order) == [1, 2, 0]

    def test_tie_keeps_lowest_start(self):
        trajs = [self._traj([0, 1, 2], 4.0), self._traj([1, 2, 0], 4.0)]
        assert list(best_of(trajs).order) == [0, 1, 2]

    def test_empty_rejected(self):
        with pytest.raises(ParameterError):
            best_of([])

    def test_not_worse_than_any_trajectory(self, tiny_config, tiny_store):
        for inst in generate_instances(seed=31, n=8, count=100):
            trajs = multi_start_rollout(tiny_store, tiny_config, inst, mode="greedy")
            best = best_of(trajs)
            assert all(best.length <= t.length + 1e-12 for t in trajs)


class TestTrajectoryLogProb:
    def test_certain_steps_give_zero(self):
        traj = Trajectory(order=np.array([0, 1, 2]),
                          step_log_probs=np.log([1.0, 1.0]), reward=-1.0)
        assert trajectory_log_prob(traj) == 0.0

    def test_half_half(self):
        traj = Trajectory(order=np.array([0, 1, 2]),
                          step_log_probs=np.log([0.5, 0.5]), reward=-1.0)
        assert trajectory_log_prob(traj) == pytest.approx(np.log(0.25))

    def test_teacher_forced_rescoring_matches(self, tiny_config, tiny_store):
        inst = generate_instances(seed=37, n=6, count=1)[0]
        sampled = decode_multistart(tiny_store, tiny_config, inst.coords[None],
                                    mode="sample", seed=5)
        rescored = decode_multistart(tiny_store, tiny_config, inst.coords[None],
                                     mode="forced", forced_orders=sampled.orders)
        np.testing.assert_array_equal(rescored.orders, sampled.orders)
        np.testing.assert_allclose(rescored.step_log_probs, sampled.step_log_probs, atol=1e-5)


class TestRolloutBatch:
    def test_shapes_and_rewards(self, tiny_config, tiny_store):
        instances = generate_instances(seed=41, n=5, count=3)
        batch = rollout_batch(tiny_store, tiny_config, instances, mode="sample", seed=11)
        assert len(batch.per_instance) == 3
        rewards = batch.rewards
        assert rewards.shape == (3, 5)
        for i, trajs in enumerate(batch.per_instance):
            assert [t.start for t in trajs] == list(range(5))
            for t in trajs:
                assert -t.reward == pytest.approx(tour_length(instances[i], t.order), abs=1e-9)

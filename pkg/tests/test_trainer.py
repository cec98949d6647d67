import numpy as np
import pytest

from adpo_lab.objective import ObjectiveConfig
from adpo_lab.tasks import Task, TaskSpec
from adpo_lab.trainer import (
    TrainConfig,
    batch_query_ids,
    hacking_witnesses,
    initial_state,
    train,
    train_step,
)


@pytest.fixture(scope="module")
def task():
    return Task(TaskSpec("discrete", num_queries=32, answer_vocab_size=8, score_bins=2, seed=0))


def _cfg(**kw):
    return TrainConfig(**{"steps": 5, "batch_queries": 4, **kw})


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [dict(group_size=0), dict(batch_queries=0), dict(learning_rate=-1.0), dict(steps=-1), dict(inner_epochs=0)],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)

    def test_preference_needs_pairs(self):
        with pytest.raises(ValueError):
            TrainConfig(group_size=1)
        TrainConfig(group_size=1, objective=ObjectiveConfig(verification="binary"))


class TestTrainStep:
    def test_zero_learning_rate(self, task):
        cfg = _cfg(learning_rate=0.0)
        state = initial_state(cfg, task)
        new, metrics, _ = train_step(state, [0, 1], cfg, task)
        np.testing.assert_array_equal(new.params.flat(), state.params.flat())
        assert metrics.step == 0 and 0.0 <= metrics.pass_at_1 <= 1.0

    def test_input_state_untouched(self, task):
        cfg = _cfg()
        state = initial_state(cfg, task)
        before = state.params.flat().copy()
        train_step(state, [0, 1], cfg, task)
        np.testing.assert_array_equal(state.params.flat(), before)

    def test_group_counting(self, task):
        cfg = _cfg(group_size=8)
        _, _, out = train_step(initial_state(cfg, task), [0, 1], cfg, task)
        assert len(out.batch) == 16 and out.batch.n_groups == 2

    def test_reference_fixed(self, task):
        cfg = _cfg(steps=10)
        result = train(cfg, task)
        np.testing.assert_array_equal(result.ref.flat(), initial_state(cfg, task).params.flat())
        assert not np.array_equal(result.params.flat(), result.ref.flat())

    def test_ascent_on_first_step(self, task):
        # with one small SGD step the objective evaluated on the same batch must not drop
        from adpo_lab.objective import adpo_objective

        cfg = _cfg(optimizer="sgd", learning_rate=1e-3, inner_epochs=1, objective=ObjectiveConfig(kl_coeff=0.0))
        state = initial_state(cfg, task)
        new, _, out = train_step(state, [0, 1, 2, 3], cfg, task)
        before = adpo_objective(state.params, out.batch, out.per_token_adv, state.ref, cfg.objective).total
        after = adpo_objective(new.params, out.batch, out.per_token_adv, state.ref, cfg.objective).total
        assert after >= before

    def test_homogeneous_groups_inert(self):
        # an always-correct policy without verification reward sees no signal
        t = Task(TaskSpec("discrete", num_queries=4, answer_vocab_size=4, score_bins=2))
        cfg = _cfg(objective=ObjectiveConfig(verification="none", kl_coeff=0.0))
        state = initial_state(cfg, t)
        state.params.answer_logits[0][:] = -1e3
        state.params.answer_logits[0][np.arange(4), t.target_tokens[:, 0]] = 0.0
        new, _, out = train_step(state, [0, 1], cfg, t)
        assert np.all(out.per_token_adv == 0.0)
        np.testing.assert_array_equal(new.params.flat(), state.params.flat())


class TestTrain:
    def test_steps_zero(self, task):
        cfg = _cfg(steps=0)
        result = train(cfg, task)
        assert result.history == []
        np.testing.assert_array_equal(result.params.flat(), initial_state(cfg, task).params.flat())

    def test_deterministic(self, task):
        cfg = _cfg(steps=8)
        a, b = train(cfg, task), train(cfg, task)
        np.testing.assert_array_equal(a.params.flat(), b.params.flat())
        assert [m.record() for m in a.history] == [m.record() for m in b.history]

    def test_seed_matters(self, task):
        a = train(_cfg(seed=0), task)
        b = train(_cfg(seed=1), task)
        assert not np.array_equal(a.params.flat(), b.params.flat())

    def test_query_cycling(self):
        np.testing.assert_array_equal(batch_query_ids(0, 3, 5), [0, 1, 2])
        np.testing.assert_array_equal(batch_query_ids(1, 3, 5), [3, 4, 0])

    def test_on_step_callback(self, task):
        seen = []
        train(_cfg(steps=3), task, on_step=lambda m, dt: seen.append((m.step, dt >= 0)))
        assert seen == [(0, True), (1, True), (2, True)]


class TestHackingWitness:
    def test_fires_on_favoured_wrong_low_score(self):
        success = [True, True, False]
        scores = [1.0, 1.0, 0.0]
        adv = [0.5, -1.0, 0.0]
        assert hacking_witnesses(success, scores, adv, 0.5) == 1

    def test_high_score_wrong_ignored(self):
        assert hacking_witnesses([True, False], [1.0, 1.0], [-1.0, 0.0], 0.5) == 0

    def test_no_correct_rollouts(self):
        assert hacking_witnesses([False, False], [0.0, 0.0], [1.0, -1.0], 0.5) == 0

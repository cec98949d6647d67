import itertools
import math

import numpy as np
import pytest

from adpo_lab.objective import (
    ObjectiveConfig,
    adpo_gradient,
    adpo_objective,
    clipped_term,
    kl_token,
)
from adpo_lab.policy import EXACT, PolicyParams, batch_logprobs, sample_batch, snapshot
from adpo_lab.tasks import Task, TaskSpec

from conftest import finite_difference, random_instance


class TestClippedTerm:
    @pytest.mark.parametrize("ratio,adv,expected", [(1.0, 1.0, 1.0), (1.5, 1.0, 1.2), (1.5, -1.0, -1.5), (0.5, 1.0, 0.5), (0.5, -1.0, -0.8)])
    def test_examples(self, ratio, adv, expected):
        assert clipped_term(ratio, adv, 0.2) == pytest.approx(expected, abs=1e-15)

    def test_rejects_non_positive_ratio(self):
        with pytest.raises(ValueError):
            clipped_term(0.0, 1.0, 0.2)

    @pytest.mark.parametrize("kwargs", [dict(clip=0.0), dict(clip=1.0), dict(kl_coeff=-0.1)])
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            ObjectiveConfig(**kwargs)


class TestKL:
    def test_example(self):
        spec = TaskSpec("discrete", num_queries=1, answer_vocab_size=2)
        task = Task(spec)
        p, ref = PolicyParams.zeros(spec), PolicyParams.zeros(spec)
        assert kl_token(p, ref, task.queries[0], 0) == 0.0
        p.answer_logits[0][0, 0] = 2.0
        pi = np.array([1, math.exp(-2)]) / (1 + math.exp(-2))
        want = float((pi * np.log(pi / 0.5)).sum())
        assert kl_token(p, ref, task.queries[0], 0) == pytest.approx(want, abs=1e-15)
        # 0.8808 ln 1.7616 + 0.1192 ln 0.2384 evaluates to 0.3278
        assert want == pytest.approx(0.32781, abs=1e-5)


def _single(answer_adv, score_adv, mode="decoupled"):
    spec = TaskSpec("discrete", num_queries=1, answer_vocab_size=4, score_bins=3)
    p = PolicyParams.zeros(spec)
    batch = sample_batch(p, spec, [0], EXACT, np.random.default_rng(0), 1)
    cfg = ObjectiveConfig(kl_coeff=0.01, mode=mode)
    return p, batch, np.array([[answer_adv, score_adv]]), cfg


class TestObjectiveValue:
    def test_zero_advantage_zero_kl(self):
        p, batch, _, cfg = _single(0, 0)
        terms = adpo_objective(p, batch, np.zeros((1, 2)), snapshot(p), ObjectiveConfig(kl_coeff=0.0))
        assert terms.total == 0.0

    def test_masked_example(self):
        p, batch, adv, cfg = _single(1.0, -1.0)
        terms = adpo_objective(p, batch, adv, snapshot(p), cfg)
        assert terms.total == pytest.approx(0.0, abs=1e-15)
        np.testing.assert_array_equal(terms.ratios, 1.0)

    def test_entangled_example(self):
        p, batch, adv, cfg = _single(1.0, 1.0, "entangled")
        assert adpo_objective(p, batch, adv, snapshot(p), cfg).total == pytest.approx(1.0, abs=1e-15)

    def test_shape_mismatch(self):
        p, batch, _, cfg = _single(0, 0)
        with pytest.raises(ValueError):
            adpo_objective(p, batch, np.zeros((1, 3)), p, cfg)

    def test_non_finite_params(self):
        p, batch, adv, cfg = _single(1, 1)
        bad = snapshot(p)
        bad.score_bias[0] = np.inf
        with pytest.raises(FloatingPointError):
            adpo_objective(bad, batch, adv, p, cfg)


CASES = list(itertools.product(["decoupled", "entangled"], ["binary", "preference"], [0.0, 0.01]))


def gradient_errors(seed, mode, verification, beta):
    params, behavior, ref, batch, adv, cfg = random_instance(seed, mode, verification, beta)
    grad = adpo_gradient(params, batch, adv, ref, cfg).flat()
    fd = finite_difference(lambda v: adpo_objective(params.with_flat(v), batch, adv, ref, cfg).total, params.flat())
    big = np.abs(grad) > 1e-8
    rel = np.abs(grad - fd)[big] / np.abs(grad)[big]
    return rel, grad, fd


class TestGradient:
    @pytest.mark.parametrize("mode,verification,beta", CASES)
    def test_finite_difference(self, mode, verification, beta):
        for seed in range(3):
            rel, grad, fd = gradient_errors(seed, mode, verification, beta)
            assert rel.size == 0 or rel.max() < 1e-4
            np.testing.assert_allclose(grad, fd, atol=1e-8)

    def test_zero_advantage_beta_zero_is_zero(self):
        params, _, ref, batch, adv, _ = random_instance(1)
        grad = adpo_gradient(params, batch, np.zeros_like(adv), ref, ObjectiveConfig(kl_coeff=0.0))
        assert np.all(grad.flat() == 0.0)

    def test_isolation(self):
        params, _, ref, batch, adv, cfg = random_instance(2, kl_coeff=0.0)
        full = adpo_gradient(params, batch, adv, ref, cfg)
        no_pref = adv.copy()
        no_pref[:, -1] = 0.0
        no_ans = adv.copy()
        no_ans[:, :-1] = 0.0
        g1 = adpo_gradient(params, batch, no_pref, ref, cfg)
        g2 = adpo_gradient(params, batch, no_ans, ref, cfg)
        for a, b in zip(full.answer_logits, g1.answer_logits):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(full.score_logits, g2.score_logits)
        np.testing.assert_array_equal(full.score_bias, g2.score_bias)

    def test_gradient_of_clipped_tokens_is_zero(self):
        spec = TaskSpec("discrete", num_queries=1, answer_vocab_size=4, score_bins=3)
        behavior = PolicyParams.zeros(spec)
        batch = sample_batch(behavior, spec, [0], EXACT, np.random.default_rng(0), 1)
        params = snapshot(behavior)
        params.answer_logits[0][0, batch.answer_tokens[0, 0]] = 2.0  # ratio far above 1 + eps
        adv = np.array([[1.0, 0.0]])
        grad = adpo_gradient(params, batch, adv, params, ObjectiveConfig(kl_coeff=0.0))
        assert np.all(grad.flat() == 0.0)

    def test_ratio_one_at_snapshot(self, rng):
        params, behavior, _, batch, _, _ = random_instance(3)
        batch.behavior_logprobs = batch_logprobs(params, batch)
        terms = adpo_objective(params, batch, np.zeros((len(batch), batch.answer_tokens.shape[1] + 1)), params, ObjectiveConfig())
        np.testing.assert_array_equal(terms.ratios, 1.0)

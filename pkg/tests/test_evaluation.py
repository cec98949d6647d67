import pytest
from hypothesis import given
from hypothesis import strategies as st

from adpo_lab.evaluation import (
    EvalConfig,
    Protocol,
    auc,
    average_precision,
    best_of_n,
    evaluate,
    majority_vote,
    nested_reports,
    score_histogram,
)
from adpo_lab.policy import DecodeConfig, InitKind, PolicyParams, init_params
from adpo_lab.tasks import Task, TaskSpec


def brute_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    if not pos or not neg:
        return None
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def brute_ap(scores, labels):
    ranked = [y for _, y in sorted(zip(scores, labels), key=lambda t: -t[0])]
    if not any(ranked):
        return None
    hits, total = 0, 0.0
    for k, y in enumerate(ranked, start=1):
        if y:
            hits += 1
            total += hits / k
    return total / hits


class TestSelection:
    @pytest.mark.parametrize("scores,idx", [([0.2, 0.9, 0.5], 1), ([0.9, 0.9, 0.1], 0), ([0.3], 0)])
    def test_best_of_n(self, scores, idx):
        assert best_of_n(scores) == idx

    @pytest.mark.parametrize("answers,winner", [([3, 3, 5, 7], 3), ([3, 5], 3), ([5, 3], 3), ([4], 4)])
    def test_majority(self, answers, winner):
        assert majority_vote(answers) == winner

    def test_empty(self):
        with pytest.raises(ValueError):
            best_of_n([])
        with pytest.raises(ValueError):
            majority_vote([])


class TestAUC:
    def test_examples(self):
        assert auc([0.9, 0.8, 0.4, 0.3], [1, 0, 1, 0]) == 0.75
        assert auc([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0
        assert auc([0.5] * 4, [1, 0, 1, 0]) == 0.5

    def test_single_class(self):
        assert auc([0.1, 0.2], [1, 1]) is None
        assert auc([0.1, 0.2], [0, 0]) is None

    @given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=1, max_size=40))
    def test_matches_pair_count(self, rows):
        s = [a / 5 for a, _ in rows]
        y = [b for _, b in rows]
        want = brute_auc(s, y)
        got = auc(s, y)
        assert (got is None) == (want is None)
        if want is not None:
            assert abs(got - want) <= 1e-12


class TestAP:
    def test_examples(self):
        assert average_precision([0.9, 0.8, 0.4, 0.3], [1, 0, 1, 0]) == pytest.approx(5 / 6, abs=1e-15)
        assert average_precision([0.9, 0.8, 0.4], [1, 1, 0]) == 1.0
        assert average_precision([0.9, 0.8, 0.4, 0.1], [0, 0, 0, 1]) == 0.25

    def test_no_positives(self):
        assert average_precision([0.1, 0.2], [0, 0]) is None

    @given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=1, max_size=40))
    def test_matches_rank_walk(self, rows):
        s = [a / 5 for a, _ in rows]
        y = [b for _, b in rows]
        want = brute_ap(s, y)
        got = average_precision(s, y)
        assert (got is None) == (want is None)
        if want is not None:
            assert abs(got - want) <= 1e-12


class TestHistogram:
    def test_counts(self):
        assert score_histogram([0, 2, 2, 1], 4) == [1, 1, 2, 0]


@pytest.fixture(scope="module")
def small_task():
    return Task(TaskSpec("discrete", num_queries=20, answer_vocab_size=4, score_bins=3, seed=1))


class TestEvaluate:
    def test_n1_protocols_coincide(self, small_task):
        p = init_params(small_task, InitKind.PRETRAINED, 0.6)
        r = evaluate(p, EvalConfig(n=1, decode=DecodeConfig(1.0, 1.0)), small_task)
        assert r.pass1 == r.majority == r.best_of_n == r.oracle_best_of_n

    def test_pass1_forces_single_sample(self):
        assert EvalConfig(n=8, protocol="pass1").n == 1

    def test_deterministic(self, small_task):
        p = init_params(small_task, InitKind.PRETRAINED, 0.6)
        cfg = EvalConfig(n=4, decode=DecodeConfig(1.0, 1.0), seed=5)
        assert evaluate(p, cfg, small_task).record() == evaluate(p, cfg, small_task).record()

    def test_histogram_total(self, small_task):
        r = evaluate(PolicyParams.zeros(small_task.spec), EvalConfig(n=4), small_task)
        assert sum(r.histogram) == 80 and len(r.histogram) == 3

    def test_cross_verifier_needs_params(self, small_task):
        with pytest.raises(ValueError):
            evaluate(PolicyParams.zeros(small_task.spec), EvalConfig(protocol=Protocol.CROSS_VERIFIER), small_task)

    def test_cross_verifier_uses_other_score_head(self, small_task):
        p = init_params(small_task, InitKind.PRETRAINED, 0.6)
        v = PolicyParams.zeros(small_task.spec)
        v.score_bias[:] = [0.0, 0.0, 50.0]
        r = evaluate(p, EvalConfig(n=4, protocol="cross_verifier", decode=DecodeConfig(1.0, 1.0)), small_task, v)
        assert r.histogram == [0, 0, 80]

    def test_interval_reports_iou(self):
        task = Task(TaskSpec("interval", num_queries=10, answer_vocab_size=11, score_bins=3))
        r = evaluate(PolicyParams.zeros(task.spec), EvalConfig(n=2), task)
        assert set(r.mean_iou) == {"pass1", "majority", "best_of_n", "oracle_best_of_n"}

    @pytest.mark.parametrize("seed", range(5))
    def test_nested_oracle_monotone(self, small_task, seed):
        p = init_params(small_task, InitKind.PRETRAINED, 0.4)
        reps = nested_reports(p, EvalConfig(decode=DecodeConfig(1.0, 1.0), seed=seed), small_task, [1, 4, 8, 12])
        acc = [reps[n].oracle_best_of_n for n in (1, 4, 8, 12)]
        assert acc == sorted(acc)
        assert reps[1].pass1 == reps[12].pass1

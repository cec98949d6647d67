"""Candidate selection (best-of-N, majority vote) and ranking metrics."""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field

import numpy as np

from .policy import DecodeConfig, PolicyParams, decode_distribution, sample_batch, score_logit_rows
from . import kernels
from .tasks import Task, TaskKind


class Protocol(str, enum.Enum):
    PASS1 = "pass1"
    MAJORITY = "majority"
    BEST_OF_N = "best_of_n"
    CROSS_VERIFIER = "cross_verifier"


@dataclass(frozen=True)
class EvalConfig:
    n: int = 8
    protocol: Protocol = Protocol.BEST_OF_N
    decode: DecodeConfig = field(default_factory=lambda: DecodeConfig(0.2, 0.99))
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        if self.n < 1:
            raise ValueError(f"n must be positive, got {self.n}")
        if self.protocol is Protocol.PASS1:
            object.__setattr__(self, "n", 1)


@dataclass
class EvalReport:
    protocol: str
    n: int
    num_queries: int
    pass1: float
    majority: float
    best_of_n: float
    oracle_best_of_n: float
    mean_iou: dict | None
    auc: float | None
    ap: float | None
    histogram: list[int]

    @property
    def accuracy(self) -> float:
        return {"pass1": self.pass1, "majority": self.majority}.get(self.protocol, self.best_of_n)

    def record(self) -> dict:
        return asdict(self)


def best_of_n(scores) -> int:
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("best_of_n needs at least one candidate")
    return int(np.argmax(s))  # argmax returns the first maximum


def majority_vote(answers) -> int:
    a = np.asarray(answers, dtype=np.int64)
    if a.size == 0:
        raise ValueError("majority_vote needs at least one answer")
    values, counts = np.unique(a, return_counts=True)  # values come back sorted
    return int(values[np.argmax(counts)])


def _labels(labels) -> np.ndarray:
    return np.asarray(labels).astype(bool)


def auc(scores, labels) -> float | None:
    """Mann-Whitney AUC with ties counted one half; None for single-class input."""
    s = np.asarray(scores, dtype=np.float64)
    y = _labels(labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(s, kind="stable")
    sorted_s = s[order]
    ranks = np.empty(s.size)
    # average 1-based ranks over runs of tied scores
    starts = np.flatnonzero(np.r_[True, sorted_s[1:] != sorted_s[:-1]])
    ends = np.r_[starts[1:], s.size]
    for a, b in zip(starts, ends):
        ranks[order[a:b]] = (a + b + 1) / 2.0
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(scores, labels) -> float | None:
    """Mean precision at each positive, ranking by descending score with ties
    kept in input order; None without positives."""
    s = np.asarray(scores, dtype=np.float64)
    y = _labels(labels)
    if not y.any():
        return None
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    ranks = np.flatnonzero(hits) + 1
    precision = np.arange(1, ranks.size + 1) / ranks
    return float(precision.mean())


def score_histogram(score_tokens, bins: int) -> list[int]:
    return np.bincount(np.asarray(score_tokens, dtype=np.int64), minlength=bins).tolist()


def rescore(verifier: PolicyParams, query_ids, answer_ids, cfg: DecodeConfig, rng) -> np.ndarray:
    """Sample score tokens from another model's score head on fixed answers."""
    probs = decode_distribution(score_logit_rows(verifier, query_ids, answer_ids), cfg)
    return kernels.sample_categorical(probs, np.ascontiguousarray(rng.random(len(query_ids))))


@dataclass
class EvalPool:
    """All sampled candidates, shaped ``(num_queries, N)``."""

    answer_ids: np.ndarray
    answer_rewards: np.ndarray
    success: np.ndarray
    score_tokens: np.ndarray
    scores: np.ndarray


def sample_pool(params: PolicyParams, config: EvalConfig, task: Task, verifier: PolicyParams | None = None) -> EvalPool:
    rng = np.random.default_rng(config.seed)
    n = config.n
    qids = np.arange(len(task))
    batch = sample_batch(params, task.spec, qids, config.decode, rng, n)
    ra = task.answer_rewards(batch.query_ids, batch.answer_tokens)
    score_tokens = batch.score_tokens
    if config.protocol is Protocol.CROSS_VERIFIER:
        if verifier is None:
            raise ValueError("cross-verifier evaluation needs verifier params")
        score_tokens = rescore(verifier, batch.query_ids, batch.answer_ids, config.decode, rng)
    shape = (len(task), n)
    return EvalPool(
        answer_ids=batch.answer_ids.reshape(shape),
        answer_rewards=ra.reshape(shape),
        success=task.success(ra).reshape(shape),
        score_tokens=score_tokens.reshape(shape),
        scores=(score_tokens / (task.spec.score_bins - 1)).reshape(shape),
    )


def majority_pick(answer_ids_row) -> int:
    """Index of the first candidate carrying the majority answer."""
    winner = majority_vote(answer_ids_row)
    return int(np.flatnonzero(np.asarray(answer_ids_row) == winner)[0])


def pool_report(pool: EvalPool, config: EvalConfig, task: Task) -> EvalReport:
    nq, n = pool.answer_ids.shape
    rows = np.arange(nq)
    picks = {
        "pass1": np.zeros(nq, dtype=np.int64),
        "majority": np.array([majority_pick(pool.answer_ids[q]) for q in rows], dtype=np.int64),
        "best_of_n": np.array([best_of_n(pool.scores[q]) for q in rows], dtype=np.int64),
        "oracle_best_of_n": np.array([best_of_n(pool.answer_rewards[q]) for q in rows], dtype=np.int64),
    }
    acc = {k: float(pool.success[rows, idx].mean()) for k, idx in picks.items()}
    mean_iou = None
    if task.kind is TaskKind.INTERVAL:
        mean_iou = {k: float(pool.answer_rewards[rows, idx].mean()) for k, idx in picks.items()}
    flat_scores = pool.scores.ravel()
    flat_success = pool.success.ravel()
    return EvalReport(
        protocol=config.protocol.value,
        n=n,
        num_queries=nq,
        pass1=acc["pass1"],
        majority=acc["majority"],
        best_of_n=acc["best_of_n"],
        oracle_best_of_n=acc["oracle_best_of_n"],
        mean_iou=mean_iou,
        auc=auc(flat_scores, flat_success),
        ap=average_precision(flat_scores, flat_success),
        histogram=score_histogram(pool.score_tokens.ravel(), task.spec.score_bins),
    )


def evaluate(params: PolicyParams, config: EvalConfig, task: Task, verifier: PolicyParams | None = None) -> EvalReport:
    return pool_report(sample_pool(params, config, task, verifier), config, task)


def prefix_pool(pool: EvalPool, n: int) -> EvalPool:
    """The first ``n`` candidates of every query, a nested sub-pool."""
    if not 1 <= n <= pool.answer_ids.shape[1]:
        raise ValueError(f"prefix size {n} outside 1..{pool.answer_ids.shape[1]}")
    return EvalPool(*(a[:, :n] for a in (pool.answer_ids, pool.answer_rewards, pool.success, pool.score_tokens, pool.scores)))


def nested_reports(params: PolicyParams, config: EvalConfig, task: Task, ns, verifier: PolicyParams | None = None) -> dict[int, EvalReport]:
    """Reports on prefixes of a single pool of ``max(ns)`` samples per query."""
    ns = sorted(set(int(n) for n in ns))
    big = EvalConfig(n=ns[-1], protocol=config.protocol, decode=config.decode, seed=config.seed)
    pool = sample_pool(params, big, task, verifier)
    return {n: pool_report(prefix_pool(pool, n), big, task) for n in ns}

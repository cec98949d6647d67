"""Tabular softmax policy: an answer head per query and a score head per
(query, answer).

Score logits for a context are ``score_logits[q, answer] + score_bias``.  The
bias row is shared by every context, which is the only place where learning on
one answer leaks into the scores of others.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .rewards import RewardBundle
from .tasks import DecodedAnswer, Query, Task, TaskSpec, answer_index, decode_answer

MIN_TEMPERATURE = 1e-3
PARAMS_MAGIC = "adpo-lab-params"
PARAMS_VERSION = 1


class InitKind(str, enum.Enum):
    UNIFORM = "uniform"
    PRETRAINED = "pretrained"


@dataclass(frozen=True)
class DecodeConfig:
    temperature: float = 1.0
    top_p: float = 1.0

    def __post_init__(self):
        if not self.temperature > 0.0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError(f"top_p must lie in (0, 1], got {self.top_p}")
        object.__setattr__(self, "temperature", max(float(self.temperature), MIN_TEMPERATURE))


EXACT = DecodeConfig(1.0, 1.0)


@dataclass
class PolicyParams:
    answer_logits: list[np.ndarray]
    score_logits: np.ndarray
    score_bias: np.ndarray

    @classmethod
    def zeros(cls, spec: TaskSpec) -> PolicyParams:
        q = spec.num_queries
        return cls(
            answer_logits=[np.zeros((q, v)) for v in spec.position_vocab],
            score_logits=np.zeros((q, spec.num_answers, spec.score_bins)),
            score_bias=np.zeros(spec.score_bins),
        )

    def arrays(self) -> list[np.ndarray]:
        return [*self.answer_logits, self.score_logits, self.score_bias]

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        return [a.shape for a in self.arrays()]

    def zeros_like(self) -> PolicyParams:
        return PolicyParams(
            [np.zeros_like(a) for a in self.answer_logits],
            np.zeros_like(self.score_logits),
            np.zeros_like(self.score_bias),
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vector) -> PolicyParams:
        vector = np.asarray(vector, dtype=np.float64)
        out, offset = [], 0
        for a in self.arrays():
            out.append(vector[offset : offset + a.size].reshape(a.shape).copy())
            offset += a.size
        if offset != vector.size:
            raise ValueError(f"flat vector has {vector.size} entries, expected {offset}")
        return PolicyParams(out[:-2], out[-2], out[-1])

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())

    def save(self, path) -> None:
        """Write a text file: one JSON header line, then one value per line."""
        header = {"format": PARAMS_MAGIC, "version": PARAMS_VERSION, "shapes": [list(s) for s in self.shapes]}
        lines = [json.dumps(header, sort_keys=True)]
        lines.extend(f"{v:.17g}" for v in self.flat())
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> PolicyParams:
        text = Path(path).read_text().splitlines()
        header = json.loads(text[0])
        if header.get("format") != PARAMS_MAGIC:
            raise ValueError(f"{path} is not a parameter file")
        values = np.array([float(x) for x in text[1:] if x.strip()], dtype=np.float64)
        arrays, offset = [], 0
        for shape in header["shapes"]:
            size = int(np.prod(shape)) if shape else 1
            arrays.append(values[offset : offset + size].reshape(shape))
            offset += size
        if offset != values.size:
            raise ValueError(f"{path}: header promises {offset} values, file holds {values.size}")
        return cls(arrays[:-2], arrays[-2], arrays[-1])


def snapshot(params: PolicyParams) -> PolicyParams:
    return PolicyParams(
        [a.copy() for a in params.answer_logits],
        params.score_logits.copy(),
        params.score_bias.copy(),
    )


def pretrained_bias(accuracy: float, vocab: int) -> float:
    """Logit offset giving the target token probability ``accuracy`` under softmax."""
    if not 0.0 < accuracy < 1.0:
        raise ValueError(f"pretrained accuracy must lie in (0, 1), got {accuracy}")
    return math.log(accuracy * (vocab - 1) / (1.0 - accuracy))


def init_params(task: Task, init=InitKind.UNIFORM, accuracy: float = 0.85, seed: int = 0) -> PolicyParams:
    """Uniform (all-zero) logits, or answer logits biased toward the truth.

    For multi-token answers every position gets the per-position accuracy
    ``accuracy ** (1 / L)`` so the joint probability matches ``accuracy``.
    ``seed`` is accepted for interface symmetry; both inits are deterministic.
    """
    del seed
    init = InitKind(init)
    params = PolicyParams.zeros(task.spec)
    if init is InitKind.PRETRAINED:
        per_position = accuracy ** (1.0 / task.spec.answer_length)
        rows = np.arange(task.spec.num_queries)
        for pos, vocab in enumerate(task.spec.position_vocab):
            params.answer_logits[pos][rows, task.target_tokens[:, pos]] = pretrained_bias(per_position, vocab)
    return params


# --- distributions -----------------------------------------------------------


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def answer_logit_rows(params: PolicyParams, position: int, query_ids) -> np.ndarray:
    return params.answer_logits[position][query_ids]


def score_logit_rows(params: PolicyParams, query_ids, answer_ids) -> np.ndarray:
    return params.score_logits[query_ids, answer_ids] + params.score_bias


def decode_distribution(logits: np.ndarray, cfg: DecodeConfig) -> np.ndarray:
    """Temperature softmax followed by nucleus truncation, row-wise."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    probs = softmax(logits / cfg.temperature)
    if cfg.top_p < 1.0:
        probs = kernels.top_p_filter(np.ascontiguousarray(probs), float(cfg.top_p))
    return probs


def decode_logprobs(logits: np.ndarray, probs: np.ndarray, cfg: DecodeConfig, tokens) -> np.ndarray:
    """Log-probability of ``tokens`` under the distribution they were drawn from."""
    rows = np.arange(len(tokens))
    if cfg.top_p < 1.0:
        return np.log(probs[rows, tokens])
    # untruncated: same arithmetic as batch_logprobs so T=1 matches it bit for bit
    return log_softmax(logits / cfg.temperature)[rows, tokens]


def token_distribution(params: PolicyParams, query: Query, position: int, cfg: DecodeConfig, answer_tokens=None):
    """Next-token distribution at an answer position, or at the score position
    (``position == answer_length``) given the sampled ``answer_tokens``."""
    spec = query.spec
    if position < spec.answer_length:
        logits = answer_logit_rows(params, position, [query.id])
    else:
        if answer_tokens is None:
            raise ValueError("the score position needs the sampled answer tokens")
        aid = answer_index(spec, [answer_tokens])
        logits = score_logit_rows(params, [query.id], aid)
    return decode_distribution(logits, cfg)[0]


# --- rollouts ----------------------------------------------------------------


@dataclass
class Rollout:
    query_id: int
    answer_tokens: tuple[int, ...]
    score_token: int
    score_bins: int
    behavior_logprobs: np.ndarray
    rewards: RewardBundle | None = None

    @property
    def score_value(self) -> float:
        return self.score_token / (self.score_bins - 1)

    @property
    def tokens(self) -> tuple[int, ...]:
        return (*self.answer_tokens, self.score_token)

    def decode(self, query: Query) -> DecodedAnswer:
        return decode_answer(query, self.answer_tokens)


@dataclass
class Group:
    query: Query
    rollouts: list[Rollout] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rollouts)


@dataclass
class RolloutBatch:
    """Struct-of-arrays view of ``n_groups * group_size`` rollouts; rows of one
    group are contiguous."""

    query_ids: np.ndarray
    answer_tokens: np.ndarray
    score_tokens: np.ndarray
    behavior_logprobs: np.ndarray
    group_size: int
    score_bins: int
    answer_ids: np.ndarray

    def __len__(self) -> int:
        return len(self.query_ids)

    @property
    def n_groups(self) -> int:
        return len(self.query_ids) // self.group_size

    @property
    def scores(self) -> np.ndarray:
        return self.score_tokens / (self.score_bins - 1)

    @property
    def tokens(self) -> np.ndarray:
        return np.concatenate([self.answer_tokens, self.score_tokens[:, None]], axis=1)

    def rollout(self, i: int) -> Rollout:
        return Rollout(
            int(self.query_ids[i]),
            tuple(int(t) for t in self.answer_tokens[i]),
            int(self.score_tokens[i]),
            self.score_bins,
            self.behavior_logprobs[i].copy(),
        )

    def groups(self, task: Task) -> list[Group]:
        g = self.group_size
        return [
            Group(task.queries[int(self.query_ids[k * g])], [self.rollout(i) for i in range(k * g, (k + 1) * g)])
            for k in range(self.n_groups)
        ]

    @classmethod
    def from_rollouts(cls, spec: TaskSpec, rollouts: list[Rollout], group_size: int) -> RolloutBatch:
        answers = np.array([r.answer_tokens for r in rollouts], dtype=np.int64).reshape(len(rollouts), -1)
        return cls(
            query_ids=np.array([r.query_id for r in rollouts], dtype=np.int64),
            answer_tokens=answers,
            score_tokens=np.array([r.score_token for r in rollouts], dtype=np.int64),
            behavior_logprobs=np.array([r.behavior_logprobs for r in rollouts], dtype=np.float64),
            group_size=group_size,
            score_bins=spec.score_bins,
            answer_ids=answer_index(spec, answers),
        )


def sample_batch(params: PolicyParams, spec: TaskSpec, query_ids, cfg: DecodeConfig, rng, group_size: int = 1) -> RolloutBatch:
    """Sample ``group_size`` rollouts for each query id, answer tokens first,
    then the score token conditioned on the sampled answer.

    Uniforms are drawn as one ``(n, L + 1)`` block so results depend only on
    the generator state, not on batch internals.
    """
    qids = np.repeat(np.asarray(query_ids, dtype=np.int64), group_size)
    n, length = len(qids), spec.answer_length
    uniforms = rng.random((n, length + 1))
    tokens = np.empty((n, length), dtype=np.int64)
    logps = np.empty((n, length + 1))
    for pos in range(length):
        logits = answer_logit_rows(params, pos, qids)
        probs = decode_distribution(logits, cfg)
        tokens[:, pos] = kernels.sample_categorical(probs, np.ascontiguousarray(uniforms[:, pos]))
        logps[:, pos] = decode_logprobs(logits, probs, cfg, tokens[:, pos])
    aids = answer_index(spec, tokens)
    logits = score_logit_rows(params, qids, aids)
    probs = decode_distribution(logits, cfg)
    score_tokens = kernels.sample_categorical(probs, np.ascontiguousarray(uniforms[:, length]))
    logps[:, length] = decode_logprobs(logits, probs, cfg, score_tokens)
    return RolloutBatch(qids, tokens, score_tokens, logps, group_size, spec.score_bins, aids)


def sample_rollout(params: PolicyParams, query: Query, cfg: DecodeConfig, rng) -> Rollout:
    return sample_batch(params, query.spec, [query.id], cfg, rng).rollout(0)


def batch_logprobs(params: PolicyParams, batch: RolloutBatch) -> np.ndarray:
    """Exact per-token log-probabilities under the untruncated T=1 policy."""
    n = len(batch)
    rows = np.arange(n)
    out = np.empty((n, batch.answer_tokens.shape[1] + 1))
    for pos in range(batch.answer_tokens.shape[1]):
        out[:, pos] = log_softmax(answer_logit_rows(params, pos, batch.query_ids))[rows, batch.answer_tokens[:, pos]]
    out[:, -1] = log_softmax(score_logit_rows(params, batch.query_ids, batch.answer_ids))[rows, batch.score_tokens]
    return out


def logprob(params: PolicyParams, rollout: Rollout, spec: TaskSpec) -> np.ndarray:
    """Per-token log pi(token | context) of one rollout (T=1, no truncation)."""
    tokens = (*rollout.answer_tokens, rollout.score_token)
    vocab = (*spec.position_vocab, spec.score_bins)
    if len(tokens) != len(vocab):
        raise ValueError("rollout layout does not match the task")
    for tok, v in zip(tokens, vocab):
        if not 0 <= tok < v:
            raise ValueError(f"token {tok} outside vocabulary of size {v}")
    if not 0 <= rollout.query_id < spec.num_queries:
        raise ValueError(f"query id {rollout.query_id} out of range")
    batch = RolloutBatch.from_rollouts(spec, [rollout], 1)
    return batch_logprobs(params, batch)[0]

"""Synthetic task families with known ground truth.

Three kinds share one token layout convention:

* ``DISCRETE`` - a single answer token in ``0..K-1``; correct iff it equals the
  hidden answer.
* ``INTERVAL`` - a single token selecting a centre bin ``c = bin / (K-1)``; the
  predicted interval is ``[c - w/2, c + w/2]`` clipped to ``[0, 1]``.
* ``AGENT`` - two tokens, an action type and a cell on a ``sqrt(K) x sqrt(K)``
  grid over the unit square; the cell decodes to its centre point.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class TaskKind(str, enum.Enum):
    DISCRETE = "discrete"
    INTERVAL = "interval"
    AGENT = "agent"


class MalformedRolloutError(ValueError):
    """Token sequence does not match the layout required by the task kind."""


@dataclass(frozen=True)
class TaskSpec:
    kind: TaskKind
    num_queries: int = 64
    answer_vocab_size: int = 8
    score_bins: int = 11
    interval_width: float = 0.2
    num_action_types: int = 4
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", TaskKind(self.kind))
        if self.num_queries < 1:
            raise ValueError(f"num_queries must be positive, got {self.num_queries}")
        if self.answer_vocab_size < 2:
            raise ValueError(f"answer_vocab_size must be >= 2, got {self.answer_vocab_size}")
        if self.score_bins < 2:
            raise ValueError(f"score_bins must be >= 2, got {self.score_bins}")
        if self.kind is TaskKind.INTERVAL and not 0.0 < self.interval_width <= 1.0:
            raise ValueError(f"interval_width must lie in (0, 1], got {self.interval_width}")
        if self.kind is TaskKind.AGENT:
            if self.num_action_types < 1:
                raise ValueError("num_action_types must be positive")
            side = math.isqrt(self.answer_vocab_size)
            if side * side != self.answer_vocab_size:
                raise ValueError(
                    f"agent tasks need a perfect-square answer_vocab_size, got {self.answer_vocab_size}"
                )

    @property
    def grid_side(self) -> int:
        return math.isqrt(self.answer_vocab_size)

    @property
    def position_vocab(self) -> tuple[int, ...]:
        """Vocabulary size of each answer position."""
        if self.kind is TaskKind.AGENT:
            return (self.num_action_types, self.answer_vocab_size)
        return (self.answer_vocab_size,)

    @property
    def answer_length(self) -> int:
        return len(self.position_vocab)

    @property
    def num_answers(self) -> int:
        """Number of distinct full answers (the score head's answer index range)."""
        return int(np.prod(self.position_vocab))


@dataclass(frozen=True)
class GroundTruth:
    discrete_answer: int | None = None
    interval: tuple[float, float] | None = None
    action: tuple[int, tuple[float, float]] | None = None

    def __post_init__(self):
        if self.interval is not None:
            lo, hi = self.interval
            if not 0.0 <= lo < hi <= 1.0:
                raise ValueError(f"invalid interval {self.interval}")
        if self.action is not None:
            x, y = self.action[1]
            if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
                raise ValueError(f"action point {self.action[1]} outside the unit square")


@dataclass(frozen=True)
class DecodedAnswer:
    kind: TaskKind
    token: int | None = None
    interval: tuple[float, float] | None = None
    action_type: int | None = None
    point: tuple[float, float] | None = None


@dataclass(frozen=True)
class Query:
    id: int
    kind: TaskKind
    truth: GroundTruth
    spec: TaskSpec

    def __post_init__(self):
        if not 0 <= self.id < self.spec.num_queries:
            raise ValueError(f"query id {self.id} out of range")


def cell_center(cell: int, side: int) -> tuple[float, float]:
    row, col = divmod(int(cell), side)
    return ((col + 0.5) / side, (row + 0.5) / side)


def point_to_cell(point, side: int) -> int:
    x, y = point
    col = min(int(x * side), side - 1)
    row = min(int(y * side), side - 1)
    return row * side + col


def interval_for_bin(bin_index: int, vocab: int, width: float) -> tuple[float, float]:
    center = bin_index / (vocab - 1)
    return (max(0.0, center - width / 2), min(1.0, center + width / 2))


def make_task(spec: TaskSpec) -> list[Query]:
    rng = np.random.default_rng(spec.seed)
    queries = []
    for qid in range(spec.num_queries):
        if spec.kind is TaskKind.DISCRETE:
            truth = GroundTruth(discrete_answer=int(rng.integers(spec.answer_vocab_size)))
        elif spec.kind is TaskKind.INTERVAL:
            lo = float(rng.uniform(0.0, 1.0 - spec.interval_width))
            # the upper end is pinned to lo + w so every interval has width w
            hi = min(1.0, lo + spec.interval_width)
            truth = GroundTruth(interval=(lo, hi))
        else:
            kind = int(rng.integers(spec.num_action_types))
            x, y = rng.uniform(0.0, 1.0, size=2)
            truth = GroundTruth(action=(kind, (float(x), float(y))))
        queries.append(Query(qid, spec.kind, truth, spec))
    return queries


def true_answer_tokens(query: Query) -> tuple[int, ...]:
    """Token sequence closest to the ground truth (the target of pretrained init)."""
    spec = query.spec
    if query.kind is TaskKind.DISCRETE:
        return (query.truth.discrete_answer,)
    if query.kind is TaskKind.INTERVAL:
        lo, hi = query.truth.interval
        return (int(round((lo + hi) / 2 * (spec.answer_vocab_size - 1))),)
    kind, point = query.truth.action
    return (kind, point_to_cell(point, spec.grid_side))


def decode_answer(query: Query, answer_tokens) -> DecodedAnswer:
    spec = query.spec
    tokens = [int(t) for t in answer_tokens]
    if len(tokens) != spec.answer_length:
        raise MalformedRolloutError(
            f"{query.kind.value} answers take {spec.answer_length} token(s), got {len(tokens)}"
        )
    for tok, vocab in zip(tokens, spec.position_vocab):
        if not 0 <= tok < vocab:
            raise MalformedRolloutError(f"token {tok} outside vocabulary of size {vocab}")
    if query.kind is TaskKind.DISCRETE:
        return DecodedAnswer(query.kind, token=tokens[0])
    if query.kind is TaskKind.INTERVAL:
        interval = interval_for_bin(tokens[0], spec.answer_vocab_size, spec.interval_width)
        return DecodedAnswer(query.kind, token=tokens[0], interval=interval)
    return DecodedAnswer(
        query.kind,
        action_type=tokens[0],
        point=cell_center(tokens[1], spec.grid_side),
    )


def answer_index(spec: TaskSpec, answer_tokens) -> np.ndarray:
    """Flatten answer token rows ``(n, L)`` into the score head's answer index."""
    tokens = np.asarray(answer_tokens, dtype=np.int64)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    index = np.zeros(tokens.shape[0], dtype=np.int64)
    for pos, vocab in enumerate(spec.position_vocab):
        index = index * vocab + tokens[:, pos]
    return index


class Task:
    """A generated query set plus vectorised truth arrays for batch scoring."""

    def __init__(self, spec: TaskSpec):
        self.spec = spec
        self.queries = make_task(spec)
        q = self.queries
        if spec.kind is TaskKind.DISCRETE:
            self.truth_token = np.array([x.truth.discrete_answer for x in q], dtype=np.int64)
        elif spec.kind is TaskKind.INTERVAL:
            self.truth_interval = np.array([x.truth.interval for x in q], dtype=np.float64)
        else:
            self.truth_type = np.array([x.truth.action[0] for x in q], dtype=np.int64)
            self.truth_point = np.array([x.truth.action[1] for x in q], dtype=np.float64)
        self.target_tokens = np.array([true_answer_tokens(x) for x in q], dtype=np.int64)

    @property
    def kind(self) -> TaskKind:
        return self.spec.kind

    def __len__(self) -> int:
        return len(self.queries)

    def answer_rewards(self, query_ids, answer_tokens) -> np.ndarray:
        """Vectorised answer reward for rows of answer tokens."""
        from .rewards import agent_reward_array, interval_iou_array

        qids = np.asarray(query_ids, dtype=np.int64)
        tokens = np.asarray(answer_tokens, dtype=np.int64)
        spec = self.spec
        if spec.kind is TaskKind.DISCRETE:
            return (tokens[:, 0] == self.truth_token[qids]).astype(np.float64)
        if spec.kind is TaskKind.INTERVAL:
            center = tokens[:, 0] / (spec.answer_vocab_size - 1)
            lo = np.maximum(0.0, center - spec.interval_width / 2)
            hi = np.minimum(1.0, center + spec.interval_width / 2)
            truth = self.truth_interval[qids]
            return interval_iou_array(lo, hi, truth[:, 0], truth[:, 1])
        side = spec.grid_side
        row, col = np.divmod(tokens[:, 1], side)
        points = np.stack([(col + 0.5) / side, (row + 0.5) / side], axis=1)
        return agent_reward_array(tokens[:, 0], points, self.truth_type[qids], self.truth_point[qids])

    def success(self, answer_rewards) -> np.ndarray:
        """Task-level correctness used for accuracy and verification labels."""
        r = np.asarray(answer_rewards, dtype=np.float64)
        if self.spec.kind is TaskKind.INTERVAL:
            return r > 0.5
        return r >= 1.0

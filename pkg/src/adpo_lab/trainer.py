"""Outer RL loop: sample groups, score them, run inner ascent epochs."""

from __future__ import annotations

import copy
import enum
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .advantage import batch_advantages
from .evaluation import auc, average_precision
from .objective import AdvantageMode, ObjectiveConfig, objective_and_gradient
from .policy import DecodeConfig, InitKind, PolicyParams, RolloutBatch, init_params, sample_batch, snapshot
from .rewards import Thresholds, VerificationMode, binary_verification_array, preference_reward_matrix
from .tasks import Task


class OptimizerKind(str, enum.Enum):
    ADAM = "adam"
    SGD = "sgd"


@dataclass(frozen=True)
class InitConfig:
    kind: InitKind = InitKind.PRETRAINED
    accuracy: float = 0.85

    def __post_init__(self):
        object.__setattr__(self, "kind", InitKind(self.kind))
        if self.kind is InitKind.PRETRAINED and not 0.0 < self.accuracy < 1.0:
            raise ValueError(f"init accuracy must lie in (0, 1), got {self.accuracy}")


@dataclass(frozen=True)
class TrainConfig:
    group_size: int = 8
    batch_queries: int = 16
    learning_rate: float = 0.05
    steps: int = 300
    inner_epochs: int = 2
    optimizer: OptimizerKind = OptimizerKind.ADAM
    decode: DecodeConfig = field(default_factory=lambda: DecodeConfig(1.0, 0.99))
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    thresholds: Thresholds = field(default_factory=Thresholds)
    init: InitConfig = field(default_factory=InitConfig)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "optimizer", OptimizerKind(self.optimizer))
        if self.group_size < 1:
            raise ValueError("group_size must be positive")
        if self.group_size < 2 and self.objective.verification is VerificationMode.PREFERENCE:
            raise ValueError("group_size must be >= 2 for preference verification (G >= 2)")
        if self.batch_queries < 1:
            raise ValueError("batch_queries must be positive")
        if self.learning_rate < 0.0:
            raise ValueError("learning_rate must be non-negative")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.inner_epochs < 1:
            raise ValueError("inner_epochs must be >= 1")


@dataclass
class StepMetrics:
    step: int
    mean_answer_reward: float
    pass_at_1: float
    fraction_max_score: float
    frac_correct_among_verif1: float | None
    auc: float | None
    ap: float | None
    objective: float
    kl: float
    mean_verification_reward: float
    hacking_witnesses: int

    def record(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size: int) -> AdamState:
        return cls(np.zeros(size), np.zeros(size), 0)


@dataclass
class TrainState:
    params: PolicyParams
    ref: PolicyParams
    optimizer: AdamState
    rng: np.random.Generator
    step: int = 0

    def copy(self) -> TrainState:
        return TrainState(
            snapshot(self.params),
            self.ref,
            AdamState(self.optimizer.m.copy(), self.optimizer.v.copy(), self.optimizer.t),
            copy.deepcopy(self.rng),
            self.step,
        )


@dataclass
class StepOutput:
    """Everything a train step computed, for instrumentation and tests."""

    batch: RolloutBatch
    answer_rewards: np.ndarray
    verif_rewards: np.ndarray
    per_token_adv: np.ndarray
    answer_token_adv: np.ndarray
    success: np.ndarray


@dataclass
class TrainResult:
    history: list[StepMetrics]
    params: PolicyParams
    ref: PolicyParams


ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def initial_state(config: TrainConfig, task: Task) -> TrainState:
    params = init_params(task, config.init.kind, config.init.accuracy, config.seed)
    return TrainState(
        params=params,
        ref=snapshot(params),
        optimizer=AdamState.zeros(params.flat().size),
        rng=np.random.default_rng(config.seed),
    )


def batch_query_ids(step: int, batch_queries: int, num_queries: int) -> np.ndarray:
    """Deterministic cycling through the query set."""
    return (np.arange(batch_queries) + step * batch_queries) % num_queries


def verification_rewards(config: TrainConfig, task: Task, batch: RolloutBatch, answer_rewards) -> np.ndarray:
    mode = config.objective.verification
    if mode is VerificationMode.BINARY:
        return binary_verification_array(batch.scores, answer_rewards, config.thresholds)
    if mode is VerificationMode.PREFERENCE:
        g = batch.group_size
        mat = preference_reward_matrix(
            batch.scores.reshape(-1, g), np.asarray(answer_rewards).reshape(-1, g), task.kind, config.thresholds.gamma
        )
        return mat.ravel()
    return np.zeros(len(batch))


def hacking_witnesses(success, scores, answer_token_adv, tau_s: float) -> int:
    """Wrong, low-score rollouts whose answer tokens are pushed harder than
    the least-favoured correct rollout anywhere in the batch.

    All rollouts share one batch-mean objective, so the comparison is
    batch-wide.  Within a single group it could never fire for 0/1 answer
    rewards: a wrong rollout's summed reward is at most 1, a correct one's at
    least 1.
    """
    success = np.asarray(success, dtype=bool)
    if not success.any():
        return 0
    adv = np.asarray(answer_token_adv, dtype=np.float64)
    floor = adv[success].min()
    suspect = (~success) & (np.asarray(scores) < tau_s) & (adv > floor)
    return int(suspect.sum())


def apply_update(state: TrainState, grad: PolicyParams, config: TrainConfig) -> None:
    lr = config.learning_rate
    if lr == 0.0:
        return
    g = grad.flat()
    theta = state.params.flat()
    if config.optimizer is OptimizerKind.SGD:
        theta = theta + lr * g
    else:
        opt = state.optimizer
        b1, b2 = ADAM_BETAS
        opt.t += 1
        opt.m = b1 * opt.m + (1.0 - b1) * g
        opt.v = b2 * opt.v + (1.0 - b2) * g * g
        m_hat = opt.m / (1.0 - b1**opt.t)
        v_hat = opt.v / (1.0 - b2**opt.t)
        theta = theta + lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    state.params = state.params.with_flat(theta)


def _fraction_correct_among(success, verif) -> float | None:
    mask = np.asarray(verif) == 1.0
    if not mask.any():
        return None
    return float(np.asarray(success)[mask].mean())


def train_step(state: TrainState, query_ids, config: TrainConfig, task: Task):
    """One rollout/update cycle.  Returns ``(new_state, metrics, output)``;
    the input state is left untouched."""
    state = state.copy()
    spec = task.spec
    cfg = config.objective
    batch = sample_batch(state.params, spec, query_ids, config.decode, state.rng, config.group_size)
    ra = task.answer_rewards(batch.query_ids, batch.answer_tokens)
    rv = verification_rewards(config, task, batch, ra)
    entangled = cfg.mode is AdvantageMode.ENTANGLED
    per_token, adv_a, _ = batch_advantages(ra, rv, batch.group_size, spec.answer_length, entangled)
    first_terms = None
    for epoch in range(config.inner_epochs):
        terms, grad = objective_and_gradient(state.params, batch, per_token, state.ref, cfg)
        if not np.isfinite(grad.flat()).all():
            raise FloatingPointError(f"non-finite gradient at step {state.step}, inner epoch {epoch}")
        if first_terms is None:
            first_terms = terms
        apply_update(state, grad, config)
    success = task.success(ra)
    scores = batch.scores
    metrics = StepMetrics(
        step=state.step,
        mean_answer_reward=float(ra.mean()),
        pass_at_1=float(success.mean()),
        fraction_max_score=float((batch.score_tokens == spec.score_bins - 1).mean()),
        frac_correct_among_verif1=(
            None if cfg.verification is VerificationMode.NONE else _fraction_correct_among(success, rv)
        ),
        auc=auc(scores, success),
        ap=average_precision(scores, success),
        objective=float(first_terms.total),
        kl=float(first_terms.kl),
        mean_verification_reward=float(rv.mean()),
        hacking_witnesses=hacking_witnesses(success, scores, per_token[:, 0], config.thresholds.tau_s),
    )
    state.step += 1
    return state, metrics, StepOutput(batch, ra, rv, per_token, adv_a if not entangled else per_token[:, 0], success)


def train(config: TrainConfig, task: Task, on_step=None) -> TrainResult:
    state = initial_state(config, task)
    history = []
    for k in range(config.steps):
        qids = batch_query_ids(k, config.batch_queries, len(task))
        t0 = time.perf_counter()
        state, metrics, _ = train_step(state, qids, config, task)
        history.append(metrics)
        if on_step is not None:
            on_step(metrics, time.perf_counter() - t0)
    return TrainResult(history, state.params, state.ref)


"""Clipped surrogate objective with exact KL, and its analytic gradient.

For rollout ``i`` with ``|o_i| = L + 1`` tokens the objective is

    J = mean_i 1/|o_i| sum_t [ min(r A, clip(r, 1-eps, 1+eps) A) - beta KL_t ]

where ``A`` is the per-token advantage (masked answer/score advantages in
decoupled mode, one aggregated advantage on every token in entangled mode)
and ``r = exp(logp_new - logp_behavior)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import kernels
from .policy import PolicyParams, Query, answer_index, answer_logit_rows, log_softmax, score_logit_rows
from .rewards import VerificationMode


class AdvantageMode(str, enum.Enum):
    DECOUPLED = "decoupled"
    ENTANGLED = "entangled"


@dataclass(frozen=True)
class ObjectiveConfig:
    clip: float = 0.2
    kl_coeff: float = 0.01
    mode: AdvantageMode = AdvantageMode.DECOUPLED
    verification: VerificationMode = VerificationMode.PREFERENCE

    def __post_init__(self):
        object.__setattr__(self, "mode", AdvantageMode(self.mode))
        object.__setattr__(self, "verification", VerificationMode(self.verification))
        if not 0.0 < self.clip < 1.0:
            raise ValueError(f"clip must lie in (0, 1), got {self.clip}")
        if self.kl_coeff < 0.0:
            raise ValueError(f"kl_coeff must be non-negative, got {self.kl_coeff}")


@dataclass
class ObjectiveTerms:
    surrogate: float
    kl: float
    total: float
    ratios: np.ndarray


def clipped_term(ratio, adv, eps):
    ratio = np.asarray(ratio, dtype=np.float64)
    if np.any(ratio <= 0.0):
        raise ValueError("likelihood ratios must be positive")
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv)


def clipped_slope(ratio, adv, eps):
    """d clipped_term / d log(ratio): zero wherever the clipped branch wins the min."""
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    return np.where(unclipped <= clipped, unclipped, 0.0)


def kl_rows(logp: np.ndarray, logp_ref: np.ndarray) -> np.ndarray:
    p = np.exp(logp)
    return (p * (logp - logp_ref)).sum(axis=-1)


def kl_token(params: PolicyParams, ref: PolicyParams, query: Query, position: int, answer_tokens=None) -> float:
    """Exact KL(pi || pi_ref) over the full vocabulary at one context."""
    spec = query.spec
    if position < spec.answer_length:
        z = answer_logit_rows(params, position, [query.id])
        zr = answer_logit_rows(ref, position, [query.id])
    else:
        aid = answer_index(spec, [answer_tokens])
        z = score_logit_rows(params, [query.id], aid)
        zr = score_logit_rows(ref, [query.id], aid)
    return float(kl_rows(log_softmax(z), log_softmax(zr))[0])


def _contexts(params: PolicyParams, batch, position: int):
    if position < batch.answer_tokens.shape[1]:
        return answer_logit_rows(params, position, batch.query_ids), batch.answer_tokens[:, position]
    return score_logit_rows(params, batch.query_ids, batch.answer_ids), batch.score_tokens


def objective_and_gradient(params: PolicyParams, batch, per_token_adv, ref: PolicyParams, cfg: ObjectiveConfig, with_grad: bool = True):
    """Evaluate the objective on ``batch`` and optionally its exact gradient.

    ``per_token_adv`` has shape ``(n, L + 1)``; the behavior log-probs stored in
    the batch are the ratio denominators.
    """
    adv = np.asarray(per_token_adv, dtype=np.float64)
    n, width = adv.shape
    if n != len(batch) or width != batch.answer_tokens.shape[1] + 1:
        raise ValueError(f"advantages of shape {adv.shape} do not match the batch")
    if not params.is_finite():
        raise FloatingPointError("non-finite logits")
    eps, beta = cfg.clip, cfg.kl_coeff
    weight = 1.0 / (n * width)
    rows = np.arange(n)
    ratios = np.empty((n, width))
    surrogate = 0.0
    kl_total = 0.0
    grad = params.zeros_like() if with_grad else None
    for pos in range(width):
        z, tokens = _contexts(params, batch, pos)
        zr, _ = _contexts(ref, batch, pos)
        logp = log_softmax(z)
        logp_ref = log_softmax(zr)
        ratio = np.exp(logp[rows, tokens] - batch.behavior_logprobs[:, pos])
        ratios[:, pos] = ratio
        kl = kl_rows(logp, logp_ref)
        surrogate += clipped_term(ratio, adv[:, pos], eps).sum()
        kl_total += kl.sum()
        if not with_grad:
            continue
        p = np.exp(logp)
        slope = clipped_slope(ratio, adv[:, pos], eps)
        g = -slope[:, None] * p
        g[rows, tokens] += slope
        if beta:
            g -= beta * p * ((logp - logp_ref) - kl[:, None])
        g *= weight
        if pos < width - 1:
            kernels.scatter_add_rows(grad.answer_logits[pos], np.ascontiguousarray(batch.query_ids), g)
        else:
            n_answers = params.score_logits.shape[1]
            flat = grad.score_logits.reshape(-1, params.score_logits.shape[2])
            kernels.scatter_add_rows(flat, np.ascontiguousarray(batch.query_ids * n_answers + batch.answer_ids), g)
            grad.score_bias += g.sum(axis=0)
    surrogate *= weight
    kl_total *= weight
    terms = ObjectiveTerms(surrogate, kl_total, surrogate - beta * kl_total, ratios)
    return terms, grad


def adpo_objective(params, batch, per_token_adv, ref, cfg) -> ObjectiveTerms:
    return objective_and_gradient(params, batch, per_token_adv, ref, cfg, with_grad=False)[0]


def adpo_gradient(params, batch, per_token_adv, ref, cfg) -> PolicyParams:
    return objective_and_gradient(params, batch, per_token_adv, ref, cfg, with_grad=True)[1]

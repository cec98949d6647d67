"""Group-normalised advantages, decoupled and entangled, and token masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .kernels import STD_EPS


class MalformedLayoutError(ValueError):
    pass


@dataclass(frozen=True)
class TokenMasks:
    answer_mask: np.ndarray
    score_mask: np.ndarray

    def __post_init__(self):
        a, p = self.answer_mask, self.score_mask
        if a.shape != p.shape:
            raise ValueError("mask shapes differ")
        if np.any(a & p):
            raise ValueError("answer and score masks overlap")
        if not np.all(a | p):
            raise ValueError("masks leave tokens uncovered")


@dataclass(frozen=True)
class AdvantageSet:
    answer_adv: float
    pref_adv: float
    per_token: np.ndarray


def group_normalize(rewards) -> np.ndarray:
    """``(R - mean) / std`` with the population std; degenerate groups map to 0."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size == 0:
        raise ValueError("cannot normalise an empty reward vector")
    return kernels.group_normalize(np.ascontiguousarray(r.reshape(1, -1)), STD_EPS)[0]


def normalize_groups(rewards, group_size: int) -> np.ndarray:
    """Normalise a flat vector whose consecutive ``group_size`` blocks are groups."""
    r = np.ascontiguousarray(np.asarray(rewards, dtype=np.float64).reshape(-1, group_size))
    return kernels.group_normalize(r, STD_EPS).ravel()


def layout_masks(answer_length: int) -> TokenMasks:
    if answer_length < 1:
        raise MalformedLayoutError("a rollout needs at least one answer token")
    answer = np.zeros(answer_length + 1, dtype=bool)
    answer[:answer_length] = True
    return TokenMasks(answer, ~answer)


def token_masks(rollout) -> TokenMasks:
    """Answer tokens feed M^a, the single trailing score token feeds M^p."""
    if getattr(rollout, "score_token", None) is None:
        raise MalformedLayoutError("rollout has no score token")
    return layout_masks(len(rollout.answer_tokens))


def broadcast(answer_adv, pref_adv, masks: TokenMasks) -> np.ndarray:
    """Per-token advantages, shape ``(n, T)`` for vectors or ``(T,)`` for scalars."""
    a = np.asarray(answer_adv, dtype=np.float64)[..., None]
    p = np.asarray(pref_adv, dtype=np.float64)[..., None]
    return np.where(masks.answer_mask, a, 0.0) + np.where(masks.score_mask, p, 0.0)


def _verification(bundle):
    return bundle.verification


def decoupled_advantages(group) -> list[AdvantageSet]:
    bundles = [r.rewards for r in group.rollouts]
    if any(b is None for b in bundles):
        raise ValueError("group rewards have not been computed")
    adv_a = group_normalize([b.answer_reward for b in bundles])
    adv_p = group_normalize([_verification(b) for b in bundles])
    out = []
    for r, a, p in zip(group.rollouts, adv_a, adv_p):
        out.append(AdvantageSet(float(a), float(p), broadcast(a, p, token_masks(r))))
    return out


def entangled_advantage(group) -> np.ndarray:
    """Advantage of the summed reward, applied to every token of a rollout."""
    bundles = [r.rewards for r in group.rollouts]
    if any(b is None for b in bundles):
        raise ValueError("group rewards have not been computed")
    return group_normalize([b.answer_reward + _verification(b) for b in bundles])


def batch_advantages(answer_rewards, verif_rewards, group_size: int, answer_length: int, entangled: bool):
    """Per-token advantages ``(n, L + 1)`` for a whole batch.

    Returns ``(per_token, answer_adv, pref_adv)``; in entangled mode both
    per-rollout vectors equal the aggregated advantage.
    """
    masks = layout_masks(answer_length)
    if entangled:
        total = np.asarray(answer_rewards) + np.asarray(verif_rewards)
        adv = normalize_groups(total, group_size)
        return broadcast(adv, adv, masks), adv, adv
    adv_a = normalize_groups(answer_rewards, group_size)
    adv_p = normalize_groups(verif_rewards, group_size)
    return broadcast(adv_a, adv_p, masks), adv_a, adv_p

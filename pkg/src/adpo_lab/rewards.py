"""Answer rewards, thresholded and preference-ranked verification rewards."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from . import kernels
from .tasks import DecodedAnswer, GroundTruth, TaskKind

if TYPE_CHECKING:
    from .policy import Group

# click tolerance is a fraction of the unit square's diagonal
AGENT_DISTANCE_THRESHOLD = 0.14 * math.sqrt(2.0)


class VerificationMode(str, enum.Enum):
    NONE = "none"
    BINARY = "binary"
    PREFERENCE = "preference"


@dataclass(frozen=True)
class Thresholds:
    tau_s: float = 0.5
    tau_a: float = 0.5
    gamma: float = 0.1

    def __post_init__(self):
        for name in ("tau_s", "tau_a"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must lie strictly inside (0, 1), got {value}")
        if not self.gamma > 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")


@dataclass(frozen=True)
class RewardBundle:
    answer_reward: float
    binary_verif: float | None = None
    preference_verif: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.answer_reward <= 1.0:
            raise ValueError(f"answer reward {self.answer_reward} outside [0, 1]")
        if self.binary_verif is not None and self.preference_verif is not None:
            raise ValueError("populate at most one verification reward")
        if self.binary_verif is not None and self.binary_verif not in (0.0, 1.0):
            raise ValueError("binary verification reward must be 0 or 1")
        if self.preference_verif is not None and not 0.0 <= self.preference_verif <= 1.0:
            raise ValueError("preference verification reward outside [0, 1]")

    @property
    def verification(self) -> float:
        if self.binary_verif is not None:
            return self.binary_verif
        if self.preference_verif is not None:
            return self.preference_verif
        return 0.0


# --- answer rewards ----------------------------------------------------------


def answer_reward_discrete(predicted: DecodedAnswer, truth: GroundTruth) -> float:
    if predicted.kind is not TaskKind.DISCRETE or truth.discrete_answer is None:
        raise ValueError("discrete reward needs a discrete prediction and truth")
    return 1.0 if predicted.token == truth.discrete_answer else 0.0


def _check_interval(iv) -> tuple[float, float]:
    lo, hi = float(iv[0]), float(iv[1])
    if not (0.0 <= lo <= hi <= 1.0):
        raise ValueError(f"interval {iv} is inverted or outside [0, 1]")
    return lo, hi


def answer_reward_interval(predicted, truth) -> float:
    """Intersection-over-union of two closed intervals."""
    plo, phi = _check_interval(predicted)
    tlo, thi = _check_interval(truth)
    inter = max(0.0, min(phi, thi) - max(plo, tlo))
    union = (phi - plo) + (thi - tlo) - inter
    if union == 0.0:
        # both degenerate: identical points count as a perfect match
        return 1.0 if plo == tlo else 0.0
    return inter / union


def interval_iou_array(plo, phi, tlo, thi) -> np.ndarray:
    inter = np.maximum(0.0, np.minimum(phi, thi) - np.maximum(plo, tlo))
    union = (phi - plo) + (thi - tlo) - inter
    out = np.where(plo == tlo, 1.0, 0.0)
    ok = union > 0.0
    out[ok] = inter[ok] / union[ok]
    return out


def answer_reward_agent(predicted, truth) -> float:
    """Action-type gate, then a click-distance bonus, normalised to [0, 1].

    ``predicted`` / ``truth`` are ``(type, (x, y))`` pairs.
    """
    ptype, ppoint = predicted
    ttype, tpoint = truth
    for x in (*ppoint, *tpoint):
        if not 0.0 <= x <= 1.0:
            raise ValueError("agent coordinates must lie in the unit square")
    if int(ptype) != int(ttype):
        return 0.0
    dist = math.hypot(ppoint[0] - tpoint[0], ppoint[1] - tpoint[1])
    return 1.0 if dist < AGENT_DISTANCE_THRESHOLD else 0.5


def agent_reward_array(ptype, ppoint, ttype, tpoint) -> np.ndarray:
    dist = np.hypot(ppoint[:, 0] - tpoint[:, 0], ppoint[:, 1] - tpoint[:, 1])
    same = ptype == ttype
    return np.where(same, np.where(dist < AGENT_DISTANCE_THRESHOLD, 1.0, 0.5), 0.0)


def answer_reward(predicted: DecodedAnswer, truth: GroundTruth) -> float:
    if predicted.kind is TaskKind.DISCRETE:
        return answer_reward_discrete(predicted, truth)
    if predicted.kind is TaskKind.INTERVAL:
        if truth.interval is None:
            raise ValueError("interval prediction against a non-interval truth")
        return answer_reward_interval(predicted.interval, truth.interval)
    if truth.action is None:
        raise ValueError("agent prediction against a non-agent truth")
    return answer_reward_agent((predicted.action_type, predicted.point), truth.action)


# --- verification rewards -----------------------------------------------------


def binary_verification_reward(score: float, answer_reward: float, th: Thresholds) -> float:
    if not 0.0 <= score <= 1.0:
        raise ValueError(f"score {score} outside [0, 1]")
    if not 0.0 <= answer_reward <= 1.0:
        raise ValueError(f"answer reward {answer_reward} outside [0, 1]")
    return 1.0 if (score - th.tau_s) * (answer_reward - th.tau_a) > 0.0 else 0.0


def binary_verification_array(scores, answer_rewards, th: Thresholds) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    ra = np.asarray(answer_rewards, dtype=np.float64)
    return ((s - th.tau_s) * (ra - th.tau_a) > 0.0).astype(np.float64)


def _check_index(n: int, i: int):
    if not 0 <= i < n:
        raise IndexError(f"sample index {i} out of range for group of {n}")


def contrastive_set_discrete(answer_rewards, i: int) -> set[int]:
    ra = list(answer_rewards)
    _check_index(len(ra), i)
    return {j for j, r in enumerate(ra) if r != ra[i]}


def contrastive_set_continuous(answer_rewards, i: int, gamma: float) -> set[int]:
    if not gamma > 0.0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    ra = list(answer_rewards)
    _check_index(len(ra), i)
    return {j for j, r in enumerate(ra) if abs(r - ra[i]) > gamma}


def preference_verification_reward(scores, answer_rewards, i: int, contrastive) -> float:
    if len(scores) != len(answer_rewards):
        raise ValueError("scores and answer rewards differ in length")
    _check_index(len(scores), i)
    members = list(contrastive)
    if not members:
        return 0.0
    hits = sum(
        1 for j in members if (scores[i] - scores[j]) * (answer_rewards[i] - answer_rewards[j]) > 0.0
    )
    return hits / len(members)


def uses_margin(kind: TaskKind) -> bool:
    """Interval rewards are graded, so their contrastive sets need the margin."""
    return kind is TaskKind.INTERVAL


def preference_reward_matrix(scores, answer_rewards, kind: TaskKind, gamma: float) -> np.ndarray:
    """Preference rewards for a stack of groups, shape ``(n_groups, G)``."""
    s = np.ascontiguousarray(scores, dtype=np.float64)
    ra = np.ascontiguousarray(answer_rewards, dtype=np.float64)
    if s.shape != ra.shape:
        raise ValueError("scores and answer rewards differ in shape")
    return kernels.preference_rewards(s, ra, uses_margin(kind), float(gamma))


def group_rewards(group: Group, mode: VerificationMode, th: Thresholds) -> list[RewardBundle]:
    mode = VerificationMode(mode)
    query = group.query
    ra = [answer_reward(r.decode(query), query.truth) for r in group.rollouts]
    scores = [r.score_value for r in group.rollouts]
    if mode is VerificationMode.BINARY:
        rb = [binary_verification_reward(s, a, th) for s, a in zip(scores, ra)]
        return [RewardBundle(a, binary_verif=b) for a, b in zip(ra, rb)]
    if mode is VerificationMode.PREFERENCE:
        out = []
        for i in range(len(ra)):
            if uses_margin(query.kind):
                cset = contrastive_set_continuous(ra, i, th.gamma)
            else:
                cset = contrastive_set_discrete(ra, i)
            out.append(RewardBundle(ra[i], preference_verif=preference_verification_reward(scores, ra, i, cset)))
        return out
    return [RewardBundle(a) for a in ra]

"""Hot inner loops, each in a numba and a pure-numpy flavour.

The public names (``group_normalize``, ``preference_rewards`` ...) resolve to
the numba versions unless ``ADPO_LAB_NUMBA=0``.  Both flavours stay importable
under ``*_numpy`` / ``*_jit`` so tests and ``benchmarks/`` can compare them.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

STD_EPS = 1e-8


# --- group normalisation ---------------------------------------------------


def group_normalize_numpy(rewards, eps=STD_EPS):
    rewards = np.asarray(rewards, dtype=np.float64)
    mean = rewards.mean(axis=1, keepdims=True)
    centered = rewards - mean
    std = np.sqrt((centered * centered).mean(axis=1, keepdims=True))
    safe = np.where(std < eps, 1.0, std)
    return np.where(std < eps, 0.0, centered / safe)


@njit
def group_normalize_jit(rewards, eps=STD_EPS):
    m, g = rewards.shape
    out = np.zeros((m, g))
    for r in range(m):
        mean = 0.0
        for i in range(g):
            mean += rewards[r, i]
        mean /= g
        var = 0.0
        for i in range(g):
            d = rewards[r, i] - mean
            var += d * d
        std = np.sqrt(var / g)
        if std < eps:
            continue
        for i in range(g):
            out[r, i] = (rewards[r, i] - mean) / std
    return out


# --- preference verification reward ---------------------------------------


def preference_rewards_numpy(scores, answer_rewards, continuous, gamma):
    s = np.asarray(scores, dtype=np.float64)
    ra = np.asarray(answer_rewards, dtype=np.float64)
    ds = s[:, :, None] - s[:, None, :]
    da = ra[:, :, None] - ra[:, None, :]
    if continuous:
        member = np.abs(da) > gamma
    else:
        member = da != 0.0
    hits = (member & (ds * da > 0.0)).sum(axis=2)
    sizes = member.sum(axis=2)
    return hits / np.maximum(sizes, 1)


@njit
def preference_rewards_jit(scores, answer_rewards, continuous, gamma):
    m, g = scores.shape
    out = np.zeros((m, g))
    for r in range(m):
        for i in range(g):
            size = 0
            hits = 0
            for j in range(g):
                da = answer_rewards[r, i] - answer_rewards[r, j]
                if continuous:
                    if not abs(da) > gamma:
                        continue
                elif da == 0.0:
                    continue
                size += 1
                if (scores[r, i] - scores[r, j]) * da > 0.0:
                    hits += 1
            if size > 0:
                out[r, i] = hits / size
    return out


# --- sparse gradient accumulation -----------------------------------------


def scatter_add_rows_numpy(out, index, rows):
    np.add.at(out, index, rows)
    return out


@njit
def scatter_add_rows_jit(out, index, rows):
    n, v = rows.shape
    for k in range(n):
        r = index[k]
        for j in range(v):
            out[r, j] += rows[k, j]
    return out


# --- nucleus truncation ----------------------------------------------------


def top_p_filter_numpy(probs, top_p):
    probs = np.asarray(probs, dtype=np.float64)
    if top_p >= 1.0:
        return probs.copy()
    order = np.argsort(-probs, axis=1, kind="stable")
    sorted_p = np.take_along_axis(probs, order, axis=1)
    csum = np.cumsum(sorted_p, axis=1)
    reached = csum >= top_p
    # first index reaching the mass; rows that never reach it keep everything
    cut = np.where(reached.any(axis=1), reached.argmax(axis=1), probs.shape[1] - 1)
    keep_sorted = np.arange(probs.shape[1])[None, :] <= cut[:, None]
    keep = np.zeros_like(keep_sorted)
    np.put_along_axis(keep, order, keep_sorted, axis=1)
    kept = np.where(keep, probs, 0.0)
    return kept / kept.sum(axis=1, keepdims=True)


@njit
def top_p_filter_jit(probs, top_p):
    n, v = probs.shape
    out = probs.copy()
    if top_p >= 1.0:
        return out
    for r in range(n):
        order = np.argsort(-probs[r], kind="mergesort")
        csum = 0.0
        cut = v - 1
        for k in range(v):
            csum += probs[r, order[k]]
            if csum >= top_p:
                cut = k
                break
        for k in range(cut + 1, v):
            out[r, order[k]] = 0.0
        total = 0.0
        for j in range(v):
            total += out[r, j]
        for j in range(v):
            out[r, j] /= total
    return out


# --- inverse-CDF sampling --------------------------------------------------


def sample_categorical_numpy(probs, uniforms):
    probs = np.asarray(probs, dtype=np.float64)
    csum = np.cumsum(probs, axis=1)
    target = np.asarray(uniforms, dtype=np.float64) * csum[:, -1]
    above = csum > target[:, None]
    idx = above.argmax(axis=1)
    # u * total can round up to total; fall back to the last supported token
    last = probs.shape[1] - 1 - np.argmax(probs[:, ::-1] > 0.0, axis=1)
    return np.where(above.any(axis=1), idx, last).astype(np.int64)


@njit
def sample_categorical_jit(probs, uniforms):
    n, v = probs.shape
    out = np.empty(n, dtype=np.int64)
    for r in range(n):
        total = 0.0
        for j in range(v):
            total += probs[r, j]
        target = uniforms[r] * total
        csum = 0.0
        chosen = -1
        last = 0
        for j in range(v):
            if probs[r, j] > 0.0:
                last = j
            csum += probs[r, j]
            if chosen < 0 and csum > target:
                chosen = j
        out[r] = chosen if chosen >= 0 else last
    return out


if USE_NUMBA:
    group_normalize = group_normalize_jit
    preference_rewards = preference_rewards_jit
    scatter_add_rows = scatter_add_rows_jit
    top_p_filter = top_p_filter_jit
    sample_categorical = sample_categorical_jit
else:
    group_normalize = group_normalize_numpy
    preference_rewards = preference_rewards_numpy
    scatter_add_rows = scatter_add_rows_numpy
    top_p_filter = top_p_filter_numpy
    sample_categorical = sample_categorical_numpy

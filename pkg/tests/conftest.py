import numpy as np
import pytest

from adpo_lab.tasks import Task, TaskSpec


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def discrete_task():
    return Task(TaskSpec("discrete", num_queries=6, answer_vocab_size=4, score_bins=3, seed=3))


@pytest.fixture(scope="session")
def interval_task():
    return Task(TaskSpec("interval", num_queries=6, answer_vocab_size=11, score_bins=5, seed=4))


@pytest.fixture(scope="session")
def agent_task():
    return Task(TaskSpec("agent", num_queries=5, answer_vocab_size=4, num_action_types=3, score_bins=3, seed=5))


def brute_preference(scores, ra, i, gamma=None):
    """O(G) enumeration of the preference reward for sample ``i``."""
    members = [j for j in range(len(ra)) if (abs(ra[j] - ra[i]) > gamma if gamma is not None else ra[j] != ra[i])]
    if not members:
        return 0.0
    return sum((scores[i] - scores[j]) * (ra[i] - ra[j]) > 0 for j in members) / len(members)


def random_instance(seed, mode="decoupled", verification="binary", kl_coeff=0.0, kind="discrete"):
    """Small random objective instance: params, behaviour snapshot, reference,
    a sampled batch and per-token advantages from real rewards.

    Params sit a small random step away from the behaviour snapshot so the
    likelihood ratios differ from 1 without reaching far into the clip band.
    """
    from adpo_lab.advantage import batch_advantages
    from adpo_lab.objective import ObjectiveConfig
    from adpo_lab.policy import EXACT, PolicyParams, sample_batch
    from adpo_lab.trainer import TrainConfig, verification_rewards

    r = np.random.default_rng(seed)
    spec = TaskSpec(kind, num_queries=3, answer_vocab_size=4, num_action_types=2, score_bins=3, seed=seed)
    task = Task(spec)
    zero = PolicyParams.zeros(spec)
    behavior = zero.with_flat(r.normal(0.0, 1.0, zero.flat().size))
    params = behavior.with_flat(behavior.flat() + r.normal(0.0, 0.05, zero.flat().size))
    ref = behavior.with_flat(behavior.flat() + r.normal(0.0, 0.5, zero.flat().size))
    group = int(r.integers(2, 5))
    batch = sample_batch(behavior, spec, [0, 1, 2], EXACT, r, group)
    cfg = ObjectiveConfig(clip=0.2, kl_coeff=kl_coeff, mode=mode, verification=verification)
    ra = task.answer_rewards(batch.query_ids, batch.answer_tokens)
    rv = verification_rewards(TrainConfig(group_size=group, objective=cfg), task, batch, ra)
    per_token, _, _ = batch_advantages(ra, rv, group, spec.answer_length, mode == "entangled")
    return params, behavior, ref, batch, per_token, cfg


def finite_difference(fn, x, h=1e-5):
    g = np.empty_like(x)
    for k in range(x.size):
        up, down = x.copy(), x.copy()
        up[k] += h
        down[k] -= h
        g[k] = (fn(up) - fn(down)) / (2 * h)
    return g


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def check(number: int, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)

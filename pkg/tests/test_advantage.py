import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adpo_lab.advantage import (
    MalformedLayoutError,
    TokenMasks,
    batch_advantages,
    decoupled_advantages,
    entangled_advantage,
    group_normalize,
    layout_masks,
    normalize_groups,
    token_masks,
)
from adpo_lab.policy import Group, Rollout
from adpo_lab.rewards import RewardBundle

rewards = st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=16)


def _group(answer, verif, length=1):
    rs = []
    for a, v in zip(answer, verif):
        r = Rollout(0, (0,) * length, 0, 2, np.zeros(length + 1))
        r.rewards = RewardBundle(a, preference_verif=v)
        rs.append(r)
    return Group(None, rs)


class TestGroupNormalize:
    @pytest.mark.parametrize(
        "r,expected",
        [([1, 1, 0, 0], [1, 1, -1, -1]), ([1, 0], [1, -1]), ([0.3] * 4, [0, 0, 0, 0])],
    )
    def test_examples(self, r, expected):
        np.testing.assert_allclose(group_normalize(r), expected, rtol=0, atol=1e-7)

    def test_homogeneous_exactly_zero(self):
        assert np.all(group_normalize([0.7] * 5) == 0.0)

    def test_empty(self):
        with pytest.raises(ValueError):
            group_normalize([])

    @given(rewards)
    def test_standardised(self, r):
        r = np.asarray(r)
        out = group_normalize(r)
        if r.std() > 1e-6:
            assert abs(out.mean()) <= 1e-10
            assert abs(out.std() - 1.0) <= 1e-6
        else:
            assert np.all(np.abs(out) <= 1.0 / 1e-8 * r.std() + 1e-12)

    @given(rewards, st.floats(-3, 3), st.floats(0.1, 5))
    def test_affine_invariant(self, r, shift, scale):
        r = np.asarray(r)
        if r.std() < 1e-3:
            return
        np.testing.assert_allclose(group_normalize(r * scale + shift), group_normalize(r), atol=1e-7)

    def test_blocks_normalised_independently(self):
        out = normalize_groups([1, 0, 5, 5], 2)
        np.testing.assert_allclose(out, [1, -1, 0, 0], atol=1e-7)


class TestMasks:
    def test_layouts(self):
        m = layout_masks(1)
        np.testing.assert_array_equal(m.answer_mask, [1, 0])
        np.testing.assert_array_equal(m.score_mask, [0, 1])
        m = layout_masks(2)
        np.testing.assert_array_equal(m.answer_mask, [1, 1, 0])
        np.testing.assert_array_equal(m.score_mask, [0, 0, 1])

    def test_missing_score_token(self):
        r = Rollout(0, (1,), None, 2, np.zeros(2))
        with pytest.raises(MalformedLayoutError):
            token_masks(r)

    def test_no_answer_tokens(self):
        with pytest.raises(MalformedLayoutError):
            layout_masks(0)

    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            TokenMasks(np.array([True, True]), np.array([False, True]))
        with pytest.raises(ValueError):
            TokenMasks(np.array([True, False]), np.array([False, False]))


class TestDecoupled:
    def test_score_pref_constant(self):
        out = decoupled_advantages(_group([1, 0], [1, 1]))
        np.testing.assert_allclose([a.answer_adv for a in out], [1, -1], atol=1e-7)
        assert [a.pref_adv for a in out] == [0.0, 0.0]

    def test_homogeneous(self):
        out = decoupled_advantages(_group([1, 1], [0, 0]))
        assert all(a.answer_adv == 0.0 and a.pref_adv == 0.0 for a in out)

    def test_per_token_broadcast(self):
        out = decoupled_advantages(_group([1, 0], [1, 0]))
        np.testing.assert_allclose(out[0].per_token, [1, 1], atol=1e-7)
        np.testing.assert_allclose(out[1].per_token, [-1, -1], atol=1e-7)

    def test_multi_token_layout(self):
        out = decoupled_advantages(_group([1, 0], [0, 1], length=2))
        np.testing.assert_allclose(out[0].per_token, [1, 1, -1], atol=1e-7)

    def test_missing_rewards(self):
        g = _group([1, 0], [0, 0])
        g.rollouts[0].rewards = None
        with pytest.raises(ValueError):
            decoupled_advantages(g)


class TestEntangled:
    @pytest.mark.parametrize(
        "ra,rv,expected",
        [([1, 0], [0, 1], [0, 0]), ([1, 0], [1, 1], [1, -1]), ([1, 1], [1, 1], [0, 0])],
    )
    def test_examples(self, ra, rv, expected):
        np.testing.assert_allclose(entangled_advantage(_group(ra, rv)), expected, atol=1e-7)


class TestBatchAdvantages:
    def test_matches_group_api(self, rng):
        g, n_groups, length = 4, 5, 2
        ra = rng.integers(0, 2, g * n_groups).astype(float)
        rv = rng.integers(0, 3, g * n_groups) / 2
        for entangled in (False, True):
            per_token, _, _ = batch_advantages(ra, rv, g, length, entangled)
            for k in range(n_groups):
                grp = _group(ra[k * g : (k + 1) * g], rv[k * g : (k + 1) * g], length)
                if entangled:
                    want = np.repeat(entangled_advantage(grp)[:, None], length + 1, axis=1)
                else:
                    want = np.array([a.per_token for a in decoupled_advantages(grp)])
                np.testing.assert_array_equal(per_token[k * g : (k + 1) * g], want)

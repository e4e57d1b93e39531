from __future__ import annotations

import math

import numpy as np
import pytest

from cadgym.services.policy_optim import (
    EmptyMask,
    NonFiniteRatio,
    PolicyOptimError,
    RolloutGroup,
    TokenBatch,
    bc_loss,
    grpo_loss,
    group_advantages,
    kl_per_token,
    perplexity,
)


def _uniform(p: float, n: int) -> TokenBatch:
    logp = np.full(n, math.log(p))
    return TokenBatch.on_policy(logp, logp, np.ones(n, dtype=bool))


# ---------------------------------------------------------------------------
# 困惑度
# ---------------------------------------------------------------------------


def test_perplexity_of_uniform_tokens():
    assert perplexity(_uniform(0.5, 4)) == pytest.approx(2.0)


def test_perplexity_of_mixed_tokens():
    logp = np.log([0.5, 0.25])
    assert perplexity(TokenBatch.on_policy(logp, logp, [True, True])) == pytest.approx(math.sqrt(8))


def test_masked_tokens_are_ignored():
    logp = np.log([0.5, 1e-6, 0.5])
    batch = TokenBatch.on_policy(logp, logp, [True, False, True])
    assert perplexity(batch) == pytest.approx(2.0)


def test_bc_loss_is_log_perplexity():
    batch = TokenBatch.on_policy(np.log([0.5, 0.25, 0.1]), np.zeros(3) - 1, np.ones(3, dtype=bool))
    assert bc_loss(batch) == pytest.approx(math.log(perplexity(batch)))


def test_empty_mask():
    logp = np.log([0.5, 0.5])
    with pytest.raises(EmptyMask):
        perplexity(TokenBatch.on_policy(logp, logp, [False, False]))


def test_token_batch_validation():
    with pytest.raises(PolicyOptimError):
        TokenBatch.on_policy(np.array([0.1]), np.array([-1.0]), [True])
    with pytest.raises(PolicyOptimError):
        TokenBatch.on_policy(np.array([-1.0, -1.0]), np.array([-1.0]), [True, True])


# ---------------------------------------------------------------------------
# 组内优势
# ---------------------------------------------------------------------------


def test_advantages_mean_and_max_baselines():
    np.testing.assert_allclose(group_advantages([0, 1, 1, 0], "mean"), [-1, 1, 1, -1])
    np.testing.assert_allclose(group_advantages([0, 1, 1, 0], "max"), [-2, 0, 0, -2])


def test_equal_rewards_give_zero_advantages():
    assert group_advantages([1.5, 1.5, 1.5]).tolist() == [0.0, 0.0, 0.0]


def test_mean_advantages_sum_to_zero():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        g = int(rng.integers(2, 17))
        adv = group_advantages(rng.uniform(0, 2, g))
        assert abs(adv.sum()) < 1e-9


@pytest.mark.parametrize("baseline", ["mean", "max"])
def test_advantages_ignore_shift_and_positive_scale(baseline):
    rng = np.random.default_rng(12)
    for _ in range(50):
        rewards = rng.uniform(0, 2, int(rng.integers(2, 9)))
        adv = group_advantages(rewards, baseline)
        np.testing.assert_allclose(group_advantages(rewards + 3.7, baseline), adv, atol=1e-9)
        np.testing.assert_allclose(group_advantages(rewards * 4.5, baseline), adv, atol=1e-9)


def test_group_needs_two_members():
    with pytest.raises(PolicyOptimError):
        group_advantages([1.0])
    with pytest.raises(PolicyOptimError):
        RolloutGroup((_uniform(0.5, 2),), (1.0,))


# ---------------------------------------------------------------------------
# GRPO 目标
# ---------------------------------------------------------------------------


def _single_token_group(ratio: float) -> RolloutGroup:
    old = -1.0
    batch = TokenBatch(np.array([old + math.log(ratio)]), np.array([old]), np.array([old]), np.array([True]))
    return RolloutGroup((batch, batch), (0.0, 0.0))


@pytest.mark.parametrize(
    "ratio, advantage, surrogate",
    [
        (1.5, 1.0, 1.2),
        (1.5, -1.0, -1.5),
        (0.5, 1.0, 0.5),
        (0.5, -1.0, -0.8),
        (1.1, 1.0, 1.1),
    ],
)
def test_clipped_surrogate(ratio, advantage, surrogate):
    result = grpo_loss(_single_token_group(ratio), [advantage, advantage], clip_eps=0.2, kl_coef=0.0)
    assert result.policy_loss == pytest.approx(-surrogate)
    assert result.loss == pytest.approx(-surrogate)


def test_kl_is_zero_at_reference():
    logp = np.log([0.2, 0.3])
    assert kl_per_token(logp, logp).tolist() == [0.0, 0.0]
    assert (kl_per_token(logp, np.log([0.4, 0.1])) > 0).all()


def _random_group(rng: np.random.Generator, g: int = 3, n: int = 7) -> RolloutGroup:
    batches = []
    for _ in range(g):
        old = rng.uniform(-3.0, -1.0, n)
        new = old + rng.uniform(-0.15, 0.15, n)
        ref = old + rng.uniform(-0.5, 0.5, n)
        mask = rng.random(n) < 0.7
        mask[0] = True
        batches.append(TokenBatch(new, old, ref, mask))
    return RolloutGroup(tuple(batches), tuple(rng.uniform(0, 2, g)))


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    group = _random_group(rng)
    adv = group_advantages(group.rewards)
    result = grpo_loss(group, adv, clip_eps=0.1, kl_coef=0.05)
    h = 1e-6
    for i, batch in enumerate(group.batches):
        for j in range(len(batch.logp_new)):
            shifted = []
            for sign in (1.0, -1.0):
                new = batch.logp_new.copy()
                new[j] += sign * h
                batches = list(group.batches)
                batches[i] = TokenBatch(new, batch.logp_old, batch.logp_ref, batch.action_mask)
                shifted.append(grpo_loss(RolloutGroup(tuple(batches), group.rewards), adv, 0.1, 0.05).loss)
            numeric = (shifted[0] - shifted[1]) / (2 * h)
            assert result.grads[i][j] == pytest.approx(numeric, abs=1e-5)


def test_clip_fraction_and_diagnostics():
    rng = np.random.default_rng(6)
    group = _random_group(rng)
    result = grpo_loss(group, group_advantages(group.rewards), clip_eps=0.01, kl_coef=0.0)
    assert 0.0 <= result.clip_fraction <= 1.0
    assert result.kl >= 0.0
    assert len(result.ratios) == group.size


def test_non_finite_ratio_is_reported():
    good = _uniform(0.5, 2)
    bad = TokenBatch(np.array([-1.0, -1.0]), np.array([-1.0, -math.inf]), np.array([-1.0, -1.0]), [True, True])
    with pytest.raises(NonFiniteRatio) as info:
        grpo_loss(RolloutGroup((good, bad), (0.0, 1.0)), [-1.0, 1.0])
    assert (info.value.trajectory, info.value.token) == (1, 1)


def test_grpo_argument_checks():
    group = _single_token_group(1.0)
    with pytest.raises(PolicyOptimError):
        grpo_loss(group, [1.0, 1.0], clip_eps=0.0)
    with pytest.raises(PolicyOptimError):
        grpo_loss(group, [1.0])


@pytest.mark.parametrize("baseline", ["mean", "max"])
def test_unclipped_on_policy_objective_is_mean_advantage(baseline):
    rng = np.random.default_rng(13)
    batches = []
    for _ in range(4):
        n = int(rng.integers(3, 10))
        mask = rng.random(n) < 0.7
        mask[0] = True
        batches.append(TokenBatch.on_policy(rng.normal(-1.0, 0.3, n), rng.normal(-1.0, 0.3, n), mask))
    rewards = tuple(rng.uniform(0, 2, 4))
    adv = group_advantages(rewards, baseline)
    result = grpo_loss(RolloutGroup(tuple(batches), rewards), adv, clip_eps=1e12, kl_coef=0.0)
    assert -result.loss == pytest.approx(float(adv.mean()), abs=1e-12)
    assert result.clip_fraction == 0.0
    if baseline == "mean":
        assert abs(result.loss) < 1e-12

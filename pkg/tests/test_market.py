"""Pricing capture, pooled payouts, and the consecutive-win bonus model."""

import math

import numpy as np
import pytest

from ticketsim.analytics import control_value, expected_ticket_value, npv_rewards
from ticketsim.core import ConstantReward, EconomyParams, calibrate_lognormal
from ticketsim.engine import (
    ReplacementRule,
    discount_horizon,
    holders_for_share,
    run_trajectory,
)
from ticketsim.errors import NegativePriceError
from ticketsim.market import (
    FairValue,
    FixedDiscount,
    FixedMargin,
    MultiBlockSpec,
    PoolSpec,
    multiblock_value_experiment,
    pool_payout,
    pooled_variance_experiment,
    protocol_capture,
)


def params_const(n, d=0.01, mu=1.0):
    return EconomyParams(n=n, d=d, reward=ConstantReward(mu))


# ---------------------------------------------------------------------------
# Pricing policies and capture
# ---------------------------------------------------------------------------


def test_policy_prices():
    assert FairValue().price(0.8) == 0.8
    assert FixedMargin(0.1).price(0.5) == 0.4
    assert FixedDiscount(0.25).price(0.8) == pytest.approx(0.6)
    assert FixedDiscount(1.0).price(0.8) == 0.0


def test_policy_validation():
    with pytest.raises(ValueError):
        FixedMargin(-0.1)
    with pytest.raises(ValueError):
        FixedDiscount(1.5)
    with pytest.raises(NegativePriceError):
        FixedMargin(0.6).price(0.5)


def test_fair_value_captures_full_stream_npv():
    rng = np.random.default_rng(77)
    for _ in range(200):
        mu = float(rng.uniform(0.1, 10.0))
        d = float(10.0 ** rng.uniform(-3, -0.3))
        n = int(rng.integers(1, 100_000))
        capture = protocol_capture(FairValue(), params_const(n, d, mu))
        npv = npv_rewards(mu, d)
        assert abs(capture.total - npv) < 1e-9 * npv
        assert abs(capture.leakage) < 1e-9 * npv


def test_fixed_margin_capture_example():
    capture = protocol_capture(FixedMargin(0.1), params_const(100, 0.01, 1.0))
    assert capture.price == pytest.approx(0.4, rel=1e-12)
    assert capture.initial_sale == pytest.approx(40.0, rel=1e-9)
    assert capture.per_slot_stream_npv == pytest.approx(40.0, rel=1e-9)
    assert capture.total == pytest.approx(80.0, rel=1e-9)
    assert capture.leakage == pytest.approx(20.0, rel=1e-9)


def test_fixed_margin_leakage_decomposition():
    # leakage = n*margin + margin/d, exactly, for any admissible margin
    rng = np.random.default_rng(101)
    for _ in range(200):
        mu = float(rng.uniform(0.5, 5.0))
        d = float(10.0 ** rng.uniform(-3, -0.5))
        n = int(rng.integers(1, 10_000))
        margin = float(rng.uniform(0.0, 0.9)) * expected_ticket_value(mu, d, n)
        capture = protocol_capture(FixedMargin(margin), params_const(n, d, mu))
        expected = n * margin + margin / d
        assert abs(capture.leakage - expected) < 1e-9 * max(1.0, expected)


def test_free_tickets_leak_everything():
    capture = protocol_capture(FixedDiscount(1.0), params_const(50, 0.02, 1.0))
    assert capture.total == 0.0
    assert capture.leakage == npv_rewards(1.0, 0.02)


def test_margin_exceeding_value_rejected():
    with pytest.raises(NegativePriceError):
        protocol_capture(FixedMargin(10.0), params_const(100, 0.01, 1.0))


# ---------------------------------------------------------------------------
# Pool payouts
# ---------------------------------------------------------------------------


def test_pool_spec_validation():
    with pytest.raises(ValueError):
        PoolSpec(shares=())
    with pytest.raises(ValueError):
        PoolSpec(shares=(0.5, 0.6))
    with pytest.raises(ValueError):
        PoolSpec(shares=(1.2, -0.2))
    assert PoolSpec.equal(4).member_count == 4


def test_pool_payout_examples():
    assert pool_payout(PoolSpec.equal(1), 3.5).tolist() == [3.5]
    assert pool_payout(PoolSpec.equal(4), 1.0).tolist() == [0.25, 0.25, 0.25, 0.25]
    assert pool_payout(PoolSpec(shares=(0.5, 0.3, 0.2)), 2.0).tolist() == [1.0, 0.6, 0.4]


def test_pool_payout_sums_exactly():
    rng = np.random.default_rng(55)
    for _ in range(300):
        k = int(rng.integers(1, 12))
        raw = rng.dirichlet(np.ones(k))
        shares = [float(s) for s in raw]
        shares[-1] = math.fsum([1.0, *(-s for s in shares[:-1])])
        pool = PoolSpec(shares=tuple(shares))
        reward_pv = float(rng.uniform(0.0, 100.0))
        payouts = pool_payout(pool, reward_pv)
        assert math.fsum(payouts.tolist()) == reward_pv


# ---------------------------------------------------------------------------
# Pooled variance experiment
# ---------------------------------------------------------------------------


def test_pooled_variance_degenerate_pool():
    result = pooled_variance_experiment(params_const(8, d=0.05), 1, 5_000, seed=3)
    assert result.ratio == 1.0
    assert result.variance_gap == 0.0


def test_pooled_variance_rejects_oversized_pool():
    with pytest.raises(ValueError):
        pooled_variance_experiment(params_const(8), 9, 5_000, seed=3)


def test_pooled_variance_reduction():
    params = EconomyParams(n=16, d=0.05, reward=calibrate_lognormal(1.0, 1.0))
    result = pooled_variance_experiment(params, 8, 20_000, seed=12)
    assert result.pooled_per_ticket_variance < result.solo_variance
    assert result.variance_gap < -3.0 * result.gap_stderr
    assert result.ratio < 1.0


def test_full_pool_still_below_solo():
    # k = n: only reward draws and timing spread remain per ticket;
    # averaging n one-shot claims stays strictly below one claim's variance.
    params = EconomyParams(n=16, d=0.05, reward=calibrate_lognormal(1.0, 1.0))
    result = pooled_variance_experiment(params, 16, 20_000, seed=13)
    assert result.variance_gap < -3.0 * result.gap_stderr


def test_pooled_solo_variance_matches_formula():
    from ticketsim.analytics import ticket_value_variance

    params = EconomyParams(n=16, d=0.05, reward=calibrate_lognormal(1.0, 1.0))
    result = pooled_variance_experiment(params, 4, 50_000, seed=18)
    closed = ticket_value_variance(1.0, math.e - 1.0, 0.05, 16)
    assert abs(result.solo_variance - closed) < 4.0 * result.solo_variance_stderr


# ---------------------------------------------------------------------------
# Multi-block bonus
# ---------------------------------------------------------------------------


def test_multiblock_spec_apply():
    spec = MultiBlockSpec(beta=0.5)
    assert spec.apply(2.0, 1) == 2.0
    assert spec.apply(2.0, 3) == 4.0
    assert MultiBlockSpec(beta=0.0).apply(2.0, 7) == 2.0
    with pytest.raises(ValueError):
        MultiBlockSpec(beta=-0.1)


def test_multiblock_zero_bonus_bit_identical_trajectories():
    # Identical seeds: a zero-bonus spec must reproduce the base model bit
    # for bit, including holder totals and streak-driven reward scaling.
    params = params_const(6, d=0.05)
    holders = holders_for_share(6, 2)
    base = run_trajectory(
        params, horizon=200, rng=np.random.default_rng(404), holders=holders,
        multiblock=None, replacement=ReplacementRule.RETAIN, stop_at_tracked_win=False,
    )
    bonus0 = run_trajectory(
        params, horizon=200, rng=np.random.default_rng(404), holders=holders,
        multiblock=MultiBlockSpec(beta=0.0), replacement=ReplacementRule.RETAIN,
        stop_at_tracked_win=False,
    )
    assert base == bonus0


def test_multiblock_premium_zero_without_bonus():
    result = multiblock_value_experiment(params_const(20, d=0.05), None, 0.2, 20_000, seed=9)
    assert result.additive_baseline == control_value(0.2, 1.0, 0.05, 20)
    assert abs(result.premium) <= 3.0 * result.premium_stderr + result.bias_bound


def test_multiblock_premium_positive_with_bonus():
    result = multiblock_value_experiment(
        params_const(20, d=0.05), MultiBlockSpec(beta=0.5), 0.2, 20_000, seed=9
    )
    assert result.premium > 3.0 * result.premium_stderr


def test_multiblock_premium_monotone_in_beta_common_seeds():
    premiums = []
    for beta in (0.0, 0.25, 0.5, 1.0):
        result = multiblock_value_experiment(
            params_const(20, d=0.05), MultiBlockSpec(beta=beta), 0.2, 10_000, seed=77
        )
        premiums.append(result.premium)
    assert all(b >= a for a, b in zip(premiums, premiums[1:]))


def test_multiblock_rejects_vanishing_holder():
    with pytest.raises(ValueError):
        multiblock_value_experiment(params_const(50), None, 0.001, 1_000, seed=1)
    with pytest.raises(ValueError):
        multiblock_value_experiment(params_const(50), None, 1.5, 1_000, seed=1)


def test_multiblock_full_ownership_constant_rewards_closed_form():
    # p = 1 with constant rewards is deterministic: every slot extends the
    # streak, so the net flow is sum_t (mu*(1+beta*(t-1)) - price) * disc_t.
    mu, d, n, beta = 1.0, 0.05, 4, 0.5
    params = params_const(n, d=d, mu=mu)
    horizon = discount_horizon(d)
    result = multiblock_value_experiment(
        params, MultiBlockSpec(beta=beta), 1.0, 500, seed=2, horizon=horizon
    )
    price = expected_ticket_value(mu, d, n)
    t = np.arange(1, horizon + 1, dtype=np.float64)
    finite_sum = float(np.sum((mu * (1.0 + beta * (t - 1.0)) - price) / (1.0 + d) ** t))
    assert result.npv_stderr == 0.0
    assert math.isclose(result.simulated_holder_npv, finite_sum, rel_tol=1e-12)
    # Infinite-horizon limit: control_value + beta*mu/d^2.
    limit = control_value(1.0, mu, d, n) + beta * mu / d**2
    assert abs(result.simulated_holder_npv - limit) <= result.bias_bound


def test_multiblock_share_rounding_reported():
    result = multiblock_value_experiment(params_const(32, d=0.05), None, 0.1, 1_000, seed=4)
    assert result.holder_tickets == 3
    assert result.holder_share == pytest.approx(3 / 32)
    assert result.requested_share == 0.1
    assert result.additive_baseline == control_value(3 / 32, 1.0, 0.05, 32)

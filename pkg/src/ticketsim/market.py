"""Parametric market-side models: primary-sale pricing and protocol capture,
pooled payout sharing, and the consecutive-win (multi-block) bonus.

Pooling is a payout overlay only; it never changes draw mechanics. The
multi-block bonus is a modeling choice kept deliberately simple: realized
reward = r * (1 + beta * (streak - 1)), linear in the current holder's
consecutive-win streak, with beta = 0 reducing exactly to the base model.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import ClassVar, Optional

import numpy as np

from .analytics import control_value, expected_ticket_value, npv_rewards
from .core import EconomyParams
from .engine import (
    _PATH_BLOCK,
    _holder_bias_bound,
    _mean_stderr,
    discount_horizon,
    sample_holder_flows,
    sample_pool_payoffs,
)
from .errors import NegativePriceError


# ---------------------------------------------------------------------------
# Pricing policies and protocol capture
# ---------------------------------------------------------------------------


class PricingPolicy(ABC):
    """Rule mapping a ticket's expected value to its primary-sale price."""

    kind: ClassVar[str]

    @abstractmethod
    def price(self, expected_value: float) -> float: ...


@dataclass(frozen=True)
class FairValue(PricingPolicy):
    """Sell at exactly the expected ticket value."""

    kind: ClassVar[str] = "fair_value"

    def price(self, expected_value: float) -> float:
        return expected_value


@dataclass(frozen=True)
class FixedMargin(PricingPolicy):
    """Sell below expected value by an absolute margin (buyer's required profit)."""

    margin: float
    kind: ClassVar[str] = "fixed_margin"

    def __post_init__(self):
        if not (self.margin >= 0.0 and math.isfinite(self.margin)):
            raise ValueError(f"margin must be finite and >= 0, got {self.margin}")

    def price(self, expected_value: float) -> float:
        if self.margin > expected_value:
            raise NegativePriceError(
                f"margin {self.margin} exceeds expected ticket value {expected_value}"
            )
        return expected_value - self.margin


@dataclass(frozen=True)
class FixedDiscount(PricingPolicy):
    """Sell at a proportional discount to expected value."""

    discount: float
    kind: ClassVar[str] = "fixed_discount"

    def __post_init__(self):
        if not (0.0 <= self.discount <= 1.0):
            raise ValueError(f"discount must be in [0, 1], got {self.discount}")

    def price(self, expected_value: float) -> float:
        return expected_value * (1.0 - self.discount)


@dataclass(frozen=True)
class CaptureReport:
    """Protocol revenue split for one pricing policy."""

    price: float
    initial_sale: float
    per_slot_stream_npv: float
    total: float
    leakage: float


def protocol_capture(policy: PricingPolicy, params: EconomyParams) -> CaptureReport:
    """Revenue the protocol collects selling every ticket at the policy price.

    The initial sale moves n tickets; afterwards one replacement sells per
    slot, a perpetuity worth price/d today. Leakage is the part of the full
    reward stream NPV ceded to buyers and the secondary market.
    """
    ev = expected_ticket_value(params.mu, params.d, params.n)
    price = policy.price(ev)
    initial_sale = params.n * price
    per_slot_stream_npv = price / params.d
    total = initial_sale + per_slot_stream_npv
    leakage = npv_rewards(params.mu, params.d) - total
    return CaptureReport(
        price=price,
        initial_sale=initial_sale,
        per_slot_stream_npv=per_slot_stream_npv,
        total=total,
        leakage=leakage,
    )


# ---------------------------------------------------------------------------
# Pooling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PoolSpec:
    """A coalition sharing ticket payoffs pro rata."""

    shares: tuple[float, ...]

    def __post_init__(self):
        if not self.shares:
            raise ValueError("pool needs at least one member")
        if any(s < 0.0 or not math.isfinite(s) for s in self.shares):
            raise ValueError("pool shares must be finite and >= 0")
        total = math.fsum(self.shares)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"pool shares must sum to 1 within 1e-12, got {total}")

    @property
    def member_count(self) -> int:
        return len(self.shares)

    @classmethod
    def equal(cls, k: int) -> "PoolSpec":
        if k < 1:
            raise ValueError(f"pool size must be >= 1, got {k}")
        return cls(shares=tuple(1.0 / k for _ in range(k)))


def pool_payout(pool: PoolSpec, reward_pv: float) -> np.ndarray:
    """Split a discounted reward across members by share.

    The final member absorbs the rounding remainder so the payouts sum to
    ``reward_pv`` exactly.
    """
    if reward_pv < 0.0:
        raise ValueError(f"reward present value must be >= 0, got {reward_pv}")
    head = [s * reward_pv for s in pool.shares[:-1]]
    last = math.fsum([reward_pv, *(-x for x in head)])
    return np.array(head + [last], dtype=np.float64)


@dataclass(frozen=True)
class PoolVarianceResult:
    """Solo vs pooled per-ticket payoff variance from one common ensemble."""

    solo_variance: float
    solo_variance_stderr: float
    pooled_per_ticket_variance: float
    pooled_variance_stderr: float
    ratio: float
    variance_gap: float        # block-mean of (pooled - solo) variance
    gap_stderr: float
    trials: int
    pool_tickets: int
    truncated: int


def pooled_variance_experiment(
    params: EconomyParams,
    k: int,
    trials: int,
    seed: int,
    *,
    workers: int = 1,
    horizon: Optional[int] = None,
    stream: int = 0,
) -> PoolVarianceResult:
    """Simulate a k-of-n equal-share pool and compare per-ticket payoff
    variance against a solo ticket from the same trajectories.

    The gap's standard error comes from batch means over the sampler's
    fixed-size trajectory blocks, so it is deterministic for a given seed.
    """
    if k > params.n:
        raise ValueError(f"pool size {k} exceeds ticket count n={params.n}")
    member_mean, solo, truncated = sample_pool_payoffs(
        params, k, trials, seed, horizon=horizon, workers=workers, stream=stream
    )
    solo_var = float(np.var(solo, ddof=1))
    pooled_var = float(np.var(member_mean, ddof=1))

    blocks = trials // _PATH_BLOCK
    if blocks >= 2:
        shaped_solo = solo[: blocks * _PATH_BLOCK].reshape(blocks, _PATH_BLOCK)
        shaped_pool = member_mean[: blocks * _PATH_BLOCK].reshape(blocks, _PATH_BLOCK)
        solo_vars = np.var(shaped_solo, axis=1, ddof=1)
        pool_vars = np.var(shaped_pool, axis=1, ddof=1)
        gaps = pool_vars - solo_vars
        gap = float(np.mean(gaps))
        scale = 1.0 / math.sqrt(blocks)
        gap_stderr = float(np.std(gaps, ddof=1)) * scale
        solo_stderr = float(np.std(solo_vars, ddof=1)) * scale
        pooled_stderr = float(np.std(pool_vars, ddof=1)) * scale
    else:
        gap = pooled_var - solo_var
        gap_stderr = solo_stderr = pooled_stderr = float("nan")

    return PoolVarianceResult(
        solo_variance=solo_var,
        solo_variance_stderr=solo_stderr,
        pooled_per_ticket_variance=pooled_var,
        pooled_variance_stderr=pooled_stderr,
        ratio=pooled_var / solo_var if solo_var > 0.0 else float("nan"),
        variance_gap=gap,
        gap_stderr=gap_stderr,
        trials=trials,
        pool_tickets=k,
        truncated=truncated,
    )


# ---------------------------------------------------------------------------
# Multi-block bonus
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MultiBlockSpec:
    """Consecutive-win superadditivity: reward scaled by 1 + beta*(streak-1)."""

    beta: float

    def __post_init__(self):
        if not (self.beta >= 0.0 and math.isfinite(self.beta)):
            raise ValueError(f"beta must be finite and >= 0, got {self.beta}")

    def apply(self, reward: float, streak: int) -> float:
        return reward * (1.0 + self.beta * (streak - 1))


@dataclass(frozen=True)
class MultiblockResult:
    """Simulated holder value under the streak bonus vs the additive baseline."""

    simulated_holder_npv: float
    npv_stderr: float
    additive_baseline: float
    premium: float
    premium_stderr: float
    holder_tickets: int
    holder_share: float
    requested_share: float
    beta: float
    trials: int
    bias_bound: float


def multiblock_value_experiment(
    params: EconomyParams,
    spec: Optional[MultiBlockSpec],
    p: float,
    trials: int,
    seed: int,
    *,
    workers: int = 1,
    horizon: Optional[int] = None,
    stream: int = 0,
) -> MultiblockResult:
    """Value of holding a p-share of tickets when consecutive wins pay a bonus.

    The holder retains round(p*n) tickets, buying each replacement at the
    base-model fair price, so its net flow has expectation exactly
    control_value at the realized share when beta = 0; the premium isolates
    what the streak bonus adds on top of additive valuation.
    """
    n = params.n
    if not (0.0 < p <= 1.0):
        raise ValueError(f"holder fraction p must be in (0, 1], got {p}")
    k = int(p * n + 0.5)
    if k < 1:
        raise ValueError(f"holder fraction {p} rounds to zero of {n} tickets")
    k = min(k, n)
    beta = spec.beta if spec is not None else 0.0
    price = expected_ticket_value(params.mu, params.d, n)
    hor = horizon if horizon is not None else discount_horizon(params.d)

    _, net = sample_holder_flows(
        params,
        k,
        trials,
        seed,
        beta=beta,
        replacement_price=price,
        horizon=hor,
        workers=workers,
        stream=stream,
    )
    mean, stderr = _mean_stderr(net)
    share = k / n
    baseline = control_value(share, params.mu, params.d, n)
    return MultiblockResult(
        simulated_holder_npv=mean,
        npv_stderr=stderr,
        additive_baseline=baseline,
        premium=mean - baseline,
        premium_stderr=stderr,
        holder_tickets=k,
        holder_share=share,
        requested_share=p,
        beta=beta,
        trials=trials,
        bias_bound=_holder_bias_bound(params, share, beta, price, hor),
    )

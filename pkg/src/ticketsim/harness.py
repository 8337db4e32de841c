"""Experiment orchestration: the closed-form verification suite, parameter
sweeps, and the pricing / pooling / multi-block experiment runners.

Every runner returns ReportRows with the same column semantics:
``closed_form`` is the analytic value, ``mc_mean``/``mc_stderr`` carry the
Monte Carlo estimate when trials > 0 and the independent numerical oracle
otherwise, and ``rel_err`` is the closed-form-vs-oracle relative gap.

Monte Carlo gates are bias-aware: a row passes when
|mc_mean - closed_form| <= 4 * stderr + bias_bound, where the bias bound
covers horizon truncation (for exact estimates with stderr 0 this reduces
to requiring the gap to sit inside the truncation bias).
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass
from typing import Callable, Optional

from . import analytics
from .analytics import truncated_series_sum
from .config import ExperimentConfig
from .core import ConstantReward, EconomyParams, LognormalReward, calibrate_lognormal
from .engine import (
    Quantity,
    _holder_bias_bound,
    _mean_stderr,
    _variance_stderr,
    discount_horizon,
    sample_holder_flows,
    sample_ticket_payoffs,
    sample_win_slots,
    win_horizon,
)
from .errors import ConfigError
from .market import (
    FairValue,
    multiblock_value_experiment,
    pooled_variance_experiment,
    protocol_capture,
)
from .report import ReportRow, make_row, relative_gap

ORACLE_EPSILON = 1e-12     # series oracle stopping tolerance
ORACLE_TOLERANCE = 1e-9    # closed form vs oracle acceptance
Z_LIMIT = 4.0

# Substream namespaces so the verify suite's sections never share draws.
_STREAM_TICKET = 0
_STREAM_TIME = 1
_STREAM_HOLDER_GROSS = 2
_STREAM_HOLDER_NET = 3


def _central_difference(f: Callable[[float], float], x: float, h: float) -> float:
    return (f(x + h) - f(x - h)) / (2.0 * h)


def _ticket_value_series(mu: float, d: float, n: float) -> float:
    """Proof-structure series for the single-ticket value."""
    q = 1.0 - 1.0 / n
    return truncated_series_sum(
        lambda t: q ** (t - 1) * (1.0 / n) * mu / (1.0 + d) ** t, d, ORACLE_EPSILON
    )


def _second_moment_series(mu: float, var_r: float, d: float, n: float) -> float:
    q = 1.0 - 1.0 / n
    num = var_r + mu * mu
    return truncated_series_sum(
        lambda t: q ** (t - 1) * (1.0 / n) * num / (1.0 + d) ** (2 * t),
        epsilon=ORACLE_EPSILON,
        ratio=q / (1.0 + d) ** 2,
    )


def _slots_to_win_series(n: float) -> float:
    q = 1.0 - 1.0 / n
    return truncated_series_sum(
        lambda t: t * q ** (t - 1) * (1.0 / n), epsilon=ORACLE_EPSILON, ratio=q
    )


@dataclass
class VerifyOutcome:
    rows: list[ReportRow]
    failures: list[str]

    @property
    def passed(self) -> bool:
        return not self.failures


def _mc_gate(mc_mean: float, closed: float, stderr: float, bias: float) -> bool:
    # The final term is a floating-point floor: for deterministic ensembles
    # (stderr 0) the realized truncation gap equals the bias bound in exact
    # arithmetic and may exceed it by rounding ulps.
    return abs(mc_mean - closed) <= Z_LIMIT * stderr + bias + 1e-12 * (abs(closed) + 1.0)


def run_verify(
    cfg: ExperimentConfig,
    closed_form_overrides: Optional[dict[str, float]] = None,
) -> VerifyOutcome:
    """Check every closed form against its series oracle and an MC estimate.

    ``closed_form_overrides`` substitutes closed-form values by row name;
    it exists so the harness's own failure path can be exercised.
    """
    overrides = closed_form_overrides or {}
    params = cfg.params
    mu, var_r, d, n = params.mu, params.var_r, cfg.d, cfg.n
    trials, seed, workers = cfg.trials, cfg.seed, cfg.workers

    win_hor = cfg.horizon if cfg.horizon is not None else win_horizon(n)
    win_tail = (1.0 - 1.0 / n) ** win_hor
    disc_hor = cfg.horizon if cfg.horizon is not None else discount_horizon(d)

    share = cfg.holder_share if cfg.holder_share is not None else 0.125
    k = max(1, min(n, int(share * n + 0.5)))
    realized_share = k / n

    # Shared ensembles (one per stream namespace).
    payoffs, _ = sample_ticket_payoffs(
        params, trials, seed, horizon=win_hor, workers=workers, stream=_STREAM_TICKET
    )
    ticket_mean, ticket_se = _mean_stderr(payoffs)
    ticket_var, ticket_var_se = _variance_stderr(payoffs)
    slots, _ = sample_win_slots(
        params, trials, seed, horizon=win_hor, workers=workers, stream=_STREAM_TIME
    )
    slots_mean, slots_se = _mean_stderr(slots.astype(float))
    gross_all, _ = sample_holder_flows(
        params, n, trials, seed, horizon=disc_hor, workers=workers, stream=_STREAM_HOLDER_GROSS
    )
    gross_mean, gross_se = _mean_stderr(gross_all)
    control_mc = multiblock_value_experiment(
        params, None, realized_share, trials, seed,
        workers=workers, horizon=disc_hor, stream=_STREAM_HOLDER_NET,
    )

    ticket_series = _ticket_value_series(mu, d, n)
    fd_step = 3e-5 * n

    rows: list[ReportRow] = []
    failures: list[str] = []

    def check(name: str, closed: float, oracle: float, mc_mean: float, mc_stderr: float,
              mc_trials: int, bias: float, extra_ok: bool = True) -> None:
        start = time.perf_counter()
        closed = overrides.get(name, closed)
        rel = relative_gap(oracle, closed)
        ok = rel <= ORACLE_TOLERANCE and extra_ok
        if mc_trials > 0:
            ok = ok and _mc_gate(mc_mean, closed, mc_stderr, bias)
        runtime = (time.perf_counter() - start) * 1000.0 if cfg.timings else 0.0
        rows.append(
            make_row(name, closed, mc_mean, mc_stderr, mc_trials, rel, runtime_ms=runtime)
        )
        if not ok:
            failures.append(name)

    # One row per closed form. MC reuse: the ticket-payoff ensemble backs the
    # single-ticket value, its variance, and the linear aggregates built on it.
    check(
        "npv_rewards",
        analytics.npv_rewards(mu, d),
        truncated_series_sum(lambda t: mu / (1.0 + d) ** t, d, ORACLE_EPSILON),
        gross_mean, gross_se, trials,
        _holder_bias_bound(params, 1.0, 0.0, 0.0, disc_hor),
    )
    check(
        "ticket_value",
        analytics.expected_ticket_value(mu, d, n),
        ticket_series,
        ticket_mean, ticket_se, trials,
        mu * win_tail,
    )
    check(
        "total_ticket_value",
        analytics.total_ticket_value(mu, d, n),
        analytics.npv_rewards(mu, d),
        n * ticket_mean + ticket_mean / d, (n + 1.0 / d) * ticket_se, trials,
        (n + 1.0 / d) * mu * win_tail,
    )
    check(
        "issued_market_cap",
        analytics.issued_market_cap(mu, d, n),
        n * ticket_series,
        n * ticket_mean, n * ticket_se, trials,
        n * mu * win_tail,
    )
    check(
        "slots_to_win",
        analytics.expected_slots_to_win(n),
        _slots_to_win_series(n),
        slots_mean, slots_se, trials,
        n * win_tail,
    )
    deriv = analytics.ticket_value_derivative_n(mu, d, n)
    fd = _central_difference(lambda x: mu / (x * d + 1.0), n, fd_step)
    check(
        "ticket_value_derivative", deriv, fd, fd, 0.0, 0, 0.0,
        extra_ok=(deriv < 0.0 if mu > 0.0 else deriv == 0.0),
    )
    check(
        "control_value",
        analytics.control_value(realized_share, mu, d, n),
        k * ticket_series,
        control_mc.simulated_holder_npv, control_mc.npv_stderr, trials,
        control_mc.bias_bound,
    )
    cderiv = analytics.control_value_derivative_n(realized_share, mu, d, n)
    cfd = _central_difference(lambda x: realized_share * x * mu / (x * d + 1.0), n, fd_step)
    check(
        "control_value_derivative", cderiv, cfd, cfd, 0.0, 0, 0.0,
        extra_ok=(cderiv > 0.0 if mu > 0.0 and realized_share > 0.0 else cderiv == 0.0),
    )
    second_series = _second_moment_series(mu, var_r, d, n)
    check(
        "ticket_value_variance",
        analytics.ticket_value_variance(mu, var_r, d, n),
        second_series - ticket_series**2,
        ticket_var, ticket_var_se, trials,
        (var_r + 3.0 * mu * mu) * win_tail,
    )

    return VerifyOutcome(rows=rows, failures=failures)


# ---------------------------------------------------------------------------
# Analytic evaluation and single-quantity simulation
# ---------------------------------------------------------------------------


def _closed_and_oracle(quantity: str, mu, var_r, d, n, p) -> tuple[float, float]:
    if quantity == "ticket_value":
        return analytics.expected_ticket_value(mu, d, n), _ticket_value_series(mu, d, n)
    if quantity == "npv_rewards":
        return (
            analytics.npv_rewards(mu, d),
            truncated_series_sum(lambda t: mu / (1.0 + d) ** t, d, ORACLE_EPSILON),
        )
    if quantity == "issued_market_cap":
        return analytics.issued_market_cap(mu, d, n), n * _ticket_value_series(mu, d, n)
    if quantity == "total_ticket_value":
        return analytics.total_ticket_value(mu, d, n), analytics.npv_rewards(mu, d)
    if quantity == "control_value":
        return analytics.control_value(p, mu, d, n), p * n * _ticket_value_series(mu, d, n)
    if quantity == "ticket_value_variance":
        series = _second_moment_series(mu, var_r, d, n) - _ticket_value_series(mu, d, n) ** 2
        return analytics.ticket_value_variance(mu, var_r, d, n), series
    if quantity == "time_to_win":
        return analytics.expected_slots_to_win(n), _slots_to_win_series(n)
    raise ConfigError("quantity", f"no closed form registered for {quantity!r}")


def run_analytic(cfg: ExperimentConfig) -> list[ReportRow]:
    """Evaluate every registered closed form against its oracle (no MC)."""
    params = cfg.params
    mu, var_r, d, n = params.mu, params.var_r, cfg.d, cfg.n
    p = cfg.holder_share if cfg.holder_share is not None else 0.125
    rows = []
    for quantity in (
        "npv_rewards",
        "ticket_value",
        "issued_market_cap",
        "total_ticket_value",
        "time_to_win",
        "control_value",
        "ticket_value_variance",
    ):
        closed, oracle = _closed_and_oracle(quantity, mu, var_r, d, n, p)
        rows.append(make_row(quantity, closed, oracle, 0.0, 0, relative_gap(oracle, closed)))
    return rows


def run_simulate(cfg: ExperimentConfig) -> list[ReportRow]:
    """One Monte Carlo estimate of the configured quantity vs its closed form."""
    from .engine import estimate

    params = cfg.params
    quantity = Quantity(cfg.quantity)
    est = estimate(
        params, quantity, cfg.trials, cfg.seed,
        workers=cfg.workers, horizon=cfg.horizon,
        holder_share=cfg.holder_share, multiblock=cfg.multiblock,
    )
    mu, var_r, d, n = params.mu, params.var_r, cfg.d, cfg.n
    if quantity is Quantity.TICKET_VALUE:
        closed = analytics.expected_ticket_value(mu, d, n)
    elif quantity is Quantity.TICKET_VALUE_VARIANCE:
        closed = analytics.ticket_value_variance(mu, var_r, d, n)
    elif quantity is Quantity.TIME_TO_WIN:
        closed = analytics.expected_slots_to_win(n)
    else:
        # Gross holder flow collects the holder's share of every slot's
        # reward; under a streak bonus this is only the additive reference.
        share = cfg.holder_share if cfg.holder_share is not None else 1.0
        k = max(1, min(n, int(share * n + 0.5)))
        closed = (k / n) * analytics.npv_rewards(mu, d)
    rows = [
        make_row(
            cfg.quantity, closed, est.mean, est.stderr, est.trials,
            relative_gap(est.mean, closed),
        )
    ]
    return rows


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

_SWEEP_DEFAULT_QUANTITY = {
    "n": "ticket_value",
    "d": "npv_rewards",
    "mu": "ticket_value",
    "sigma_log": "ticket_value_variance",
    "beta": "multiblock_premium",
    "k": "pool_variance",
    "p": "control_value",
}

_ESTIMATOR_QUANTITIES = {"ticket_value", "ticket_value_variance", "time_to_win"}


def _reward_with_mean(cfg: ExperimentConfig, mean: float):
    reward = cfg.reward
    if isinstance(reward, ConstantReward):
        return ConstantReward(mean)
    if isinstance(reward, LognormalReward):
        return calibrate_lognormal(mean, reward.sigma_log)
    raise ConfigError("sweep.parameter", f"cannot sweep mu over a {reward.kind} reward model")


def _reward_with_sigma(cfg: ExperimentConfig, sigma_log: float):
    reward = cfg.reward
    if isinstance(reward, LognormalReward):
        return calibrate_lognormal(reward.mean(), sigma_log)
    raise ConfigError("sweep.parameter", f"cannot sweep sigma_log over a {reward.kind} reward model")


def run_sweep(cfg: ExperimentConfig) -> tuple[list[ReportRow], dict[str, bool]]:
    """One row per swept value, ordered as configured.

    When n is swept, the closed forms also produce monotonicity verdicts:
    the single-ticket value must fall and the control value must rise.
    """
    from .engine import estimate

    if cfg.sweep is None:
        raise ConfigError("sweep", "sweep command needs a sweep section")
    sweep = cfg.sweep
    quantity = sweep.quantity or _SWEEP_DEFAULT_QUANTITY[sweep.parameter]
    p = cfg.holder_share if cfg.holder_share is not None else 0.1

    rows: list[ReportRow] = []
    ticket_values: list[float] = []
    control_values: list[float] = []

    for value in sweep.values:
        start = time.perf_counter()
        n, d, reward = cfg.n, cfg.d, cfg.reward
        if sweep.parameter == "n":
            n = int(value)
        elif sweep.parameter == "d":
            d = float(value)
        elif sweep.parameter == "mu":
            reward = _reward_with_mean(cfg, float(value))
        elif sweep.parameter == "sigma_log":
            reward = _reward_with_sigma(cfg, float(value))
        params = EconomyParams(n=n, d=d, reward=reward)
        mu, var_r = params.mu, params.var_r

        if sweep.parameter == "beta":
            from .market import MultiBlockSpec

            result = multiblock_value_experiment(
                params, MultiBlockSpec(beta=float(value)), p, cfg.trials, cfg.seed,
                workers=cfg.workers, horizon=cfg.horizon,
            )
            row = make_row(
                value, result.additive_baseline, result.simulated_holder_npv,
                result.npv_stderr, cfg.trials,
                relative_gap(result.simulated_holder_npv, result.additive_baseline),
            )
        elif sweep.parameter == "k":
            result = pooled_variance_experiment(
                params, int(value), cfg.trials, cfg.seed,
                workers=cfg.workers, horizon=cfg.horizon,
            )
            row = make_row(
                value,
                analytics.ticket_value_variance(mu, var_r, d, n),
                result.pooled_per_ticket_variance, result.pooled_variance_stderr,
                cfg.trials,
                relative_gap(result.solo_variance, analytics.ticket_value_variance(mu, var_r, d, n)),
            )
        elif sweep.parameter == "p":
            closed, oracle = _closed_and_oracle("control_value", mu, var_r, d, n, float(value))
            if sweep.mc:
                result = multiblock_value_experiment(
                    params, None, float(value), cfg.trials, cfg.seed,
                    workers=cfg.workers, horizon=cfg.horizon,
                )
                row = make_row(
                    value, analytics.control_value(result.holder_share, mu, d, n),
                    result.simulated_holder_npv, result.npv_stderr, cfg.trials,
                    relative_gap(oracle, closed),
                )
            else:
                row = make_row(value, closed, oracle, 0.0, 0, relative_gap(oracle, closed))
        else:
            closed, oracle = _closed_and_oracle(quantity, mu, var_r, d, n, p)
            if sweep.mc and quantity in _ESTIMATOR_QUANTITIES:
                est = estimate(
                    params, Quantity(quantity), cfg.trials, cfg.seed,
                    workers=cfg.workers, horizon=cfg.horizon,
                )
                row = make_row(
                    value, closed, est.mean, est.stderr, est.trials,
                    relative_gap(oracle, closed),
                )
            else:
                row = make_row(value, closed, oracle, 0.0, 0, relative_gap(oracle, closed))

        if cfg.timings:
            row = dataclasses.replace(row, runtime_ms=(time.perf_counter() - start) * 1000.0)
        rows.append(row)

        if sweep.parameter == "n":
            ticket_values.append(analytics.expected_ticket_value(mu, d, n))
            control_values.append(analytics.control_value(p, mu, d, n))

    verdicts: dict[str, bool] = {}
    if sweep.parameter == "n" and len(sweep.values) > 1:
        verdicts["ticket_value_strictly_decreasing_in_n"] = all(
            b < a for a, b in zip(ticket_values, ticket_values[1:])
        )
        verdicts["control_value_strictly_increasing_in_n"] = all(
            b > a for a, b in zip(control_values, control_values[1:])
        )
    return rows, verdicts


# ---------------------------------------------------------------------------
# Pricing, pooling, multi-block experiment runners
# ---------------------------------------------------------------------------


def run_pricing(cfg: ExperimentConfig) -> list[ReportRow]:
    """Protocol capture under the configured policy, cross-checked by series."""
    params = cfg.params
    policy = cfg.policy if cfg.policy is not None else FairValue()
    capture = protocol_capture(policy, params)
    d, mu = cfg.d, params.mu

    stream_oracle = truncated_series_sum(
        lambda t: capture.price / (1.0 + d) ** t, d, ORACLE_EPSILON
    )
    npv_oracle = truncated_series_sum(lambda t: mu / (1.0 + d) ** t, d, ORACLE_EPSILON)
    oracle = {
        "price": capture.price,
        "initial_sale": params.n * capture.price,
        "per_slot_stream_npv": stream_oracle,
        "total": params.n * capture.price + stream_oracle,
        "leakage": npv_oracle - (params.n * capture.price + stream_oracle),
    }
    rows = []
    for name in ("price", "initial_sale", "per_slot_stream_npv", "total", "leakage"):
        closed = getattr(capture, name)
        rows.append(make_row(name, closed, oracle[name], 0.0, 0, relative_gap(oracle[name], closed)))
    return rows


def run_pool(cfg: ExperimentConfig) -> list[ReportRow]:
    """Pooled vs solo payoff variance for the configured pool size."""
    if cfg.pool is None:
        raise ConfigError("pool", "pool command needs a pool section")
    params = cfg.params
    result = pooled_variance_experiment(
        params, cfg.pool.member_count, cfg.trials, cfg.seed,
        workers=cfg.workers, horizon=cfg.horizon,
    )
    solo_closed = analytics.ticket_value_variance(params.mu, params.var_r, cfg.d, cfg.n)
    return [
        make_row(
            "solo_variance", solo_closed, result.solo_variance,
            result.solo_variance_stderr, cfg.trials,
            relative_gap(result.solo_variance, solo_closed),
        ),
        make_row(
            "pooled_per_ticket_variance", solo_closed, result.pooled_per_ticket_variance,
            result.pooled_variance_stderr, cfg.trials,
            relative_gap(result.pooled_per_ticket_variance, solo_closed),
        ),
        make_row(
            "variance_gap", 0.0, result.variance_gap, result.gap_stderr, cfg.trials,
            abs(result.variance_gap),
        ),
    ]


def run_multiblock(cfg: ExperimentConfig) -> list[ReportRow]:
    """Holder value under the streak bonus vs the additive baseline."""
    if cfg.multiblock is None:
        raise ConfigError("multiblock", "multiblock command needs a multiblock section")
    p = cfg.holder_share if cfg.holder_share is not None else 0.1
    result = multiblock_value_experiment(
        cfg.params, cfg.multiblock, p, cfg.trials, cfg.seed,
        workers=cfg.workers, horizon=cfg.horizon,
    )
    return [
        make_row(
            result.beta, result.additive_baseline, result.simulated_holder_npv,
            result.npv_stderr, cfg.trials,
            relative_gap(result.simulated_holder_npv, result.additive_baseline),
        )
    ]

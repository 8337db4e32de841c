"""ticketsim: simulator and analytic valuation toolkit for a lottery-based
execution-rights ticket economy.

The package splits into:

* ``core``      model constants, reward distributions, discounting
* ``analytics`` closed-form valuations and the truncated-series oracle
* ``engine``    the slot lottery state machine and Monte Carlo samplers
* ``market``    pricing policies, pooling, and the consecutive-win bonus
* ``config`` / ``report`` / ``harness`` / ``cli``   experiment plumbing
"""

from .analytics import (
    FormulaId,
    Valuation,
    control_value,
    control_value_derivative_n,
    evaluate,
    expected_slots_to_win,
    expected_ticket_value,
    issued_market_cap,
    npv_rewards,
    slots_to_win_variance,
    ticket_value_derivative_n,
    ticket_value_second_moment,
    ticket_value_variance,
    total_ticket_value,
    truncated_series_sum,
)
from .core import (
    ConstantReward,
    DiscountCurve,
    EconomyParams,
    EmpiricalReward,
    LognormalReward,
    ParetoReward,
    RewardModel,
    calibrate_lognormal,
    load_empirical_rewards,
    present_value,
)
from .engine import (
    Estimate,
    Quantity,
    ReplacementRule,
    SlotState,
    Ticket,
    TrajectoryRecord,
    discount_horizon,
    estimate,
    init_state,
    run_trajectory,
    sample_holder_flows,
    sample_pool_payoffs,
    sample_ticket_payoffs,
    sample_win_slots,
    step,
    win_horizon,
)
from .errors import (
    ConfigError,
    DiscountRateError,
    DivergenceError,
    NegativePriceError,
    TicketSimError,
)
from .market import (
    CaptureReport,
    FairValue,
    FixedDiscount,
    FixedMargin,
    MultiBlockSpec,
    MultiblockResult,
    PoolSpec,
    PoolVarianceResult,
    PricingPolicy,
    multiblock_value_experiment,
    pool_payout,
    pooled_variance_experiment,
    protocol_capture,
)

__version__ = "0.1.0"

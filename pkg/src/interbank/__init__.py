"""Equilibrium solver and simulator for grouped interbank lending games."""

__version__ = "0.1.0"

from .analysis import (
    ConvergenceReport,
    DomainError,
    SweepAxis,
    SweepResult,
    analytic_systemic_probability,
    check_mfg_row_sums,
    check_prop1_bounds,
    check_sum_identity,
    convergence_to_mfg,
    hjb_residual,
    monitoring_deficit,
    normal_cdf,
    open_vs_limiting,
    sweep_claim,
    sweep_liquidity,
)
from .equilibrium import (
    FeedbackStrategy,
    LabelMismatch,
    OutOfHorizon,
    StrategyKind,
    evaluate_control,
    feedback_closed,
    feedback_mfg,
    feedback_open,
    liquidity_rate,
)
from .model import (
    GroupParams,
    MarketParams,
    Mode,
    RejectedParams,
    StepFunction,
    TimeGrid,
    ValidatedMarket,
    two_groups,
    validate,
)
from .riccati import (
    BlowUp,
    CoefficientPath,
    OdeSystem,
    closed_loop_system,
    limiting_system,
    mfg_system,
    open_loop_system,
    read_csv,
    solve_closed_loop,
    solve_limiting,
    solve_mfg,
    solve_open_loop,
)
from .simulate import (
    DefaultSpec,
    HittingEstimate,
    IncrementBatch,
    NoiseSpec,
    SimulationBlowUp,
    TargetKind,
    TrajectoryEnsemble,
    distance_process,
    generate_increments,
    mc_hitting_probability,
    simulate_closed_loop,
    simulate_mfg_mean,
)

__all__ = [
    "BlowUp",
    "CoefficientPath",
    "ConvergenceReport",
    "DefaultSpec",
    "DomainError",
    "FeedbackStrategy",
    "GroupParams",
    "HittingEstimate",
    "IncrementBatch",
    "LabelMismatch",
    "MarketParams",
    "Mode",
    "NoiseSpec",
    "OdeSystem",
    "OutOfHorizon",
    "RejectedParams",
    "SimulationBlowUp",
    "StepFunction",
    "StrategyKind",
    "SweepAxis",
    "SweepResult",
    "TargetKind",
    "TimeGrid",
    "TrajectoryEnsemble",
    "ValidatedMarket",
    "analytic_systemic_probability",
    "check_mfg_row_sums",
    "check_prop1_bounds",
    "check_sum_identity",
    "closed_loop_system",
    "convergence_to_mfg",
    "distance_process",
    "evaluate_control",
    "feedback_closed",
    "feedback_mfg",
    "feedback_open",
    "generate_increments",
    "hjb_residual",
    "limiting_system",
    "liquidity_rate",
    "mc_hitting_probability",
    "mfg_system",
    "monitoring_deficit",
    "normal_cdf",
    "open_loop_system",
    "open_vs_limiting",
    "read_csv",
    "simulate_closed_loop",
    "simulate_mfg_mean",
    "solve_closed_loop",
    "solve_limiting",
    "solve_mfg",
    "solve_open_loop",
    "sweep_claim",
    "sweep_liquidity",
    "two_groups",
    "validate",
]

"""Analysis toolkit for reputation-based service protocols in online communities.

Core pieces: protocol primitives (norms), expected payoffs against a census
(payoff), single-user best-response solvers (bestresponse), the designer's
feasibility analysis (design), exact census-chain analysis for small
communities (chain), and a Monte Carlo engine for large ones (sim).
"""

from .beliefs import BeliefMatrix, belief_update, updated_row
from .bestresponse import (
    BestResponseSolution,
    ClosedFormSolution,
    closed_form_bimodal,
    closed_form_policy,
    solve_policy_batch,
    solve_value_iteration,
    verify_threshold_structure,
)
from .chain import (
    AbsorbingClassification,
    ConfigSpace,
    LimitingResult,
    StationaryDist,
    TransitionMatrix,
    build_transition_matrix,
    classify_absorbing,
    enumerate_configs,
    limiting_distribution,
    sample_trajectory,
    stationary_distribution,
    stationary_linear,
    strategy_configuration,
)
from .design import (
    AbsorbingBounds,
    DesignVerdict,
    absorbing_bounds,
    evaluate_design,
    feasibility_test,
    feasible_region_grid,
    solve_H,
    write_region_csv,
)
from .norms import (
    CommunityParams,
    ConfigError,
    SocialNorm,
    ThresholdStrategy,
    load_norm,
    norm_from_dict,
    reputation_update,
    social_rule,
    strategy_serves,
)
from .payoff import (
    Configuration,
    OpponentConfig,
    benefit_profile,
    cost_profile,
    expected_one_period_utility,
    opponent_of,
    prob_reset,
    prob_reset_under_belief,
)
from .sim import (
    ExperimentSpec,
    PeriodMetrics,
    SimState,
    bridge_occupancy,
    initial_state,
    run_evolution,
    run_experiment,
    run_period,
)

__version__ = "0.1.0"

__all__ = [
    "AbsorbingBounds",
    "AbsorbingClassification",
    "BeliefMatrix",
    "BestResponseSolution",
    "ClosedFormSolution",
    "CommunityParams",
    "ConfigError",
    "ConfigSpace",
    "Configuration",
    "DesignVerdict",
    "ExperimentSpec",
    "LimitingResult",
    "OpponentConfig",
    "PeriodMetrics",
    "SimState",
    "SocialNorm",
    "StationaryDist",
    "ThresholdStrategy",
    "TransitionMatrix",
    "absorbing_bounds",
    "belief_update",
    "benefit_profile",
    "bridge_occupancy",
    "build_transition_matrix",
    "classify_absorbing",
    "closed_form_bimodal",
    "closed_form_policy",
    "cost_profile",
    "enumerate_configs",
    "evaluate_design",
    "expected_one_period_utility",
    "feasibility_test",
    "feasible_region_grid",
    "initial_state",
    "limiting_distribution",
    "load_norm",
    "norm_from_dict",
    "opponent_of",
    "prob_reset",
    "prob_reset_under_belief",
    "reputation_update",
    "run_evolution",
    "run_experiment",
    "run_period",
    "sample_trajectory",
    "social_rule",
    "solve_H",
    "solve_policy_batch",
    "solve_value_iteration",
    "stationary_distribution",
    "stationary_linear",
    "strategy_configuration",
    "strategy_serves",
    "updated_row",
    "verify_threshold_structure",
    "write_region_csv",
]

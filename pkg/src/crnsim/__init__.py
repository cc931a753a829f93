"""Admission control and channel allocation toolkit for slotted cognitive
overlay networks: exact small-instance solver, heuristic and rollout
policies, revenue upper bound, and a seeded simulation harness."""

from .bounds import BoundaryResult, revenue_boundary
from .harness import SimulationReport, compare_initial_states, run_simulation
from .model import (
    ControlDecision,
    InfeasibleControlError,
    SlotOutcome,
    SystemParams,
    SystemState,
    apply_control,
    channel_transition_prob,
    feasible_controls,
    revenue_of,
    sample_channel_transition,
    sample_completions,
)
from .policies import (
    GreedyPolicy,
    NullPolicy,
    Policy,
    ThresholdPolicy,
    allocate_largest_delay_first,
    allocate_random,
    allocate_smallest_delay_first,
)
from .rollout import (
    ChannelQuality,
    RolloutPolicy,
    SegmentEstimate,
    channel_quality,
    estimate_segment_revenue,
    search_optimal_threshold,
    simulate_segment,
)
from .solver import (
    ConvergenceError,
    SolveResult,
    bellman_residual,
    extract_policy,
    solve_average_reward,
)
from .statespace import (
    CapacityError,
    ExplicitModel,
    build_explicit_model,
    enumerate_states,
    export_model,
)

__version__ = "0.1.0"

"""Upper bound on the revenue any admission/allocation policy can earn.

Fresh states (every user at zero delay) dominate aged states of the same
population, so the best expected segment revenue over all channel counts
and held populations, started from fresh states, bounds the long-run
average revenue of every policy.  The bound is estimated by simulation;
dominance statements about it are therefore made in standard errors.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import SystemParams, SystemState
from .rollout import (
    SegmentEstimate,
    search_optimal_threshold,
    DEFAULT_SEGMENT_SLOT_CAP,
)

__all__ = ["BoundaryResult", "revenue_boundary"]


@dataclass
class BoundaryResult:
    g_bound: float
    argmax_avail: int
    argmax_hold: int
    std_err: float
    grid: list[SegmentEstimate] = field(default_factory=list)


def revenue_boundary(
    params: SystemParams,
    n_runs: int,
    rng: np.random.Generator,
    max_doublings: int = 3,
    n_max: int | None = None,
    max_slots: int = DEFAULT_SEGMENT_SLOT_CAP,
) -> BoundaryResult:
    """Maximize the estimated segment revenue over fresh start states.

    Evaluates every channel count; within each, the concave search walks
    held populations upward and exits early after the peak.
    """
    zeros = (0,) * params.n_delay_classes
    best: SegmentEstimate | None = None
    grid: list[SegmentEstimate] = []
    for m in range(params.n_channels + 1):
        result = search_optimal_threshold(
            SystemState(m, zeros),
            params,
            n_runs,
            rng,
            max_doublings=max_doublings,
            n_max=n_max,
            max_slots=max_slots,
        )
        grid.extend(result.estimates)
        for est in result.estimates:
            if best is None or est.mean > best.mean:
                best = est
    assert best is not None
    return BoundaryResult(
        g_bound=best.mean,
        argmax_avail=best.state.avail,
        argmax_hold=best.n_hold,
        std_err=best.std_err,
        grid=grid,
    )

"""Long-horizon episode engine with seeded streams and batch-means CIs.

Randomness is split into three named substreams (channel, completion,
policy) derived from one master seed.  The environment consumes exactly one
channel uniform and one completion uniform per delay class per slot, so two
runs with the same seed share the same sample path of the environment even
when their policies differ: that is what makes common-random-number policy
comparisons work.  Revenue is accounted through integer counters, which
makes the revenue identity exact rather than a float coincidence.
"""
from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .model import (
    SystemParams,
    SystemState,
    channel_cdf_rows,
    completion_cdf_rows,
    validate_control,
    validate_state,
)
from .policies import Policy

__all__ = [
    "SimulationReport",
    "run_simulation",
    "compare_initial_states",
    "CSV_COLUMNS",
    "csv_header",
    "csv_row",
    "DEFAULT_SLOTS",
    "DEFAULT_WARMUP",
    "DEFAULT_BATCHES",
]

DEFAULT_SLOTS = 310_000
DEFAULT_WARMUP = 10_000
DEFAULT_BATCHES = 30

_BLOCK = 32_768


@dataclass(frozen=True)
class SimulationReport:
    policy: str
    seed: int
    avg_revenue: float
    ci_halfwidth_95: float
    std_err: float
    slots: int
    warmup: int
    batches: int
    counters: dict
    total_revenue: float
    final_state: SystemState
    # per post-warmup batch: (completions, maintained-user-slots, drops)
    batch_counters: tuple = ()


def run_simulation(
    policy: Policy,
    params: SystemParams,
    initial: SystemState,
    *,
    slots: int = DEFAULT_SLOTS,
    warmup: int = DEFAULT_WARMUP,
    batches: int = DEFAULT_BATCHES,
    seed: int = 0,
    validate: bool = False,
) -> SimulationReport:
    """Simulate one episode and report the batch-means revenue estimate.

    The post-warmup window must split evenly into ``batches`` batches.
    Identical arguments reproduce an identical report, bit for bit.
    """
    validate_state(initial, params)
    if slots <= warmup:
        raise ValueError(f"slots={slots} must exceed warmup={warmup}")
    if batches < 10:
        raise ValueError(f"batches must be >= 10, got {batches}")
    span = slots - warmup
    if span % batches:
        raise ValueError(
            f"post-warmup span {span} does not divide into {batches} batches"
        )
    batch_len = span // batches

    ch_ss, comp_ss, pol_ss = np.random.SeedSequence(seed).spawn(3)
    ch_rng = np.random.default_rng(ch_ss)
    comp_rng = np.random.default_rng(comp_ss)
    pol_rng = np.random.default_rng(pol_ss)

    chan_cdf = channel_cdf_rows(params)
    comp_cdf = completion_cdf_rows(params, params.n_channels)
    D = params.max_delay
    n_classes = D + 1

    m = initial.avail
    counts = list(initial.delay_counts)
    pop = sum(counts)
    initial_pop = pop

    tot_complete = tot_drop = tot_admit = 0
    tot_served_slots = 0
    tot_maintained_slots = 0
    batch_complete = [0] * batches
    batch_maintained = [0] * batches
    batch_drop = [0] * batches

    decide = policy.decide
    t = 0
    while t < slots:
        n = min(_BLOCK, slots - t)
        # plain-float lists keep the per-slot bisect comparisons cheap
        ch_u = ch_rng.random(n).tolist()
        comp_u = comp_rng.random((n, n_classes)).tolist()
        for j in range(n):
            state = SystemState(m, tuple(counts))
            ctrl = decide(state, params, pol_rng)
            if validate:
                validate_control(state, ctrl, params)
            served = ctrl.served
            n_admit = ctrl.n_admit
            row = comp_u[j]
            n_complete = 0
            completed = [0] * n_classes
            for i in range(n_classes):
                s = served[i]
                if s:
                    c = bisect_right(comp_cdf[s], row[i])
                    completed[i] = c
                    n_complete += c
            if D == 0:
                dropped = counts[0] + n_admit - served[0]
                counts[0] = served[0] - completed[0]
            else:
                dropped = counts[D] - served[D]
                nxt = [
                    served[0] - completed[0],
                    served[1] + (counts[0] + n_admit - served[0]) - completed[1],
                ]
                for i in range(2, n_classes):
                    nxt.append(
                        served[i] + (counts[i - 1] - served[i - 1]) - completed[i]
                    )
                counts = nxt
            maintained = pop + n_admit
            pop = maintained - n_complete - dropped

            tot_admit += n_admit
            tot_complete += n_complete
            tot_drop += dropped
            tot_served_slots += sum(served)
            tot_maintained_slots += maintained
            k = t + j
            if k >= warmup:
                b = (k - warmup) // batch_len
                batch_complete[b] += n_complete
                batch_maintained[b] += maintained
                batch_drop[b] += dropped

            m = bisect_right(chan_cdf[m], ch_u[j])
        t += n

    rc = params.reward_complete
    rt = params.reward_maintain
    cq = params.drop_penalty
    batch_rev = [
        rc * batch_complete[b] + rt * batch_maintained[b] - cq * batch_drop[b]
        for b in range(batches)
    ]
    avg = sum(batch_rev) / span
    batch_means = np.asarray(batch_rev) / batch_len
    std_err = float(batch_means.std(ddof=1) / np.sqrt(batches))
    t_quantile = float(stats.t.ppf(0.975, batches - 1))
    counters = {
        "completions": tot_complete,
        "drops": tot_drop,
        "admissions": tot_admit,
        "served_user_slots": tot_served_slots,
        "maintained_user_slots": tot_maintained_slots,
        "initial_population": initial_pop,
        "final_population": pop,
    }
    total_revenue = rc * tot_complete + rt * tot_maintained_slots - cq * tot_drop
    return SimulationReport(
        policy=policy.name,
        seed=seed,
        avg_revenue=avg,
        ci_halfwidth_95=t_quantile * std_err,
        std_err=std_err,
        slots=slots,
        warmup=warmup,
        batches=batches,
        counters=counters,
        total_revenue=total_revenue,
        final_state=SystemState(m, tuple(counts)),
        batch_counters=tuple(
            (batch_complete[b], batch_maintained[b], batch_drop[b])
            for b in range(batches)
        ),
    )


def compare_initial_states(
    policy: Policy,
    params: SystemParams,
    states: Sequence[SystemState],
    slots: int,
    seed: int,
    *,
    warmup: int = DEFAULT_WARMUP,
    batches: int = DEFAULT_BATCHES,
) -> list[SimulationReport]:
    """Run the same policy from several initial states with shared streams.

    Sharing the seed aligns the channel and completion draws across runs,
    so long-run averages from different starts should agree; a pair of
    reports whose 95% confidence intervals fail to overlap raises.
    """
    reports = [
        run_simulation(
            policy,
            params,
            s,
            slots=slots,
            warmup=warmup,
            batches=batches,
            seed=seed,
        )
        for s in states
    ]
    for i in range(len(reports)):
        for j in range(i + 1, len(reports)):
            gap = abs(reports[i].avg_revenue - reports[j].avg_revenue)
            width = reports[i].ci_halfwidth_95 + reports[j].ci_halfwidth_95
            if gap > width:
                raise RuntimeError(
                    f"initial states {i} and {j} disagree: gap {gap:.6g} "
                    f"exceeds joint CI width {width:.6g}"
                )
    return reports


CSV_COLUMNS = [
    "config_id",
    "policy",
    "threshold",
    "J",
    "p_stay_on",
    "q_stay_off",
    "D_max",
    "P_f",
    "R_c",
    "R_t",
    "C_q",
    "seed",
    "slots",
    "avg_revenue",
    "ci95",
    "completions",
    "drops",
]


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def csv_header() -> str:
    return ",".join(CSV_COLUMNS)


def csv_row(
    report: SimulationReport,
    params: SystemParams,
    config_id: str,
    threshold: int | str = "",
) -> str:
    values = [
        config_id,
        report.policy,
        threshold,
        params.n_channels,
        params.p_stay_on,
        params.q_stay_off,
        params.max_delay,
        params.p_complete,
        params.reward_complete,
        params.reward_maintain,
        params.drop_penalty,
        report.seed,
        report.slots,
        report.avg_revenue,
        report.ci_halfwidth_95,
        report.counters["completions"],
        report.counters["drops"],
    ]
    return ",".join(_fmt(v) for v in values)

"""Segment-revenue estimation and the rollout admission policy.

A segment holds a fixed user population, admitted in its first slot, until
the first slot in which somebody leaves (completion or forced drop).  The
per-slot revenue of such segments, averaged over replications, approximates
the value of holding that population; the rollout policy searches this
curve for the best population to admit toward, and the revenue boundary
maximizes it over fresh start states.
"""
from __future__ import annotations

import enum
from bisect import bisect_right
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, NamedTuple

import numpy as np

from .model import (
    ControlDecision,
    SystemParams,
    SystemState,
    channel_cdf_rows,
    completion_cdf_rows,
)
from .policies import Policy, allocate_largest_delay_first

__all__ = [
    "ChannelQuality",
    "channel_quality",
    "SegmentResult",
    "SegmentEstimate",
    "ThresholdSearchResult",
    "simulate_segment",
    "hold_policy_value",
    "estimate_segment_revenue",
    "search_optimal_threshold",
    "RolloutPolicy",
    "DEFAULT_SEGMENT_SLOT_CAP",
]

# Segments end almost surely, but a pathological parameter corner (never a
# scarce slot and zero completion probability) could spin forever.
DEFAULT_SEGMENT_SLOT_CAP = 1_000_000

_STREAM_BLOCK = 128


class ChannelQuality(enum.Enum):
    GOOD = "good"
    BAD = "bad"


def channel_quality(state: SystemState) -> ChannelQuality:
    """Bad iff there are fewer available channels than admitted users."""
    if state.avail < state.total_users():
        return ChannelQuality.BAD
    return ChannelQuality.GOOD


class SegmentResult(NamedTuple):
    g_bar: float
    delta: int
    n_complete: int
    n_dropped: int


@dataclass(frozen=True)
class SegmentEstimate:
    """Replicated estimate of the expected segment revenue for one point."""

    n_hold: int
    state: SystemState
    mean: float
    std_err: float
    n_runs: int
    degenerate: bool = False


@dataclass
class ThresholdSearchResult:
    n_star: int
    estimates: list[SegmentEstimate]
    range_exhausted: bool


@lru_cache(maxsize=32)
def _segment_tables(params: SystemParams):
    chan = channel_cdf_rows(params)
    comp = completion_cdf_rows(params, params.n_channels)
    return chan, comp


def _segment_draw(
    n_hold: int,
    state: SystemState,
    params: SystemParams,
    take_row: Callable[[], np.ndarray],
    max_slots: int,
) -> SegmentResult:
    chan_cdf, comp_cdf = _segment_tables(params)
    D = params.max_delay
    pop = state.total_users()
    held = min(n_hold, pop + params.n_channels)
    counts = list(state.delay_counts)
    counts[0] += held - pop
    m = state.avail
    hold_revenue = held * params.reward_maintain
    delta = 0
    while True:
        u = take_row()
        served = allocate_largest_delay_first(m, counts)
        n_complete = 0
        for i in range(D + 1):
            s = served[i]
            if s:
                n_complete += bisect_right(comp_cdf[s], u[i + 1])
        n_dropped = counts[D] - served[D]
        if n_complete or n_dropped:
            g = (
                n_complete * params.reward_complete
                - n_dropped * params.drop_penalty
            ) / (delta + 1) + hold_revenue
            return SegmentResult(g, delta, n_complete, n_dropped)
        if D >= 1:
            nxt = [served[0]]
            nxt.append(served[1] + counts[0] - served[0])
            for i in range(2, D + 1):
                nxt.append(served[i] + counts[i - 1] - served[i - 1])
            counts = nxt
        m = bisect_right(chan_cdf[m], u[0])
        delta += 1
        if delta > max_slots:
            raise RuntimeError(
                f"segment still running after {max_slots} slots; "
                "check p_complete and the channel parameters"
            )


def _hold_draw(
    n_hold: int,
    state: SystemState,
    params: SystemParams,
    take_row: Callable[[], np.ndarray],
    n_departures: int,
    max_slots: int,
) -> float:
    chan_cdf, comp_cdf = _segment_tables(params)
    D = params.max_delay
    J = params.n_channels
    rc = params.reward_complete
    rt = params.reward_maintain
    cq = params.drop_penalty
    counts = list(state.delay_counts)
    pop_now = state.total_users()
    m = state.avail
    total = 0.0
    slots = 0
    departures = 0
    completed = [0] * (D + 1)
    while True:
        u = take_row()
        gap = n_hold - pop_now
        n_admit = gap if gap < J else J
        if n_admit > 0:
            counts[0] += n_admit
        else:
            n_admit = 0
        served = allocate_largest_delay_first(m, counts)
        n_complete = 0
        for i in range(D + 1):
            s = served[i]
            if s:
                c = bisect_right(comp_cdf[s], u[i + 1])
                completed[i] = c
                n_complete += c
            else:
                completed[i] = 0
        dropped = counts[D] - served[D]
        total += rc * n_complete + rt * (pop_now + n_admit) - cq * dropped
        slots += 1
        if D == 0:
            counts[0] = served[0] - completed[0]
        else:
            nxt = [
                served[0] - completed[0],
                served[1] + counts[0] - served[0] - completed[1],
            ]
            for i in range(2, D + 1):
                nxt.append(served[i] + counts[i - 1] - served[i - 1] - completed[i])
            counts = nxt
        pop_now = pop_now + n_admit - n_complete - dropped
        m = bisect_right(chan_cdf[m], u[0])
        if n_complete or dropped:
            departures += 1
            if departures >= n_departures:
                return total / slots
        if slots > max_slots:
            raise RuntimeError(
                f"hold simulation still running after {max_slots} slots; "
                "check p_complete and the channel parameters"
            )


def _check_hold(n_hold: int, state: SystemState, params: SystemParams) -> None:
    pop = state.total_users()
    if n_hold < pop:
        raise ValueError(f"n_hold={n_hold} below current population {pop}")
    if n_hold > params.max_users:
        raise ValueError(f"n_hold={n_hold} exceeds max_users={params.max_users}")


def simulate_segment(
    n_hold: int,
    state: SystemState,
    params: SystemParams,
    rng: np.random.Generator,
    max_slots: int = DEFAULT_SEGMENT_SLOT_CAP,
) -> SegmentResult:
    """Run one segment holding ``n_hold`` users from ``state``.

    The population gap is admitted in the first slot, capped by the per-slot
    admission limit (the channel count), and allocation is
    largest-delay-first throughout.  The hold reward is charged for the
    population actually held, so requesting more than ``pop + n_channels``
    is the same as requesting exactly that.  Returns the realized per-slot
    revenue of the segment, its length (slots after the first), and the
    departure counts of its final slot.
    """
    _check_hold(n_hold, state, params)
    if n_hold == 0:
        return SegmentResult(0.0, 0, 0, 0)
    width = params.max_delay + 2
    return _segment_draw(n_hold, state, params, lambda: rng.random(width), max_slots)


def hold_policy_value(
    n_hold: int,
    state: SystemState,
    params: SystemParams,
    rng: np.random.Generator,
    n_departures: int = 1,
    max_slots: int = DEFAULT_SEGMENT_SLOT_CAP,
) -> float:
    """Per-slot revenue of the threshold-``n_hold`` base policy from
    ``state``, simulated until ``n_departures`` departure slots occurred.

    A single segment hides the forced drops that held users cause after the
    first departure; running the base policy through several departures
    prices that aftermath.  This is the rollout policy's cost-to-go
    estimator; with ``n_departures=1`` it coincides with the expected
    segment revenue.
    """
    _check_hold(n_hold, state, params)
    if n_hold == 0 and state.total_users() == 0:
        return 0.0
    width = params.max_delay + 2
    return _hold_draw(
        n_hold, state, params, lambda: rng.random(width), n_departures, max_slots
    )


class _Acc:
    """Replication values with streaming mean and standard error."""

    __slots__ = ("values", "total", "exact")

    def __init__(self, exact: bool = False):
        self.values: list[float] = []
        self.total = 0.0
        self.exact = exact

    def add(self, x: float) -> None:
        self.values.append(x)
        self.total += x

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def mean(self) -> float:
        if self.exact:
            return 0.0
        return self.total / len(self.values)

    @property
    def std_err(self) -> float:
        if self.exact or len(self.values) < 2:
            return 0.0
        arr = np.asarray(self.values)
        return float(arr.std(ddof=1) / np.sqrt(len(arr)))


def _paired_gap(a: _Acc, b: _Acc) -> tuple[float, float]:
    """Mean and standard error of (b - a) over shared replications."""
    if a.exact or b.exact:
        gap = b.mean - a.mean
        return gap, a.std_err + b.std_err
    n = min(a.n, b.n)
    diff = np.asarray(b.values[:n]) - np.asarray(a.values[:n])
    se = float(diff.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return float(diff.mean()), se


def estimate_segment_revenue(
    n_hold: int,
    state: SystemState,
    params: SystemParams,
    n_runs: int,
    rng: np.random.Generator,
    max_slots: int = DEFAULT_SEGMENT_SLOT_CAP,
) -> SegmentEstimate:
    """Mean and standard error of the segment revenue over replications."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    acc = _Acc()
    for _ in range(n_runs):
        acc.add(simulate_segment(n_hold, state, params, rng, max_slots).g_bar)
    return SegmentEstimate(
        n_hold=n_hold,
        state=state,
        mean=acc.mean,
        std_err=acc.std_err,
        n_runs=n_runs,
        degenerate=n_runs < 2,
    )


def _estimate_from(acc: _Acc, n_hold: int, state: SystemState) -> SegmentEstimate:
    return SegmentEstimate(
        n_hold=n_hold,
        state=state,
        mean=acc.mean,
        std_err=acc.std_err,
        n_runs=max(acc.n, 1),
        degenerate=acc.n < 2 and not acc.exact,
    )


class _SharedStreams:
    """Per-replication uniform row buffers, shared across search points.

    Point ``n`` evaluated with replication ``r`` consumes the same rows as
    any other point's replication ``r``, so adjacent curve points are
    compared with common random numbers.
    """

    def __init__(self, rng: np.random.Generator, width: int):
        self._rng = rng
        self._width = width
        self._buffers: list[list[np.ndarray]] = []

    def cursor(self, r: int) -> Callable[[], np.ndarray]:
        while len(self._buffers) <= r:
            self._buffers.append(
                [self._rng.random((_STREAM_BLOCK, self._width))]
            )
        holder = self._buffers[r]
        rng = self._rng
        width = self._width
        idx = 0

        def take() -> np.ndarray:
            nonlocal idx
            arr = holder[0]
            if idx >= arr.shape[0]:
                holder[0] = np.concatenate(
                    [arr, rng.random((_STREAM_BLOCK, width))]
                )
                arr = holder[0]
            row = arr[idx]
            idx += 1
            return row

        return take


def search_optimal_threshold(
    state: SystemState,
    params: SystemParams,
    n_runs: int,
    rng: np.random.Generator,
    max_doublings: int = 3,
    n_max: int | None = None,
    max_slots: int = DEFAULT_SEGMENT_SLOT_CAP,
    horizon_segments: int = 1,
    guard_width: float = 1.0,
) -> ThresholdSearchResult:
    """Walk the hold-revenue curve upward to its peak population.

    The curve is concave in the held population, so the walk stops at the
    first point whose successor does not improve on it.  Adjacent points
    are compared with paired common-random-number replications; an
    ambiguous comparison (the mean paired difference within ``guard_width``
    standard errors of zero) doubles the replications of both points
    before deciding, up to ``max_doublings`` times, after which point
    estimates decide.

    With the default one-segment horizon each point is the expected
    segment revenue; ``horizon_segments > 1`` scores each candidate by the
    threshold base policy's revenue through that many departures instead
    (see ``hold_policy_value``).

    Never considers populations below the current one (no eviction).  If
    the walk reaches ``n_max`` the result carries ``range_exhausted=True``
    and the best evaluated point.
    """
    if channel_quality(state) is not ChannelQuality.GOOD:
        raise ValueError("threshold search requires a good channel state")
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    pop = state.total_users()
    limit = params.max_users if n_max is None else min(n_max, params.max_users)
    streams = _SharedStreams(rng, params.max_delay + 2)
    accs: dict[int, _Acc] = {}

    def draw(n: int, r: int) -> float:
        take = streams.cursor(r)
        if horizon_segments == 1:
            return _segment_draw(n, state, params, take, max_slots).g_bar
        return _hold_draw(n, state, params, take, horizon_segments, max_slots)

    def measure(n: int, runs: int) -> _Acc:
        acc = accs.get(n)
        if acc is None:
            # an empty system with nothing to admit stays at zero revenue
            acc = _Acc(exact=(n == 0 and pop == 0))
            accs[n] = acc
        if not acc.exact:
            for r in range(acc.n, acc.n + runs):
                acc.add(draw(n, r))
        return acc

    cur = pop
    cur_acc = measure(cur, n_runs)
    range_exhausted = False
    while True:
        nxt = cur + 1
        if nxt > limit:
            range_exhausted = True
            break
        nxt_acc = measure(nxt, n_runs)
        doublings = 0
        while True:
            gap, gap_se = _paired_gap(cur_acc, nxt_acc)
            if abs(gap) > guard_width * gap_se or doublings >= max_doublings:
                break
            if cur_acc.exact and nxt_acc.exact:
                break
            if not cur_acc.exact:
                measure(cur, cur_acc.n)
            if not nxt_acc.exact:
                measure(nxt, nxt_acc.n)
            doublings += 1
        if nxt_acc.mean > cur_acc.mean:
            cur, cur_acc = nxt, nxt_acc
        else:
            break
    n_star = pop
    best = None
    for n in sorted(accs):
        if best is None or accs[n].mean > best:
            best = accs[n].mean
            n_star = n
    estimates = [_estimate_from(accs[n], n, state) for n in sorted(accs)]
    return ThresholdSearchResult(
        n_star=n_star, estimates=estimates, range_exhausted=range_exhausted
    )


class RolloutPolicy(Policy):
    """Maintain when channels are scarce, otherwise search-and-admit.

    With fewer channels than users nothing is admitted (maintaining).
    Otherwise the policy searches for the population maximizing the base
    threshold policy's simulated revenue from the current state and admits
    toward it, capped by the per-slot admission limit.  Allocation is
    always largest-delay-first.

    The default horizon looks through several departures rather than one
    segment: a single segment hides the forced drops that admitted users
    cause after the first departure, so maximizing it alone systematically
    over-admits whenever holding a user pays anything per slot.
    """

    name = "rollout"

    def __init__(
        self,
        n_runs: int = 16,
        max_doublings: int = 2,
        search_cap: int | None = None,
        max_slots: int = DEFAULT_SEGMENT_SLOT_CAP,
        horizon_segments: int = 6,
        guard_width: float = 1.0,
    ):
        # defaults tuned so one decision costs a few milliseconds while the
        # search still separates adjacent candidates reliably
        if n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        if horizon_segments < 1:
            raise ValueError("horizon_segments must be >= 1")
        self.n_runs = n_runs
        self.max_doublings = max_doublings
        self.search_cap = search_cap
        self.max_slots = max_slots
        self.horizon_segments = horizon_segments
        self.guard_width = guard_width

    def decide(self, state, params, rng):
        pop = state.total_users()
        if state.avail < pop:
            served = allocate_largest_delay_first(state.avail, state.delay_counts)
            return ControlDecision(0, tuple(served))
        result = search_optimal_threshold(
            state,
            params,
            self.n_runs,
            rng,
            max_doublings=self.max_doublings,
            n_max=self.search_cap,
            max_slots=self.max_slots,
            horizon_segments=self.horizon_segments,
            guard_width=self.guard_width,
        )
        n_admit = min(
            result.n_star - pop, params.n_channels, params.max_users - pop
        )
        if n_admit < 0:
            n_admit = 0
        counts = [state.delay_counts[0] + n_admit, *state.delay_counts[1:]]
        served = allocate_largest_delay_first(state.avail, counts)
        return ControlDecision(n_admit, tuple(served))

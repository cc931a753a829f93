"""Core dynamics of a slotted cognitive overlay network.

Channels are exchangeable two-state Markov chains sensed once per slot, so
the system only tracks how many are available.  Admitted users accumulate one
unit of delay per unserved slot and are force-dropped once their delay would
exceed the tolerance.  Every operation here is a pure function of its inputs
plus an explicitly passed random generator, so concurrent use with
independent generators is safe.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "SystemParams",
    "SystemState",
    "ControlDecision",
    "SlotOutcome",
    "InfeasibleControlError",
    "channel_transition_prob",
    "channel_transition_matrix",
    "channel_cdf_rows",
    "completion_cdf_rows",
    "sample_channel_transition",
    "sample_completions",
    "feasible_controls",
    "apply_control",
    "revenue_of",
    "validate_state",
    "validate_control",
]

# math.comb stays exact below this; larger instances switch to log-space.
_EXACT_COMB_LIMIT = 30


class InfeasibleControlError(ValueError):
    """A control decision violates the feasibility rules for its state."""


@dataclass(frozen=True, slots=True)
class SystemParams:
    """Immutable model constants for one network instance.

    ``p_stay_on`` is the probability that an available channel is still
    available next slot; ``q_stay_off`` the probability that an unavailable
    channel stays unavailable.  ``max_users`` caps the total admitted
    population so the state space stays finite; the default
    ``n_channels * (max_delay + 1)`` never binds under sensible policies.
    """

    n_channels: int
    p_stay_on: float
    q_stay_off: float
    max_delay: int
    p_complete: float
    reward_complete: float
    reward_maintain: float
    drop_penalty: float
    max_users: int | None = None

    def __post_init__(self) -> None:
        if self.n_channels < 1:
            raise ValueError(f"n_channels must be >= 1, got {self.n_channels}")
        if self.max_delay < 0:
            raise ValueError(f"max_delay must be >= 0, got {self.max_delay}")
        for name in ("p_stay_on", "q_stay_off", "p_complete"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        for name in ("reward_complete", "reward_maintain", "drop_penalty"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.max_users is None:
            object.__setattr__(
                self, "max_users", self.n_channels * (self.max_delay + 1)
            )
        if self.max_users < 1:
            raise ValueError(f"max_users must be >= 1, got {self.max_users}")

    @property
    def n_delay_classes(self) -> int:
        return self.max_delay + 1


@dataclass(frozen=True, slots=True)
class SystemState:
    """Number of available channels plus the per-delay-class user counts."""

    avail: int
    delay_counts: tuple[int, ...]

    def total_users(self) -> int:
        return sum(self.delay_counts)


@dataclass(frozen=True, slots=True)
class ControlDecision:
    """Admissions this slot plus the number of served users per delay class.

    Newly admitted users enter delay class 0 and may be served immediately,
    so ``served[0]`` may exceed the pre-admission class-0 population.
    """

    n_admit: int
    served: tuple[int, ...]

    def total_served(self) -> int:
        return sum(self.served)


@dataclass(frozen=True, slots=True)
class SlotOutcome:
    """Realized completions, forced drops, revenue, and the successor state."""

    completed: tuple[int, ...]
    n_dropped: int
    revenue: float
    next_state: SystemState


def validate_state(state: SystemState, params: SystemParams) -> None:
    """Raise ValueError unless ``state`` lies in the model's state space."""
    if not 0 <= state.avail <= params.n_channels:
        raise ValueError(f"avail={state.avail} outside [0, {params.n_channels}]")
    if len(state.delay_counts) != params.n_delay_classes:
        raise ValueError(
            f"delay_counts needs {params.n_delay_classes} entries, "
            f"got {len(state.delay_counts)}"
        )
    if any(c < 0 for c in state.delay_counts):
        raise ValueError("delay_counts must be non-negative")
    if state.total_users() > params.max_users:
        raise ValueError(
            f"population {state.total_users()} exceeds max_users {params.max_users}"
        )


def validate_control(
    state: SystemState, ctrl: ControlDecision, params: SystemParams
) -> None:
    """Raise InfeasibleControlError unless ``ctrl`` is feasible in ``state``."""
    if not 0 <= ctrl.n_admit <= params.n_channels:
        raise InfeasibleControlError(
            f"n_admit={ctrl.n_admit} outside [0, {params.n_channels}]"
        )
    if state.total_users() + ctrl.n_admit > params.max_users:
        raise InfeasibleControlError(
            f"admitting {ctrl.n_admit} would exceed max_users={params.max_users}"
        )
    if len(ctrl.served) != params.n_delay_classes:
        raise InfeasibleControlError(
            f"served needs {params.n_delay_classes} entries, got {len(ctrl.served)}"
        )
    if any(s < 0 for s in ctrl.served):
        raise InfeasibleControlError("served counts must be non-negative")
    if ctrl.served[0] > state.delay_counts[0] + ctrl.n_admit:
        raise InfeasibleControlError(
            f"served[0]={ctrl.served[0]} exceeds class population "
            f"{state.delay_counts[0] + ctrl.n_admit}"
        )
    for i in range(1, params.n_delay_classes):
        if ctrl.served[i] > state.delay_counts[i]:
            raise InfeasibleControlError(
                f"served[{i}]={ctrl.served[i]} exceeds class population "
                f"{state.delay_counts[i]}"
            )
    if ctrl.total_served() > state.avail:
        raise InfeasibleControlError(
            f"serving {ctrl.total_served()} users with {state.avail} channels"
        )


def _binom_pmf(k: int, n: int, p: float) -> float:
    if k < 0 or k > n:
        return 0.0
    if p <= 0.0:
        return 1.0 if k == 0 else 0.0
    if p >= 1.0:
        return 1.0 if k == n else 0.0
    if n <= _EXACT_COMB_LIMIT:
        return math.comb(n, k) * p**k * (1.0 - p) ** (n - k)
    return math.exp(
        math.lgamma(n + 1)
        - math.lgamma(k + 1)
        - math.lgamma(n - k + 1)
        + k * math.log(p)
        + (n - k) * math.log1p(-p)
    )


def channel_transition_prob(
    m_now: int, m_next: int, params: SystemParams
) -> float:
    """Probability that the available-channel count moves ``m_now -> m_next``.

    Convolution of two binomials: channels that stay available out of the
    current ``m_now``, plus channels that newly become available out of the
    remaining ``n_channels - m_now``.
    """
    J = params.n_channels
    if not 0 <= m_now <= J:
        raise ValueError(f"m_now={m_now} outside [0, {J}]")
    if not 0 <= m_next <= J:
        raise ValueError(f"m_next={m_next} outside [0, {J}]")
    p_on = 1.0 - params.q_stay_off
    total = 0.0
    for kept in range(0, min(m_now, m_next) + 1):
        appeared = m_next - kept
        if appeared > J - m_now:
            continue
        total += _binom_pmf(kept, m_now, params.p_stay_on) * _binom_pmf(
            appeared, J - m_now, p_on
        )
    return total


def channel_transition_matrix(params: SystemParams) -> np.ndarray:
    """Dense (n_channels+1) x (n_channels+1) channel-count transition matrix."""
    J = params.n_channels
    mat = np.empty((J + 1, J + 1))
    for m in range(J + 1):
        for m2 in range(J + 1):
            mat[m, m2] = channel_transition_prob(m, m2, params)
    return mat


def _cdf_row(pmf: Sequence[float]) -> list[float]:
    row: list[float] = []
    acc = 0.0
    for p in pmf:
        acc += float(p)
        row.append(acc)
    row[-1] = 1.0
    return row


def channel_cdf_rows(params: SystemParams) -> list[list[float]]:
    """Per-``m`` cumulative rows for inverse-CDF sampling of the next count."""
    mat = channel_transition_matrix(params)
    return [_cdf_row(mat[m]) for m in range(params.n_channels + 1)]


def completion_cdf_rows(params: SystemParams, n_max: int) -> list[list[float]]:
    """Cumulative Binomial(n, p_complete) rows for n = 0..n_max."""
    p = params.p_complete
    return [
        _cdf_row([_binom_pmf(k, n, p) for k in range(n + 1)])
        for n in range(n_max + 1)
    ]


def sample_channel_transition(
    m_now: int, params: SystemParams, rng: np.random.Generator
) -> int:
    """Draw the next available-channel count."""
    J = params.n_channels
    if not 0 <= m_now <= J:
        raise ValueError(f"m_now={m_now} outside [0, {J}]")
    stay = rng.binomial(m_now, params.p_stay_on) if m_now else 0
    appear = rng.binomial(J - m_now, 1.0 - params.q_stay_off) if m_now < J else 0
    return int(stay + appear)


def sample_completions(
    ctrl: ControlDecision, params: SystemParams, rng: np.random.Generator
) -> tuple[int, ...]:
    """Draw per-class completion counts, Binomial(served[i], p_complete) each."""
    return tuple(
        int(c) for c in rng.binomial(ctrl.served, params.p_complete)
    )


def _service_vectors(
    caps: Sequence[int], budget: int
) -> Iterator[tuple[int, ...]]:
    vec = [0] * len(caps)

    def rec(i: int, remaining: int) -> Iterator[tuple[int, ...]]:
        if i == len(caps):
            yield tuple(vec)
            return
        for v in range(min(caps[i], remaining) + 1):
            vec[i] = v
            yield from rec(i + 1, remaining - v)
        vec[i] = 0

    yield from rec(0, budget)


def feasible_controls(
    state: SystemState, params: SystemParams
) -> list[ControlDecision]:
    """Enumerate every feasible decision for ``state``, without duplicates.

    Deterministic order: admissions ascending, then service vectors in
    lexicographic order, so index 0 is always the do-nothing decision.
    """
    validate_state(state, params)
    pop = state.total_users()
    admit_cap = min(params.n_channels, params.max_users - pop)
    out: list[ControlDecision] = []
    for n_admit in range(admit_cap + 1):
        caps = [state.delay_counts[0] + n_admit, *state.delay_counts[1:]]
        for served in _service_vectors(caps, state.avail):
            out.append(ControlDecision(n_admit, served))
    return out


def revenue_of(
    completed: Sequence[int],
    maintained: int,
    n_dropped: int,
    params: SystemParams,
) -> float:
    """Per-slot revenue: completions earn, held users earn, drops cost.

    ``maintained`` is the population present during the slot, counted after
    admissions; that convention makes segment revenue accounting exact.
    """
    return (
        params.reward_complete * sum(completed)
        + params.reward_maintain * maintained
        - params.drop_penalty * n_dropped
    )


def apply_control(
    state: SystemState,
    ctrl: ControlDecision,
    m_next: int,
    completed: Sequence[int],
    params: SystemParams,
) -> SlotOutcome:
    """Advance one slot deterministically given the realized randomness.

    Served users keep their delay class; unserved users age one class; the
    unserved members of the top class are force-dropped.  With max_delay = 0
    unserved new admits are dropped in the same slot, which keeps the user
    count conserved.
    """
    validate_control(state, ctrl, params)
    if not 0 <= m_next <= params.n_channels:
        raise ValueError(f"m_next={m_next} outside [0, {params.n_channels}]")
    D = params.max_delay
    if len(completed) != D + 1:
        raise InfeasibleControlError(
            f"completed needs {D + 1} entries, got {len(completed)}"
        )
    for i, (c, s) in enumerate(zip(completed, ctrl.served)):
        if not 0 <= c <= s:
            raise InfeasibleControlError(
                f"completed[{i}]={c} outside [0, served[{i}]={s}]"
            )
    w = state.delay_counts
    ue = ctrl.served
    nxt = [0] * (D + 1)
    nxt[0] = ue[0] - completed[0]
    if D == 0:
        n_dropped = (w[0] + ctrl.n_admit) - ue[0]
    else:
        n_dropped = w[D] - ue[D]
        nxt[1] = ue[1] + (w[0] + ctrl.n_admit - ue[0]) - completed[1]
        for i in range(2, D + 1):
            nxt[i] = ue[i] + (w[i - 1] - ue[i - 1]) - completed[i]
    revenue = revenue_of(
        completed, state.total_users() + ctrl.n_admit, n_dropped, params
    )
    return SlotOutcome(
        completed=tuple(completed),
        n_dropped=n_dropped,
        revenue=revenue,
        next_state=SystemState(m_next, tuple(nxt)),
    )

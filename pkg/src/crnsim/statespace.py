"""Finite state-space enumeration and the explicit transition/reward model.

Only meant for desk-scale instances: the enumeration refuses to build spaces
whose projected size exceeds a configurable safety limit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence, TextIO

from .model import (
    ControlDecision,
    SystemParams,
    SystemState,
    _binom_pmf,
    channel_transition_matrix,
    feasible_controls,
)

__all__ = [
    "CapacityError",
    "ExplicitModel",
    "count_states",
    "enumerate_states",
    "build_explicit_model",
    "export_model",
]

DEFAULT_STATE_LIMIT = 10_000_000


class CapacityError(RuntimeError):
    """The instance is too large for explicit enumeration."""


@dataclass
class ExplicitModel:
    """Explicit MDP: indexed states, per-state actions, kernel, and rewards.

    ``kernel[s][a]`` is a sparse list of ``(successor_index, probability)``
    pairs sorted by successor index; ``expected_reward[s][a]`` is the exact
    one-slot expectation of the revenue under action ``a`` in state ``s``.
    """

    states: list
    actions: list[list]
    kernel: list[list[list[tuple[int, float]]]]
    expected_reward: list[list[float]]
    params: SystemParams | None = None
    index: dict = field(default_factory=dict)

    @property
    def n_states(self) -> int:
        return len(self.states)


def _delay_profiles(n_classes: int, max_total: int) -> Iterator[tuple[int, ...]]:
    vec = [0] * n_classes

    def rec(i: int, remaining: int) -> Iterator[tuple[int, ...]]:
        if i == n_classes:
            yield tuple(vec)
            return
        for v in range(remaining + 1):
            vec[i] = v
            yield from rec(i + 1, remaining - v)
        vec[i] = 0

    yield from rec(0, max_total)


def count_states(params: SystemParams) -> int:
    """State count without enumerating: channel values times delay profiles."""
    n_profiles = math.comb(
        params.max_users + params.n_delay_classes, params.n_delay_classes
    )
    return (params.n_channels + 1) * n_profiles


def enumerate_states(
    params: SystemParams, state_limit: int = DEFAULT_STATE_LIMIT
) -> list[SystemState]:
    """All states in deterministic order; the empty state comes first."""
    projected = count_states(params)
    if projected > state_limit:
        raise CapacityError(
            f"projected state count {projected} exceeds limit {state_limit}; "
            "shrink n_channels, max_delay, or max_users"
        )
    profiles = list(_delay_profiles(params.n_delay_classes, params.max_users))
    return [
        SystemState(m, w)
        for m in range(params.n_channels + 1)
        for w in profiles
    ]


def _action_kernel(
    state: SystemState,
    ctrl: ControlDecision,
    params: SystemParams,
    chan_rows,
    index: dict,
) -> list[tuple[int, float]]:
    """Successor distribution of one (state, action) pair.

    Completion vectors map one-to-one onto successor delay profiles, so the
    forward enumeration below never merges user-side probabilities; only the
    independent channel factor fans each profile out over next counts.
    """
    D = params.max_delay
    w = state.delay_counts
    ue = ctrl.served
    p = params.p_complete
    pmfs = [
        [(k, _binom_pmf(k, ue[i], p)) for k in range(ue[i] + 1)]
        for i in range(D + 1)
    ]
    row: dict[int, float] = {}
    for combo_p, completed in _completion_combos(pmfs):
        if combo_p == 0.0:
            continue
        nxt = [0] * (D + 1)
        nxt[0] = ue[0] - completed[0]
        if D >= 1:
            nxt[1] = ue[1] + (w[0] + ctrl.n_admit - ue[0]) - completed[1]
            for i in range(2, D + 1):
                nxt[i] = ue[i] + (w[i - 1] - ue[i - 1]) - completed[i]
        profile = tuple(nxt)
        for m2 in range(params.n_channels + 1):
            pc = float(chan_rows[state.avail][m2])
            if pc == 0.0:
                continue
            idx = index[SystemState(m2, profile)]
            row[idx] = row.get(idx, 0.0) + combo_p * pc
    entries = sorted(row.items())
    total = sum(p for _, p in entries)
    if abs(total - 1.0) > 1e-10:
        raise AssertionError(f"kernel row sums to {total!r}")
    return entries


def _completion_combos(pmfs):
    def rec(i, acc_p, acc_vec):
        if i == len(pmfs):
            yield acc_p, tuple(acc_vec)
            return
        for k, pk in pmfs[i]:
            if pk == 0.0:
                continue
            acc_vec.append(k)
            yield from rec(i + 1, acc_p * pk, acc_vec)
            acc_vec.pop()

    yield from rec(0, 1.0, [])


def build_explicit_model(
    params: SystemParams, state_limit: int = DEFAULT_STATE_LIMIT
) -> ExplicitModel:
    """Enumerate states and actions and assemble kernel plus exact rewards."""
    states = enumerate_states(params, state_limit)
    index = {s: i for i, s in enumerate(states)}
    chan_rows = channel_transition_matrix(params)
    actions: list[list[ControlDecision]] = []
    kernel: list[list[list[tuple[int, float]]]] = []
    rewards: list[list[float]] = []
    for state in states:
        ctrls = feasible_controls(state, params)
        pop = state.total_users()
        krows = []
        rrow = []
        for ctrl in ctrls:
            krows.append(_action_kernel(state, ctrl, params, chan_rows, index))
            if params.max_delay == 0:
                dropped = (state.delay_counts[0] + ctrl.n_admit) - ctrl.served[0]
            else:
                dropped = state.delay_counts[-1] - ctrl.served[-1]
            rrow.append(
                params.reward_complete * params.p_complete * ctrl.total_served()
                + params.reward_maintain * (pop + ctrl.n_admit)
                - params.drop_penalty * dropped
            )
        actions.append(ctrls)
        kernel.append(krows)
        rewards.append(rrow)
    return ExplicitModel(
        states=states,
        actions=actions,
        kernel=kernel,
        expected_reward=rewards,
        params=params,
        index=index,
    )


def export_model(model: ExplicitModel, stream: TextIO) -> int:
    """Write the model as one tab-separated row per kernel entry.

    Columns: state_index, action_index, successor_index, probability,
    expected_reward.  Returns the number of rows written.
    """
    stream.write("state\taction\tsuccessor\tprobability\treward\n")
    rows = 0
    for s in range(model.n_states):
        for a, entries in enumerate(model.kernel[s]):
            r = model.expected_reward[s][a]
            for succ, prob in entries:
                stream.write(f"{s}\t{a}\t{succ}\t{prob!r}\t{r!r}\n")
                rows += 1
    return rows

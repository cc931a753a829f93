"""Admission and channel-allocation policies.

A policy maps the sensed state to a feasible control.  Allocation and
admission are deliberately separable: every admission rule here can be
paired with any of the three allocators, which is how the benchmark
comparisons are run.
"""
from __future__ import annotations

import abc
from typing import Callable, Sequence

import numpy as np

from .model import ControlDecision, SystemParams, SystemState

__all__ = [
    "Policy",
    "NullPolicy",
    "ThresholdPolicy",
    "GreedyPolicy",
    "FixedActionPolicy",
    "allocate_largest_delay_first",
    "allocate_smallest_delay_first",
    "allocate_random",
    "ALLOCATORS",
]

Allocator = Callable[..., list[int]]


def allocate_largest_delay_first(
    m: int, delay_counts: Sequence[int], rng: np.random.Generator | None = None
) -> list[int]:
    """Serve from the most-delayed class down, filling each class fully."""
    served = [0] * len(delay_counts)
    left = m
    for i in range(len(delay_counts) - 1, -1, -1):
        if left <= 0:
            break
        take = delay_counts[i] if delay_counts[i] < left else left
        served[i] = take
        left -= take
    return served


def allocate_smallest_delay_first(
    m: int, delay_counts: Sequence[int], rng: np.random.Generator | None = None
) -> list[int]:
    """Serve from the least-delayed class up (benchmark strategy 1)."""
    served = [0] * len(delay_counts)
    left = m
    for i, count in enumerate(delay_counts):
        if left <= 0:
            break
        take = count if count < left else left
        served[i] = take
        left -= take
    return served


def allocate_random(
    m: int, delay_counts: Sequence[int], rng: np.random.Generator | None = None
) -> list[int]:
    """Serve a uniform random subset of users (benchmark strategy 2).

    Users within a class are exchangeable, so a multivariate hypergeometric
    draw over the class counts gives every user the same service probability.
    """
    if rng is None:
        raise ValueError("allocate_random needs a random generator")
    total = sum(delay_counts)
    n_serve = min(m, total)
    if n_serve == 0:
        return [0] * len(delay_counts)
    if n_serve == total:
        return list(delay_counts)
    return [int(x) for x in rng.multivariate_hypergeometric(delay_counts, n_serve)]


ALLOCATORS: dict[str, Allocator] = {
    "ldf": allocate_largest_delay_first,
    "sdf": allocate_smallest_delay_first,
    "random": allocate_random,
}


class Policy(abc.ABC):
    """Maps a state to a feasible control decision."""

    name: str = "policy"

    @abc.abstractmethod
    def decide(
        self,
        state: SystemState,
        params: SystemParams,
        rng: np.random.Generator,
    ) -> ControlDecision:
        ...


class NullPolicy(Policy):
    """Never admits and never serves; the do-nothing baseline."""

    name = "null"

    def decide(self, state, params, rng):
        return ControlDecision(0, (0,) * params.n_delay_classes)


class ThresholdPolicy(Policy):
    """Admit up to a fixed population threshold, then allocate channels.

    Admissions per slot are capped by the channel count, so a threshold
    above it is reached over several slots.  The default allocator is
    largest-delay-first, which is optimal for any fixed threshold.
    """

    def __init__(self, threshold: int, allocator: str = "ldf"):
        if threshold < 0:
            raise ValueError(f"threshold must be >= 0, got {threshold}")
        if allocator not in ALLOCATORS:
            raise ValueError(f"unknown allocator {allocator!r}")
        self.threshold = threshold
        self.allocator = allocator
        self._allocate = ALLOCATORS[allocator]
        self.name = f"threshold-{allocator}"

    def decide(self, state, params, rng):
        pop = state.total_users()
        n_admit = min(
            self.threshold - pop, params.n_channels, params.max_users - pop
        )
        if n_admit < 0:
            n_admit = 0
        counts = [state.delay_counts[0] + n_admit, *state.delay_counts[1:]]
        served = self._allocate(state.avail, counts, rng)
        return ControlDecision(n_admit, tuple(served))


class GreedyPolicy(Policy):
    """Admit enough users to occupy every available channel this slot.

    Aggressive by construction: it ignores future channel availability, so
    it pays more forced-termination penalties than threshold admission.
    Allocation stays largest-delay-first to isolate the admission rule.
    """

    name = "greedy"

    def decide(self, state, params, rng):
        pop = state.total_users()
        n_admit = min(
            max(0, state.avail - pop), params.n_channels, params.max_users - pop
        )
        counts = [state.delay_counts[0] + n_admit, *state.delay_counts[1:]]
        served = allocate_largest_delay_first(state.avail, counts)
        return ControlDecision(n_admit, tuple(served))


class FixedActionPolicy(Policy):
    """Table lookup over an enumerated state space, e.g. a solver policy."""

    name = "optimal"

    def __init__(self, index: dict, actions: Sequence[ControlDecision]):
        self._index = index
        self._actions = list(actions)

    def decide(self, state, params, rng):
        return self._actions[self._index[state]]

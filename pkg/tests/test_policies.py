import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crnsim.model import (
    SystemState,
    apply_control,
    feasible_controls,
    sample_channel_transition,
    sample_completions,
    validate_control,
)
from crnsim.policies import (
    ALLOCATORS,
    GreedyPolicy,
    NullPolicy,
    ThresholdPolicy,
    allocate_largest_delay_first,
    allocate_random,
    allocate_smallest_delay_first,
)
from crnsim.rollout import RolloutPolicy

from .test_model import make_params


class TestAllocators:
    def test_ldf_serves_oldest_first(self):
        assert allocate_largest_delay_first(3, (2, 1, 1)) == [1, 1, 1]

    def test_ldf_everyone_served(self):
        assert allocate_largest_delay_first(9, (2, 1, 1)) == [2, 1, 1]

    def test_ldf_no_channels(self):
        assert allocate_largest_delay_first(0, (2, 1, 1)) == [0, 0, 0]

    def test_sdf_serves_newest_first(self):
        assert allocate_smallest_delay_first(3, (2, 1, 1)) == [2, 1, 0]

    def test_sdf_everyone_served(self):
        assert allocate_smallest_delay_first(5, (2, 1, 1)) == [2, 1, 1]

    def test_sdf_single_class(self):
        assert allocate_smallest_delay_first(1, (0, 0, 2)) == [0, 0, 1]

    def test_random_full_service(self, rng):
        assert allocate_random(7, (2, 1, 1), rng) == [2, 1, 1]

    def test_random_no_channels(self, rng):
        assert allocate_random(0, (2, 1, 1), rng) == [0, 0, 0]

    def test_random_needs_rng(self):
        with pytest.raises(ValueError):
            allocate_random(1, (1, 1))

    def test_random_exchangeable(self, rng):
        # one channel, one user in each of two classes: 50/50 service split
        n = 100_000
        hits = 0
        for _ in range(n):
            served = allocate_random(1, (1, 1), rng)
            hits += served[0]
        sigma = np.sqrt(n * 0.25)
        assert abs(hits - n / 2) <= 3 * sigma

    @given(
        m=st.integers(0, 6),
        counts=st.lists(st.integers(0, 4), min_size=1, max_size=4),
        name=st.sampled_from(["ldf", "sdf", "random"]),
    )
    def test_allocators_feasible(self, m, counts, name):
        rng = np.random.default_rng(0)
        served = ALLOCATORS[name](m, tuple(counts), rng)
        assert sum(served) == min(m, sum(counts))
        assert all(0 <= s <= c for s, c in zip(served, counts))


class TestThresholdPolicy:
    def test_threshold_binding(self, rng):
        params = make_params(J=3, D=1, cap=6)
        policy = ThresholdPolicy(2)
        ctrl = policy.decide(SystemState(3, (1, 1)), params, rng)
        assert ctrl.n_admit == 0

    def test_admits_up_to_threshold(self, rng):
        params = make_params(J=3, D=1, cap=6)
        policy = ThresholdPolicy(3)
        ctrl = policy.decide(SystemState(0, (0, 0)), params, rng)
        assert ctrl.n_admit == 3

    def test_per_slot_admission_cap(self, rng):
        params = make_params(J=3, D=1, cap=6)
        policy = ThresholdPolicy(5)
        state = SystemState(0, (0, 0))
        ctrl = policy.decide(state, params, rng)
        assert ctrl.n_admit == 3
        # the remainder is admitted on the next slot
        nxt = apply_control(state, ctrl, 0, (0, 0), params).next_state
        assert policy.decide(nxt, params, rng).n_admit == 2

    def test_rejects_bad_args(self):
        with pytest.raises(ValueError):
            ThresholdPolicy(-1)
        with pytest.raises(ValueError):
            ThresholdPolicy(2, allocator="nope")


class TestGreedyPolicy:
    @pytest.mark.parametrize(
        "avail,counts,expected",
        [(5, (1, 1), 3), (2, (2, 2), 0), (0, (1, 1), 0)],
    )
    def test_admissions(self, rng, avail, counts, expected):
        params = make_params(J=5, D=1, cap=10)
        ctrl = GreedyPolicy().decide(SystemState(avail, counts), params, rng)
        assert ctrl.n_admit == expected


class TestFeasibilityEverywhere:
    def test_all_policies_all_states(self, rng):
        params = make_params(J=3, D=2, pf=0.3, cap=6)
        from crnsim.statespace import enumerate_states

        policies = [
            NullPolicy(),
            GreedyPolicy(),
            ThresholdPolicy(0),
            ThresholdPolicy(2, "sdf"),
            ThresholdPolicy(5, "random"),
            ThresholdPolicy(6, "ldf"),
            RolloutPolicy(n_runs=4, max_doublings=1),
        ]
        for state in enumerate_states(params):
            ctrls = set(feasible_controls(state, params))
            for policy in policies:
                ctrl = policy.decide(state, params, rng)
                validate_control(state, ctrl, params)
                assert ctrl in ctrls


class TestPopulationUnderThreshold:
    @pytest.mark.parametrize("allocator", ["ldf", "sdf", "random"])
    def test_population_reaches_and_holds_threshold(self, allocator, rng):
        params = make_params(J=3, D=2, pf=0.2, cap=9)
        threshold = 5
        policy = ThresholdPolicy(threshold, allocator)
        state = SystemState(3, (0, 0, 0))
        reached = False
        for _ in range(400):
            ctrl = policy.decide(state, params, rng)
            pop_during = state.total_users() + ctrl.n_admit
            assert pop_during <= threshold
            if threshold - state.total_users() <= params.n_channels:
                assert pop_during == threshold
                reached = True
            completed = sample_completions(ctrl, params, rng)
            m_next = sample_channel_transition(state.avail, params, rng)
            state = apply_control(state, ctrl, m_next, completed, params).next_state
        assert reached

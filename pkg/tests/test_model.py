import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from crnsim.model import (
    ControlDecision,
    InfeasibleControlError,
    SystemParams,
    SystemState,
    apply_control,
    channel_cdf_rows,
    channel_transition_prob,
    feasible_controls,
    revenue_of,
    sample_channel_transition,
    sample_completions,
    validate_control,
)

from .oracles import brute_force_channel_pmf, nested_loop_control_count


def make_params(J=2, p=0.5, q=0.5, D=1, pf=0.5, rc=10.0, rt=1.0, cq=10.0, cap=None):
    return SystemParams(
        n_channels=J, p_stay_on=p, q_stay_off=q, max_delay=D, p_complete=pf,
        reward_complete=rc, reward_maintain=rt, drop_penalty=cq, max_users=cap,
    )


class TestParams:
    def test_default_cap(self):
        assert make_params(J=3, D=4).max_users == 15

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"J": 0},
            {"p": 1.5},
            {"q": -0.1},
            {"pf": 2.0},
            {"D": -1},
            {"rc": -1.0},
            {"cap": 0},
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            make_params(**kwargs)


class TestChannelTransition:
    def test_single_channel_stay(self):
        p = make_params(J=1, p=0.5, q=0.9)
        assert channel_transition_prob(1, 1, p) == pytest.approx(0.5, abs=1e-15)

    def test_two_channel_mixed(self):
        # enumerate all 2^J outcome vectors independently of the library
        p = make_params(J=2, p=0.5, q=0.5)
        expected = brute_force_channel_pmf(1, 1, 2, 0.5, 0.5)
        assert expected == pytest.approx(0.5, abs=1e-15)
        assert channel_transition_prob(1, 1, p) == pytest.approx(expected, abs=1e-15)

    @given(
        J=st.integers(1, 6),
        m=st.integers(0, 6),
        p=st.floats(0.0, 1.0),
        q=st.floats(0.0, 1.0),
    )
    def test_rows_sum_to_one(self, J, m, p, q):
        if m > J:
            m = m % (J + 1)
        params = make_params(J=J, p=p, q=q)
        total = sum(
            channel_transition_prob(m, m2, params) for m2 in range(J + 1)
        )
        assert total == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("J", [1, 2, 3, 5, 10])
    def test_matches_brute_force(self, J):
        params = make_params(J=J, p=0.3, q=0.7)
        for m in range(J + 1):
            for m2 in range(J + 1):
                expected = brute_force_channel_pmf(m, m2, J, 0.3, 0.7)
                got = channel_transition_prob(m, m2, params)
                assert got == pytest.approx(expected, abs=1e-12)

    def test_domain_errors(self):
        p = make_params(J=2)
        with pytest.raises(ValueError):
            channel_transition_prob(3, 0, p)
        with pytest.raises(ValueError):
            channel_transition_prob(0, -1, p)

    def test_large_instance_log_space(self):
        # above the exact-arithmetic limit the log-space path takes over
        params = make_params(J=64, p=0.3, q=0.6)
        for m in (0, 17, 40, 64):
            row = [channel_transition_prob(m, m2, params) for m2 in range(65)]
            assert sum(row) == pytest.approx(1.0, abs=1e-12)
            direct = stats.binom.pmf(np.arange(65), 64, 0.3) if m == 64 else None
            if direct is not None:
                assert np.allclose(row, direct, atol=1e-12)


class TestSampleChannelTransition:
    def test_deterministic_persistence(self, rng):
        p = make_params(J=4, p=1.0, q=1.0)
        assert all(sample_channel_transition(4, p, rng) == 4 for _ in range(50))

    def test_no_channel_turns_on(self, rng):
        p = make_params(J=4, p=0.3, q=1.0)
        assert all(sample_channel_transition(0, p, rng) == 0 for _ in range(50))

    def test_histogram_matches_pmf(self, rng):
        params = make_params(J=5, p=0.5, q=0.5)
        n = 300_000
        counts = np.zeros(6, dtype=int)
        for _ in range(n):
            counts[sample_channel_transition(3, params, rng)] += 1
        pmf = np.array(
            [channel_transition_prob(3, m2, params) for m2 in range(6)]
        )
        # chi-square at significance 0.001
        chi2, pval = stats.chisquare(counts, pmf * n)
        assert pval > 0.001
        # and per-bin 3 sigma multinomial bounds
        sigma = np.sqrt(n * pmf * (1 - pmf))
        assert np.all(np.abs(counts - n * pmf) <= 3.5 * sigma)

    def test_cdf_rows_consistent(self, rng):
        params = make_params(J=3, p=0.4, q=0.6)
        rows = channel_cdf_rows(params)
        for m in range(4):
            pmf = [channel_transition_prob(m, m2, params) for m2 in range(4)]
            assert rows[m][-1] == 1.0
            assert np.allclose(np.diff([0.0] + rows[m]), pmf, atol=1e-12)


class TestFeasibleControls:
    def test_no_channels_cap_one(self):
        params = make_params(J=1, D=0, cap=1)
        state = SystemState(0, (0,))
        ctrls = set(feasible_controls(state, params))
        assert ctrls == {ControlDecision(0, (0,)), ControlDecision(1, (0,))}

    def test_cap_full_serve_or_not(self):
        params = make_params(J=1, D=0, cap=1)
        state = SystemState(1, (1,))
        ctrls = set(feasible_controls(state, params))
        assert ctrls == {ControlDecision(0, (0,)), ControlDecision(0, (1,))}

    def test_count_matches_nested_loops(self):
        params = make_params(J=2, D=1, cap=4)
        state = SystemState(2, (1, 1))
        ctrls = feasible_controls(state, params)
        assert len(ctrls) == len(set(ctrls))
        assert len(ctrls) == nested_loop_control_count(state, params)

    def test_null_action_first(self, small_params):
        state = SystemState(2, (1, 1))
        first = feasible_controls(state, small_params)[0]
        assert first == ControlDecision(0, (0, 0))

    @given(
        m=st.integers(0, 3),
        w0=st.integers(0, 2),
        w1=st.integers(0, 2),
        data=st.data(),
    )
    def test_all_feasible_and_complete(self, m, w0, w1, data):
        params = make_params(J=3, D=1, cap=5)
        state = SystemState(m, (w0, w1))
        ctrls = feasible_controls(state, params)
        for ctrl in ctrls:
            validate_control(state, ctrl, params)
        assert len(ctrls) == len(set(ctrls))
        assert len(ctrls) == nested_loop_control_count(state, params)


class TestApplyControl:
    def test_worked_transition(self):
        # ten channels, two-slot delay tolerance, no completions
        params = make_params(J=10, D=2, pf=0.0, cap=60)
        state = SystemState(7, (1, 3, 2))
        ctrl = ControlDecision(2, (2, 3, 2))
        out = apply_control(state, ctrl, 4, (0, 0, 0), params)
        assert out.next_state == SystemState(4, (2, 4, 2))
        assert out.n_dropped == 0

    def test_empty_system_fixed_point(self, small_params):
        state = SystemState(1, (0, 0))
        ctrl = ControlDecision(0, (0, 0))
        out = apply_control(state, ctrl, 2, (0, 0), small_params)
        assert out.next_state == SystemState(2, (0, 0))
        assert out.n_dropped == 0
        assert out.revenue == 0.0

    def test_conservation_exhaustive(self):
        # users in + admitted == users out + completed + dropped
        params = make_params(J=3, D=2, cap=3)
        profiles = [
            w
            for w in itertools.product(range(4), repeat=3)
            if sum(w) <= 3
        ]
        checked = 0
        for m in range(4):
            for w in profiles:
                state = SystemState(m, w)
                for ctrl in feasible_controls(state, params):
                    for completed in itertools.product(
                        *[range(s + 1) for s in ctrl.served]
                    ):
                        out = apply_control(state, ctrl, 0, completed, params)
                        lhs = sum(w) + ctrl.n_admit
                        rhs = (
                            sum(out.next_state.delay_counts)
                            + sum(out.completed)
                            + out.n_dropped
                        )
                        assert lhs == rhs
                        assert all(c >= 0 for c in out.next_state.delay_counts)
                        checked += 1
        assert checked > 500

    def test_zero_delay_tolerance_drops_unserved_admits(self):
        params = make_params(J=2, D=0, cap=2)
        state = SystemState(0, (0,))
        out = apply_control(state, ControlDecision(2, (0,)), 1, (0,), params)
        assert out.n_dropped == 2
        assert out.next_state == SystemState(1, (0,))

    def test_rejects_infeasible(self, small_params):
        state = SystemState(1, (1, 0))
        with pytest.raises(InfeasibleControlError):
            apply_control(state, ControlDecision(0, (2, 0)), 1, (0, 0), small_params)
        with pytest.raises(InfeasibleControlError):
            apply_control(state, ControlDecision(0, (1, 0)), 1, (2, 0), small_params)
        with pytest.raises(ValueError):
            apply_control(state, ControlDecision(0, (1, 0)), 9, (0, 0), small_params)


class TestSampleCompletions:
    def test_never_completes(self, rng):
        params = make_params(pf=0.0)
        ctrl = ControlDecision(0, (1, 1))
        assert sample_completions(ctrl, params, rng) == (0, 0)

    def test_always_completes(self, rng):
        params = make_params(pf=1.0)
        ctrl = ControlDecision(0, (2, 1))
        assert sample_completions(ctrl, params, rng) == (2, 1)

    def test_empirical_mean(self, rng):
        params = make_params(J=3, D=0, pf=0.01, cap=3)
        ctrl = ControlDecision(0, (3,))
        n = 200_000
        total = sum(sample_completions(ctrl, params, rng)[0] for _ in range(n))
        mean = total / n
        sigma = np.sqrt(3 * 0.01 * 0.99 / n)
        assert abs(mean - 0.03) <= 3 * sigma

    def test_distribution_chi_square(self, rng):
        params = make_params(J=3, D=0, pf=0.3, cap=3)
        ctrl = ControlDecision(0, (3,))
        n = 120_000
        counts = np.zeros(4, dtype=int)
        for _ in range(n):
            counts[sample_completions(ctrl, params, rng)[0]] += 1
        pmf = stats.binom.pmf(np.arange(4), 3, 0.3)
        _, pval = stats.chisquare(counts, pmf * n)
        assert pval > 0.001


class TestRevenue:
    def test_all_zero(self, small_params):
        assert revenue_of((0, 0), 0, 0, small_params) == 0.0

    def test_direct_substitution(self):
        params = make_params(rc=10.0, rt=1.0, cq=10.0)
        assert revenue_of((1, 0), 3, 1, params) == pytest.approx(3.0)

    def test_segment_consistency(self):
        # hold two users for three slots, one completion in the last slot:
        # summing per-slot revenue must reproduce the segment formula
        # n_c/(delta+1)*R_c + N*R_t with n_c=1, delta=2, N=2.
        params = make_params(rc=10.0, rt=1.0, cq=10.0)
        slot_revenues = [
            revenue_of((0, 0), 2, 0, params),
            revenue_of((0, 0), 2, 0, params),
            revenue_of((1, 0), 2, 0, params),
        ]
        average = sum(slot_revenues) / 3
        segment_formula = 1 * params.reward_complete / 3 + 2 * params.reward_maintain
        assert average == pytest.approx(segment_formula, abs=1e-12)

import math
from bisect import bisect_right

import numpy as np
import pytest

from crnsim.harness import (
    SimulationReport,
    compare_initial_states,
    csv_header,
    csv_row,
    run_simulation,
)
from crnsim.model import (
    ControlDecision,
    InfeasibleControlError,
    SystemState,
    apply_control,
    channel_cdf_rows,
    completion_cdf_rows,
)
from crnsim.policies import GreedyPolicy, NullPolicy, Policy, ThresholdPolicy

from .test_model import make_params


def reference_sim(policy, params, initial, slots, seed):
    """Slow mirror of the harness loop built on the public model ops."""
    ch_ss, comp_ss, pol_ss = np.random.SeedSequence(seed).spawn(3)
    ch_rng = np.random.default_rng(ch_ss)
    comp_rng = np.random.default_rng(comp_ss)
    pol_rng = np.random.default_rng(pol_ss)
    chan_cdf = channel_cdf_rows(params)
    comp_cdf = completion_cdf_rows(params, params.n_channels)
    n_classes = params.n_delay_classes
    ch_u = ch_rng.random(slots)
    comp_u = comp_rng.random((slots, n_classes))
    state = initial
    totals = {"completions": 0, "drops": 0, "admissions": 0,
              "served_user_slots": 0, "maintained_user_slots": 0}
    revenues = []
    for t in range(slots):
        ctrl = policy.decide(state, params, pol_rng)
        completed = tuple(
            bisect_right(comp_cdf[s], comp_u[t, i]) if s else 0
            for i, s in enumerate(ctrl.served)
        )
        m_next = bisect_right(chan_cdf[state.avail], ch_u[t])
        out = apply_control(state, ctrl, m_next, completed, params)
        totals["completions"] += sum(out.completed)
        totals["drops"] += out.n_dropped
        totals["admissions"] += ctrl.n_admit
        totals["served_user_slots"] += ctrl.total_served()
        totals["maintained_user_slots"] += state.total_users() + ctrl.n_admit
        revenues.append(out.revenue)
        state = out.next_state
    return totals, state, revenues


class TestRunSimulation:
    def test_null_policy_zero_revenue(self, small_params):
        report = run_simulation(
            NullPolicy(), small_params, SystemState(0, (0, 0)),
            slots=2_000, warmup=1_000, batches=10, seed=1,
        )
        assert report.avg_revenue == 0.0
        assert report.ci_halfwidth_95 == 0.0
        assert report.counters["admissions"] == 0

    def test_deterministic_renewal(self):
        # channels pinned on, every served user finishes: exact revenue
        params = make_params(J=3, p=1.0, q=0.0, D=1, pf=1.0,
                             rc=10.0, rt=1.0, cq=10.0, cap=6)
        report = run_simulation(
            ThresholdPolicy(2), params, SystemState(3, (0, 0)),
            slots=5_000, warmup=1_000, batches=10, seed=3,
        )
        assert report.avg_revenue == 2 * (10.0 + 1.0)
        assert report.ci_halfwidth_95 == 0.0

    def test_bit_identical_reports(self, fig8_params):
        runs = [
            run_simulation(
                GreedyPolicy(), fig8_params, SystemState(5, (0,) * 6),
                slots=4_000, warmup=1_000, batches=10, seed=42,
            )
            for _ in range(2)
        ]
        assert runs[0] == runs[1]

    def test_seed_changes_outcome(self, fig8_params):
        reports = [
            run_simulation(
                GreedyPolicy(), fig8_params, SystemState(5, (0,) * 6),
                slots=4_000, warmup=1_000, batches=10, seed=s,
            )
            for s in (1, 2)
        ]
        assert reports[0].avg_revenue != reports[1].avg_revenue

    def test_matches_reference_loop(self):
        params = make_params(J=3, D=2, pf=0.2, rc=10.0, rt=1.0, cq=10.0, cap=9)
        initial = SystemState(2, (1, 0, 1))
        policy = ThresholdPolicy(4, "random")
        slots = 3_000
        report = run_simulation(
            policy, params, initial,
            slots=slots, warmup=1_000, batches=10, seed=17, validate=True,
        )
        totals, final_state, revenues = reference_sim(
            policy, params, initial, slots, seed=17
        )
        for key, value in totals.items():
            assert report.counters[key] == value
        assert report.final_state == final_state
        # integer-valued rewards make the per-slot sum exact
        assert math.fsum(revenues) == report.total_revenue

    def test_accounting_identity(self, fig8_params):
        report = run_simulation(
            GreedyPolicy(), fig8_params, SystemState(5, (0,) * 6),
            slots=20_000, warmup=5_000, batches=10, seed=5,
        )
        c = report.counters
        assert (
            c["initial_population"] + c["admissions"]
            == c["completions"] + c["drops"] + c["final_population"]
        )
        expected = (
            fig8_params.reward_complete * c["completions"]
            + fig8_params.reward_maintain * c["maintained_user_slots"]
            - fig8_params.drop_penalty * c["drops"]
        )
        assert report.total_revenue == expected

    def test_argument_validation(self, small_params):
        initial = SystemState(0, (0, 0))
        with pytest.raises(ValueError):
            run_simulation(NullPolicy(), small_params, initial,
                           slots=100, warmup=200, batches=10, seed=0)
        with pytest.raises(ValueError):
            run_simulation(NullPolicy(), small_params, initial,
                           slots=2_000, warmup=1_000, batches=5, seed=0)
        with pytest.raises(ValueError):
            run_simulation(NullPolicy(), small_params, initial,
                           slots=2_001, warmup=1_000, batches=10, seed=0)

    def test_infeasible_policy_detected(self, small_params):
        class Broken(Policy):
            name = "broken"

            def decide(self, state, params, rng):
                return ControlDecision(0, (9, 9))

        with pytest.raises(InfeasibleControlError):
            run_simulation(
                Broken(), small_params, SystemState(0, (0, 0)),
                slots=1_010, warmup=10, batches=10, seed=0, validate=True,
            )


class TestCompareInitialStates:
    def test_identical_states_identical_reports(self, fig8_params):
        states = [SystemState(5, (0,) * 6), SystemState(5, (0,) * 6)]
        reports = compare_initial_states(
            ThresholdPolicy(3), fig8_params, states, slots=6_000, seed=9,
            warmup=1_000, batches=10,
        )
        assert reports[0] == reports[1]

    def test_distinct_states_agree(self, fig8_params):
        states = [
            SystemState(5, (0, 0, 0, 0, 0, 0)),
            SystemState(0, (3, 0, 0, 0, 0, 0)),
            SystemState(2, (1, 1, 1, 0, 0, 0)),
        ]
        reports = compare_initial_states(
            ThresholdPolicy(3), fig8_params, states, slots=31_000, seed=9,
            warmup=1_000, batches=10,
        )
        avgs = [r.avg_revenue for r in reports]
        assert max(avgs) - min(avgs) <= 2 * max(r.ci_halfwidth_95 for r in reports)


class TestCsv:
    def test_header_and_row_shape(self, fig8_params):
        report = run_simulation(
            GreedyPolicy(), fig8_params, SystemState(5, (0,) * 6),
            slots=2_000, warmup=1_000, batches=10, seed=1,
        )
        assert len(csv_header().split(",")) == 17
        row = csv_row(report, fig8_params, "cfg", "")
        fields = row.split(",")
        assert len(fields) == 17
        assert fields[0] == "cfg"
        assert fields[1] == "greedy"
        assert fields[3] == "5"
        assert float(fields[13]) == report.avg_revenue

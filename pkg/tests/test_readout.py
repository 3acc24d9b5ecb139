"""Terminal extraction, error budgeting, and the pipeline certificate."""

import json
import math

import numpy as np
import pytest

from robustlift.instances import certify_instance, folded_demo_instance
from robustlift.readout import (
    BudgetLine,
    InfeasibleBudgetError,
    PlanInputs,
    extract_terminal,
    normalized_gap_bound,
    plan_budgets,
    run_pipeline_certificate,
    terminal_error_bound,
)

RNG = np.random.default_rng(53)


def plan_inputs(**kw):
    args = dict(rho=0.5, t_window=10, beta0=1.0, p_star=0.25, l_lift=2.0,
                m=1, eta_delta_max=0.05, eps_ball=0.1, eta_u_max=0.1,
                l_u_delta=0.5, eps_u_grad=0.0, tau_s=0.2, tau_c=0.1,
                big_l=2.0)
    args.update(kw)
    return PlanInputs(**args)


class TestExtractTerminal:
    def test_terminal_only_support(self):
        # all weight on the final parameter block: p_term = 1
        state = np.zeros(6)
        state[5] = 1.0
        out = extract_terminal(state, m=1, n=1, block_dim=2, t_final=2)
        assert out.p_term == 1.0
        np.testing.assert_array_equal(out.state, [1.0])
        assert not out.degenerate

    def test_weight_is_squared_block_norm(self):
        state = RNG.standard_normal(12)
        state /= np.linalg.norm(state)
        out = extract_terminal(state, m=2, n=2, block_dim=6, t_final=1)
        block = state[8:10]
        assert out.p_term == pytest.approx(float(block @ block), rel=1e-12)
        np.testing.assert_allclose(out.state,
                                   block / np.linalg.norm(block), atol=1e-15)
        assert abs(np.linalg.norm(out.state) - 1.0) <= 1e-14

    def test_degenerate_block(self):
        state = np.zeros(6)
        state[0] = 1.0
        out = extract_terminal(state, m=1, n=1, block_dim=2, t_final=2)
        assert out.degenerate
        assert out.state is None
        assert out.p_term == 0.0

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            extract_terminal(np.ones(5), m=1, n=1, block_dim=2, t_final=2)


class TestTerminalBound:
    def test_frozen_example(self):
        out = terminal_error_bound(0.01, 0.25)
        assert out.gate_ok
        assert out.bound == pytest.approx(0.04, rel=1e-15)

    def test_zero_error(self):
        out = terminal_error_bound(0.0, 0.5)
        assert out.bound == 0.0 and out.gate_ok

    def test_gate_failure_is_infinite(self):
        out = terminal_error_bound(0.3, 0.25)
        assert not out.gate_ok
        assert out.bound == math.inf

    def test_gate_boundary(self):
        assert terminal_error_bound(0.25, 0.25).gate_ok
        assert not terminal_error_bound(0.2500001, 0.25).gate_ok

    def test_validation(self):
        with pytest.raises(ValueError):
            terminal_error_bound(0.01, 0.0)
        with pytest.raises(ValueError):
            terminal_error_bound(0.01, 1.5)
        with pytest.raises(ValueError):
            terminal_error_bound(-0.01, 0.5)


class TestNormalizedGap:
    def test_property_on_random_pairs(self):
        for _ in range(500):
            dim = int(RNG.integers(1, 8))
            a = RNG.standard_normal(dim)
            while np.linalg.norm(a) < 1e-6:
                a = RNG.standard_normal(dim)
            b = a + RNG.standard_normal(dim) * RNG.uniform(0, 2)
            if np.linalg.norm(b) == 0:
                continue
            lhs = np.linalg.norm(a / np.linalg.norm(a)
                                 - b / np.linalg.norm(b))
            rhs = normalized_gap_bound(float(np.linalg.norm(a)),
                                       float(np.linalg.norm(a - b)))
            assert lhs <= rhs + 1e-12

    def test_zero_reference_rejected(self):
        with pytest.raises(ValueError):
            normalized_gap_bound(0.0, 0.1)

    def test_perturbed_solve_within_bound(self):
        # the lemma applied the way the pipeline uses it: solution vs a
        # perturbed copy at a known error norm
        x = RNG.standard_normal(40)
        nx = float(np.linalg.norm(x))
        for _ in range(100):
            e = RNG.standard_normal(40)
            e *= RNG.uniform(0, 0.05) * nx / np.linalg.norm(e)
            y = x + e
            gap = np.linalg.norm(x / nx - y / np.linalg.norm(y))
            assert gap <= normalized_gap_bound(nx, float(np.linalg.norm(e)))


class TestPlanBudgets:
    def test_terminal_mode_arithmetic(self):
        plan = plan_budgets(0.05, plan_inputs(model_exact=True),
                            mode="terminal")
        assert plan.eps_ro == pytest.approx(0.025)
        assert plan.state_target == pytest.approx(0.5 * 0.05 / 4.0)
        assert plan.eps_ls == pytest.approx(plan.state_target / 2.0)
        assert plan.eps_hor == pytest.approx(plan.state_target / 4.0)
        amp = math.sqrt(11) / 0.5
        assert plan.gamma_target == pytest.approx(plan.eps_hor / amp)
        assert plan.base_target == 0.0
        assert plan.delta_s is None
        assert all(line.ok for line in plan.lines)

    def test_state_mode_arithmetic(self):
        plan = plan_budgets(0.05, plan_inputs(model_exact=True), mode="state")
        assert plan.eps_ro == 0.0
        assert plan.state_target == 0.05
        assert all(line.ok for line in plan.lines)

    def test_folded_mode_allocates_splits(self):
        plan = plan_budgets(0.5, plan_inputs(), mode="state")
        assert plan.delta_s is not None and plan.delta_c is not None
        assert plan.eps_nl_effective > 0
        # the planned split regenerates the per-step bound within target
        step = math.sqrt(1) * (0.05 * plan.delta_s + 0.1 * plan.delta_c)
        assert step <= plan.base_target + 1e-15
        amp = math.sqrt(11) / 0.5
        assert plan.base_target == pytest.approx(
            plan.eps_hor / (2 * amp * 2.0))

    def test_gradient_room_exhausted(self):
        with pytest.raises(InfeasibleBudgetError):
            plan_budgets(0.05, plan_inputs(eps_u_grad=5.0), mode="state")

    def test_regime_left_when_rates_vanish(self):
        # per-step share far above eta_delta sqrt(m): no admissible split
        with pytest.raises(InfeasibleBudgetError):
            plan_budgets(0.5, plan_inputs(eta_delta_max=1e-9, rho=0.0,
                                          t_window=0, l_lift=1.0),
                         mode="state")

    def test_invalid_inputs(self):
        with pytest.raises(InfeasibleBudgetError):
            plan_budgets(0.0, plan_inputs())
        with pytest.raises(InfeasibleBudgetError):
            plan_budgets(0.05, plan_inputs(rho=1.0))
        with pytest.raises(InfeasibleBudgetError):
            plan_budgets(0.05, plan_inputs(beta0=0.0))
        with pytest.raises(InfeasibleBudgetError):
            plan_budgets(0.05, plan_inputs(p_star=0.0), mode="terminal")
        with pytest.raises(ValueError):
            plan_budgets(0.05, plan_inputs(), mode="both")

    def test_budget_line_reporting(self):
        line = BudgetLine("demo", 0.4, 0.5)
        assert line.ok and line.slack == pytest.approx(0.1)
        assert not BudgetLine("demo", 0.6, 0.5).ok
        payload = line.to_dict()
        assert payload["name"] == "demo" and payload["ok"]

    def test_budget_serializes(self):
        plan = plan_budgets(0.05, plan_inputs(model_exact=True))
        payload = plan.to_dict()
        assert payload["mode"] == "terminal"
        assert len(payload["lines"]) == len(plan.lines)


class TestPipelineCertificate:
    def test_flagship_terminal_certificate(self):
        cert = run_pipeline_certificate(certify_instance(50), 0.05)
        assert cert.passed
        assert all(h["pass"] for h in cert.hypotheses.values())
        assert cert.terminal["measured_error_normalized"] <= 0.05
        assert cert.terminal["reconstruction_error"] <= 1e-10
        assert cert.measurements["gamma_n"] == 0.0
        assert cert.measurements["eps_base_step"] == 0.0

    def test_flagship_state_mode(self):
        cert = run_pipeline_certificate(certify_instance(50), 0.05,
                                        mode="state")
        assert cert.passed
        assert cert.budget.eps_ro == 0.0
        assert len(cert.verification) == 7

    def test_zero_window_flags_contractivity(self):
        # empty learner schedule leaves the linear part at norm one; the
        # pipeline must flag H1 and still read out the initial block
        cert = run_pipeline_certificate(certify_instance(0), 0.05)
        assert not cert.hypotheses["H1_contractive_window"]["pass"]
        assert not cert.passed
        assert cert.terminal["measured_error_normalized"] == 0.0

    def test_certificate_json_roundtrip(self):
        cert = run_pipeline_certificate(certify_instance(10), 0.05)
        payload = json.loads(cert.to_json())
        assert payload["passed"] == cert.passed
        assert payload["eps_out"] == 0.05
        assert len(payload["verification"]) == len(cert.verification)
        assert payload["terminal"]["state"] is not None
        assert "H5_terminal_weight" in payload["hypotheses"]

    def test_p_star_tracks_fraction(self):
        half = run_pipeline_certificate(certify_instance(10), 0.05,
                                        p_star_fraction=0.5)
        full = run_pipeline_certificate(certify_instance(10), 0.05,
                                        p_star_fraction=0.9)
        ratio = (full.hypotheses["H5_terminal_weight"]["p_star"]
                 / half.hypotheses["H5_terminal_weight"]["p_star"])
        assert ratio == pytest.approx(1.8, rel=1e-9)

    def test_lift_cap_bounds_the_stacked_system(self):
        # a cap nothing fits under floors the lift at two levels; the
        # certificate still reports whatever that lift delivers
        inst = folded_demo_instance()
        free = run_pipeline_certificate(inst, 0.3)
        capped = run_pipeline_certificate(inst, 0.3, max_stacked_nnz=1)
        assert capped.n_levels == 2 < free.n_levels
        assert set(capped.hypotheses) == set(free.hypotheses)
        assert json.loads(capped.to_json())["n_levels"] == 2

    def test_terminal_matches_direct_iteration(self):
        # the reconstructed parameter equals the plain descent iterate
        inst = certify_instance(25)
        cert = run_pipeline_certificate(inst, 0.05)
        u = float(inst.v0.u[0])
        for _ in range(25):
            u = u - 0.1 * (0.5 * 0.02 + 3.0 * u - 0.55)
        assert cert.terminal["reconstructed_u"][0] == pytest.approx(
            u, abs=1e-10)

"""Acceptance gate: every published reference value at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -s`` to see one line per criterion.
"""
import numpy as np
import pytest

import tbdelay as tb
from tbdelay.ocp import gradient_of_controls, objective_of_controls
from tbdelay.stability import _qp_derivative, _real_roots_recursive

from conftest import PAPER


def report(num: int, description: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    line = f"[criterion {num:2d}] {status}: {description}"
    if detail:
        line += f"  ({detail})"
    print(line)
    assert ok, line


class TestAcceptance:
    def test_01_reproduction_numbers(self):
        r100 = tb.basic_reproduction_number(tb.ModelParams.baseline(100.0)).value
        r40 = tb.basic_reproduction_number(tb.ModelParams.baseline(40.0)).value
        ok = (abs(r100 - 2.202067) / 2.202067 < 1e-5
              and abs(r40 - 0.880827) / 0.880827 < 1e-5)
        report(1, "R0 at beta=100 and beta=40 within 1e-5 relative", ok,
               f"R0(100)={r100:.6f}, R0(40)={r40:.6f}")

    def test_02_endemic_equilibrium(self):
        p = tb.ModelParams.baseline(100.0)
        eq = tb.endemic_equilibrium(p)
        got = (eq.state.s, eq.state.l1, eq.state.i, eq.state.l2)
        ok = all(abs(g - w) / w < 1e-3 for g, w in zip(got, PAPER["ee_beta100"]))
        ok = ok and eq.residual_norm < 1e-8 * p.n_pop
        report(2, "endemic equilibrium at beta=100 within 1e-3 relative", ok,
               f"I={eq.state.i:.6f}, residual={eq.residual_norm:.2e}")

    def test_03_linearization(self):
        p = tb.ModelParams.baseline(100.0)
        lin = tb.linearize(p, tb.endemic_equilibrium(p))
        want = np.array([
            [-0.050974, 0.0, -28.025561, 0.0],
            [0.027516, -14.023458, 45.970734, 0.0],
            [-0.000020, 0.599980, -0.014306, 0.000180],
            [0.0, 11.400000, -0.335130, -1.023658]])
        ok = (np.max(np.abs(lin.a1 - want)) < 1e-4
              and np.array_equal(lin.a2, np.diag([0.0, 0.0, -2.0, 0.0])))
        report(3, "endemic linearization matrices at beta=100", ok,
               f"max |A1 - ref| = {np.max(np.abs(lin.a1 - want)):.2e}")

    def test_04_crossing_quartic(self):
        p = tb.ModelParams.baseline(40.0)
        zq = tb.crossing_quartic(tb.dfe_char_coefficients(p), p)
        coeff_ok = (abs(zq.alpha3 - 241.429794) < 1e-4
                    and abs(zq.alpha2 - 31.065028) < 1e-4
                    and abs(zq.alpha1 + 221.270089) < 1e-4
                    and abs(zq.alpha0 + 0.037233) < 1e-4)
        roots = tb.quartic_real_roots(zq)
        roots_ok = (len(roots) == 4
                    and abs(roots[0] + 241.30) < 0.01
                    and abs(roots[1] + 1.03) < 0.01
                    and abs(roots[2] + 0.00017) < 1e-4
                    and abs(roots[3] - 0.89) < 0.01)
        report(4, "crossing quartic coefficients and roots at beta=40",
               coeff_ok and roots_ok, f"roots={np.round(roots, 5)}")

    def test_05_remark3_reproduction(self):
        p = tb.ModelParams.baseline(40.0)
        dfe = tb.disease_free_equilibrium(p)
        lin = tb.linearize(p, dfe)
        roots = tb.real_root_isolation(lin, 0.1, (-50.0, 10.0))
        want_roots = (-23.481727, -18.106597, -1.024343, -0.320880, -0.011482)
        pc, qc = tb.quasi_polynomial(lin)
        pd, qd = _qp_derivative(pc, qc, 0.1)
        zeros = _real_roots_recursive(pd, qd, 0.1, -50.0, 10.0, 0, 8)
        want_zeros = (-21.408183, -12.680307, -0.748206, -0.151719)
        verdict = tb.classify(p, dfe, 0.1)
        ok = (len(roots) == 5
              and all(abs(g - w) < 1e-4 for g, w in zip(roots, want_roots))
              and len(zeros) == 4
              and all(abs(g - w) < 1e-4 for g, w in zip(zeros, want_zeros))
              and verdict.kind is tb.VerdictKind.STABLE_AT_GIVEN_DELAY)
        report(5, "five real roots, four derivative zeros, stable verdict", ok,
               f"verdict={verdict.kind.value}")

    def test_06_endemic_characteristic_data(self):
        p = tb.ModelParams.baseline(100.0)
        lin = tb.linearize(p, tb.endemic_equilibrium(p))
        d0_roots = (-1.029896, -15.997555,
                    complex(-0.042472, 0.168435), complex(-0.042472, -0.168435))
        pc, qc = tb.quasi_polynomial(lin)
        comb = pc.copy()
        comb[-len(qc):] += qc
        dcomb = np.polyder(comb)
        roots_ok = all(
            abs(tb.char_eval(lin, r, 0.0)) / max(1.0, abs(np.polyval(dcomb, r))) < 1e-6
            for r in d0_roots)
        # companion roots of the zero-delay quartic match to 1e-4
        comp = sorted(np.roots(comb), key=lambda z: (z.real, z.imag))
        match_ok = (abs(comp[0].real + 15.997555) < 1e-4
                    and abs(comp[1].real + 1.029896) < 1e-4
                    and abs(comp[2] - complex(-0.042472, -0.168435)) < 1e-4
                    and abs(comp[3] - complex(-0.042472, 0.168435)) < 1e-4)
        b = 0.453220
        resid = (b ** 8 + 281.828573 * b ** 6 - 51.906667 * b ** 4
                 - 1.236501 * b ** 2 - 0.000246)
        b_ok = abs(resid) < 1e-3
        scan = tb.rightmost_root_scan(lin, 0.1)
        real_roots = tb.real_root_isolation(lin, 0.1, (-1e-6, 50.0))
        scan_ok = all(z.real < 0 for z in scan) and not real_roots
        report(6, "endemic characteristic roots, crossing residual, clean scan",
               roots_ok and match_ok and b_ok and scan_ok,
               f"modulus residual={resid:.2e}")

    def test_07_nondelayed_ocp(self, nondelayed_solution):
        sol = nondelayed_solution
        ref = PAPER["nondelayed"]
        j_ok = abs(sol.objective_value - ref["J"]) / ref["J"] < 0.005
        sw = (sol.switch_times[0][0], sol.switch_times[1][0])
        sw_ok = all(abs(g - w) < 0.05 for g, w in zip(sw, ref["switches"]))
        term_ok = all(abs(g - w) / w < 0.01
                      for g, w in zip(sol.trajectory.states[-1], ref["terminal"]))
        lam_ok = all(abs(g - w) < 1e-2
                     for g, w in zip(sol.adjoints[0], ref["lam0"]))
        report(7, "non-delayed optimal control (W=50)",
               j_ok and sw_ok and term_ok and lam_ok,
               f"J={sol.objective_value:.2f}, switches={np.round(sw, 5)}")

    def test_08_l1_l2_proximity(self, nondelayed_solution, l2_solution):
        j1 = nondelayed_solution.objective_value
        j2 = l2_solution.objective_value
        ok = abs(j1 - j2) / j1 < 0.001
        report(8, "L1 and L2 objective optima within 0.1%", ok,
               f"J1={j1:.2f}, J2={j2:.2f}")

    def test_09_w150_structure(self, w150_solution):
        sol = w150_solution
        ref = PAPER["w150"]
        j_ok = abs(sol.objective_value - ref["J"]) / ref["J"] < 0.005
        (t2,), (t1, t3) = sol.switch_times
        sw_ok = (abs(t1 - ref["structure"][0]) < 0.02
                 and abs(t2 - ref["structure"][1]) < 0.02
                 and abs(t3 - ref["structure"][2]) < 0.02)
        zero_arc_ok = sol.initial_levels[1] == 0 and t1 > 0
        report(9, "W=150 three-switch structure with initial zero arc",
               j_ok and sw_ok and zero_arc_ok,
               f"J={sol.objective_value:.2f}, times=({t1:.5f}, {t2:.3f}, {t3:.3f})")

    def test_10_iop_hessian(self, nondelayed_iop, nondelayed_problem):
        sched, _, _ = nondelayed_iop
        rep = tb.hessian_fd(sched, nondelayed_problem)
        want = np.array(PAPER["hessian"])
        dev = np.max(np.abs(rep.matrix - want) / np.abs(want))
        ok = dev < 0.05 and rep.positive_definite
        report(10, "switching-time Hessian within 5% and positive definite", ok,
               f"max deviation {100 * dev:.2f}%")

    def test_11_delayed_ocp(self, delayed_solution):
        sol = delayed_solution
        ref = PAPER["delayed"]
        j_ok = abs(sol.objective_value - ref["J"]) / ref["J"] < 0.005
        sw = (sol.switch_times[0][0], sol.switch_times[1][0])
        sw_ok = all(abs(g - w) < 0.05 for g, w in zip(sw, ref["switches"]))
        term_ok = all(abs(g - w) / w < 0.01
                      for g, w in zip(sol.trajectory.states[-1], ref["terminal"]))
        lam_ok = all(abs(g - w) < 1e-2
                     for g, w in zip(sol.adjoints[0], ref["lam0"]))
        report(11, "delayed optimal control (d_i=0.1, d_u=0.2, W=50)",
               j_ok and sw_ok and term_ok and lam_ok,
               f"J={sol.objective_value:.2f}, switches={np.round(sw, 5)}")

    def test_12_effect_sizes(self, nondelayed_solution, delayed_solution):
        non = nondelayed_solution.trajectory.states[-1]
        dly = delayed_solution.trajectory.states[-1]
        i_ratio = dly[2] / non[2]
        l2_ratio = dly[3] / non[3]
        ok = abs(i_ratio - 0.452) < 0.03 and abs(l2_ratio - 0.601) < 0.03
        ok = ok and dly[0] > non[0] and dly[4] > non[4]
        report(12, "delayed-vs-non-delayed terminal reductions", ok,
               f"I ratio={100 * i_ratio:.1f}%, L2 ratio={100 * l2_ratio:.1f}%")

    def test_13_beta_sweep(self, delayed_problem, delayed_solution):
        import dataclasses
        prob = dataclasses.replace(delayed_problem,
                                   params=delayed_problem.params.with_beta(50.0))
        init = tb.ArcSchedule.from_solution(delayed_solution)
        betas = np.linspace(50.0, 150.0, 21)
        sweep = tb.beta_sweep(betas, prob, init)
        r = sweep.column("R")
        k = int(np.argmax(r))
        unimodal = (0 < k < 20 and np.all(np.diff(r[:k + 1]) > 0)
                    and np.all(np.diff(r[k:]) < 0))
        near_100 = 85.0 <= betas[k] <= 115.0
        monotone = all(np.all(np.diff(sweep.column(nm)) > 0)
                       for nm in ("I", "L1", "L2", "J"))
        tmat = np.array([rec.switch_times for rec in sweep.records])
        t_ok = np.all(np.diff(tmat, axis=0) >= -1e-6)
        ok = unimodal and near_100 and monotone and bool(t_ok)
        report(13, "sweep: R(T) peak near beta=100, monotone burden and switches",
               ok, f"R(T) peak at beta={betas[k]:.0f}")

    def test_14_property_suites(self, nondelayed_problem, delayed_problem,
                                nondelayed_solution, delayed_solution):
        p = tb.ModelParams.baseline(100.0)
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(1000):
            parts = rng.uniform(0.0, 1.0, 5)
            parts = parts / parts.sum() * p.n_pop
            resid = tb.sum_derivative_check(
                tb.StateVec(*parts), float(rng.uniform(0, p.n_pop)),
                float(rng.uniform(0, 1)), float(rng.uniform(0, 1)), p)
            worst = max(worst, abs(resid))
        conservation_ok = worst < 1e-9 * p.n_pop

        hist = tb.HistorySpec.paper_scenario(p)

        def terminal(n):
            return tb.integrate(p, tb.DelayConfig(), hist,
                                tb.Grid(5.0, n)).states[-1]

        ref = terminal(800)
        ratio = (np.max(np.abs(terminal(100) - ref))
                 / np.max(np.abs(terminal(200) - ref)))
        order_ok = 12.0 <= ratio <= 20.0

        grad_ok = True
        for prob, tol in ((nondelayed_problem, 1e-5), (delayed_problem, 1e-4)):
            u = rng.uniform(0.3, 0.7, (prob.grid.n_steps + 1, 2))
            _, g, _, _ = gradient_of_controls(prob, u)
            for _ in range(20):
                dvec = rng.standard_normal(u.shape)
                dvec /= np.linalg.norm(dvec)
                eps = 1e-4
                fd = (objective_of_controls(prob, u + eps * dvec)
                      - objective_of_controls(prob, u - eps * dvec)) / (2 * eps)
                if abs(fd - float(np.sum(g * dvec))) / max(1.0, abs(fd)) >= tol:
                    grad_ok = False

        w1 = delayed_problem.objective.w1
        w2 = delayed_problem.objective.w2
        phi_ok = (delayed_solution.switching[-1, 0] == -w1
                  and delayed_solution.switching[-1, 1] == -w2
                  and nondelayed_solution.switching[-1, 0] == -w1)
        transversality_ok = (np.array_equal(delayed_solution.adjoints[-1], np.zeros(4))
                             and np.array_equal(nondelayed_solution.adjoints[-1],
                                                np.zeros(4)))
        law_ok = (tb.verify_bang_bang(nondelayed_solution).law_violations == [0, 0]
                  and tb.verify_bang_bang(delayed_solution).law_violations == [0, 0])
        report(14, "conservation, order, gradient, transversality, control law",
               conservation_ok and order_ok and grad_ok and phi_ok
               and transversality_ok and law_ok,
               f"conservation {worst:.1e}, order ratio {ratio:.1f}")

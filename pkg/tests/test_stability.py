import numpy as np
import pytest

import tbdelay as tb
from tbdelay.stability import _modulus_z_quartic

from conftest import PAPER

# reference matrix printed for the endemic linearization at beta = 100
A1_EE = np.array([
    [-0.050974, 0.0, -28.025561, 0.0],
    [0.027516, -14.023458, 45.970734, 0.0],
    [-0.000020, 0.599980, -0.014306, 0.000180],
    [0.0, 11.400000, -0.335130, -1.023658],
])

REMARK3_ROOTS = (-23.481727, -18.106597, -1.024343, -0.320880, -0.011482)
REMARK3_DERIV_ZEROS = (-21.408183, -12.680307, -0.748206, -0.151719)
EE_D0_ROOTS = (-1.029896, -15.997555, complex(-0.042472, 0.168435),
               complex(-0.042472, -0.168435))


@pytest.fixture(scope="module")
def p100():
    return tb.ModelParams.baseline(100.0)


@pytest.fixture(scope="module")
def p40():
    return tb.ModelParams.baseline(40.0)


@pytest.fixture(scope="module")
def lin_ee(p100):
    return tb.linearize(p100, tb.endemic_equilibrium(p100))


@pytest.fixture(scope="module")
def lin_dfe40(p40):
    return tb.linearize(p40, tb.disease_free_equilibrium(p40))


class TestLinearize:
    def test_endemic_matrix_entries(self, lin_ee):
        assert np.max(np.abs(lin_ee.a1 - A1_EE)) < 1e-4

    def test_delayed_part_exact(self, lin_ee, p100):
        assert np.array_equal(lin_ee.a2, np.diag([0.0, 0.0, -2.0, 0.0]))

    def test_dfe_first_row(self, p100):
        lin = tb.linearize(p100, tb.disease_free_equilibrium(p100))
        assert lin.a1[0] == pytest.approx([-p100.mu, 0.0, -p100.beta, 0.0])

    def test_rejects_sloppy_equilibrium(self, p100):
        fake = tb.EquilibriumPoint(
            state=tb.StateVec(20000.0, 100.0, 100.0, 100.0, 9700.0),
            kind=tb.EquilibriumKind.ENDEMIC, residual_norm=1.0)
        with pytest.raises(tb.ParameterDomainError):
            tb.linearize(p100, fake)


class TestCharEval:
    def test_delta_at_zero_equals_r0_gap(self, p40, p100):
        for p in (p40, p100):
            lin = tb.linearize(p, tb.disease_free_equilibrium(p))
            r0 = tb.basic_reproduction_number(p)
            for d in (0.0, 0.1, 1.0):
                got = tb.char_eval(lin, 0.0, d)
                assert got.real == pytest.approx(r0.denominator - r0.numerator, rel=1e-9)
                assert got.imag == pytest.approx(0.0, abs=1e-12)

    def test_remark3_roots_are_roots(self, lin_dfe40):
        # the printed roots carry six decimals; admit the rounding through the
        # local derivative (the first root sits on a slope of ~4e3, so its
        # residual cannot beat ~1e-3 at that precision)
        pc, qc = tb.quasi_polynomial(lin_dfe40)
        from tbdelay.stability import _qp_derivative
        pd, qd = _qp_derivative(pc, qc, 0.1)
        for r in REMARK3_ROOTS:
            val = tb.char_eval(lin_dfe40, r, 0.1)
            dval = np.polyval(pd, r) + np.polyval(qd, r) * np.exp(-0.1 * r)
            assert abs(val) / max(1.0, abs(dval)) < 1e-6
        # absolute residuals stay below 1e-4 only on the shallow roots; the
        # two steep ones (slopes ~4e3 and ~3e2) amplify the 6-decimal rounding
        for r in REMARK3_ROOTS[2:]:
            assert abs(tb.char_eval(lin_dfe40, r, 0.1)) < 1e-4

    def test_ee_zero_delay_roots(self, lin_ee):
        pc, qc = tb.quasi_polynomial(lin_ee)
        comb = pc.copy()
        comb[-len(qc):] += qc
        dcomb = np.polyder(comb)
        for r in EE_D0_ROOTS:
            val = tb.char_eval(lin_ee, r, 0.0)
            dval = np.polyval(dcomb, r)
            assert abs(val) / max(1.0, abs(dval)) < 1e-6
        # shallow roots also meet the absolute bound; the root near -16 sits
        # on a slope of ~4e3 and only carries six printed decimals
        for r in (EE_D0_ROOTS[0], EE_D0_ROOTS[2], EE_D0_ROOTS[3]):
            assert abs(tb.char_eval(lin_ee, r, 0.0)) < 1e-4

    def test_determinant_matches_coefficients_at_dfe(self, p100):
        lin = tb.linearize(p100, tb.disease_free_equilibrium(p100))
        cc = tb.dfe_char_coefficients(p100)
        rng = np.random.default_rng(3)
        for _ in range(100):
            lam = complex(rng.uniform(-5, 5), rng.uniform(-5, 5))
            det = tb.char_eval(lin, lam, 0.0)
            # at d = 0 the delayed part contributes through A2 directly
            p_of = np.polyval(cc.quartic(), lam)
            q_of = (p100.tau0 * (lam + p100.mu) * (lam + cc.c1) * (lam + cc.c2)
                    * (np.exp(-lam * 0.0) - 1.0))
            assert abs(det - (p_of + q_of)) < 1e-8 * max(1.0, abs(det))


class TestDfeCoefficients:
    def test_beta40_reference_values(self, p40):
        cc = tb.dfe_char_coefficients(p40)
        assert cc.a3 == pytest.approx(17.057363, abs=1e-5)
        assert cc.a2 == pytest.approx(20.733305, abs=1e-5)
        assert cc.a1 == pytest.approx(4.489748, abs=1e-5)
        assert cc.a0 == pytest.approx(0.048755, abs=1e-5)
        assert cc.c1 == pytest.approx(981 / 70)

    def test_a0_sign_tracks_r0(self):
        for beta in (10.0, 40.0, 45.0):
            cc = tb.dfe_char_coefficients(tb.ModelParams.baseline(beta))
            assert cc.a0 > 0
        for beta in (46.0, 100.0, 150.0):
            cc = tb.dfe_char_coefficients(tb.ModelParams.baseline(beta))
            assert cc.a0 < 0

    def test_ee_quasi_polynomial_matches_reference(self, lin_ee):
        pc, qc = tb.quasi_polynomial(lin_ee)
        assert pc == pytest.approx(
            [1.0, 15.112395, -12.243801, -28.331139, -0.966336], abs=1e-4)
        assert qc == pytest.approx([2.0, 30.196179, 30.244462, 1.463482], abs=1e-4)

    def test_polynomial_part_matches_determinant_everywhere(self, p40):
        # the closed forms must agree with det(lam I - A1 - A2) at the DFE
        lin = tb.linearize(p40, tb.disease_free_equilibrium(p40))
        cc = tb.dfe_char_coefficients(p40)
        rng = np.random.default_rng(11)
        for _ in range(20):
            lam = complex(rng.uniform(-10, 10), rng.uniform(-10, 10))
            det = np.linalg.det(lam * np.eye(4) - lin.a1 - lin.a2)
            val = np.polyval(cc.quartic(), lam)
            assert abs(det - val) < 1e-8 * abs(det)


class TestRouthHurwitz:
    def test_beta40_against_direct_arithmetic(self, p40):
        cc = tb.dfe_char_coefficients(p40)
        rep = tb.routh_hurwitz_quartic(cc)
        a0, a1, a2, a3 = cc.a0, cc.a1, cc.a2, cc.a3
        assert rep.a_positive == (a0 > 0, a1 > 0, a2 > 0, a3 > 0)
        assert rep.cond_iv == (a3 * a2 > a1)
        assert rep.cond_v == (a3 * a2 * a1 > a1 ** 2 + a3 ** 2 * a0)
        assert rep.stable

    def test_known_stable_polynomial(self):
        # (lam + 1)^4 = lam^4 + 4 lam^3 + 6 lam^2 + 4 lam + 1
        rep = tb.routh_hurwitz_quartic((1.0, 4.0, 6.0, 4.0))
        assert rep.stable
        assert all(rep.a_positive)

    def test_negative_a0_fails_positivity(self):
        rep = tb.routh_hurwitz_quartic((-1.0, 4.0, 6.0, 4.0))
        assert not rep.a_positive[0]
        assert not rep.stable


class TestCrossingQuartic:
    def test_beta40_reference_coefficients(self, p40):
        zq = tb.crossing_quartic(tb.dfe_char_coefficients(p40), p40)
        assert zq.alpha3 == pytest.approx(241.429794, abs=1e-4)
        assert zq.alpha2 == pytest.approx(31.065028, abs=1e-4)
        assert zq.alpha1 == pytest.approx(-221.270089, abs=1e-4)
        assert zq.alpha0 == pytest.approx(-0.037233, abs=1e-4)

    def test_tau0_zero_collapse(self):
        p = tb.ModelParams(beta=40.0, mu=1 / 70, delta=12.0, phi=0.05,
                           omega=2e-4, omega_r=2e-5, sigma=0.25, sigma_r=0.25,
                           tau0=0.0, tau1=2.0, tau2=1.0, n_pop=30000.0,
                           eps1=0.5, eps2=0.5)
        cc = tb.dfe_char_coefficients(p)
        zq = tb.crossing_quartic(cc, p)
        a0, a1, a2, a3 = cc.a0, cc.a1, cc.a2, cc.a3
        assert zq.alpha0 == pytest.approx(a0 ** 2, rel=1e-12)
        assert zq.alpha1 == pytest.approx(a1 ** 2 - 2 * a2 * a0, rel=1e-12)
        assert zq.alpha2 == pytest.approx(a2 ** 2 + 2 * a0 - 2 * a3 * a1, rel=1e-12)
        assert zq.alpha3 == pytest.approx(a3 ** 2 - 2 * a2, rel=1e-12)

    def test_beta40_roots(self, p40):
        zq = tb.crossing_quartic(tb.dfe_char_coefficients(p40), p40)
        roots = tb.quartic_real_roots(zq)
        assert len(roots) == 4
        want = [-241.30, -1.03, -0.00017, 0.89]
        for got, ref in zip(roots, want[:2]):
            assert got == pytest.approx(ref, abs=0.01)
        assert roots[2] == pytest.approx(-0.00017, abs=1e-4)
        assert roots[3] == pytest.approx(0.89, abs=0.01)

    def test_closed_forms_match_modulus_route(self):
        # the displayed alpha formulas and the |p|^2 - |q|^2 expansion are the
        # same quartic; check across the parameter range
        for beta in (20.0, 40.0, 73.5, 100.0, 150.0):
            p = tb.ModelParams.baseline(beta)
            lin = tb.linearize(p, tb.disease_free_equilibrium(p))
            closed = tb.crossing_quartic(tb.dfe_char_coefficients(p), p).coefficients()
            modulus = tb.crossing_quartic_from_linearization(lin).coefficients()
            assert modulus == pytest.approx(closed, rel=1e-6)


class TestQuarticRealRoots:
    def test_simple_factored_quartic(self):
        # (z - 1)(z + 2)(z + 3)(z + 4) = z^4 + 8z^3 + 17z^2 - 2z - 24
        q = tb.CrossingQuartic(alpha0=-24.0, alpha1=-2.0, alpha2=17.0, alpha3=8.0)
        roots = tb.quartic_real_roots(q)
        assert roots == pytest.approx([-4.0, -3.0, -2.0, 1.0], abs=1e-12)

    def test_residual_bound(self, p40):
        zq = tb.crossing_quartic(tb.dfe_char_coefficients(p40), p40)
        coef = zq.coefficients()
        scale = np.max(np.abs(coef))
        for r in tb.quartic_real_roots(zq):
            assert abs(np.polyval(coef, r)) < 1e-9 * scale * max(1.0, abs(r)) ** 4

    def test_ee_crossing_against_printed_modulus_equation(self):
        # the printed degree-eight reduction at the endemic point admits
        # b = 0.453220 as a root
        b = 0.453220
        resid = (b ** 8 + 281.828573 * b ** 6 - 51.906667 * b ** 4
                 - 1.236501 * b ** 2 - 0.000246)
        assert abs(resid) < 1e-3

    def test_ee_crossing_frequency_from_own_quartic(self, lin_ee):
        zq = tb.crossing_quartic_from_linearization(lin_ee)
        pos = [z for z in tb.quartic_real_roots(zq) if z > 1e-9]
        assert len(pos) == 1
        b = float(np.sqrt(pos[0]))
        assert b == pytest.approx(0.4532, abs=5e-3)
        # the modulus equation |p(ib)| = |q(ib)| holds at that frequency
        pc, qc = tb.quasi_polynomial(lin_ee)
        lhs = abs(np.polyval(pc, 1j * b))
        rhs = abs(np.polyval(qc, 1j * b))
        assert abs(lhs ** 2 - rhs ** 2) < 1e-6 * max(1.0, lhs ** 2)


class TestRealRootIsolation:
    def test_remark3_roots(self, lin_dfe40):
        roots = tb.real_root_isolation(lin_dfe40, 0.1, (-50.0, 10.0))
        assert len(roots) == 5
        for got, ref in zip(roots, REMARK3_ROOTS):
            assert got == pytest.approx(ref, abs=1e-4)

    def test_remark3_derivative_zeros(self, lin_dfe40):
        from tbdelay.stability import _qp_derivative, _real_roots_recursive
        pc, qc = tb.quasi_polynomial(lin_dfe40)
        pd, qd = _qp_derivative(pc, qc, 0.1)
        zeros = _real_roots_recursive(pd, qd, 0.1, -50.0, 10.0, 0, 8)
        assert len(zeros) == 4
        for got, ref in zip(zeros, REMARK3_DERIV_ZEROS):
            assert got == pytest.approx(ref, abs=1e-4)

    def test_ee_no_nonnegative_real_roots(self, lin_ee):
        roots = tb.real_root_isolation(lin_ee, 0.1, (-1e-6, 50.0))
        assert roots == []

    def test_empty_bracket_is_not_an_error(self, lin_dfe40):
        assert tb.real_root_isolation(lin_dfe40, 0.1, (3.0, 4.0)) == []

    def test_infinite_bracket_rejected(self, lin_dfe40):
        with pytest.raises(tb.ParameterDomainError):
            tb.real_root_isolation(lin_dfe40, 0.1, (-np.inf, 0.0))

    def test_zero_delay_reduces_to_polynomial_roots(self, lin_ee):
        roots = tb.real_root_isolation(lin_ee, 0.0, (-50.0, 10.0))
        assert roots == pytest.approx([-15.997555, -1.029896], abs=1e-4)


class TestRootScan:
    def test_counts_match_zero_delay_polynomial(self, lin_ee):
        # at zero delay the characteristic function is a quartic with the
        # pair -0.042 +- 0.168i in the scan window
        n = tb.count_roots_rectangle(lin_ee, 0.0, (-0.5, 2.0), (-50.0, 50.0))
        assert n == 2

    def test_ee_delay_scan_clean(self, lin_ee):
        found = tb.rightmost_root_scan(lin_ee, 0.1)
        assert all(z.real < 0 for z in found)

    def test_dfe40_scan_finds_nothing_nonnegative(self, lin_dfe40):
        found = tb.rightmost_root_scan(lin_dfe40, 0.1)
        assert all(z.real < 0 for z in found)

    def test_unstable_dfe_positive_real_root_found(self):
        p = tb.ModelParams.baseline(100.0)
        lin = tb.linearize(p, tb.disease_free_equilibrium(p))
        roots = tb.real_root_isolation(lin, 0.1, (-1.0, 50.0))
        assert any(r > 0 for r in roots)


class TestClassify:
    def test_dfe_beta100_unstable_any_delay(self, p100):
        v = tb.classify(p100, tb.disease_free_equilibrium(p100), 0.1)
        assert v.kind is tb.VerdictKind.UNSTABLE_ANY_DELAY

    def test_dfe_beta40_stable_at_delay(self, p40):
        v = tb.classify(p40, tb.disease_free_equilibrium(p40), 0.1)
        assert v.kind is tb.VerdictKind.STABLE_AT_GIVEN_DELAY
        assert len(v.details["real_roots"]) == 5

    def test_ee_beta100_stable_zero_delay(self, p100):
        v = tb.classify(p100, tb.endemic_equilibrium(p100), 0.0)
        assert v.kind is tb.VerdictKind.STABLE_ZERO_DELAY

    def test_ee_beta100_stable_at_paper_delay(self, p100):
        v = tb.classify(p100, tb.endemic_equilibrium(p100), 0.1)
        assert v.kind is tb.VerdictKind.STABLE_AT_GIVEN_DELAY

    def test_crossing_reported_beyond_destabilizing_delay(self, p100):
        # the endemic pair crosses the axis near d = 0.5; well beyond it the
        # verdict must flag the crossing regime rather than stability
        v = tb.classify(p100, tb.endemic_equilibrium(p100), 0.6)
        assert v.kind is tb.VerdictKind.CROSSING_EXISTS

    @pytest.mark.parametrize("beta,d,stable", [
        (40.0, 0.1, True),
        (100.0, 0.1, False),
    ])
    def test_verdict_agrees_with_simulation_at_dfe(self, beta, d, stable):
        # perturb the disease-free point and watch the infected compartments
        p = tb.ModelParams.baseline(beta)
        n = p.n_pop
        eps = 1e-3 * n
        state = tb.StateVec(n - 4 * eps, eps, eps, eps, eps)
        hist = tb.HistorySpec(initial_state=state, i_history=eps)
        traj = tb.integrate(p, tb.DelayConfig(d_i=d), hist, tb.Grid(400.0, 40000))
        infected_end = traj.states[-1, 1:4].sum()
        if stable:
            assert infected_end < 3 * eps
        else:
            assert infected_end > 0.01 * n

    def test_ee_verdict_agrees_with_simulation(self, p100):
        # small perturbation of the endemic point decays back at d = 0.1
        ee = tb.endemic_equilibrium(p100).state.as_array()
        bumped = ee.copy()
        bumped[2] *= 1.2
        bumped[0] -= 0.2 * ee[2]
        hist = tb.HistorySpec(initial_state=tb.StateVec.from_array(bumped),
                              i_history=bumped[2])
        traj = tb.integrate(p100, tb.DelayConfig(d_i=0.1), hist, tb.Grid(300.0, 30000))
        assert abs(traj.states[-1, 2] - ee[2]) < 0.02 * ee[2]


class TestModulusQuarticInternal:
    def test_even_polynomial_structure(self, lin_ee):
        pc, qc = tb.quasi_polynomial(lin_ee)
        z = _modulus_z_quartic(pc, qc)
        assert len(z) == 5
        assert z[0] == pytest.approx(1.0)

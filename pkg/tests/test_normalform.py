import math

import numpy as np
import pytest
import sympy as sp

from saddlescope.errors import SmallDivisorError, StabilityError, StructuralError
from saddlescope.normalform import (
    NormalFormResult,
    cnf,
    linear_substitute,
    linearize,
    nf_transform,
    normal_quadratic,
    qnf,
    symplectic_form,
    weyl_order,
    weyl_symbol,
)
from saddlescope.phasespace import actions
from saddlescope.polyalg import ActionPolynomial
from saddlescope.systems import Eckart, Harmonic, Morse, PolynomialPotential, SystemSpec, emm_spec, taylor_expand

ECKART = Eckart(1.0, 0.5, 5.0)


def eckart_coefficients():
    """``V = E0 - lam^2 q^2 / 2 + a q^3 + b q^4`` from a sympy series of the closed form."""
    q = sp.Symbol("q")
    q0 = sp.log(sp.Rational(11, 9))
    s = 1 / (1 + sp.exp(-(q + q0)))
    ser = sp.series(sp.Rational(1, 2) * s + 5 * s * (1 - s), q, 0, 5).removeO()
    lam = math.sqrt(-2 * float(ser.coeff(q, 2)))
    return lam, float(ser.coeff(q, 3)), float(ser.coeff(q, 4))


def oscillator_continuation(lam, a, b):
    """Second-order anharmonic oscillator levels continued by ``omega -> -i lam``, ``J -> i I``.

    For ``V = omega^2 q^2/2 + a q^3 + b q^4`` the levels are
    ``omega J + (3b/(2 omega^2) - 15 a^2/(4 omega^4)) J^2 + hbar^2 (3b/(8 omega^2) - 7 a^2/(16 omega^4))``
    with ``J = hbar (n + 1/2)``.
    """
    c2 = 3 * b / (2 * lam**2) + 15 * a**2 / (4 * lam**4)
    c_h2 = -3 * b / (8 * lam**2) - 7 * a**2 / (16 * lam**4)
    return c2, c_h2


@pytest.fixture(scope="module")
def eckart_qnf():
    return qnf(SystemSpec(1, 0.1, (ECKART,), ()), 6)


@pytest.fixture(scope="module")
def emm_cnf():
    return cnf(emm_spec(0.3), 6)


class TestLinear:
    def test_emm_spectrum_matches_matrix_eigenvalues(self):
        eps = 0.3
        T = np.full((3, 3), eps) + (1 - eps) * np.eye(3)
        V = np.diag([-0.6125625, 2.0, 3.0])
        ev = np.sort(np.linalg.eigvals(T @ V).real)
        nf = cnf(emm_spec(eps), 2)
        assert nf.spectrum.lam == pytest.approx(math.sqrt(-ev[0]), rel=1e-12)
        assert nf.spectrum.lam == pytest.approx(0.7349552361081485, rel=1e-12)
        np.testing.assert_allclose(nf.spectrum.omega, np.sqrt(ev[1:]), rtol=1e-12)
        assert nf.E0 == pytest.approx(-0.9875, rel=1e-14)

    def test_map_is_symplectic_and_normalizes(self):
        spec = emm_spec(0.3)
        h2 = taylor_expand(spec, np.zeros(6), 2).grade_part(2)
        spectrum, lm = linearize(h2)
        Jm = symplectic_form(3)
        assert np.max(np.abs(lm.M.T @ Jm @ lm.M - Jm)) < 1e-12
        assert np.max(np.abs(lm.M @ lm.Minv - np.eye(6))) < 1e-12
        assert linear_substitute(h2, lm.Minv).distance(normal_quadratic(spectrum, 2)) < 1e-12

    def test_minimum_is_rejected(self):
        with pytest.raises(StabilityError):
            cnf(SystemSpec(1, 0.1, (Morse(1.0, 1.0),), ()), 4)

    def test_resonant_bath_rejected(self):
        spec = SystemSpec(3, 0.1, (ECKART, Harmonic(1.0), Harmonic(2.0)), ())
        with pytest.raises(SmallDivisorError):
            cnf(spec, 4)

    @pytest.mark.parametrize("N", [1, 3, 14])
    def test_order_validation(self, N):
        with pytest.raises(StructuralError):
            cnf(emm_spec(0.0), N)


class TestEckartOneDof:
    def test_cnf_quadratic_action_coefficient(self, eckart_qnf):
        lam, a, b = eckart_coefficients()
        c2, _ = oscillator_continuation(lam, a, b)
        K = eckart_qnf.K_cnf
        assert K.coefficient((1, 0)) == pytest.approx(lam, rel=1e-13)
        assert K.coefficient((2, 0)) == pytest.approx(c2, rel=1e-10)
        assert K.coefficient((2, 0)) == pytest.approx(0.12875, rel=1e-10)

    def test_qnf_hbar_constant(self, eckart_qnf):
        lam, a, b = eckart_coefficients()
        c2, c_h2 = oscillator_continuation(lam, a, b)
        assert eckart_qnf.K_qnf_op.coefficient((0, 2)) == pytest.approx(c_h2, rel=1e-10)
        assert eckart_qnf.K_qnf_op.coefficient((0, 2)) == pytest.approx(-0.0309375, rel=1e-10)
        assert eckart_qnf.K_qnf_symbol.coefficient((0, 2)) == pytest.approx(c_h2 + c2 / 4, rel=1e-10)

    def test_symbol_classical_part_is_cnf(self, eckart_qnf):
        assert eckart_qnf.K_qnf_symbol.classical().max_abs_diff(eckart_qnf.K_cnf) < 1e-12


class TestMorseBath:
    def test_morse_levels_exact_in_qnf(self):
        spec = SystemSpec(2, 0.1, (ECKART, Morse(1.0, 0.8)), ())
        nf = qnf(spec, 8)
        K = nf.K_qnf_op
        bath = {k: v for k, v in K.terms.items() if k[0] == 0 and k[1] > 0}
        omega = 0.8 * math.sqrt(2.0)
        assert bath.pop((0, 1, 0)) == pytest.approx(omega, rel=1e-13)
        assert bath.pop((0, 2, 0)) == pytest.approx(-0.32, rel=1e-12)
        assert all(abs(v) < 1e-12 for v in bath.values())
        mixed = [v for k, v in K.terms.items() if k[0] > 0 and k[1] > 0]
        assert all(abs(v) < 1e-12 for v in mixed)


class TestWeylOrdering:
    def test_identities(self):
        I2 = weyl_order(ActionPolynomial(1, {(2, 0): 1.0}))
        assert I2.terms == {(0, 2): -0.25, (2, 0): 1.0}
        J2 = weyl_order(ActionPolynomial(2, {(0, 2, 0): 1.0}))
        assert J2.terms == {(0, 0, 2): 0.25, (0, 2, 0): 1.0}
        I3 = weyl_order(ActionPolynomial(1, {(3, 0): 1.0}))
        assert I3.terms == {(1, 2): -1.25, (3, 0): 1.0}

    def test_round_trip(self):
        rng = np.random.default_rng(3)
        terms = {(a, b, 2 * j): float(rng.normal()) for a in range(4) for b in range(3) for j in range(2)}
        sym = ActionPolynomial(2, terms)
        assert weyl_symbol(weyl_order(sym)).max_abs_diff(sym) < 1e-12
        assert weyl_order(weyl_symbol(sym)).max_abs_diff(sym) < 1e-12


class TestHarmonicSaddle:
    def test_quadratic_system_is_already_normal(self):
        spec = SystemSpec(2, 0.1, (PolynomialPotential((0.2, 0.0, -0.5)), Harmonic(1.7)), ())
        nf = qnf(spec, 8)
        assert nf.K_cnf.terms == pytest.approx({(0, 0, 0): 0.2, (0, 1, 0): 1.7, (1, 0, 0): 1.0})
        z = np.array([0.3, -0.2, 0.1, 0.4])
        back = nf_transform(nf, nf_transform(nf, z), "from_nf")
        assert np.max(np.abs(back - z)) < 1e-14


class TestCoordinateMaps:
    @pytest.mark.parametrize("N", [4, 6])
    def test_round_trip_error_order(self, N):
        nf = cnf(emm_spec(0.3), N)
        rng = np.random.default_rng(0)
        u = rng.normal(size=(20, 6))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        radii = np.array([0.2, 0.1])
        errs = []
        for r in radii:
            z = nf.shift + r * u
            errs.append(np.max(np.abs(nf_transform(nf, nf_transform(nf, z), "from_nf") - z)))
        slope = math.log(errs[0] / errs[1]) / math.log(2.0)
        assert slope >= N + 1 - 0.3

    def test_hamiltonian_matches_normal_form(self, emm_cnf):
        spec = emm_spec(0.3)
        rng = np.random.default_rng(1)
        errs = []
        for r in (0.1, 0.05):
            w = r * rng.normal(size=(30, 6)) / math.sqrt(6)
            phys = nf_transform(emm_cnf, w, "from_nf")
            I, J = actions(w)
            K = emm_cnf.K_cnf.evaluate(I, [J[:, 0], J[:, 1]])
            errs.append(np.max(np.abs(spec.hamiltonian.value(phys) - K)))
        assert errs[1] < errs[0] / 2**6

    def test_json_round_trip(self, emm_cnf):
        back = NormalFormResult.from_json(emm_cnf.to_json())
        assert back.K_cnf.max_abs_diff(emm_cnf.K_cnf) == 0.0
        z = np.array([0.05, 0.02, -0.03, 0.01, 0.04, 0.0])
        assert np.array_equal(nf_transform(back, z), nf_transform(emm_cnf, z))

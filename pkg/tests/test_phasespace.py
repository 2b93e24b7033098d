import math

import numpy as np
import pytest

from saddlescope import phasespace as ps
from saddlescope.errors import ConvergenceError, DomainError, StructuralError
from saddlescope.normalform import cnf
from saddlescope.phasespace import SurfaceId, TrajectoryClass
from saddlescope.polyalg import ActionPolynomial, PhasePolynomial
from saddlescope.systems import Harmonic, PolynomialPotential, SystemSpec, emm_spec


def quadratic_K(lam, omegas, E0=0.0):
    d = len(omegas) + 1
    terms = {tuple([0] * (d + 1)): E0, tuple([1] + [0] * d): lam}
    for k, w in enumerate(omegas):
        key = [0] * (d + 1)
        key[k + 1] = 1
        terms[tuple(key)] = w
    return ActionPolynomial(d, terms)


def harmonic_flux(E, E0, omegas):
    n = len(omegas)
    return (2 * math.pi) ** n * (E - E0) ** n / (math.factorial(n) * math.prod(omegas))


def quadratic_saddle_spec(omegas, lam=1.0):
    pots = (PolynomialPotential((0.0, 0.0, -0.5 * lam * lam)),) + tuple(Harmonic(w) for w in omegas)
    return SystemSpec(len(pots), 0.1, pots, ())


@pytest.fixture(scope="module")
def emm6():
    return cnf(emm_spec(0.3), 6)


class TestMomentumMap:
    def test_values(self):
        a = ps.momentum_map([0.5, 0.3, 2.0, 0.4])
        assert a.I == 1.0 and a.J == (pytest.approx(0.125),)

    @pytest.mark.parametrize(
        "I, sign, cls",
        [
            (0.1, 1, TrajectoryClass.FORWARD_REACTIVE),
            (0.1, -1, TrajectoryClass.BACKWARD_REACTIVE),
            (-0.1, 1, TrajectoryClass.NONREACTIVE_PRODUCT),
            (-0.1, -1, TrajectoryClass.NONREACTIVE_REACTANT),
            (1e-13, 1, TrajectoryClass.SEPARATRIX),
        ],
    )
    def test_classification(self, I, sign, cls):
        assert ps.classify_trajectory(ps.ActionValues(I, (0.2,)), sign) is cls


class TestSurfaces:
    @pytest.fixture(scope="class")
    @classmethod
    def nf(cls):
        return cnf(quadratic_saddle_spec([1.3]), 2)

    def point(self, q1, p1, E, lam=1.0, w=1.3):
        J = (E - lam * q1 * p1) / w
        return np.array([q1, math.sqrt(2 * J), p1, 0.0])

    def members(self, nf, z, E):
        return {s.value for s in SurfaceId if ps.surface_membership(z, E, s, nf)}

    def test_nhim(self, nf):
        assert self.members(nf, self.point(0, 0, 0.5), 0.5) == {"nhim", "dividing_surface"}

    def test_forward_hemisphere(self, nf):
        assert self.members(nf, self.point(0.2, 0.2, 0.5), 0.5) == {"dividing_surface", "forward_hemisphere"}

    def test_backward_hemisphere(self, nf):
        assert self.members(nf, self.point(-0.2, -0.2, 0.5), 0.5) == {"dividing_surface", "backward_hemisphere"}

    def test_unstable_forward_branch(self, nf):
        assert self.members(nf, self.point(0.3, 0.0, 0.5), 0.5) == {"W_u", "W_u_f", "W_f_cylinder"}

    def test_stable_backward_branch(self, nf):
        assert self.members(nf, self.point(0.0, -0.3, 0.5), 0.5) == {"W_s", "W_s_b", "W_b_cylinder"}

    def test_off_shell(self, nf):
        assert not self.members(nf, self.point(0, 0, 0.5), 0.6)


class TestFlux:
    @pytest.mark.parametrize("omegas", [[1.3], [1.3, 2.1]])
    def test_harmonic_closed_form(self, omegas):
        K = quadratic_K(0.7, omegas, E0=-0.2)
        for E in (0.1, 0.5, 2.0):
            f, n = ps.flux_and_weyl(K, E, 0.05)
            ref = harmonic_flux(E, -0.2, omegas)
            assert f == pytest.approx(ref, rel=1e-10)
            assert n == pytest.approx(ref / (2 * math.pi * 0.05) ** len(omegas), rel=1e-10)

    @pytest.mark.parametrize("omegas", [[1.3], [1.3, 2.1]])
    def test_scaling_exponent(self, omegas):
        K = quadratic_K(0.7, omegas)
        E = np.geomspace(0.01, 1.0, 9)
        f = [ps.flux_and_weyl(K, e, 0.1)[0] for e in E]
        slope = np.polyfit(np.log(E), np.log(f), 1)[0]
        assert slope == pytest.approx(len(omegas), abs=1e-6)

    def test_below_threshold_is_zero(self):
        assert ps.action_volume(quadratic_K(1.0, [1.0], E0=1.0), 0.5) == 0.0

    def test_quadrature_against_qmc(self, emm6):
        E = emm6.E0 + 0.3
        exact = ps.action_volume(emm6.K_cnf, E)
        est, err = ps.action_volume_qmc(emm6.K_cnf, E)
        assert abs(est - exact) < 5 * err + 1e-6 * exact

    def test_four_dof_qmc_harmonic(self):
        om = [1.0, 1.5, 2.0]
        est, err = ps.action_volume_qmc(quadratic_K(1.0, om), 0.5)
        ref = harmonic_flux(0.5, 0.0, om) / (2 * math.pi) ** 3
        assert abs(est - ref) < 5 * err

    def test_one_dof_rejected(self):
        with pytest.raises(StructuralError):
            ps.flux_and_weyl(ActionPolynomial(1, {(1, 0): 1.0}), 1.0, 0.1)


class TestVectorField:
    def test_matches_expanded_hamiltonian(self, emm6):
        K = emm6.K_cnf
        H = K.expand(emm6.order)
        z = np.array([0.1, -0.05, 0.2, 0.07, 0.03, -0.1])
        g = np.array([gp.evaluate(z) for gp in H.gradient()])
        np.testing.assert_allclose(ps.nf_vector_field(K, z), np.r_[g[3:], -g[:3]], rtol=1e-12, atol=1e-15)


class TestIntegrate:
    def test_harmonic_energy_and_period(self):
        spec = SystemSpec(1, 0.1, (Harmonic(2.0),), ())
        T = 2 * math.pi / 2.0
        tr = ps.integrate(spec, [1.0, 0.0], (0.0, 5 * T), t_eval=[0.0, 5 * T])
        assert np.max(np.abs(tr.energy - tr.energy[0])) < 1e-10 * tr.energy[0] * 100
        assert np.max(np.abs(tr.z[-1] - [1.0, 0.0])) < 1e-6

    def test_linear_saddle_growth(self):
        lam = 1.3
        H = PhasePolynomial.from_terms(1, {(0, 2, 0): 0.5, (2, 0, 0): -0.5 * lam * lam}, 2)
        ts = np.linspace(2.0, 6.0, 9)
        tr = ps.integrate(H, [1e-3, 1.3e-3], (0.0, 6.0), t_eval=ts)
        rate = np.polyfit(ts, np.log(np.linalg.norm(tr.z, axis=1)), 1)[0]
        assert rate == pytest.approx(lam, rel=1e-4)

    def test_time_reversal(self):
        spec = emm_spec(0.3)
        z0 = np.array([0.05, 0.1, -0.1, 0.2, 0.1, 0.0])
        fwd = ps.integrate(spec, z0, (0.0, 3.0))
        back = ps.integrate(spec, fwd.z[-1], (3.0, 0.0))
        assert np.max(np.abs(back.z[-1] - z0)) < 10 * 1e-10 * 10

    def test_blow_up_reports_location(self):
        spec = SystemSpec(1, 0.1, (PolynomialPotential((0.0, 0.0, 0.0, 0.0, -1.0)),), ())
        with pytest.raises(ConvergenceError, match="t="):
            ps.integrate(spec, [1.0, 1.0], (0.0, 10.0))


class TestDrift:
    def test_quadratic_system_exact(self):
        spec = quadratic_saddle_spec([1.3, 1.9], lam=0.8)
        nf = cnf(spec, 4)
        samples = ps.sample_ball(nf.shift, 0.3, 6, seed=2)
        rep = ps.validate_invariants(spec, nf, samples, 2.0)
        assert rep.max_I < 1e-9 and np.max(rep.dJ) < 1e-9

    def test_grows_with_radius(self, emm6):
        spec = emm_spec(0.3)
        med = []
        for r in (0.05, 0.1, 0.2):
            rep = ps.validate_invariants(spec, emm6, ps.sample_ball(emm6.shift, r, 8, seed=4), 1.0)
            med.append(rep.median_I)
        assert med[0] < med[1] < med[2]

    def test_threads_do_not_change_result(self, emm6):
        spec = emm_spec(0.3)
        s = ps.sample_ball(emm6.shift, 0.1, 6, seed=5)
        a = ps.validate_invariants(spec, emm6, s, 0.5)
        b = ps.validate_invariants(spec, emm6, s, 0.5, workers=3)
        assert np.array_equal(a.dI, b.dI) and np.array_equal(a.dJ, b.dJ)

    def test_csv(self, emm6, tmp_path):
        rep = ps.validate_invariants(emm_spec(0.3), emm6, ps.sample_ball(emm6.shift, 0.1, 2), 0.2)
        rep.to_csv(tmp_path / "d.csv")
        lines = (tmp_path / "d.csv").read_text().splitlines()
        assert lines[0].split(",")[-3:] == ["dI", "dJ2", "dJ3"] and len(lines) == 3


class TestGlobalize:
    def test_seeds_on_nhim_shell(self, emm6):
        E = emm6.E0 + 0.1
        seeds = ps.nhim_seeds(emm6, E, 10)
        I, J = ps.actions(seeds)
        np.testing.assert_allclose(emm6.K_cnf.evaluate(I, [J[:, 0], J[:, 1]]), E, atol=1e-13)
        assert np.all(seeds[:, 0] == 0) and np.all(seeds[:, 3] == 0)

    @pytest.mark.parametrize("branch", ["W_u_f", "W_s_b"])
    def test_branches_leave_neighbourhood(self, emm6, branch):
        spec = emm_spec(0.3)
        E = emm6.E0 + 0.05
        out = ps.globalize_manifold(spec, emm6, E, branch, 1e-3, 4, 12.0)
        assert len(out) == 4
        for m in out:
            assert abs(spec.hamiltonian.value(m.seed) - E) < 1e-4
            assert m.escaped
        # the physical reaction coordinate follows sign(q1 - p1): both branches live on the product side
        assert all(m.trajectory.z[-1][0] > 0 for m in out)
        if branch == "W_s_b":
            assert out[0].trajectory.t[-1] == pytest.approx(-12.0)

    def test_unstable_seed_direction(self, emm6):
        out = ps.globalize_manifold(emm_spec(0.3), emm6, emm6.E0 + 0.05, "W_u_f", 1e-3, 1, 1.0)
        assert out[0].seed_nf[0] == 1e-3 and out[0].seed_nf[3] == 0.0

    def test_empty_nhim(self, emm6):
        with pytest.raises(DomainError):
            ps.globalize_manifold(emm_spec(0.3), emm6, emm6.E0 - 0.1, "W_u_f", 1e-3, 2, 1.0)

    def test_unknown_branch(self, emm6):
        with pytest.raises(StructuralError):
            ps.globalize_manifold(emm_spec(0.3), emm6, emm6.E0 + 0.1, "W_x", 1e-3, 2, 1.0)

import math

import numpy as np
import pytest

from congafem.assembly import assemble_maxwell_system, assemble_moments, assemble_poisson_system
from congafem.derham import HOM, INHOM, build_derham
from congafem.errors import (
    ConfigurationError,
    IllPosedError,
    InstabilityError,
    SingularMatrixError,
)
from congafem.geometry import builtin_domain
from congafem.solvers import (
    SOURCE_MODES,
    HarmonicBasis,
    SeparableSource,
    eig_curlcurl,
    harmonic_basis,
    initial_curl_potential,
    l2_error,
    mass_norm,
    maxwell_leapfrog,
    observed_order,
    relative_eigenvalue_error,
    solve_magnetostatic,
    solve_maxwell_harmonic,
    solve_poisson,
)
from congafem.sources import Pulse, PulseCurrent, sinsin_poisson


@pytest.fixture(scope="module")
def annulus():
    return build_derham(builtin_domain("four_patch_annulus"), 2, 4)


@pytest.fixture(scope="module")
def square():
    return build_derham(builtin_domain("two_patch_square"), 2, 4)


def test_metrics():
    assert relative_eigenvalue_error(2.0, 2.002) == pytest.approx(0.002 / 2.002)
    assert relative_eigenvalue_error(4.0, 2.0) == pytest.approx(0.5)
    assert observed_order(1e-2, 1e-2 / 8) == pytest.approx(3.0)
    assert math.isnan(observed_order(0.0, 0.0))


class TestPoisson:
    def test_manufactured_rate(self):
        phi, f = sinsin_poisson()
        errs = []
        for N in (4, 8):
            ops = build_derham(builtin_domain("pi_square"), 3, N)
            errs.append(l2_error(solve_poisson(assemble_poisson_system(ops, f=f)), phi)[1])
        assert errs[1] < 1e-4
        assert observed_order(*errs) > 3.5

    def test_zero_data(self, square):
        phi = solve_poisson(assemble_poisson_system(square))
        assert np.all(phi.coeffs == 0)

    def test_constant_boundary_data(self, annulus):
        phi = solve_poisson(assemble_poisson_system(annulus, bc=INHOM, g=lambda x, y: 1.0 + 0 * x))
        np.testing.assert_allclose(phi.coeffs, 1.0, atol=1e-10)

    def test_homogeneous_part_conforming(self, annulus):
        sys_ = assemble_poisson_system(annulus, alpha=7.0, f=lambda x, y: np.exp(x))
        phi, rep, defect = solve_poisson(sys_, return_report=True)
        assert rep.converged and defect <= 1e-9


class TestMaxwell:
    def test_zero_solution(self, square):
        u = solve_maxwell_harmonic(assemble_maxwell_system(square, 1.3))
        assert np.all(u.coeffs == 0)

    def test_alpha_independence(self, annulus):
        J = lambda x, y: (np.sin(y), np.cos(x))
        u1 = solve_maxwell_harmonic(assemble_maxwell_system(annulus, 1.1, 1.0, J=J)).coeffs
        u2 = solve_maxwell_harmonic(assemble_maxwell_system(annulus, 1.1, 1e3, J=J)).coeffs
        M1 = annulus.mass(1)
        assert mass_norm(M1, u1 - u2) < 1e-8 * mass_norm(M1, u1)

    def test_resonance_is_ill_posed(self, square):
        lam = eig_curlcurl(square).nonzero()[0]
        with pytest.raises(IllPosedError):
            solve_maxwell_harmonic(assemble_maxwell_system(square, math.sqrt(lam)))


class TestEigen:
    def test_conforming_modes(self, annulus):
        res = eig_curlcurl(annulus)
        assert res.conformity_defect <= 1e-9
        assert np.all(np.diff(res.eigenvalues) >= 0)
        assert len(res.eigenvectors) == annulus.V1.dim

    def test_hodge_mode_contains_curl_spectrum(self, square):
        # the penalty only decouples the jump space as alpha grows: O(1/alpha) shift
        cc = eig_curlcurl(square).nonzero()[:4]
        gaps = []
        for alpha in (1e2, 1e4):
            hp = eig_curlcurl(square, mode="hodge_penalized", alpha=alpha).eigenvalues
            gaps.append(max(np.min(np.abs(hp - lam)) / lam for lam in cc))
        assert gaps[1] < 2e-5 and gaps[1] < gaps[0] / 50

    def test_unknown_mode(self, square):
        with pytest.raises(ConfigurationError):
            eig_curlcurl(square, mode="bogus")


class TestHarmonic:
    def test_square_empty(self, square):
        assert len(harmonic_basis(square, INHOM)) == 0

    @pytest.mark.parametrize("bc", [HOM, INHOM])
    def test_annulus_one_field(self, annulus, bc):
        H = harmonic_basis(annulus, bc)
        assert len(H) == 1
        h = H.vectors[:, 0]
        assert mass_norm(annulus.mass(1), h) == pytest.approx(1.0, rel=1e-10)
        assert np.linalg.norm(annulus.C @ annulus.P(1, bc) @ h) <= 1e-9

    def test_alpha_positive(self, annulus):
        with pytest.raises(ConfigurationError):
            harmonic_basis(annulus, alpha=0.0)


class TestMagnetostatic:
    J = staticmethod(lambda x, y: np.exp(-((np.hypot(x, y) - 1.5) / 0.2) ** 2))

    def test_zero_current(self, annulus):
        r = solve_magnetostatic(annulus, "pseudo_vacuum")
        assert r.diagnostics["B_norm"] == 0
        assert np.all(r.p.coeffs == 0) and np.all(r.z == 0)

    @pytest.mark.parametrize("bc,pbc", [("pseudo_vacuum", HOM), ("metallic", INHOM)])
    def test_curl_characterization(self, annulus, bc, pbc):
        r = solve_magnetostatic(annulus, bc, 1.0, 1.0, self.J)
        CP = annulus.C @ annulus.P(1, pbc)
        m = assemble_moments(annulus.V2, self.J, annulus.quad)
        res = CP.T @ (annulus.mass(2) @ (annulus.C @ r.B.coeffs) - m)
        assert np.linalg.norm(res) <= 1e-9 * np.linalg.norm(CP.T @ m)
        assert r.diagnostics["n_harmonic"] == 1

    def test_alpha_independence(self, annulus):
        b1 = solve_magnetostatic(annulus, "pseudo_vacuum", 1, 1, self.J).B.coeffs
        b2 = solve_magnetostatic(annulus, "pseudo_vacuum", 100, 100, self.J).B.coeffs
        M1 = annulus.mass(1)
        assert mass_norm(M1, b1 - b2) < 1e-7 * mass_norm(M1, b1)

    def test_missing_harmonic_constraint(self, annulus):
        empty = HarmonicBasis(np.zeros((annulus.V1.dim, 0)), annulus.V1, HOM, np.array([]))
        with pytest.raises(SingularMatrixError):
            solve_magnetostatic(annulus, "pseudo_vacuum", 1, 1, self.J, harmonic=empty)

    def test_bad_configuration(self, annulus):
        with pytest.raises(ConfigurationError):
            solve_magnetostatic(annulus, "vacuum")
        with pytest.raises(ConfigurationError):
            solve_magnetostatic(annulus, "metallic", alpha0=-1.0)
        H = harmonic_basis(annulus, HOM)
        with pytest.raises(ConfigurationError):
            solve_magnetostatic(annulus, "metallic", harmonic=H)


@pytest.fixture(scope="module")
def deformed():
    return build_derham(builtin_domain("deformed_square"), 2, 4)


class TestLeapfrog:
    def test_pulse_invariants(self, deformed):
        E0 = initial_curl_potential(deformed, Pulse(0.5, 0.5, 0.05).psi)
        state, tr = maxwell_leapfrog(deformed, E0, n_steps=200)
        assert len(tr) == 200 == state.step
        assert np.ptp(tr.pseudo_energy) <= 1e-12 * tr.pseudo_energy[0]
        assert tr.gauss_E.max() < 1e-11
        assert np.all(np.diff(tr.time) > 0)
        assert np.all(np.isfinite(state.E.coeffs)) and np.all(np.isfinite(state.B.coeffs))
        assert tr.dt == pytest.approx(0.8 * 2 / tr.curl_norm)

    def test_final_time(self, deformed):
        state, tr = maxwell_leapfrog(deformed, np.zeros(deformed.V1.dim), T=0.1)
        assert state.t >= 0.1 and state.t - 0.1 < tr.dt

    @pytest.mark.parametrize("mode", SOURCE_MODES[1:])
    def test_gauss_law_with_source(self, deformed, mode):
        pc = PulseCurrent(Pulse(0.5, 0.5, 0.05))
        J0, J1, c = pc.spatial_parts()
        src = SeparableSource([(J0, lambda t: np.ones_like(np.asarray(t, float))), (J1, c)])
        chg = SeparableSource([(pc.pulse.laplacian, lambda t: np.sin(pc.omega * np.asarray(t)) / pc.omega)])
        _, tr = maxwell_leapfrog(deformed, np.zeros(deformed.V1.dim), source=src, charge=chg,
                                 n_steps=150, source_mode=mode, source_quad=16)
        assert tr.gauss_E.max() < 1e-11

    def test_unstable_step_detected(self, deformed):
        E0 = np.random.default_rng(0).standard_normal(deformed.V1.dim)
        _, tr = maxwell_leapfrog(deformed, E0, n_steps=1)
        with pytest.raises(InstabilityError):
            maxwell_leapfrog(deformed, E0, n_steps=500, dt=2.2 / tr.curl_norm)

    def test_bad_arguments(self, deformed):
        E0 = np.zeros(deformed.V1.dim)
        with pytest.raises(ConfigurationError):
            maxwell_leapfrog(deformed, E0, n_steps=1, cfl=1.0)
        with pytest.raises(ConfigurationError):
            maxwell_leapfrog(deformed, E0, T=1.0, n_steps=1)
        with pytest.raises(ConfigurationError):
            maxwell_leapfrog(deformed, E0[:-1], n_steps=1)
        src = SeparableSource.constant(lambda x, y: (0 * x, 0 * y))
        with pytest.raises(ConfigurationError):
            maxwell_leapfrog(deformed, E0, source=src, n_steps=1, source_mode="nope")

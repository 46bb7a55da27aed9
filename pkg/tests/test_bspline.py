import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from congafem.bspline import (
    Flavor,
    KnotVector,
    UnivariateSplineSpace,
    basis_matrix,
    eval_basis,
    greville_points,
    histopolation_matrix,
    interpolation_matrix,
    univariate_incidence,
)
from congafem.errors import ConfigurationError, DomainError


def cox_de_boor(t, p, i, x):
    """Plain recursive definition, right-continuous except at the last knot."""
    if p == 0:
        if t[i] <= x < t[i + 1]:
            return 1.0
        # left limit at the right end of the domain
        if x == t[-1] and t[i] < t[i + 1] == t[-1]:
            return 1.0
        return 0.0
    out = 0.0
    if t[i + p] > t[i]:
        out += (x - t[i]) / (t[i + p] - t[i]) * cox_de_boor(t, p - 1, i, x)
    if t[i + p + 1] > t[i + 1]:
        out += (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) * cox_de_boor(t, p - 1, i + 1, x)
    return out


def full_values(space, x):
    first, vals = eval_basis(space, x)
    out = np.zeros(space.dim)
    out[first: first + vals.size] = vals
    return out


class TestKnotVector:
    def test_uniform(self):
        kv = KnotVector.uniform(2, 2)
        np.testing.assert_array_equal(kv.knots, [0, 0, 0, 0.5, 1, 1, 1])
        assert kv.n_basis == 4
        assert kv.ncells == 2

    @pytest.mark.parametrize("knots", [
        [0, 0, 0.3, 1, 1],          # not symmetric
        [0, 0.1, 0.5, 1, 1],        # not open
        [0, 0, 0.5, 0.5, 1, 1],     # repeated interior knot
        [0, 0, 0.6, 0.4, 1, 1],     # decreasing
    ])
    def test_invalid(self, knots):
        with pytest.raises(ConfigurationError):
            KnotVector(1, knots)

    def test_bad_degree(self):
        with pytest.raises(ConfigurationError):
            KnotVector.uniform(0, 3)


class TestEvalBasis:
    def test_hat_midpoint(self):
        space = UnivariateSplineSpace(KnotVector(1, [0, 0, 1, 1]))
        first, vals = eval_basis(space, 0.5)
        assert first == 0
        np.testing.assert_allclose(vals, [0.5, 0.5])

    def test_against_recursion(self):
        kv = KnotVector(2, [0, 0, 0, 0.5, 1, 1, 1])
        space = UnivariateSplineSpace(kv)
        expected = [cox_de_boor(kv.knots, 2, i, 0.25) for i in range(4)]
        np.testing.assert_allclose(full_values(space, 0.25), expected, atol=1e-15)

    @pytest.mark.parametrize("p,N", [(1, 3), (2, 4), (3, 5), (4, 2)])
    def test_recursion_many_points(self, p, N):
        kv = KnotVector.uniform(p, N)
        space = UnivariateSplineSpace(kv)
        for x in np.concatenate([[0.0, 1.0], np.random.default_rng(0).random(20)]):
            expected = [cox_de_boor(kv.knots, p, i, x) for i in range(space.dim)]
            np.testing.assert_allclose(full_values(space, x), expected, atol=1e-14)

    def test_m_spline_is_scaled_lower_degree(self):
        kv = KnotVector.uniform(3, 4)
        t = kv.knots
        space = UnivariateSplineSpace(kv, Flavor.M)
        for x in [0.0, 0.1, 0.5, 0.77, 1.0]:
            expected = [3 / (t[i + 4] - t[i + 1]) * cox_de_boor(t, 2, i + 1, x)
                        for i in range(space.dim)]
            np.testing.assert_allclose(full_values(space, x), expected, atol=1e-13)

    def test_outside_domain(self):
        space = UnivariateSplineSpace(KnotVector.uniform(2, 3))
        with pytest.raises(DomainError):
            eval_basis(space, 1.5)
        with pytest.raises(DomainError):
            eval_basis(space, -1e-3)

    @pytest.mark.parametrize("p", [1, 2, 3, 4, 5])
    @pytest.mark.parametrize("N", [2, 4, 8, 16])
    def test_partition_of_unity(self, p, N):
        space = UnivariateSplineSpace(KnotVector.uniform(p, N))
        x = np.random.default_rng(p * 100 + N).random(1000)
        sums = np.asarray(basis_matrix(space, x).sum(axis=1)).ravel()
        np.testing.assert_allclose(sums, 1.0, atol=1e-13)

    @pytest.mark.parametrize("p", [1, 2, 3])
    def test_m_splines_integrate_to_one(self, p):
        space = UnivariateSplineSpace(KnotVector.uniform(p, 5), Flavor.M)
        x, w = np.polynomial.legendre.leggauss(20)
        total = np.zeros(space.dim)
        br = space.knot_vector.breakpoints
        for a, b in zip(br[:-1], br[1:]):
            pts = a + (b - a) * (x + 1) / 2
            total += (b - a) / 2 * w @ basis_matrix(space, pts).toarray()
        np.testing.assert_allclose(total, 1.0, atol=1e-13)


class TestGreville:
    def test_quadratic(self):
        z = greville_points(KnotVector(2, [0, 0, 0, 0.5, 1, 1, 1])).points
        np.testing.assert_allclose(z, [0, 0.25, 0.75, 1])

    def test_linear_equals_knots(self):
        z = greville_points(KnotVector(1, [0, 0, 0.5, 1, 1])).points
        np.testing.assert_allclose(z, [0, 0.5, 1])

    def test_symmetry(self):
        z = greville_points(KnotVector.uniform(3, 8)).points
        np.testing.assert_allclose(z, 1 - z[::-1], atol=0)


class TestCollocation:
    def test_interpolation_linear(self):
        kv = KnotVector.uniform(1, 2)
        mat = interpolation_matrix(UnivariateSplineSpace(kv), greville_points(kv))
        np.testing.assert_allclose(mat.sum(axis=1), 1.0)
        np.testing.assert_allclose(mat, np.eye(3), atol=1e-15)

    def test_interpolation_endpoint_row(self):
        kv = KnotVector.uniform(2, 2)
        mat = interpolation_matrix(UnivariateSplineSpace(kv), greville_points(kv))
        np.testing.assert_allclose(mat[0], [1, 0, 0, 0])

    def test_interpolation_banded_and_nonsingular(self):
        kv = KnotVector.uniform(3, 8)
        mat = interpolation_matrix(UnivariateSplineSpace(kv), greville_points(kv))
        assert np.linalg.det(mat) > 0
        i, j = np.nonzero(np.abs(mat) > 0)
        assert np.max(np.abs(i - j)) <= 3

    def test_histopolation_linear(self):
        kv = KnotVector.uniform(1, 2)
        mat = histopolation_matrix(UnivariateSplineSpace(kv, Flavor.M), greville_points(kv))
        # zeta = (0, 0.5, 1) and D_j = 2 on cell j: integrals are 1 on the diagonal
        np.testing.assert_allclose(mat, np.eye(2), atol=1e-15)

    @pytest.mark.parametrize("p,N", [(1, 4), (2, 3), (3, 8), (4, 5)])
    def test_histopolation_column_sums(self, p, N):
        kv = KnotVector.uniform(p, N)
        mat = histopolation_matrix(UnivariateSplineSpace(kv, Flavor.M), greville_points(kv))
        np.testing.assert_allclose(mat.sum(axis=0), 1.0, atol=1e-13)

    def test_histopolation_nonsingular(self):
        kv = KnotVector.uniform(3, 8)
        mat = histopolation_matrix(UnivariateSplineSpace(kv, Flavor.M), greville_points(kv))
        assert abs(np.linalg.det(mat)) > 0

    def test_histopolation_against_fine_quadrature(self):
        kv = KnotVector.uniform(3, 5)
        z = greville_points(kv).points
        space = UnivariateSplineSpace(kv, Flavor.M)
        mat = histopolation_matrix(space, greville_points(kv))
        x, w = np.polynomial.legendre.leggauss(40)
        for i in range(z.size - 1):
            a, b = z[i], z[i + 1]
            # integrand is only piecewise polynomial: use composite fine rule
            sub = np.linspace(a, b, 201)
            acc = np.zeros(space.dim)
            for lo, hi in zip(sub[:-1], sub[1:]):
                pts = lo + (hi - lo) * (x + 1) / 2
                acc += (hi - lo) / 2 * w @ basis_matrix(space, pts).toarray()
            np.testing.assert_allclose(mat[i], acc, atol=1e-6)

    def test_wrong_flavor(self):
        kv = KnotVector.uniform(2, 3)
        with pytest.raises(ConfigurationError):
            interpolation_matrix(UnivariateSplineSpace(kv, Flavor.M), greville_points(kv))


class TestIncidence:
    def test_small(self):
        kv = KnotVector(1, [0, 0, 0.5, 1, 1])
        np.testing.assert_array_equal(univariate_incidence(kv).toarray(), [[-1, 1, 0], [0, -1, 1]])

    def test_constants(self):
        kv = KnotVector.uniform(3, 8)
        assert not np.any(univariate_incidence(kv) @ np.ones(kv.n_basis))

    def test_finite_differences(self):
        kv = KnotVector.uniform(3, 8)
        rng = np.random.default_rng(1)
        c = rng.standard_normal(kv.n_basis)
        d = univariate_incidence(kv) @ c
        N = UnivariateSplineSpace(kv)
        M = UnivariateSplineSpace(kv, Flavor.M)
        h = 1e-3
        # keep the 5-point stencil inside one knot span, where the spline is a cubic
        x = rng.uniform(0, 1, 200)
        x = x[np.abs(x * 8 - np.round(x * 8)) > 2.5 * h * 8][:50]
        f = lambda s: basis_matrix(N, s) @ c
        fd = (f(x - 2 * h) - 8 * f(x - h) + 8 * f(x + h) - f(x + 2 * h)) / (12 * h)
        np.testing.assert_allclose(basis_matrix(M, x) @ d, fd, atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(p=st.integers(1, 5), N=st.integers(1, 12), seed=st.integers(0, 2**32 - 1))
def test_interpolation_round_trip(p, N, seed):
    kv = KnotVector.uniform(p, N)
    space = UnivariateSplineSpace(kv)
    grid = greville_points(kv)
    c = np.random.default_rng(seed).standard_normal(space.dim)
    values = basis_matrix(space, grid.points) @ c
    np.testing.assert_allclose(np.linalg.solve(interpolation_matrix(space, grid), values), c,
                               atol=1e-10 * max(1.0, np.abs(c).max()))


@settings(max_examples=30, deadline=None)
@given(p=st.integers(1, 5), N=st.integers(1, 12), seed=st.integers(0, 2**32 - 1))
def test_derivative_exactness(p, N, seed):
    """Incidence followed by M-basis evaluation equals the analytic derivative."""
    kv = KnotVector.uniform(p, N)
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(kv.n_basis)
    x = rng.random(1000)
    t = kv.knots
    # derivative via the textbook formula on the degree p-1 basis
    q = p * (c[1:] - c[:-1]) / (t[p + 1: p + kv.n_basis] - t[1: kv.n_basis])
    lower = UnivariateSplineSpace(KnotVector(p - 1, t[1:-1])) if p > 1 else None
    if lower is None:
        ref = (basis_matrix(UnivariateSplineSpace(kv, Flavor.M), x) @ (c[1:] - c[:-1]))
        expected = np.array([q[np.searchsorted(t[1:-1], xi, "right") - 1
                               if xi < 1 else kv.n_basis - 2] for xi in x])
        np.testing.assert_allclose(ref, expected, atol=1e-10)
        return
    expected = basis_matrix(lower, x) @ q
    got = basis_matrix(UnivariateSplineSpace(kv, Flavor.M), x) @ (univariate_incidence(kv) @ c)
    np.testing.assert_allclose(got, expected, atol=1e-10 * max(1, np.abs(expected).max()))

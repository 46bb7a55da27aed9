"""Univariate B-spline machinery.

Open symmetric knot vectors, normalized B-splines ``N`` of degree ``p`` and
Curry-Schoenberg M-splines ``D`` of degree ``p-1``, Greville grids and the
collocation blocks (interpolation and histopolation) that build the
tensor-product change-of-basis matrices.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, DomainError

__all__ = [
    "KnotVector",
    "Flavor",
    "UnivariateSplineSpace",
    "InterpolationGrid",
    "gauss_legendre",
    "eval_basis",
    "basis_matrix",
    "greville_points",
    "interpolation_matrix",
    "histopolation_matrix",
    "univariate_incidence",
    "interval_quadrature",
]

_TOL = 1e-12


def gauss_legendre(n):
    """Gauss-Legendre nodes and weights on ``[0, 1]``."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass(frozen=True, eq=False)
class KnotVector:
    """Open, symmetric knot vector on ``[0, 1]``.

    Parameters
    ----------
    degree : int
        Spline degree ``p >= 1``.
    knots : array_like
        Knots ``xi_0 <= ... <= xi_{n+p}``.
    """

    degree: int
    knots: np.ndarray

    def __post_init__(self):
        p = int(self.degree)
        t = np.asarray(self.knots, dtype=float).copy()
        t.setflags(write=False)
        object.__setattr__(self, "degree", p)
        object.__setattr__(self, "knots", t)
        if p < 1:
            raise ConfigurationError(f"degree must be >= 1, got {p}")
        if t.ndim != 1 or t.size < 2 * p + 2:
            raise ConfigurationError("knot vector too short for the degree")
        if np.any(np.diff(t) < 0):
            raise ConfigurationError("knots must be nondecreasing")
        if np.any(t[: p + 1] != 0.0) or np.any(t[-p - 1:] != 1.0):
            raise ConfigurationError("knot vector must be open on [0, 1]")
        inner = t[p:-p]
        if np.any(np.diff(inner) <= 0):
            raise ConfigurationError("interior knots must be strictly increasing")
        if np.max(np.abs(t - (1.0 - t[::-1]))) > _TOL:
            raise ConfigurationError("knot vector must be symmetric")

    @classmethod
    def uniform(cls, degree, ncells):
        """Open knot vector with ``ncells`` uniform cells."""
        if int(ncells) < 1:
            raise ConfigurationError(f"number of cells must be >= 1, got {ncells}")
        br = np.linspace(0.0, 1.0, int(ncells) + 1)
        return cls(degree, np.concatenate([np.zeros(degree), br, np.ones(degree)]))

    @property
    def n_basis(self):
        return self.knots.size - self.degree - 1

    @property
    def ncells(self):
        return self.n_basis - self.degree

    @property
    def breakpoints(self):
        return self.knots[self.degree: self.knots.size - self.degree]

    def __eq__(self, other):
        return (isinstance(other, KnotVector) and self.degree == other.degree
                and np.array_equal(self.knots, other.knots))

    def __hash__(self):
        return hash((self.degree, self.knots.tobytes()))


class Flavor(Enum):
    N = "N_degree_p"
    M = "M_degree_pm1"


@dataclass(frozen=True)
class UnivariateSplineSpace:
    """B-spline (``Flavor.N``) or M-spline (``Flavor.M``) space on a knot vector."""

    knot_vector: KnotVector
    flavor: Flavor = Flavor.N

    @property
    def degree(self):
        p = self.knot_vector.degree
        return p if self.flavor is Flavor.N else p - 1

    @property
    def dim(self):
        n = self.knot_vector.n_basis
        return n if self.flavor is Flavor.N else n - 1

    def _eval_knots(self):
        t = self.knot_vector.knots
        return t if self.flavor is Flavor.N else t[1:-1]

    def _scaling(self):
        kv = self.knot_vector
        if self.flavor is Flavor.N:
            return np.ones(self.dim)
        p, t = kv.degree, kv.knots
        i = np.arange(self.dim)
        return p / (t[i + p + 1] - t[i + 1])


@dataclass(frozen=True, eq=False)
class InterpolationGrid:
    """Symmetric grid ``0 = zeta_0 < ... < zeta_{n-1} = 1``."""

    points: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.points, dtype=float).copy()
        z.setflags(write=False)
        object.__setattr__(self, "points", z)
        if z.ndim != 1 or z.size < 2:
            raise ConfigurationError("grid needs at least two points")
        if np.any(np.diff(z) <= 0):
            raise ConfigurationError("grid points must be strictly increasing")
        if abs(z[0]) > _TOL or abs(z[-1] - 1.0) > _TOL:
            raise ConfigurationError("grid must start at 0 and end at 1")
        if np.max(np.abs(z - (1.0 - z[::-1]))) > _TOL:
            raise ConfigurationError("grid must be symmetric")

    def __len__(self):
        return self.points.size


def _find_span(t, p, x):
    """Knot span index ``i`` with ``t[i] <= x < t[i+1]`` (left limit at 1)."""
    n = t.size - p - 1
    span = np.searchsorted(t, x, side="right") - 1
    return np.clip(span, p, n - 1)


def _nonzero_basis(t, p, x):
    """Cox-de Boor recursion at points ``x``, vectorized.

    Returns
    -------
    span : ndarray of int, shape (m,)
    values : ndarray, shape (m, p+1)
        ``values[:, r]`` is the basis function ``span - p + r`` at ``x``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    span = _find_span(t, p, x)
    m = x.size
    vals = np.zeros((m, p + 1))
    vals[:, 0] = 1.0
    left = np.zeros((m, p + 1))
    right = np.zeros((m, p + 1))
    for j in range(1, p + 1):
        left[:, j] = x - t[span + 1 - j]
        right[:, j] = t[span + j] - x
        saved = np.zeros(m)
        for r in range(j):
            temp = vals[:, r] / (right[:, r + 1] + left[:, j - r])
            vals[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        vals[:, j] = saved
    return span, vals


def _check_domain(x):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(~np.isfinite(x)) or np.any(x < 0.0) or np.any(x > 1.0):
        raise DomainError("evaluation points must lie in [0, 1]")
    return x


def eval_basis(space, x):
    """Basis functions of ``space`` that may be nonzero at ``x``.

    Parameters
    ----------
    space : UnivariateSplineSpace
    x : float
        Point in ``[0, 1]``.

    Returns
    -------
    first_index : int
        Index of the first returned basis function.
    values : ndarray
        Values of functions ``first_index, first_index+1, ...``.
    """
    x = _check_domain(x)
    if x.size != 1:
        raise DomainError("eval_basis takes a single point; use basis_matrix")
    q = space.degree
    span, vals = _nonzero_basis(space._eval_knots(), q, x)
    first = int(span[0]) - q
    return first, vals[0] * space._scaling()[first: first + q + 1]


def basis_matrix(space, x):
    """Sparse collocation matrix ``B[i, j] = phi_j(x_i)``, shape ``(len(x), dim)``."""
    x = _check_domain(x)
    q = space.degree
    span, vals = _nonzero_basis(space._eval_knots(), q, x)
    cols = (span - q)[:, None] + np.arange(q + 1)[None, :]
    rows = np.repeat(np.arange(x.size), q + 1)
    vals = vals * space._scaling()[cols]
    return sp.csr_matrix((vals.ravel(), (rows, cols.ravel())), shape=(x.size, space.dim))


def greville_points(kv):
    """Greville abscissae ``zeta_i = (xi_{i+1} + ... + xi_{i+p}) / p``."""
    p, t = kv.degree, kv.knots
    n = kv.n_basis
    z = np.array([t[i + 1: i + p + 1].sum() / p for i in range(n)])
    # Exact endpoint values and symmetry up to roundoff.
    z = 0.5 * (z + (1.0 - z[::-1]))
    z[0], z[-1] = 0.0, 1.0
    return InterpolationGrid(z)


def interval_quadrature(kv, grid, nquad):
    """Quadrature on each grid interval ``[zeta_i, zeta_{i+1}]``.

    Each interval is split at the interior knots it contains and every piece
    receives ``nquad`` Gauss points.

    Returns
    -------
    points : ndarray, shape (m,)
    weights : ndarray, shape (m,)
    W : scipy.sparse.csr_matrix, shape (len(grid)-1, m)
        Integration matrix: ``(W @ f(points))[i]`` approximates the integral
        of ``f`` over interval ``i``.
    """
    z = grid.points
    br = kv.breakpoints
    xg, wg = gauss_legendre(nquad)
    pts, wts, owner = [], [], []
    for i in range(z.size - 1):
        a, b = z[i], z[i + 1]
        inner = br[(br > a + _TOL) & (br < b - _TOL)]
        cuts = np.concatenate([[a], inner, [b]])
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            pts.append(lo + (hi - lo) * xg)
            wts.append((hi - lo) * wg)
            owner.append(np.full(nquad, i))
    pts = np.concatenate(pts)
    wts = np.concatenate(wts)
    owner = np.concatenate(owner)
    W = sp.csr_matrix((wts, (owner, np.arange(pts.size))), shape=(z.size - 1, pts.size))
    return pts, wts, W


def interpolation_matrix(space, grid):
    """Dense interpolation matrix ``I[i, j] = N_j(zeta_i)``."""
    if space.flavor is not Flavor.N:
        raise ConfigurationError("interpolation needs the N flavor")
    if len(grid) != space.dim:
        raise ConfigurationError("grid size does not match the space dimension")
    mat = basis_matrix(space, grid.points).toarray()
    _check_nonsingular(mat, "interpolation")
    return mat


def histopolation_matrix(space, grid, nquad=None):
    """Dense histopolation matrix ``H[i, j] = int_{zeta_i}^{zeta_{i+1}} D_j``."""
    if space.flavor is not Flavor.M:
        raise ConfigurationError("histopolation needs the M flavor")
    if len(grid) - 1 != space.dim:
        raise ConfigurationError("grid size does not match the space dimension")
    kv = space.knot_vector
    nq = kv.degree + 1 if nquad is None else int(nquad)
    pts, _, W = interval_quadrature(kv, grid, nq)
    mat = (W @ basis_matrix(space, pts)).toarray()
    _check_nonsingular(mat, "histopolation")
    return mat


def _check_nonsingular(mat, what):
    s = np.linalg.svd(mat, compute_uv=False)
    if s[-1] <= 1e-13 * s[0]:
        raise ConfigurationError(f"{what} matrix is singular (grid not unisolvent)")


def univariate_incidence(kv):
    """Derivative incidence matrix ``D`` of shape ``(n-1, n)``.

    ``D[i, i] = -1`` and ``D[i, i+1] = 1``, so that ``D @ c`` are the M-spline
    coefficients of the derivative of the spline with B-spline coefficients ``c``.
    """
    n = kv.n_basis
    return sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n), format="csr")

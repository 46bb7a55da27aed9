"""Linear algebra kernels: CG, dense generalized eigensolver, power method, indefinite solves.

Every routine recomputes its residual after the fact; reports never rely
on quantities tracked inside a recursion.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericalError, SingularMatrixError

__all__ = [
    "LinearSolveReport",
    "as_operator",
    "cg_solve",
    "dense_generalized_symmetric_eig",
    "power_method_spectral_radius",
    "symmetric_indefinite_solve",
    "sparse_direct_solve",
    "DENSE_LIMIT",
]

DENSE_LIMIT = 6000


@dataclass(frozen=True)
class LinearSolveReport:
    """Outcome of an iterative or direct solve."""

    iterations: int
    residual: float
    status: str

    @property
    def converged(self):
        return self.status == "converged"


def as_operator(A):
    """Matrix-vector product callable for arrays, sparse matrices or callables."""
    if callable(A) and not hasattr(A, "shape"):
        return A
    if isinstance(A, spla.LinearOperator):
        return A.matvec
    return lambda x: A @ x


def _relres(matvec, x, b):
    nb = np.linalg.norm(b)
    r = np.linalg.norm(matvec(x) - b)
    return r / nb if nb > 0 else r


def cg_solve(A, b, tol=1e-12, max_iter=None, x0=None):
    """Conjugate gradients for a symmetric positive definite operator.

    Parameters
    ----------
    A : ndarray, sparse matrix, LinearOperator or callable
    b : ndarray
    tol : float
        Target relative residual ``||A x - b|| / ||b||``.
    max_iter : int, optional
        Defaults to ``10 * len(b)``.

    Returns
    -------
    x : ndarray
    report : LinearSolveReport
    """
    b = np.asarray(b, dtype=float)
    if not np.all(np.isfinite(b)):
        raise NumericalError("non-finite right-hand side")
    matvec = as_operator(A)
    n = b.size
    max_iter = 10 * n if max_iter is None else int(max_iter)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    nb = np.linalg.norm(b)
    if nb == 0:
        return np.zeros(n), LinearSolveReport(0, 0.0, "converged")
    r = b - matvec(x)
    d = r.copy()
    rr = r @ r
    it = 0
    while it < max_iter and np.sqrt(rr) > tol * nb:
        Ad = matvec(d)
        dAd = d @ Ad
        if not np.isfinite(dAd):
            raise NumericalError("non-finite values in conjugate gradients")
        if dAd <= 0:
            break
        a = rr / dAd
        x += a * d
        r -= a * Ad
        rr_new = r @ r
        d = r + (rr_new / rr) * d
        rr = rr_new
        it += 1
        if it % 50 == 0:
            r = b - matvec(x)
            rr = r @ r
    if not np.all(np.isfinite(x)):
        raise NumericalError("non-finite iterate in conjugate gradients")
    res = _relres(matvec, x, b)
    return x, LinearSolveReport(it, float(res), "converged" if res <= tol else "not_converged")


def dense_generalized_symmetric_eig(A, B, check=True):
    """All eigenpairs of ``A v = lambda B v`` with ``B`` symmetric positive definite.

    Returns
    -------
    w : ndarray
        Eigenvalues in ascending order.
    V : ndarray
        B-orthonormal eigenvectors (columns).
    """
    A = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    B = B.toarray() if sp.issparse(B) else np.asarray(B, dtype=float)
    A = 0.5 * (A + A.T)
    B = 0.5 * (B + B.T)
    try:
        w, V = sla.eigh(A, B)
    except sla.LinAlgError as exc:
        raise NumericalError(f"generalized eigensolver failed (B not SPD?): {exc}") from exc
    if check:
        nA = np.linalg.norm(A, 2) if A.shape[0] <= 400 else np.abs(A).sum(axis=1).max()
        res = np.linalg.norm(A @ V - (B @ V) * w, axis=0)
        if np.any(res > 1e-9 * max(nA, 1e-300)):
            raise NumericalError(f"eigenpair residual {res.max():.3e} exceeds 1e-9 ||A||")
        orth = np.abs(V.T @ B @ V - np.eye(V.shape[1])).max()
        if orth > 1e-10:
            raise NumericalError(f"eigenvectors not B-orthonormal ({orth:.3e})")
    return w, V


def power_method_spectral_radius(M, tol=1e-10, max_iter=10000, inner=None, x0=None, seed=0, block_size=1):
    """Largest eigenvalue of an operator with nonnegative real spectrum.

    Parameters
    ----------
    M : ndarray, sparse matrix, LinearOperator or callable
    tol : float
        Stop when successive estimates differ by less than ``tol`` relative.
    inner : matrix, optional
        SPD matrix ``H`` such that ``M`` is ``H``-self-adjoint; Rayleigh
        quotients in the ``H`` inner product then converge twice as fast.
    x0 : ndarray, optional
        Start vector, or ``(n, block_size)`` start block (default: seeded random).
    block_size : int
        Number of vectors iterated together. With ``block_size > 1`` the
        block is ``H``-orthonormalized and Rayleigh-Ritz projected each step,
        so the rate depends on ``lambda_{b+1} / lambda_1`` and clustered
        leading eigenvalues do not stall the iteration.

    Returns
    -------
    value : float
    report : LinearSolveReport
    """
    matvec = as_operator(M)
    if block_size < 1:
        raise ValueError("block_size must be positive")
    if x0 is None:
        n = M.shape[0] if hasattr(M, "shape") else None
        if n is None:
            raise ValueError("x0 is required for callable operators")
        X = np.random.default_rng(seed).standard_normal((n, block_size))
    else:
        X = np.array(x0, dtype=float).reshape(len(x0), -1)
        if X.shape[1] < block_size:
            extra = np.random.default_rng(seed).standard_normal((X.shape[0], block_size - X.shape[1]))
            X = np.hstack([X, extra])
    H = (lambda v: v) if inner is None else as_operator(inner)
    HX = _apply_columns(H, X)

    def orthonormalize(Y, HY):
        G = Y.T @ HY
        G = 0.5 * (G + G.T)
        w, Q = np.linalg.eigh(G)
        keep = w > w.max() * 1e-14 if w.max() > 0 else np.zeros(w.shape, bool)
        S = Q[:, keep] / np.sqrt(w[keep])
        return Y @ S, HY @ S

    X, HX = orthonormalize(X, HX)
    if X.shape[1] == 0:
        return 0.0, LinearSolveReport(0, 0.0, "converged")
    lam_old = np.inf
    lam = 0.0
    for it in range(1, max_iter + 1):
        Y = _apply_columns(matvec, X)
        if not np.all(np.isfinite(Y)):
            raise NumericalError("non-finite values in power iteration")
        T = HX.T @ Y
        theta, Q = np.linalg.eigh(0.5 * (T + T.T))
        lam = float(theta[-1])
        if lam <= 0.0 and not np.any(Y):
            return 0.0, LinearSolveReport(it, 0.0, "converged")
        # Ritz vectors of the image, largest first
        Y = Y @ Q[:, ::-1]
        X, HX = orthonormalize(Y, _apply_columns(H, Y))
        if X.shape[1] == 0:
            return 0.0, LinearSolveReport(it, 0.0, "converged")
        if abs(lam - lam_old) <= tol * abs(lam):
            return lam, LinearSolveReport(it, abs(lam - lam_old) / abs(lam), "converged")
        lam_old = lam
    return lam, LinearSolveReport(max_iter, abs(lam - lam_old) / max(abs(lam), 1e-300), "not_converged")


def _apply_columns(op, X):
    return np.column_stack([op(X[:, j]) for j in range(X.shape[1])])


def symmetric_indefinite_solve(A, b, tol=1e-10, pivot_tol=1e-13):
    """Dense direct solve of a symmetric (possibly indefinite) system.

    LU with partial pivoting; a pivot ratio ``min|U_ii| / max|U_ii|`` below
    ``pivot_tol`` is reported as singular. Iterative refinement is applied
    until the relative residual is below ``tol``.
    """
    A = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    with warnings.catch_warnings():
        # singularity is reported through the pivot ratio below
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(A, check_finite=True)
    d = np.abs(np.diag(lu))
    ratio = d.min() / d.max() if d.max() > 0 else 0.0
    if ratio < pivot_tol:
        raise SingularMatrixError(
            f"matrix is numerically singular: pivot ratio {ratio:.3e} "
            f"(smallest pivot {d.min():.3e} at position {int(np.argmin(d))})", ratio)
    x = sla.lu_solve((lu, piv), b)
    nb = np.linalg.norm(b)
    for _ in range(5):
        r = b - A @ x
        if nb == 0 or np.linalg.norm(r) <= tol * nb * 1e-2:
            break
        x = x + sla.lu_solve((lu, piv), r)
    res = _relres(lambda v: A @ v, x, b)
    if res > tol:
        raise NumericalError(f"indefinite solve residual {res:.3e} exceeds {tol:.1e}")
    return x


def sparse_direct_solve(A, b, pivot_tol=1e-12, tol=1e-10):
    """Sparse LU solve with a pivot-ratio singularity check.

    Returns
    -------
    x : ndarray
    report : LinearSolveReport
    """
    A = sp.csc_matrix(A)
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise SingularMatrixError(f"sparse factorization failed: {exc}", 0.0) from exc
    d = np.abs(lu.U.diagonal())
    ratio = d.min() / d.max() if d.max() > 0 else 0.0
    if ratio < pivot_tol:
        raise SingularMatrixError(f"matrix is numerically singular: pivot ratio {ratio:.3e}", ratio)
    x = lu.solve(b)
    for _ in range(3):
        r = b - A @ x
        if np.linalg.norm(r) <= 1e-2 * tol * np.linalg.norm(b):
            break
        x = x + lu.solve(r)
    res = _relres(lambda v: A @ v, x, b)
    status = "converged" if res <= tol else "not_converged"
    return x, LinearSolveReport(1, float(res), status)

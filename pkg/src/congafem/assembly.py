"""Quadrature-based assembly of mapped mass matrices, moments and stabilized systems."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .bspline import basis_matrix, gauss_legendre
from .derham import (
    HOM,
    INHOM,
    apply_collocation_inverse,
    dof_classes,
    geometric_dofs,
)
from .errors import AssemblyError, ConfigurationError, NumericalError

__all__ = [
    "QuadratureRule",
    "MassMatrix",
    "AssembledSystem",
    "assemble_mass",
    "apply_mass_inverse",
    "assemble_moments",
    "assemble_stabilization",
    "boundary_lifting",
    "assemble_poisson_system",
    "assemble_maxwell_system",
    "assemble_hodge_laplace",
    "assemble_harmonic_mass",
    "dump_coo",
]


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre rule with ``order`` points on every knot span of ``[0, 1]``."""

    breakpoints: np.ndarray
    order: int

    @classmethod
    def for_knots(cls, kv, order=None):
        return cls(np.asarray(kv.breakpoints), kv.degree + 1 if order is None else int(order))

    @property
    def points_weights(self):
        x, w = gauss_legendre(self.order)
        a, b = self.breakpoints[:-1, None], self.breakpoints[1:, None]
        return (a + (b - a) * x).ravel(), ((b - a) * w).ravel()


class _PatchQuadrature:
    """Tensor quadrature data on one patch."""

    def __init__(self, space, k, nquad):
        ref = space.ref
        x, w = QuadratureRule.for_knots(ref.kv, nquad).points_weights
        self.x, self.w1 = x, w
        X, Y = np.meshgrid(x, x, indexing="ij")
        self.X, self.Y = X.ravel(), Y.ravel()
        self.w = np.outer(w, w).ravel()
        F = space.topology.patches[k]
        self.F = F
        D = F.jacobian(self.X, self.Y)
        self.D = D
        self.J = D[..., 0, 0] * D[..., 1, 1] - D[..., 0, 1] * D[..., 1, 0]
        if np.any(self.J <= 0) or not np.all(np.isfinite(self.J)):
            raise AssemblyError(f"patch {k}: non-positive Jacobian at quadrature points")
        self.B = {fl: basis_matrix(ref.space(fl), x) for fl in (ref.space_N.flavor, ref.space_M.flavor)}

    def collocation(self, comp):
        fx, fy = comp
        return sp.kron(self.B[fx], self.B[fy], format="csr")

    def physical_points(self):
        return self.F(self.X, self.Y)


@dataclass
class MassMatrix:
    """Block-diagonal mass matrix with cached patchwise Cholesky factors."""

    matrix: sp.csr_matrix
    blocks: list
    patch_dim: int
    _factors: list = field(default=None, repr=False)

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, other):
        return self.matrix @ other

    def toarray(self):
        return self.matrix.toarray()

    def factors(self):
        if self._factors is None:
            facs = []
            for k, blk in enumerate(self.blocks):
                try:
                    facs.append(sla.cho_factor(blk.toarray(), lower=True))
                except sla.LinAlgError as exc:
                    raise AssemblyError(f"mass block of patch {k} is not positive definite") from exc
            self._factors = facs
        return self._factors

    def solve(self, b, check=True):
        """Apply the inverse patch by patch."""
        b = np.asarray(b, dtype=float)
        x = np.empty_like(b)
        n = self.patch_dim
        for k, fac in enumerate(self.factors()):
            x[k * n:(k + 1) * n] = sla.cho_solve(fac, b[k * n:(k + 1) * n])
        if check:
            r = self.matrix @ x - b
            nb = np.linalg.norm(b)
            if nb > 0 and np.linalg.norm(r) > 1e-12 * nb:
                # one step of iterative refinement before giving up
                x -= self.solve(r, check=False)
                r = self.matrix @ x - b
                if np.linalg.norm(r) > 1e-12 * nb:
                    raise NumericalError(f"mass solve residual {np.linalg.norm(r) / nb:.3e} exceeds 1e-12")
        return x

    def inverse_dense(self):
        return sla.block_diag(*[sla.cho_solve(f, np.eye(self.patch_dim)) for f in self.factors()])


def apply_mass_inverse(mass, b):
    """``M^{-1} b`` through the cached patchwise factorization."""
    return mass.solve(b)


def _metric_weights(q, form):
    """Pointwise weights (including quadrature weights) of the mapped mass."""
    if form == 0:
        return q.w * q.J
    if form == 2:
        return q.w / q.J
    # (DF^T DF)^{-1} J = adj(DF^T DF) / J
    G = np.einsum("...ki,...kj->...ij", q.D, q.D)
    adj = np.stack([np.stack([G[:, 1, 1], -G[:, 0, 1]], -1),
                    np.stack([-G[:, 1, 0], G[:, 0, 0]], -1)], -2)
    return (q.w / q.J)[:, None, None] * adj


def assemble_mass(space, nquad=None):
    """Mass matrix of the pushed-forward broken basis.

    Weights are ``J_F`` (``l = 0``), ``(DF^T DF)^{-1} J_F`` (``l = 1``) and
    ``1 / J_F`` (``l = 2``), integrated on the reference patch with
    ``nquad`` (default ``p + 1``) Gauss points per knot span.
    """
    blocks = []
    for k in range(space.n_patches):
        q = _PatchQuadrature(space, k, nquad)
        Bs = [q.collocation(c) for c in space.components]
        wt = _metric_weights(q, space.form)
        if space.form == 1:
            rows = []
            for a in range(2):
                rows.append([Bs[a].T @ sp.diags(wt[:, a, b]) @ Bs[b] for b in range(2)])
            blk = sp.bmat(rows, format="csr")
        else:
            blk = (Bs[0].T @ sp.diags(wt) @ Bs[0]).tocsr()
        blk = (0.5 * (blk + blk.T)).tocsr()
        blk.sort_indices()
        blocks.append(blk)
    mat = sp.block_diag(blocks, format="csr")
    mat.sort_indices()
    return MassMatrix(mat, blocks, space.patch_dim)


def assemble_moments(space, f, nquad=None):
    """Moments ``m_i = <f, B_i>`` against the pushed-forward primal basis.

    ``f(x, y)`` returns a scalar array (``l = 0, 2``) or a pair (``l = 1``).
    """
    out = np.empty(space.dim)
    for k in range(space.n_patches):
        q = _PatchQuadrature(space, k, nquad)
        x, y = q.physical_points()
        sl = space.patch_slice(k)
        if space.form == 1:
            fx, fy = f(x, y)
            fx = np.broadcast_to(np.asarray(fx, float), x.shape)
            fy = np.broadcast_to(np.asarray(fy, float), x.shape)
            D = q.D
            # (DF^{-1} f) J = adj(DF) f
            g1 = D[:, 1, 1] * fx - D[:, 0, 1] * fy
            g2 = -D[:, 1, 0] * fx + D[:, 0, 0] * fy
            parts = [q.collocation(c).T @ (q.w * g) for c, g in zip(space.components, (g1, g2))]
            out[sl] = np.concatenate(parts)
        else:
            vals = np.broadcast_to(np.asarray(f(x, y), float), x.shape)
            wt = q.w * q.J if space.form == 0 else q.w
            out[sl] = q.collocation(space.components[0]).T @ (wt * vals)
    return out


def assemble_stabilization(P, M):
    """Jump stabilization ``(I - P)^T M (I - P)``."""
    M = M.matrix if isinstance(M, MassMatrix) else M
    IP = (sp.identity(P.shape[0], format="csr") - P).tocsr()
    S = (IP.T @ M @ IP).tocsr()
    S = (0.5 * (S + S.T)).tocsr()
    S.sort_indices()
    return S


def boundary_lifting(space, g):
    """Coefficients of the discrete lifting of boundary data.

    The geometric DoFs of ``g`` are kept on boundary edges only (nodes for
    ``l = 0``, tangential edge integrals for ``l = 1``), then mapped to the
    B-spline basis.
    """
    if space.form not in (0, 1):
        raise ConfigurationError("liftings exist for l = 0 and l = 1 only")
    sigma = geometric_dofs(space, g)
    _, boundary = dof_classes(space)
    mask = np.zeros(space.dim, bool)
    mask[list(boundary)] = True
    sigma[~mask] = 0.0
    return apply_collocation_inverse(space, sigma)


@dataclass
class AssembledSystem:
    """Symmetric system with the data needed to rebuild the full solution."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    kind: str
    params: dict
    space: object
    ops: object
    projection: sp.csr_matrix
    lifting: np.ndarray = None

    def metadata(self):
        return {"kind": self.kind, **self.params, **self.ops.metadata()}


def _sym(A):
    A = (0.5 * (A + A.T)).tocsr()
    A.sort_indices()
    return A


def _check_alpha(alpha):
    if alpha == 0:
        warnings.warn("alpha = 0: the system keeps the jump-space kernel and is singular",
                      RuntimeWarning, stacklevel=3)


def assemble_poisson_system(ops, alpha=1.0, bc=HOM, f=None, g=None):
    """Stabilized CONGA Poisson system.

    ``A = (G P)^T M1 (G P) + alpha (I - P)^T M0 (I - P)`` with the homogeneous
    projection ``P``; ``rhs = P^T (m(f) - G^T M1 G Pbar phi_g)`` where
    ``phi_g`` lifts the boundary data ``g`` (``bc="inhomogeneous"``).
    """
    _check_alpha(alpha)
    V0 = ops.V0
    P = ops.P(0, HOM)
    M0, M1 = ops.mass(0), ops.mass(1)
    GP = (ops.G @ P).tocsr()
    A = GP.T @ M1.matrix @ GP + alpha * assemble_stabilization(P, M0)
    rhs = np.zeros(V0.dim) if f is None else assemble_moments(V0, f, ops.quad)
    lifting = None
    if bc == INHOM:
        if g is None:
            raise ConfigurationError("inhomogeneous Poisson problem needs boundary data g")
        lifting = ops.P(0, INHOM) @ boundary_lifting(V0, g)
        rhs = rhs - ops.G.T @ (M1.matrix @ (ops.G @ lifting))
    elif bc != HOM:
        raise ConfigurationError(f"unknown bc {bc!r}")
    rhs = P.T @ rhs
    return AssembledSystem(_sym(A), rhs, "poisson", {"alpha": alpha, "bc": bc}, V0, ops, P, lifting)


def assemble_maxwell_system(ops, omega, alpha=1.0, bc=HOM, J=None, g=None):
    """Stabilized CONGA time-harmonic Maxwell system.

    ``A = P^T (-omega^2 M1 + C^T M2 C) P + alpha (I - P)^T M1 (I - P)``;
    ``rhs = P^T (m(J) + (omega^2 M1 - C^T M2 C) Pbar u_g)`` where ``u_g``
    lifts the tangential trace of ``g``.
    """
    _check_alpha(alpha)
    V1 = ops.V1
    P = ops.P(1, HOM)
    M1, M2 = ops.mass(1), ops.mass(2)
    C = ops.C
    K = -omega ** 2 * M1.matrix + C.T @ M2.matrix @ C
    A = P.T @ K @ P + alpha * assemble_stabilization(P, M1)
    rhs = np.zeros(V1.dim) if J is None else assemble_moments(V1, J, ops.quad)
    lifting = None
    if bc == INHOM:
        if g is None:
            raise ConfigurationError("inhomogeneous Maxwell problem needs boundary data g")
        lifting = ops.P(1, INHOM) @ boundary_lifting(V1, g)
        rhs = rhs - K @ lifting
    elif bc != HOM:
        raise ConfigurationError(f"unknown bc {bc!r}")
    rhs = P.T @ rhs
    return AssembledSystem(_sym(A), rhs, "maxwell", {"omega": omega, "alpha": alpha, "bc": bc},
                           V1, ops, P, lifting)


def assemble_hodge_laplace(ops, form, bc=HOM, alpha=1.0):
    """Left matrix of the stabilized Hodge-Laplace pencil ``A u = lambda M u``.

    For ``form = 0`` this is the Poisson matrix (sparse). For ``form = 1`` it is
    ``(C P1)^T M2 C P1 + M1 G P0 M0^{-1} (G P0)^T M1 + alpha (I - P1)^T M1 (I - P1)``,
    materialized densely.

    Returns
    -------
    A : sparse matrix (form 0) or ndarray (form 1)
    M : MassMatrix
    """
    if form == 0:
        P0 = ops.P(0, bc)
        GP = (ops.G @ P0).tocsr()
        A = GP.T @ ops.mass(1).matrix @ GP + alpha * assemble_stabilization(P0, ops.mass(0))
        return _sym(A), ops.mass(0)
    if form != 1:
        raise ConfigurationError("Hodge-Laplace pencils are provided for form 0 and 1")
    P0, P1 = ops.P(0, bc), ops.P(1, bc)
    M0, M1, M2 = ops.mass(0), ops.mass(1), ops.mass(2)
    CP = (ops.C @ P1).tocsr()
    GP = (ops.G @ P0).tocsr()
    curl = (CP.T @ M2.matrix @ CP).toarray()
    W = (GP.T @ M1.matrix).toarray()            # (G P0)^T M1
    graddiv = W.T @ M0.solve(W)
    A = curl + graddiv + alpha * assemble_stabilization(P1, M1).toarray()
    return 0.5 * (A + A.T), M1


def assemble_harmonic_mass(M1, harmonic):
    """Rectangular mass ``M^{1,H} = M1 h`` for harmonic coefficient columns ``h``."""
    M = M1.matrix if isinstance(M1, MassMatrix) else M1
    h = np.asarray(harmonic, dtype=float).reshape(M.shape[0], -1)
    return np.asarray(M @ h)


def dump_coo(matrix, path):
    """Write ``row col value`` lines (0-based indices, 17 significant digits)."""
    A = sp.coo_matrix(matrix)
    order = np.lexsort((A.col, A.row))
    with open(path, "w") as fh:
        fh.write(f"# {A.shape[0]} {A.shape[1]} {A.nnz}\n")
        for i, j, v in zip(A.row[order], A.col[order], A.data[order]):
            fh.write(f"{i} {j} {v:.17g}\n")

"""Broken spline de Rham sequence ``V0 --grad--> V1 --curl--> V2`` on multipatch domains.

Coefficient layout
------------------
Degrees of freedom are stored patch by patch. Inside a patch every vector
component is a tensor-product array flattened in C order with the ``x``
index first; for ``l = 1`` the first component (degrees ``(p-1, p)``)
precedes the second one (degrees ``(p, p-1)``).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .bspline import (
    Flavor,
    KnotVector,
    UnivariateSplineSpace,
    basis_matrix,
    greville_points,
    histopolation_matrix,
    interpolation_matrix,
    interval_quadrature,
    univariate_incidence,
)
from .errors import ConfigurationError, ConsistencyError

__all__ = [
    "ReferenceComplex",
    "BrokenFemSpace",
    "FemField",
    "DeRhamOperatorSet",
    "build_spaces",
    "build_derham",
    "assemble_incidence",
    "assemble_conforming_projection",
    "geometric_dofs",
    "primal_projection",
    "dual_projection_coeffs",
    "HOM",
    "INHOM",
]

HOM = "homogeneous"
INHOM = "inhomogeneous"


def _check_bc(bc):
    if bc not in (HOM, INHOM):
        raise ConfigurationError(f"bc must be {HOM!r} or {INHOM!r}, got {bc!r}")
    return bc


class ReferenceComplex:
    """Univariate ingredients shared by all patches and form degrees.

    Parameters
    ----------
    p : int
        Degree of the ``V0`` splines.
    N : int
        Number of cells per patch and direction.
    dof_quad : int, optional
        Gauss points per knot span for the edge and cell functionals of
        user-supplied fields. Defaults to ``max(p + 1, 8)``: the integrands
        are not polynomial on curved patches and ``p + 1`` points leave
        quadrature errors around ``1e-8`` at coarse resolution.
    """

    def __init__(self, p, N, dof_quad=None):
        p, N = int(p), int(N)
        if p < 1 or N < 1:
            raise ConfigurationError(f"need p >= 1 and N >= 1, got p={p}, N={N}")
        self.p, self.N = p, N
        self.kv = KnotVector.uniform(p, N)
        self.n = self.kv.n_basis
        self.space_N = UnivariateSplineSpace(self.kv, Flavor.N)
        self.space_M = UnivariateSplineSpace(self.kv, Flavor.M)
        self.grid = greville_points(self.kv)
        self.interp = interpolation_matrix(self.space_N, self.grid)
        self.histo = histopolation_matrix(self.space_M, self.grid)
        self.interp_inv = np.linalg.inv(self.interp)
        self.histo_inv = np.linalg.inv(self.histo)
        self._lu = {Flavor.N: sla.lu_factor(self.interp), Flavor.M: sla.lu_factor(self.histo)}
        self.incidence = univariate_incidence(self.kv)
        self.dof_quad = max(p + 1, 8) if dof_quad is None else int(dof_quad)
        pts, wts, W = interval_quadrature(self.kv, self.grid, self.dof_quad)
        self.edge_points, self.edge_weights, self.edge_integration = pts, wts, W

    def space(self, flavor):
        return self.space_N if flavor is Flavor.N else self.space_M

    def collocation(self, flavor):
        return self.interp if flavor is Flavor.N else self.histo

    def collocation_inv(self, flavor):
        return self.interp_inv if flavor is Flavor.N else self.histo_inv

    def solve_collocation(self, flavor, rhs):
        return sla.lu_solve(self._lu[flavor], rhs)


_N, _M = Flavor.N, Flavor.M
_COMPONENTS = {0: [(_N, _N)], 1: [(_M, _N), (_N, _M)], 2: [(_M, _M)]}


class BrokenFemSpace:
    """Broken tensor-spline space ``V^l_h`` over a multipatch topology."""

    def __init__(self, form, topology, ref):
        if form not in (0, 1, 2):
            raise ConfigurationError(f"form degree must be 0, 1 or 2, got {form}")
        self.form = form
        self.topology = topology
        self.ref = ref
        self.components = _COMPONENTS[form]
        self.shapes = [tuple(ref.space(f).dim for f in comp) for comp in self.components]
        sizes = [a * b for a, b in self.shapes]
        self.component_offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.patch_dim = int(self.component_offsets[-1])
        self.n_patches = topology.n_patches
        self.dim = self.n_patches * self.patch_dim

    @property
    def p(self):
        return self.ref.p

    @property
    def N(self):
        return self.ref.N

    @property
    def ncomp(self):
        return len(self.components)

    def patch_slice(self, k):
        return slice(k * self.patch_dim, (k + 1) * self.patch_dim)

    def index(self, k, comp, i1, i2):
        """Flat index of the DoF ``(i1, i2)`` of component ``comp`` on patch ``k``."""
        n2 = self.shapes[comp][1]
        return k * self.patch_dim + self.component_offsets[comp] + np.asarray(i1) * n2 + np.asarray(i2)

    def split(self, coeffs, k):
        """Component arrays of patch ``k`` as 2D views."""
        block = np.asarray(coeffs)[self.patch_slice(k)]
        return [block[self.component_offsets[c]: self.component_offsets[c + 1]].reshape(self.shapes[c])
                for c in range(self.ncomp)]

    def __repr__(self):
        return f"BrokenFemSpace(form={self.form}, K={self.n_patches}, p={self.p}, N={self.N}, dim={self.dim})"


def build_spaces(topology, p, N, dof_quad=None):
    """Broken spaces ``(V0, V1, V2)`` of the grad-curl sequence.

    Dimensions are ``K n^2``, ``2 K n (n-1)`` and ``K (n-1)^2`` with ``n = N + p``.
    """
    if int(p) < 1 or int(N) < 1:
        raise ConfigurationError(f"need p >= 1 and N >= 1, got p={p}, N={N}")
    ref = ReferenceComplex(p, N, dof_quad)
    return tuple(BrokenFemSpace(l, topology, ref) for l in range(3))


# -- fields -------------------------------------------------------------------

@dataclass
class FemField:
    """Field with coefficients in the primal B-spline basis of ``space``."""

    space: BrokenFemSpace
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.dim,):
            raise ConfigurationError(f"coefficient vector has shape {self.coeffs.shape}, "
                                     f"expected ({self.space.dim},)")

    def evaluate_reference(self, k, xh, yh):
        """Reference-patch component values at points ``(xh, yh)``.

        Returns an array of shape ``(ncomp,) + xh.shape``.
        """
        xh, yh = np.broadcast_arrays(np.asarray(xh, float), np.asarray(yh, float))
        shape = xh.shape
        xf, yf = xh.ravel(), yh.ravel()
        ref = self.space.ref
        out = []
        for (fx, fy), C in zip(self.space.components, self.space.split(self.coeffs, k)):
            Bx = basis_matrix(ref.space(fx), xf)
            By = basis_matrix(ref.space(fy), yf)
            out.append(np.asarray((Bx @ C) * By.toarray()).sum(axis=1).reshape(shape))
        return np.array(out)

    def evaluate(self, k, xh, yh):
        """Physical field values on patch ``k`` at reference points.

        Scalars for ``l = 0, 2`` (shape of ``xh``); vectors for ``l = 1``
        (trailing axis of length 2).
        """
        xh, yh = np.broadcast_arrays(np.asarray(xh, float), np.asarray(yh, float))
        vals = self.evaluate_reference(k, xh, yh)
        F = self.space.topology.patches[k]
        if self.space.form == 0:
            return vals[0]
        D = F.jacobian(xh, yh)
        J = D[..., 0, 0] * D[..., 1, 1] - D[..., 0, 1] * D[..., 1, 0]
        if self.space.form == 2:
            return vals[0] / J
        # DF^{-T} v
        v1, v2 = vals
        return np.stack([(D[..., 1, 1] * v1 - D[..., 1, 0] * v2) / J,
                         (-D[..., 0, 1] * v1 + D[..., 0, 0] * v2) / J], -1)

    def __add__(self, other):
        return FemField(self.space, self.coeffs + other.coeffs)

    def __sub__(self, other):
        return FemField(self.space, self.coeffs - other.coeffs)


# -- incidence ----------------------------------------------------------------

def _reference_incidence(ref):
    D = sp.csr_matrix(ref.incidence, dtype=np.int64)
    n = ref.n
    In = sp.identity(n, dtype=np.int64, format="csr")
    Im = sp.identity(n - 1, dtype=np.int64, format="csr")
    G = sp.vstack([sp.kron(D, In), sp.kron(In, D)])
    C = sp.hstack([-sp.kron(Im, D), sp.kron(D, Im)])
    return G.tocsr(), C.tocsr()


def assemble_incidence(spaces):
    """Patch-diagonal incidence matrices ``(G, C)`` with integer entries."""
    V0 = spaces[0]
    G, C = _reference_incidence(V0.ref)
    K = V0.n_patches
    G = sp.block_diag([G] * K, format="csr", dtype=np.int64)
    C = sp.block_diag([C] * K, format="csr", dtype=np.int64)
    G.eliminate_zeros()
    C.eliminate_zeros()
    G.sort_indices()
    C.sort_indices()
    return G, C


# -- collocation (change of basis) -------------------------------------------

def _reference_collocation(space):
    ref = space.ref
    blocks = [sp.kron(sp.csr_matrix(ref.collocation(fx)), sp.csr_matrix(ref.collocation(fy)))
              for fx, fy in space.components]
    return sp.block_diag(blocks, format="csr")


def collocation_matrix(space):
    """Block-diagonal matrix ``K^l`` mapping B-spline to geometric coefficients."""
    Kh = _reference_collocation(space)
    Kh.eliminate_zeros()
    return sp.block_diag([Kh] * space.n_patches, format="csr")


def apply_collocation_inverse(space, sigma):
    """Patchwise solve ``K^l beta = sigma`` (``sigma`` may have extra trailing columns)."""
    sigma = np.asarray(sigma, dtype=float)
    vec = sigma.ndim == 1
    S = sigma.reshape(space.dim, -1)
    out = np.empty_like(S)
    ref = space.ref
    for k in range(space.n_patches):
        base = k * space.patch_dim
        for c, (fx, fy) in enumerate(space.components):
            n1, n2 = space.shapes[c]
            lo = base + space.component_offsets[c]
            blk = S[lo: lo + n1 * n2].reshape(n1, n2, -1)
            # A X B^T = S  ->  X = A^{-1} S B^{-T}
            tmp = ref.solve_collocation(fx, blk.reshape(n1, -1)).reshape(n1, n2, -1)
            tmp = ref.solve_collocation(fy, tmp.transpose(1, 0, 2).reshape(n2, -1))
            out[lo: lo + n1 * n2] = tmp.reshape(n2, n1, -1).transpose(1, 0, 2).reshape(n1 * n2, -1)
    return out.ravel() if vec else out


def _inverse_columns(space, local):
    """Columns ``local`` of the reference block ``(K^l)^{-1}`` as a dense array."""
    ref = space.ref
    out = np.zeros((space.patch_dim, len(local)))
    for j, idx in enumerate(local):
        c = int(np.searchsorted(space.component_offsets, idx, side="right") - 1)
        n1, n2 = space.shapes[c]
        r = idx - space.component_offsets[c]
        i1, i2 = divmod(int(r), n2)
        fx, fy = space.components[c]
        col = np.outer(ref.collocation_inv(fx)[:, i1], ref.collocation_inv(fy)[:, i2]).ravel()
        out[space.component_offsets[c]: space.component_offsets[c + 1], j] = col
    return out


# -- conforming projection ----------------------------------------------------

class _SignedUnionFind:
    def __init__(self, n):
        self.parent = {}
        self.sign = {}

    def find(self, a):
        if a not in self.parent:
            self.parent[a], self.sign[a] = a, 1
            return a, 1
        s = 1
        path = []
        while self.parent[a] != a:
            path.append(a)
            s *= self.sign[a]
            a = self.parent[a]
        root = a
        # path compression
        acc = s
        for node in path:
            nxt_sign = self.sign[node]
            self.parent[node], self.sign[node] = root, acc
            acc *= nxt_sign
        return root, s

    def union(self, a, b, s):
        """Record ``v_a = s v_b``."""
        ra, sa = self.find(a)
        rb, sb = self.find(b)
        if ra == rb:
            if sa != s * sb:
                raise ConsistencyError(f"conflicting signs for DoFs {a} and {b}")
            return
        self.parent[ra], self.sign[ra] = rb, sa * s * sb

    def classes(self):
        out = {}
        for a in list(self.parent):
            r, s = self.find(a)
            out.setdefault(r, []).append((a, s))
        return list(out.values())


def _edge_dofs(space, edge):
    """Flat indices of the DoFs attached to a reference edge, in edge order."""
    n = space.ref.n
    fixed = edge.side * (n - 1)
    if space.form == 0:
        j = np.arange(n)
        return space.index(edge.patch, 0, fixed, j) if edge.axis == 0 else space.index(edge.patch, 0, j, fixed)
    j = np.arange(n - 1)
    # tangential component runs along the edge direction
    if edge.axis == 0:
        return space.index(edge.patch, 1, fixed, j)
    return space.index(edge.patch, 0, j, fixed)


def dof_classes(space):
    """Geometric equivalence classes of interface DoFs and the boundary DoF set.

    Returns
    -------
    classes : list of list of (int, int)
        Each class lists ``(dof, sign)`` pairs with signs relative to the class.
    boundary : set of int
        DoFs located on boundary edges (tangential DoFs for ``l = 1``).
    """
    if space.form == 2:
        return [], set()
    topo = space.topology
    uf = _SignedUnionFind(space.dim)
    for rec in topo.interfaces:
        a = _edge_dofs(space, rec.minus)
        b = _edge_dofs(space, rec.plus)
        if rec.reversed:
            b = b[::-1]
        sign = 1 if space.form == 0 else rec.eps1
        for i, j in zip(a, b):
            uf.union(int(i), int(j), sign)
    if space.form == 0:
        n = space.ref.n
        for cls in topo.vertex_classes:
            nodes = [int(space.index(k, 0, cx * (n - 1), cy * (n - 1))) for k, (cx, cy) in cls]
            for other in nodes[1:]:
                uf.union(nodes[0], other, 1)
    boundary = set()
    for e in topo.boundary_edges:
        boundary.update(int(i) for i in _edge_dofs(space, e))
    return uf.classes(), boundary


def geometric_projection(space, bc):
    """Conforming projection in the geometric (DoF) basis."""
    _check_bc(bc)
    N = space.dim
    if space.form == 2:
        return sp.identity(N, format="csr")
    classes, boundary = dof_classes(space)
    rows, cols, vals = [], [], []
    touched = np.zeros(N, bool)
    for cls in classes:
        idx = np.array([a for a, _ in cls])
        sgn = np.array([s for _, s in cls], dtype=float)
        touched[idx] = True
        if bc == HOM and any(a in boundary for a in idx):
            continue
        m = len(cls)
        rows.append(np.repeat(idx, m))
        cols.append(np.tile(idx, m))
        vals.append(np.outer(sgn, sgn).ravel() / m)
    if bc == HOM:
        touched[list(boundary)] = True
    free = np.where(~touched)[0]
    rows.append(free)
    cols.append(free)
    vals.append(np.ones(free.size))
    P = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))
    P.sort_indices()
    return P


def assemble_conforming_projection(space, bc, Kmat=None):
    """Conforming projection ``P_B = K^{-1} P K`` in the B-spline basis.

    Parameters
    ----------
    space : BrokenFemSpace
    bc : {"homogeneous", "inhomogeneous"}
        The homogeneous variant also zeroes boundary DoFs.
    Kmat : sparse matrix, optional
        Precomputed collocation matrix of ``space``.
    """
    _check_bc(bc)
    N = space.dim
    if space.form == 2:
        return sp.identity(N, format="csr")
    K = collocation_matrix(space) if Kmat is None else Kmat
    E = (geometric_projection(space, bc) - sp.identity(N, format="csr")).tocsr()
    E.eliminate_zeros()
    EK = (E @ K).tocsr()
    EK.eliminate_zeros()
    active = np.unique(EK.nonzero()[0])
    blocks = [sp.identity(N, format="csr")]
    for k in range(space.n_patches):
        sl = space.patch_slice(k)
        rows = active[(active >= sl.start) & (active < sl.stop)]
        if rows.size == 0:
            continue
        cols = _inverse_columns(space, rows - sl.start)
        update = sp.csr_matrix(cols) @ EK[rows]
        blocks.append(sp.vstack([sp.csr_matrix((sl.start, N)), update,
                                 sp.csr_matrix((N - sl.stop, N))]).tocsr())
    P = blocks[0]
    for b in blocks[1:]:
        P = P + b
    P = P.tocsr()
    P.sort_indices()
    return P


# -- commuting projections ----------------------------------------------------

def _vector_values(field, x, y):
    out = field(x, y)
    fx, fy = out
    return np.broadcast_to(np.asarray(fx, float), x.shape), np.broadcast_to(np.asarray(fy, float), x.shape)


def _scalar_values(field, x, y):
    return np.broadcast_to(np.asarray(field(x, y), float), x.shape)


def geometric_dofs(space, field):
    """Geometric degrees of freedom ``sigma^l(field)``.

    Parameters
    ----------
    space : BrokenFemSpace
    field : callable
        ``field(x, y)`` in physical coordinates; returns an array for
        ``l = 0, 2`` and a pair ``(fx, fy)`` for ``l = 1``.

    Notes
    -----
    ``l = 0``: point values at the mapped Greville nodes.
    ``l = 1``: tangential line integrals along mapped Greville edges, pulled
    back to the reference edge (``int v(F) . DF e_d ds``).
    ``l = 2``: integrals over mapped Greville cells with the ``J_F`` weight.
    """
    ref = space.ref
    z = ref.grid.points
    s, W = ref.edge_points, ref.edge_integration
    out = np.empty(space.dim)
    for k, F in enumerate(space.topology.patches):
        sl = space.patch_slice(k)
        if space.form == 0:
            X, Y = np.meshgrid(z, z, indexing="ij")
            out[sl] = _scalar_values(field, *F(X, Y)).ravel()
        elif space.form == 1:
            # component 1: edges along x at y = zeta_j
            X, Y = np.meshgrid(s, z, indexing="ij")
            D = F.jacobian(X, Y)
            fx, fy = _vector_values(field, *F(X, Y))
            v1 = W @ (fx * D[..., 0, 0] + fy * D[..., 1, 0])
            X, Y = np.meshgrid(z, s, indexing="ij")
            D = F.jacobian(X, Y)
            fx, fy = _vector_values(field, *F(X, Y))
            v2 = (fx * D[..., 0, 1] + fy * D[..., 1, 1]) @ W.T
            out[sl] = np.concatenate([np.asarray(v1).ravel(), np.asarray(v2).ravel()])
        else:
            X, Y = np.meshgrid(s, s, indexing="ij")
            J = F.det(X, Y)
            vals = _scalar_values(field, *F(X, Y)) * J
            out[sl] = np.asarray(W @ (W @ vals).T).T.ravel()
    return out


def primal_projection(space, field):
    """Commuting projection ``Pi^l``: coefficients ``K^{-1} sigma^l(field)``."""
    return FemField(space, apply_collocation_inverse(space, geometric_dofs(space, field)))


def dual_projection_coeffs(space, P, field, nquad=None):
    """Dual-basis coefficients ``P^T m`` of the dual commuting projection.

    ``m_i = <field, B_i>`` are the moments against the pushed-forward primal
    basis. Primal coefficients follow from a mass solve.
    """
    from .assembly import assemble_moments
    return P.T @ assemble_moments(space, field, nquad=nquad)


# -- operator set -------------------------------------------------------------

class DeRhamOperatorSet:
    """Operator matrices of the broken sequence on one topology.

    Matrices are built lazily and cached: incidence ``G`` and ``C``,
    collocation ``K[l]``, conforming projections ``P(l, bc)`` and masses
    ``mass(l)``.

    Parameters
    ----------
    topology : MultipatchTopology
    p, N : int
        Degree and cells per patch direction.
    quad : int, optional
        Gauss points per knot span for mass matrices and moments
        (default ``p + 1``).
    dof_quad : int, optional
        Gauss points per knot span for geometric DoFs of user fields
        (default ``max(p + 1, 8)``).
    """

    def __init__(self, topology, p, N, quad=None, dof_quad=None):
        self.topology = topology
        self.spaces = build_spaces(topology, p, N, dof_quad)
        self.p, self.N = int(p), int(N)
        self.quad = self.p + 1 if quad is None else int(quad)
        self._P = {}
        self._mass = {}

    @property
    def V0(self):
        return self.spaces[0]

    @property
    def V1(self):
        return self.spaces[1]

    @property
    def V2(self):
        return self.spaces[2]

    @cached_property
    def _incidence(self):
        return assemble_incidence(self.spaces)

    @property
    def G(self):
        return self._incidence[0]

    @property
    def C(self):
        return self._incidence[1]

    @cached_property
    def K(self):
        return [collocation_matrix(V) for V in self.spaces]

    def P(self, form, bc=HOM):
        key = (form, _check_bc(bc))
        if key not in self._P:
            self._P[key] = assemble_conforming_projection(self.spaces[form], bc, self.K[form])
        return self._P[key]

    def mass(self, form):
        """Cached :class:`congafem.assembly.MassMatrix` of ``V^form``."""
        if form not in self._mass:
            from .assembly import assemble_mass
            self._mass[form] = assemble_mass(self.spaces[form], nquad=self.quad)
        return self._mass[form]

    def metadata(self):
        return {"p": self.p, "N": self.N, "n_patches": self.topology.n_patches,
                "mass_quadrature_points_per_span": self.quad,
                "dof_quadrature_points_per_span": self.V0.ref.dof_quad,
                "dims": [V.dim for V in self.spaces]}


def build_derham(topology, p, N, quad=None, dof_quad=None):
    """Convenience constructor for :class:`DeRhamOperatorSet`."""
    return DeRhamOperatorSet(topology, p, N, quad=quad, dof_quad=dof_quad)

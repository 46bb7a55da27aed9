"""Problem drivers: Poisson, time-harmonic Maxwell, eigenproblems, magnetostatics, leap-frog Maxwell."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import (
    _PatchQuadrature,
    assemble_harmonic_mass,
    assemble_hodge_laplace,
    assemble_moments,
    assemble_stabilization,
)
from .derham import HOM, INHOM, FemField, apply_collocation_inverse, geometric_dofs
from .errors import (
    ConfigurationError,
    IllPosedError,
    InstabilityError,
    NumericalError,
    SingularMatrixError,
    SpectralGapError,
)
from .linalg import (
    dense_generalized_symmetric_eig,
    power_method_spectral_radius,
    sparse_direct_solve,
    symmetric_indefinite_solve,
)

__all__ = [
    "EigenResult",
    "HarmonicBasis",
    "MagnetostaticResult",
    "TimeDomainState",
    "ConservationTrace",
    "SeparableSource",
    "solve_poisson",
    "solve_maxwell_harmonic",
    "eig_curlcurl",
    "harmonic_basis",
    "solve_magnetostatic",
    "curl_norm_squared",
    "initial_curl_potential",
    "maxwell_leapfrog",
    "l2_error",
    "mass_norm",
    "relative_eigenvalue_error",
    "observed_order",
    "SOURCE_MODES",
]

SOURCE_MODES = ("primal_Pi1", "L2_proj", "dual_tildePi1")


# -- small utilities ----------------------------------------------------------

def mass_norm(M, x):
    M = getattr(M, "matrix", M)
    return float(np.sqrt(max(x @ (M @ x), 0.0)))


def relative_eigenvalue_error(lam, lam_h):
    """``|lam - lam_h| / max(lam, lam_h)``."""
    return abs(lam - lam_h) / max(lam, lam_h)


def observed_order(e_coarse, e_fine, ratio=2.0):
    """Observed convergence order ``log(e_N / e_{rN}) / log(r)``."""
    if e_coarse <= 0 or e_fine <= 0:
        return float("nan")
    return math.log(e_coarse / e_fine) / math.log(ratio)


def l2_error(fem_field, exact, nquad=None):
    """Absolute and relative L2 errors of a field against an analytic function.

    ``exact(x, y)`` returns an array (``l = 0, 2``) or a pair (``l = 1``).
    """
    space = fem_field.space
    nq = space.p + 3 if nquad is None else int(nquad)
    err2 = ref2 = 0.0
    for k in range(space.n_patches):
        q = _PatchQuadrature(space, k, nq)
        X, Y = q.X, q.Y
        vals = fem_field.evaluate(k, X, Y)
        ex = exact(*q.physical_points())
        wJ = q.w * q.J
        if space.form == 1:
            ex = np.stack([np.broadcast_to(e, X.shape) for e in ex], -1)
            err2 += np.sum(wJ * np.sum((vals - ex) ** 2, -1))
            ref2 += np.sum(wJ * np.sum(ex ** 2, -1))
        else:
            ex = np.broadcast_to(ex, X.shape)
            err2 += np.sum(wJ * (vals - ex) ** 2)
            ref2 += np.sum(wJ * ex ** 2)
    err = math.sqrt(err2)
    return err, err / math.sqrt(ref2) if ref2 > 0 else float("nan")


def _conformity_defect(P, M, x):
    nx = mass_norm(M, x)
    if nx == 0:
        return 0.0
    return mass_norm(M, x - P @ x) / nx


# -- Poisson and time-harmonic Maxwell ----------------------------------------

def _direct(system, ill_posed):
    try:
        x, report = sparse_direct_solve(system.matrix, system.rhs)
    except SingularMatrixError as exc:
        if ill_posed:
            raise IllPosedError(f"{system.kind} system is singular: {exc}", exc.pivot_ratio) from exc
        raise
    if not report.converged:
        raise NumericalError(f"{system.kind} solve residual {report.residual:.3e} too large")
    return x, report


def solve_poisson(system, return_report=False):
    """Solve the stabilized Poisson system and add the boundary lifting.

    The homogeneous part must be conforming:
    ``||(I - P) phi0||_M <= 1e-9 ||phi0||_M``.
    """
    x, report = _direct(system, ill_posed=False)
    ops = system.ops
    defect = _conformity_defect(system.projection, ops.mass(0), x)
    if defect > 1e-9:
        raise NumericalError(f"Poisson solution is not conforming (defect {defect:.3e})")
    full = x if system.lifting is None else x + system.lifting
    out = FemField(system.space, full)
    return (out, report, defect) if return_report else out


def solve_maxwell_harmonic(system, return_report=False):
    """Solve the stabilized time-harmonic Maxwell system.

    A singular matrix (pivot ratio below ``1e-12``) means ``omega^2`` is a
    discrete curl-curl eigenvalue and raises :class:`IllPosedError`.
    """
    x, report = _direct(system, ill_posed=True)
    defect = _conformity_defect(system.projection, system.ops.mass(1), x)
    if defect > 1e-9:
        raise NumericalError(f"Maxwell solution is not conforming (defect {defect:.3e})")
    full = x if system.lifting is None else x + system.lifting
    out = FemField(system.space, full)
    return (out, report, defect) if return_report else out


# -- eigenproblems ------------------------------------------------------------

@dataclass
class EigenResult:
    """Generalized eigenpairs with the threshold separating zero modes."""

    eigenvalues: np.ndarray
    vectors: np.ndarray
    space: object
    zero_threshold: float
    conformity_defect: float = 0.0

    @property
    def eigenvectors(self):
        return [FemField(self.space, v) for v in self.vectors.T]

    def nonzero(self):
        return self.eigenvalues[self.eigenvalues > self.zero_threshold]

    def n_zero(self):
        return int(np.sum(self.eigenvalues <= self.zero_threshold))


def eig_curlcurl(ops, mode="conga_generalized", bc=HOM, alpha=1.0, zero_tol=1e-8):
    """Dense curl-curl eigenproblem on ``V1``.

    ``conga_generalized``
        ``(C P)^T M2 (C P) u = lam [P^T M1 P + (I - P)^T M1 (I - P)] u``.
        The kernel is ``grad V0c + (I - P) V1``; nonzero modes are conforming.
    ``hodge_penalized``
        Stabilized Hodge-Laplace pencil with parameter ``alpha``; its
        spectrum contains the curl-curl and the grad-div eigenvalues.
    """
    P = ops.P(1, bc)
    M1 = ops.mass(1)
    if mode == "conga_generalized":
        CP = (ops.C @ P).tocsr()
        A = (CP.T @ ops.mass(2).matrix @ CP).toarray()
        B = (P.T @ M1.matrix @ P).toarray() + assemble_stabilization(P, M1).toarray()
    elif mode == "hodge_penalized":
        A, _ = assemble_hodge_laplace(ops, 1, bc, alpha)
        B = M1.toarray()
    else:
        raise ConfigurationError(f"unknown eigen mode {mode!r}")
    w, V = dense_generalized_symmetric_eig(A, B)
    nz = w > zero_tol
    defect = 0.0
    if mode == "conga_generalized" and np.any(nz):
        D = V[:, nz] - P @ V[:, nz]
        num = np.sqrt(np.einsum("ij,ij->j", D, M1.matrix @ D))
        den = np.sqrt(np.einsum("ij,ij->j", V[:, nz], M1.matrix @ V[:, nz]))
        defect = float(np.max(num / den))
        if defect > 1e-8:
            raise NumericalError(f"nonzero eigenmodes are not conforming (defect {defect:.3e})")
    return EigenResult(w, V, ops.V1, zero_tol, defect)


@dataclass
class HarmonicBasis:
    """M1-orthonormal conforming harmonic fields (coefficient columns)."""

    vectors: np.ndarray
    space: object
    bc: str
    eigenvalues: np.ndarray

    @property
    def fields(self):
        return [FemField(self.space, v) for v in self.vectors.T]

    def __len__(self):
        return self.vectors.shape[1]


def harmonic_basis(ops, bc=HOM, alpha=1.0, zero_tol=1e-8):
    """Kernel of the stabilized Hodge-Laplace pencil on ``V1``.

    Raises
    ------
    SpectralGapError
        If the spectrum has no factor-100 gap around ``zero_tol``.
    """
    if alpha <= 0:
        raise ConfigurationError("harmonic fields need alpha > 0")
    A, M1 = assemble_hodge_laplace(ops, 1, bc, alpha)
    w, V = dense_generalized_symmetric_eig(A, M1.toarray())
    zero = w < zero_tol
    below = w[zero]
    above = w[~zero]
    if (below.size and below.max() > zero_tol / 10) or (above.size and above.min() < 10 * zero_tol):
        raise SpectralGapError(f"no spectral gap around {zero_tol:g}: "
                               f"{below.max() if below.size else None}, {above.min() if above.size else None}")
    H = V[:, zero]
    P = ops.P(1, bc)
    CP = ops.C @ P
    for h in H.T:
        nh = mass_norm(M1, h)
        if np.linalg.norm(CP @ h) > 1e-9 * max(nh, 1.0) or _conformity_defect(P, M1, h) > 1e-10:
            raise NumericalError("harmonic field is not curl-free and conforming")
    return HarmonicBasis(H, ops.V1, bc, w[: min(w.size, H.shape[1] + 5)])


# -- magnetostatics -----------------------------------------------------------

@dataclass
class MagnetostaticResult:
    B: FemField
    p: FemField
    z: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def solve_magnetostatic(ops, bc="pseudo_vacuum", alpha0=1.0, alpha1=1.0, J=None, harmonic=None,
                        check=True):
    """Saddle-point magnetostatic solve with harmonic constraints.

    Parameters
    ----------
    bc : {"pseudo_vacuum", "metallic"}
        Homogeneous (tangential) or metallic (``n . B = 0`` weakly) variant.
        The metallic variant uses the inhomogeneous projections and adds the
        ``M0`` regularization to the first block.
    J : callable
        Scalar current density ``J(x, y)``.
    harmonic : HarmonicBasis, optional
        Computed from the matching sequence when omitted.
    """
    if bc == "pseudo_vacuum":
        pbc = HOM
    elif bc == "metallic":
        pbc = INHOM
        if alpha0 <= 0:
            raise ConfigurationError("metallic variant needs alpha0 > 0")
    else:
        raise ConfigurationError(f"unknown magnetostatic bc {bc!r}")
    if alpha0 == 0 or alpha1 == 0:
        raise ConfigurationError("stabilization parameters must be nonzero")
    if harmonic is None:
        harmonic = harmonic_basis(ops, pbc, alpha=1.0)
    elif harmonic.bc != pbc:
        raise ConfigurationError("harmonic basis built for the other boundary condition")
    P0, P1 = ops.P(0, pbc), ops.P(1, pbc)
    M0, M1, M2 = ops.mass(0), ops.mass(1), ops.mass(2)
    GP = (ops.G @ P0).tocsr()
    CP = (ops.C @ P1).tocsr()
    MH = assemble_harmonic_mass(M1, harmonic.vectors)
    n0, n1, nh = ops.V0.dim, ops.V1.dim, MH.shape[1]
    A00 = alpha0 * assemble_stabilization(P0, M0)
    if bc == "metallic":
        A00 = A00 + M0.matrix
    A10 = M1.matrix @ GP
    A11 = CP.T @ M2.matrix @ CP + alpha1 * assemble_stabilization(P1, M1)
    S = sp.bmat([[A00, A10.T, None],
                 [A10, A11, sp.csr_matrix(MH)],
                 [None, sp.csr_matrix(MH.T), sp.csr_matrix((nh, nh))]], format="csr")
    rhs = np.zeros(n0 + n1 + nh)
    if J is not None:
        rhs[n0:n0 + n1] = CP.T @ assemble_moments(ops.V2, J, ops.quad)
    try:
        x = symmetric_indefinite_solve(S, rhs)
    except SingularMatrixError as exc:
        raise SingularMatrixError(f"magnetostatic saddle matrix is singular "
                                  f"(missing harmonic constraint?): {exc}", exc.pivot_ratio) from exc
    p, B, z = x[:n0], x[n0:n0 + n1], x[n0 + n1:]
    nB = mass_norm(M1, B)
    diag = {
        "p_norm": mass_norm(M0, p),
        "z_norm": float(np.linalg.norm(z)),
        "B_norm": nB,
        "conformity_defect": _conformity_defect(P1, M1, B),
        "harmonic_overlap": float(np.abs(MH.T @ B).max()) if nh else 0.0,
        "n_harmonic": nh,
    }
    if check and nB > 0:
        tol = 1e-8 * nB
        if diag["p_norm"] > tol or diag["z_norm"] > tol:
            raise NumericalError(f"auxiliary unknowns not zero: {diag}")
        if diag["conformity_defect"] > 1e-8 or diag["harmonic_overlap"] > tol:
            raise NumericalError(f"B violates its constraints: {diag}")
    return MagnetostaticResult(FemField(ops.V1, B), FemField(ops.V0, p), z, diag)


# -- time-dependent Maxwell ---------------------------------------------------

@dataclass
class TimeDomainState:
    E: FemField
    B: FemField
    t: float
    step: int


@dataclass
class ConservationTrace:
    """Per-step diagnostics recorded at ``t^n`` for ``n = 0 .. steps-1``."""

    time: np.ndarray
    energy: np.ndarray
    pseudo_energy: np.ndarray
    gauss_E: np.ndarray
    gauss_PE: np.ndarray
    dt: float
    curl_norm: float

    def __len__(self):
        return self.time.size

    def as_columns(self):
        return {"t": self.time, "energy": self.energy, "pseudo_energy": self.pseudo_energy,
                "gauss_E": self.gauss_E, "gauss_PE": self.gauss_PE}


class SeparableSource:
    """Space-time field ``f(t, x, y) = sum_k c_k(t) f_k(x, y)``.

    Spatial moments and DoFs are computed once per term, so stepping costs
    no quadrature.
    """

    def __init__(self, terms):
        self.terms = [(f, c) for f, c in terms]

    @classmethod
    def constant(cls, f):
        return cls([(f, lambda t: np.ones_like(np.asarray(t, float)))])

    def coefficients(self, t):
        return np.array([np.asarray(c(t), float) for _, c in self.terms])

    def averaged_coefficients(self, t0, t1, npts=4):
        x, w = np.polynomial.legendre.leggauss(npts)
        ts = 0.5 * (t0 + t1) + 0.5 * (t1 - t0) * x
        return np.array([0.5 * np.sum(w * np.asarray(c(ts), float)) for _, c in self.terms])


def curl_norm_squared(ops, tol=1e-10, max_iter=20000, seed=0, block_size=4):
    """Power-method estimate of ``||curl_h||^2 = rho(M1^{-1} (C P)^T M2 C P)``.

    A small block is iterated because the top of this spectrum is often a
    nearly degenerate pair, on which a single-vector iteration stalls.
    """
    P = ops.P(1, HOM)
    CP = (ops.C @ P).tocsr()
    M1, M2 = ops.mass(1), ops.mass(2)
    A = (CP.T @ M2.matrix @ CP).tocsr()
    op = lambda v: M1.solve(A @ v, check=False)
    x0 = np.random.default_rng(seed).standard_normal((ops.V1.dim, block_size))
    return power_method_spectral_radius(op, tol=tol, max_iter=max_iter, inner=M1.matrix, x0=x0,
                                        block_size=block_size)


def initial_curl_potential(ops, psi):
    """Discretely divergence-free ``E ~ curl psi`` for a potential vanishing on the boundary.

    ``E = M1^{-1} (C P)^T m2(psi)``, the dual curl of the L2 projection of
    ``psi`` onto ``V2``; it satisfies ``(G P0)^T M1 E = 0`` exactly.
    """
    CP = ops.C @ ops.P(1, HOM)
    return ops.mass(1).solve(CP.T @ assemble_moments(ops.V2, psi, ops.quad))


def _source_projector(ops, mode, source_quad):
    P = ops.P(1, HOM)
    M1 = ops.mass(1)
    V1 = ops.V1
    if mode == "primal_Pi1":
        return lambda f: apply_collocation_inverse(V1, geometric_dofs(V1, f))
    if mode == "L2_proj":
        return lambda f: M1.solve(assemble_moments(V1, f, source_quad))
    if mode == "dual_tildePi1":
        return lambda f: M1.solve(P.T @ assemble_moments(V1, f, source_quad))
    raise ConfigurationError(f"unknown source mode {mode!r}; choose from {SOURCE_MODES}")


def maxwell_leapfrog(ops, E0, B0=None, source=None, charge=None, T=None, n_steps=None,
                     cfl=0.8, source_mode="dual_tildePi1", dt=None, source_quad=12,
                     time_quad=4, power_tol=1e-12):
    """Leap-frog integration of the CONGA Maxwell system with PEC boundary.

    Parameters
    ----------
    E0, B0 : array_like or FemField
        Initial coefficients in ``V1`` and ``V2``.
    source : SeparableSource, optional
        Current density ``J(t)``; time-averaged over each step with
        ``time_quad`` Gauss points.
    charge : SeparableSource, optional
        Charge density ``rho(t)`` entering the Gauss-law diagnostics.
    T, n_steps : float, int
        Final time or number of steps (exactly one is required).
    cfl : float
        ``dt = cfl * 2 / ||curl_h||`` unless ``dt`` is given.
    source_mode : {"primal_Pi1", "L2_proj", "dual_tildePi1"}
    source_quad : int, optional
        Gauss points per knot span for source and charge moments. Discrete
        Gauss-law preservation relies on these moments being accurate, so
        the default is higher than the mass quadrature.

    Returns
    -------
    state : TimeDomainState
    trace : ConservationTrace
    """
    if not 0 < cfl < 1:
        raise ConfigurationError("cfl factor must lie in (0, 1)")
    if (T is None) == (n_steps is None):
        raise ConfigurationError("give exactly one of T and n_steps")
    V1, V2, V0 = ops.V1, ops.V2, ops.V0
    P = ops.P(1, HOM)
    P0 = ops.P(0, HOM)
    CP = (ops.C @ P).tocsr()
    CPt = CP.T.tocsr()
    GP = (ops.G @ P0).tocsr()
    M0, M1, M2 = ops.mass(0), ops.mass(1), ops.mass(2)
    M1m, M2m = M1.matrix, M2.matrix
    E = np.array(getattr(E0, "coeffs", E0), dtype=float)
    B = np.zeros(V2.dim) if B0 is None else np.array(getattr(B0, "coeffs", B0), dtype=float)
    if E.shape != (V1.dim,) or B.shape != (V2.dim,):
        raise ConfigurationError("initial fields have the wrong size")

    lam, rep = curl_norm_squared(ops, tol=power_tol)
    curl_norm = math.sqrt(lam)
    if dt is None:
        dt = cfl * 2.0 / curl_norm
    if n_steps is None:
        n_steps = int(math.ceil(T / dt - 1e-12))
    n_steps = int(n_steps)

    squad = ops.quad if source_quad is None else int(source_quad)
    if source is not None:
        project = _source_projector(ops, source_mode, squad)
        src_basis = np.array([project(f) for f, _ in source.terms]).T
    if charge is not None:
        rho_basis = np.array([P0.T @ assemble_moments(V0, f, squad) for f, _ in charge.terms]).T
    GtM1 = (GP.T @ M1m).tocsr()
    PGt = GtM1 @ P.tocsr()

    def gauss(F, t):
        d = -(GtM1 @ F)
        if charge is not None:
            d -= rho_basis @ charge.coefficients(t)
        return math.sqrt(max(d @ M0.solve(d, check=False), 0.0))

    def gauss_pair(F, t):
        d = -(GtM1 @ F)
        dP = -(PGt @ F)
        if charge is not None:
            r = rho_basis @ charge.coefficients(t)
            d, dP = d - r, dP - r
        return (math.sqrt(max(d @ M0.solve(d, check=False), 0.0)),
                math.sqrt(max(dP @ M0.solve(dP, check=False), 0.0)))

    times = np.empty(n_steps)
    energy = np.empty(n_steps)
    pseudo = np.empty(n_steps)
    gE = np.empty(n_steps)
    gPE = np.empty(n_steps)
    e0 = None
    t = 0.0
    for n in range(n_steps):
        t = n * dt
        CPE = CP @ E
        Bh = B - 0.5 * dt * CPE
        eE = E @ (M1m @ E)
        energy[n] = 0.5 * (eE + B @ (M2m @ B))
        pseudo[n] = 0.5 * (eE + Bh @ (M2m @ Bh)) + 0.5 * dt * (CPE @ (M2m @ Bh))
        gE[n], gPE[n] = gauss_pair(E, t)
        times[n] = t
        rhs = CPt @ (M2m @ Bh)
        E = E + dt * M1.solve(rhs, check=False)
        if source is not None:
            E -= dt * (src_basis @ source.averaged_coefficients(t, t + dt, time_quad))
        B = Bh - 0.5 * dt * (CP @ E)
        if not (np.all(np.isfinite(E)) and np.all(np.isfinite(B))):
            raise InstabilityError(f"non-finite fields at step {n + 1}")
        if source is None:
            if e0 is None:
                e0 = max(energy[0], 1e-300)
            if energy[n] > 10 * e0:
                raise InstabilityError(f"energy grew by more than 10x at step {n}")
    state = TimeDomainState(FemField(V1, E), FemField(V2, B), n_steps * dt, n_steps)
    trace = ConservationTrace(times, energy, pseudo, gE, gPE, dt, curl_norm)
    trace.power_report = rep
    return state, trace

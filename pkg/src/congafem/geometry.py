"""Analytic patch mappings and multipatch topology.

A patch mapping sends the reference square ``[0, 1]^2`` to a physical patch.
The reference edges are numbered ``0: x=0, 1: x=1, 2: y=0, 3: y=1``; edge
``e`` has ``axis = e // 2`` (the fixed reference coordinate) and
``side = e % 2``, and is parametrized by the other coordinate ``s``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ConformityError, GeometryError

__all__ = [
    "PatchMapping",
    "IdentityMapping",
    "AffineMapping",
    "PolarAnnulusMapping",
    "SmoothDeformationMapping",
    "metric_terms",
    "Edge",
    "InterfaceRecord",
    "MultipatchTopology",
    "detect_topology",
    "builtin_domain",
    "BUILTIN_DOMAINS",
    "domain_from_spec",
    "load_domain",
]


class PatchMapping:
    """Smooth map ``F`` from the reference square to a physical patch.

    Subclasses implement :meth:`_map` and :meth:`_jacobian`; both accept
    broadcastable arrays of reference coordinates.
    """

    kind = "abstract"

    def __init__(self):
        self._self_check()

    @property
    def params(self):
        return {}

    def __call__(self, xh, yh):
        xh, yh = np.broadcast_arrays(np.asarray(xh, float), np.asarray(yh, float))
        return self._map(xh, yh)

    def jacobian(self, xh, yh):
        """Jacobian matrices ``DF`` with shape ``xh.shape + (2, 2)``."""
        xh, yh = np.broadcast_arrays(np.asarray(xh, float), np.asarray(yh, float))
        return self._jacobian(xh, yh)

    def det(self, xh, yh):
        d = self.jacobian(xh, yh)
        return d[..., 0, 0] * d[..., 1, 1] - d[..., 0, 1] * d[..., 1, 0]

    def _self_check(self):
        s = np.linspace(0.0, 1.0, 17)
        X, Y = np.meshgrid(s, s, indexing="ij")
        J = self.det(X, Y)
        if not np.all(np.isfinite(J)) or np.any(J <= 0):
            raise GeometryError(f"{self.kind} mapping has non-positive Jacobian determinant")
        # finite-difference check of the analytic Jacobian
        h = 1e-6
        pts = np.array([0.21, 0.5, 0.83])
        X, Y = np.meshgrid(pts, pts, indexing="ij")
        D = self.jacobian(X, Y)
        fx = (np.stack(self(X + h, Y), -1) - np.stack(self(X - h, Y), -1)) / (2 * h)
        fy = (np.stack(self(X, Y + h), -1) - np.stack(self(X, Y - h), -1)) / (2 * h)
        fd = np.stack([fx, fy], -1)
        scale = max(1.0, np.abs(D).max())
        if np.abs(fd - D).max() > 1e-6 * scale:
            raise GeometryError(f"{self.kind} mapping: analytic Jacobian disagrees with finite differences")

    def to_dict(self):
        return {"kind": self.kind, **self.params}

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"{type(self).__name__}({args})"


class AffineMapping(PatchMapping):
    """``F(x) = A x + b``."""

    kind = "affine"

    def __init__(self, matrix, offset=(0.0, 0.0)):
        self.matrix = np.array(matrix, dtype=float).reshape(2, 2)
        self.offset = np.array(offset, dtype=float).reshape(2)
        super().__init__()

    @classmethod
    def box(cls, x0, x1, y0, y1):
        """Axis-aligned rectangle ``[x0, x1] x [y0, y1]``."""
        return cls([[x1 - x0, 0.0], [0.0, y1 - y0]], [x0, y0])

    @property
    def params(self):
        return {"matrix": self.matrix.tolist(), "offset": self.offset.tolist()}

    def _map(self, xh, yh):
        A, b = self.matrix, self.offset
        return A[0, 0] * xh + A[0, 1] * yh + b[0], A[1, 0] * xh + A[1, 1] * yh + b[1]

    def _jacobian(self, xh, yh):
        return np.broadcast_to(self.matrix, xh.shape + (2, 2)).copy()


class IdentityMapping(AffineMapping):
    kind = "identity"

    def __init__(self):
        super().__init__(np.eye(2))

    @property
    def params(self):
        return {}


class PolarAnnulusMapping(PatchMapping):
    """Annular sector ``r = r_min + x (r_max - r_min)``, ``theta = theta_min + y (theta_max - theta_min)``."""

    kind = "polar_annulus"

    def __init__(self, r_min, r_max, theta_min, theta_max, center=(0.0, 0.0)):
        self.r_min, self.r_max = float(r_min), float(r_max)
        self.theta_min, self.theta_max = float(theta_min), float(theta_max)
        self.center = np.array(center, dtype=float).reshape(2)
        if not 0 < self.r_min < self.r_max:
            raise GeometryError("polar annulus needs 0 < r_min < r_max")
        if not self.theta_min < self.theta_max:
            raise GeometryError("polar annulus needs theta_min < theta_max")
        super().__init__()

    @property
    def params(self):
        return {"r_min": self.r_min, "r_max": self.r_max, "theta_min": self.theta_min,
                "theta_max": self.theta_max, "center": self.center.tolist()}

    def _polar(self, xh, yh):
        r = self.r_min + xh * (self.r_max - self.r_min)
        th = self.theta_min + yh * (self.theta_max - self.theta_min)
        return r, th

    def _map(self, xh, yh):
        r, th = self._polar(xh, yh)
        return self.center[0] + r * np.cos(th), self.center[1] + r * np.sin(th)

    def _jacobian(self, xh, yh):
        r, th = self._polar(xh, yh)
        dr = self.r_max - self.r_min
        dt = self.theta_max - self.theta_min
        c, s = np.cos(th), np.sin(th)
        out = np.empty(xh.shape + (2, 2))
        out[..., 0, 0] = dr * c
        out[..., 0, 1] = -r * dt * s
        out[..., 1, 0] = dr * s
        out[..., 1, 1] = r * dt * c
        return out


class SmoothDeformationMapping(PatchMapping):
    """Sub-box of the unit square pushed through a smooth deformation.

    ``F = Phi o A`` where ``A`` maps the reference square onto ``box`` and
    ``Phi(x, y) = (x, y) + a sin(pi x) sin(pi y) (1, 1)``. ``Phi`` fixes the
    boundary of the unit square and bends every interior grid line. It is a
    diffeomorphism for ``|a| < 1/pi``.
    """

    kind = "smooth_deformation"

    def __init__(self, amplitude, box=(0.0, 1.0, 0.0, 1.0)):
        self.amplitude = float(amplitude)
        self.box = tuple(float(v) for v in box)
        if abs(self.amplitude) * np.pi >= 1:
            raise GeometryError("deformation amplitude must satisfy |a| < 1/pi")
        super().__init__()

    @property
    def params(self):
        return {"amplitude": self.amplitude, "box": list(self.box)}

    def _affine(self, xh, yh):
        x0, x1, y0, y1 = self.box
        return x0 + (x1 - x0) * xh, y0 + (y1 - y0) * yh

    def _map(self, xh, yh):
        x, y = self._affine(xh, yh)
        bump = self.amplitude * np.sin(np.pi * x) * np.sin(np.pi * y)
        return x + bump, y + bump

    def _jacobian(self, xh, yh):
        x, y = self._affine(xh, yh)
        x0, x1, y0, y1 = self.box
        a = self.amplitude * np.pi
        gx = a * np.cos(np.pi * x) * np.sin(np.pi * y) * (x1 - x0)
        gy = a * np.sin(np.pi * x) * np.cos(np.pi * y) * (y1 - y0)
        out = np.empty(xh.shape + (2, 2))
        out[..., 0, 0] = (x1 - x0) + gx
        out[..., 0, 1] = gy
        out[..., 1, 0] = gx
        out[..., 1, 1] = (y1 - y0) + gy
        return out


def metric_terms(mapping, xh, yh):
    """Jacobian determinant and inverse metric tensor.

    Parameters
    ----------
    mapping : PatchMapping
    xh, yh : array_like
        Reference coordinates.

    Returns
    -------
    J : ndarray
        ``det DF``.
    G_inv : ndarray, shape ``J.shape + (2, 2)``
        ``(DF^T DF)^{-1}``.
    """
    D = mapping.jacobian(xh, yh)
    J = D[..., 0, 0] * D[..., 1, 1] - D[..., 0, 1] * D[..., 1, 0]
    if not np.all(np.isfinite(J)) or np.any(np.abs(J) <= 1e-14 * max(1.0, np.abs(D).max() ** 2)):
        raise GeometryError("mapping has a non-invertible Jacobian")
    G = np.einsum("...ki,...kj->...ij", D, D)
    Ginv = np.empty_like(G)
    detG = J * J
    Ginv[..., 0, 0] = G[..., 1, 1] / detG
    Ginv[..., 1, 1] = G[..., 0, 0] / detG
    Ginv[..., 0, 1] = -G[..., 0, 1] / detG
    Ginv[..., 1, 0] = -G[..., 1, 0] / detG
    return J, Ginv


@dataclass(frozen=True)
class Edge:
    """Reference edge ``edge`` (0..3) of patch ``patch``."""

    patch: int
    edge: int

    @property
    def axis(self):
        return self.edge // 2

    @property
    def side(self):
        return self.edge % 2

    def reference_points(self, s):
        s = np.asarray(s, dtype=float)
        c = np.full_like(s, float(self.side))
        return (c, s) if self.axis == 0 else (s, c)

    @property
    def direction(self):
        """Reference coordinate index running along the edge."""
        return 1 - self.axis


@dataclass(frozen=True)
class InterfaceRecord:
    """Conforming interface between ``minus`` and ``plus`` edges.

    ``reversed`` is true when the parametrizations are related by
    ``theta(s) = 1 - s``; ``eps1`` is the induced sign on tangential edge DoFs.
    """

    minus: Edge
    plus: Edge
    reversed: bool
    eps1: int

    @property
    def patch_pair(self):
        return (self.minus.patch, self.plus.patch)

    def theta(self, s):
        s = np.asarray(s, dtype=float)
        return 1.0 - s if self.reversed else s


@dataclass
class MultipatchTopology:
    """Patches with their conforming interfaces, boundary edges and vertex classes."""

    patches: list
    interfaces: list
    boundary_edges: list
    vertex_classes: list
    tol: float = 1e-9
    name: str = field(default="custom")

    @property
    def n_patches(self):
        return len(self.patches)

    def n_components(self):
        parent = list(range(self.n_patches))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        links = [r.patch_pair for r in self.interfaces]
        links += [(cls[0][0], c[0]) for cls in self.vertex_classes for c in cls[1:]]
        for a, b in links:
            parent[find(a)] = find(b)
        return len({find(i) for i in range(self.n_patches)})

    def euler_characteristic(self):
        n_edges = len(self.interfaces) + len(self.boundary_edges)
        return len(self.vertex_classes) - n_edges + self.n_patches

    def betti_numbers(self):
        """``(b0, b1)`` of the patch complex (a planar domain has ``b2 = 0``)."""
        b0 = self.n_components()
        return b0, b0 - self.euler_characteristic()

    def is_boundary(self, patch, edge):
        return Edge(patch, edge) in self._boundary_set

    @property
    def _boundary_set(self):
        return set(self.boundary_edges)

    def describe(self):
        return {
            "name": self.name,
            "patches": [m.to_dict() for m in self.patches],
            "n_interfaces": len(self.interfaces),
            "n_boundary_edges": len(self.boundary_edges),
            "betti": list(self.betti_numbers()),
        }


_CORNERS = ((0, 0), (1, 0), (0, 1), (1, 1))


def _edge_points(mapping, edge, s):
    x, y = mapping(*edge.reference_points(s))
    return np.stack([x, y], -1)


def _tangent(mapping, edge, s):
    D = mapping.jacobian(*edge.reference_points(np.atleast_1d(s)))
    return D[..., :, edge.direction]


def _distance_to_polyline(points, poly):
    a, b = poly[:-1], poly[1:]
    ab = b - a
    L2 = np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-300)
    out = np.empty(len(points))
    for i, q in enumerate(points):
        t = np.clip(np.einsum("ij,ij->i", q - a, ab) / L2, 0.0, 1.0)
        d = a + t[:, None] * ab - q
        out[i] = np.sqrt(np.min(np.einsum("ij,ij->i", d, d)))
    return out


def detect_topology(patches, tol=1e-9, name="custom"):
    """Build the multipatch topology table by matching sampled edges.

    Parameters
    ----------
    patches : list of PatchMapping
    tol : float
        Matching tolerance in physical coordinates.

    Raises
    ------
    ConformityError
        If two edges overlap geometrically without being conforming.
    """
    patches = list(patches)
    if not patches:
        raise ConfigurationError("need at least one patch")
    K = len(patches)
    s = np.linspace(0.0, 1.0, 16)
    s_inner = (np.arange(16) + 0.5) / 16
    s_fine = np.linspace(0.0, 1.0, 257)
    edges = [Edge(k, e) for k in range(K) for e in range(4)]
    samples = {e: _edge_points(patches[e.patch], e, s) for e in edges}
    fine = {e: _edge_points(patches[e.patch], e, s_fine) for e in edges}
    scale = max(1.0, max(np.abs(v).max() for v in samples.values()))
    matched = {}
    interfaces = []
    for i, ea in enumerate(edges):
        for eb in edges[i + 1:]:
            if ea.patch == eb.patch or ea in matched or eb in matched:
                continue
            pa, pb = samples[ea], samples[eb]
            fwd = np.abs(pa - pb).max()
            bwd = np.abs(pa - pb[::-1]).max()
            if min(fwd, bwd) <= tol:
                rev = bool(bwd < fwd)
                ta = _tangent(patches[ea.patch], ea, 0.5)[0]
                tb = _tangent(patches[eb.patch], eb, 0.5)[0]
                eps = 1 if np.dot(ta, tb) > 0 else -1
                if eps != (-1 if rev else 1):
                    raise ConformityError(f"inconsistent orientation between {ea} and {eb}")
                interfaces.append(InterfaceRecord(ea, eb, rev, eps))
                matched[ea] = matched[eb] = True
                continue
            # reject partial or reparametrized overlaps
            d = _distance_to_polyline(_edge_points(patches[ea.patch], ea, s_inner), fine[eb])
            if np.any(d <= 1e-6 * scale):
                raise ConformityError(f"edges {ea} and {eb} overlap without a conforming parametrization")
    boundary = [e for e in edges if e not in matched]

    corners = [(k, c) for k in range(K) for c in _CORNERS]
    pos = np.array([np.stack(patches[k](*c), -1) for k, c in corners], dtype=float)
    classes, used = [], np.zeros(len(corners), bool)
    for i in range(len(corners)):
        if used[i]:
            continue
        near = np.where(np.abs(pos - pos[i]).max(axis=1) <= tol)[0]
        used[near] = True
        classes.append([corners[j] for j in near])
    topo = MultipatchTopology(patches, interfaces, boundary, classes, tol, name)
    _check_vertex_consistency(topo)
    return topo


def _check_vertex_consistency(topo):
    """Corners related through an interface must share a vertex class."""
    where = {c: i for i, cls in enumerate(topo.vertex_classes) for c in cls}
    for rec in topo.interfaces:
        for s in (0.0, 1.0):
            ca = _edge_corner(rec.minus, s)
            cb = _edge_corner(rec.plus, float(rec.theta(s)))
            if where[(rec.minus.patch, ca)] != where[(rec.plus.patch, cb)]:
                raise ConformityError("interface endpoints do not share a vertex class")


def _edge_corner(edge, s):
    x, y = edge.reference_points(np.array(s))
    return (int(round(float(x))), int(round(float(y))))


# -- built-in domains ---------------------------------------------------------

def _square_grid(x0, x1, y0, y1, nx, ny):
    xs, ys = np.linspace(x0, x1, nx + 1), np.linspace(y0, y1, ny + 1)
    return [AffineMapping.box(xs[i], xs[i + 1], ys[j], ys[j + 1])
            for i in range(nx) for j in range(ny)]


def _single_patch():
    return [IdentityMapping()]


def _two_patch_square(length=1.5):
    L = float(length)
    return _square_grid(0.0, L, 0.0, L, 2, 1)


def _four_patch_annulus(r_min=1.0, r_max=2.0):
    q = np.pi / 2
    return [PolarAnnulusMapping(r_min, r_max, i * q, (i + 1) * q) for i in range(4)]


def _deformed_square(amplitude=0.2, n=2):
    xs = np.linspace(0.0, 1.0, int(n) + 1)
    return [SmoothDeformationMapping(amplitude, (xs[i], xs[i + 1], xs[j], xs[j + 1]))
            for i in range(int(n)) for j in range(int(n))]


def _pi_square(n=1):
    return _square_grid(0.0, np.pi, 0.0, np.pi, int(n), int(n))


def _square_patches(length=1.0, nx=2, ny=2):
    return _square_grid(0.0, float(length), 0.0, float(length), int(nx), int(ny))


BUILTIN_DOMAINS = {
    "single_patch": _single_patch,
    "two_patch_square": _two_patch_square,
    "four_patch_annulus": _four_patch_annulus,
    "deformed_square": _deformed_square,
    "pi_square": _pi_square,
    "square_patches": _square_patches,
}


def builtin_domain(name, tol=1e-9, **params):
    """Topology of a built-in domain.

    ``single_patch``
        Unit square, identity map.
    ``two_patch_square``
        ``(0, L)^2`` split at ``x = L/2``; ``L = length`` (default 1.5).
    ``four_patch_annulus``
        Four quarter annuli ``r_min <= r <= r_max`` (default 1, 2).
    ``deformed_square``
        Unit square, ``n x n`` patches (default 2) bent by a smooth deformation
        of amplitude ``amplitude`` (default 0.2).
    ``pi_square``
        ``(0, pi)^2`` split into ``n x n`` affine patches (default 1).
    ``square_patches``
        ``(0, length)^2`` split into ``nx x ny`` affine patches.
    """
    try:
        factory = BUILTIN_DOMAINS[name]
    except KeyError:
        raise ConfigurationError(f"unknown built-in domain {name!r}; "
                                 f"choose from {sorted(BUILTIN_DOMAINS)}") from None
    try:
        patches = factory(**params)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for domain {name!r}: {exc}") from None
    return detect_topology(patches, tol=tol, name=name)


_KINDS = {
    "identity": lambda d: IdentityMapping(),
    "affine": lambda d: AffineMapping(d["matrix"], d.get("offset", (0.0, 0.0))),
    "polar_annulus": lambda d: PolarAnnulusMapping(d["r_min"], d["r_max"], d["theta_min"],
                                                   d["theta_max"], d.get("center", (0.0, 0.0))),
    "smooth_deformation": lambda d: SmoothDeformationMapping(d["amplitude"],
                                                             d.get("box", (0.0, 1.0, 0.0, 1.0))),
}


def domain_from_spec(spec):
    """Topology from a domain description.

    ``spec`` is either a built-in name, or a mapping with key ``builtin``
    (plus optional ``params``), or a mapping with a ``patches`` list whose
    entries have a ``kind`` and the parameters of that kind. An optional
    ``tol`` sets the interface matching tolerance.
    """
    if isinstance(spec, str):
        return builtin_domain(spec)
    if not isinstance(spec, dict):
        raise ConfigurationError("domain spec must be a name or a mapping")
    tol = float(spec.get("tol", 1e-9))
    if "builtin" in spec:
        return builtin_domain(spec["builtin"], tol=tol, **spec.get("params", {}))
    if "patches" not in spec:
        raise ConfigurationError("domain spec needs 'builtin' or 'patches'")
    patches = []
    for i, d in enumerate(spec["patches"]):
        kind = d.get("kind")
        if kind not in _KINDS:
            raise ConfigurationError(f"patch {i}: unknown kind {kind!r}")
        try:
            patches.append(_KINDS[kind](d))
        except KeyError as exc:
            raise ConfigurationError(f"patch {i}: missing parameter {exc}") from None
    return detect_topology(patches, tol=tol, name=spec.get("name", "custom"))


def load_domain(path):
    """Read a JSON domain description file (see :func:`domain_from_spec`)."""
    try:
        spec = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read domain file {path}: {exc}") from None
    return domain_from_spec(spec)

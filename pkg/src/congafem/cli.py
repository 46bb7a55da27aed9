"""Command-line front end: case registry, runs, convergence sweeps and data export.

Every output file starts with ``#`` lines carrying the library version and
the configuration hash, followed by a CSV header row. Floats are written
with 17 significant digits, so reruns of one configuration are
byte-identical.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .assembly import assemble_maxwell_system, assemble_poisson_system, dump_coo
from .derham import HOM, INHOM, FemField, build_derham
from .errors import CongaError, ConfigurationError, DomainError, GeometryError
from .geometry import domain_from_spec, load_domain
from .solvers import (
    SOURCE_MODES,
    SeparableSource,
    eig_curlcurl,
    harmonic_basis,
    initial_curl_potential,
    l2_error,
    maxwell_leapfrog,
    observed_order,
    relative_eigenvalue_error,
    solve_magnetostatic,
    solve_maxwell_harmonic,
    solve_poisson,
)
from .sources import (
    EllipticRing,
    Pulse,
    PulseCurrent,
    dipole_current,
    sincos_maxwell,
    sincos_poisson,
    sinsin_poisson,
)

__all__ = ["RunConfig", "ConvergenceReport", "CASES", "run_case", "convergence_sweep",
           "sample_field", "main"]

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


# -- configuration ------------------------------------------------------------

@dataclass
class RunConfig:
    """Resolved run configuration (JSON keys match the field names)."""

    case: str
    domain: object = None
    p: int = 3
    N: int = 8
    alpha: float = 1.0
    alpha0: float = 1.0
    alpha1: float = 1.0
    omega: float = None
    bc: str = None
    T: float = None
    n_steps: int = None
    cfl: float = 0.8
    source_mode: str = None
    source: str = None
    n_eigs: int = 8
    sample_resolution: int = 0
    dump_matrices: bool = False
    source_quad: int = 12
    out: str = "results"

    def validate(self):
        if self.case not in CASES:
            raise ConfigurationError(f"unknown case {self.case!r}; see list-cases")
        if int(self.p) < 1 or int(self.N) < 1:
            raise ConfigurationError("p and N must be positive")
        if not 0 < float(self.cfl) < 1:
            raise ConfigurationError("cfl must lie in (0, 1)")
        if self.source_mode is not None and self.source_mode not in SOURCE_MODES + ("all",):
            raise ConfigurationError(f"source_mode must be one of {SOURCE_MODES} or 'all'")
        if self.bc is not None and self.bc not in (HOM, INHOM, "pseudo_vacuum", "metallic"):
            raise ConfigurationError(f"unknown bc {self.bc!r}")
        if int(self.sample_resolution) < 0:
            raise ConfigurationError("sample_resolution must be >= 0")
        return self

    def hashable(self):
        d = asdict(self)
        d.pop("out")
        return d

    def config_hash(self):
        blob = json.dumps(self.hashable(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigurationError(f"unknown configuration keys {sorted(unknown)}")
        if "case" not in data:
            raise ConfigurationError("configuration needs a 'case'")
        case = CASES.get(data["case"])
        merged = dict(case.defaults) if case else {}
        merged.update({k: v for k, v in data.items() if v is not None})
        return cls(**merged).validate()


def _parse_override(item):
    if "=" not in item:
        raise ConfigurationError(f"override {item!r} is not key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _resolve_domain(spec):
    if isinstance(spec, str) and (spec.endswith(".json") or Path(spec).is_file()):
        return load_domain(spec)
    return domain_from_spec(spec)


# -- output helpers -----------------------------------------------------------

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def write_csv(path, header, rows, cfg):
    """CSV with ``#`` provenance lines and 17-digit floats."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# congafem {__version__}\n# config_hash {cfg.config_hash()}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def sample_field(fem_field, resolution, path=None, cfg=None):
    """Evaluate a field on a uniform reference grid of every patch.

    Rows are ``(patch, x, y, value...)`` in physical coordinates, with the
    push-forward applied for ``l = 1, 2``. Returns the rows; writes a CSV when
    ``path`` is given.
    """
    space = fem_field.space
    s = np.linspace(0.0, 1.0, int(resolution))
    Xh, Yh = np.meshgrid(s, s, indexing="ij")
    rows = []
    for k, F in enumerate(space.topology.patches):
        X, Y = F(Xh, Yh)
        vals = fem_field.evaluate(k, Xh, Yh)
        X, Y = np.asarray(X).ravel(), np.asarray(Y).ravel()
        if space.form == 1:
            vx, vy = vals[..., 0].ravel(), vals[..., 1].ravel()
            rows += [(k, X[i], Y[i], vx[i], vy[i]) for i in range(X.size)]
        else:
            v = vals.ravel()
            rows += [(k, X[i], Y[i], v[i]) for i in range(X.size)]
    if path is not None:
        header = ["patch", "x", "y"] + (["vx", "vy"] if space.form == 1 else ["value"])
        write_csv(path, header, rows, cfg)
    return rows


@dataclass
class CaseResult:
    """Scalars for the summary plus optional fields to sample."""

    scalars: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    fields: dict = field(default_factory=dict)
    matrices: dict = field(default_factory=dict)
    error: float = None


# -- case runners -------------------------------------------------------------

_POISSON_SOLUTIONS = {
    "sinsin": sinsin_poisson,
    "sincos": sincos_poisson,
    "elliptic": lambda: (EllipticRing().phi, EllipticRing().source),
    # lies in V0 for p >= 2: errors sit at solver tolerance
    "quadratic": lambda: ((lambda x, y: x * x + y), (lambda x, y: -2.0 + 0 * x)),
}


def _run_poisson(cfg, ops):
    try:
        phi, f = _POISSON_SOLUTIONS[cfg.source]()
    except KeyError:
        raise ConfigurationError(f"Poisson source must be one of {sorted(_POISSON_SOLUTIONS)}") from None
    bc = cfg.bc
    system = assemble_poisson_system(ops, cfg.alpha, bc, f=f, g=phi if bc == INHOM else None)
    sol, rep, defect = solve_poisson(system, return_report=True)
    err, rel = l2_error(sol, phi)
    res = CaseResult(error=rel, fields={"phi_h": sol}, matrices={"A0": system.matrix})
    res.scalars.update({"l2_error": err, "relative_l2_error": rel, "solver_residual": rep.residual,
                        "conformity_defect": defect})
    res.tables["errors"] = (["N", "dofs", "l2_error", "relative_l2_error"],
                            [(cfg.N, ops.V0.dim, err, rel)])
    return res


def _run_maxwell(cfg, ops):
    u, J, omega, _ = sincos_maxwell()
    omega = omega if cfg.omega is None else float(cfg.omega)
    system = assemble_maxwell_system(ops, omega, cfg.alpha, cfg.bc, J=J, g=u if cfg.bc == INHOM else None)
    sol, rep, defect = solve_maxwell_harmonic(system, return_report=True)
    err, rel = l2_error(sol, u)
    res = CaseResult(error=rel, fields={"u_h": sol}, matrices={"A1": system.matrix})
    res.scalars.update({"omega": omega, "l2_error": err, "relative_l2_error": rel,
                        "solver_residual": rep.residual, "conformity_defect": defect})
    res.tables["errors"] = (["N", "dofs", "l2_error", "relative_l2_error"],
                            [(cfg.N, ops.V1.dim, err, rel)])
    return res


def _square_spectrum(count):
    vals = sorted(m * m + n * n for m in range(0, 20) for n in range(0, 20) if m + n > 0)
    return np.array(vals[:count], float)


def _run_eig_curlcurl(cfg, ops):
    r = eig_curlcurl(ops, "conga_generalized", cfg.bc)
    nz = r.nonzero()[: int(cfg.n_eigs)]
    on_pi_square = ops.topology.name == "pi_square" and cfg.bc == HOM
    ref = _square_spectrum(nz.size) if on_pi_square else None
    rows = []
    for i, lam in enumerate(nz):
        if ref is not None:
            rows.append((i, lam, ref[i], relative_eigenvalue_error(ref[i], lam)))
        else:
            rows.append((i, lam, "", ""))
    res = CaseResult()
    res.scalars.update({"n_zero": r.n_zero(), "zero_threshold": r.zero_threshold,
                        "conformity_defect": r.conformity_defect})
    if ref is not None:
        res.scalars["max_relative_error"] = max(row[3] for row in rows)
    res.tables["eigenvalues"] = (["index", "eigenvalue", "reference", "relative_error"], rows)
    if nz.size:
        res.fields["first_mode"] = FemField(ops.V1, r.vectors[:, r.n_zero()])
    return res


def _run_eig_hodge(cfg, ops):
    r = eig_curlcurl(ops, "hodge_penalized", cfg.bc, alpha=cfg.alpha)
    H = harmonic_basis(ops, cfg.bc, alpha=cfg.alpha)
    w = r.eigenvalues[: int(cfg.n_eigs)]
    res = CaseResult()
    res.scalars.update({"n_harmonic": len(H), "n_below_1e-8": int(np.sum(r.eigenvalues < 1e-8))})
    res.tables["eigenvalues"] = (["index", "eigenvalue"], [(i, v) for i, v in enumerate(w)])
    for i, h in enumerate(H.fields):
        res.fields[f"harmonic_{i}"] = h
    return res


def _magnetostatic_current(name):
    if name in (None, "ring"):
        return lambda x, y: np.exp(-((np.hypot(x, y) - 1.5) / 0.15) ** 2)
    if name == "dipole":
        return dipole_current((1.06, 1.06), (-1.06, -1.06), 0.05)
    raise ConfigurationError("magnetostatic source must be 'ring' or 'dipole'")


def _run_magnetostatic(cfg, ops):
    J = _magnetostatic_current(cfg.source)
    r = solve_magnetostatic(ops, cfg.bc, cfg.alpha0, cfg.alpha1, J)
    res = CaseResult(fields={"B_h": r.B, "p_h": r.p})
    res.scalars.update(r.diagnostics)
    return res


def _pulse_setup(cfg, ops):
    # centre of the unit square, which the deformation leaves fixed
    return Pulse(0.5, 0.5, 0.02)


def _trace_table(tr):
    cols = tr.as_columns()
    header = list(cols)
    return header, list(zip(*[cols[h] for h in header]))


def _run_td_pulse(cfg, ops):
    pulse = _pulse_setup(cfg, ops)
    E0 = initial_curl_potential(ops, pulse.psi)
    state, tr = maxwell_leapfrog(ops, E0, T=cfg.T if cfg.n_steps is None else None,
                                 n_steps=cfg.n_steps, cfl=cfg.cfl)
    H = tr.pseudo_energy
    res = CaseResult(fields={"E": state.E, "B": state.B})
    res.scalars.update({"dt": tr.dt, "steps": len(tr), "curl_norm": tr.curl_norm,
                        "pseudo_energy_relative_variation": float(np.ptp(H) / H[0]),
                        "max_gauss_E": float(tr.gauss_E.max())})
    res.tables["trace"] = _trace_table(tr)
    return res


def _run_td_compare(cfg, ops):
    pulse = _pulse_setup(cfg, ops)
    pc = PulseCurrent(pulse, 2 * math.pi if cfg.omega is None else float(cfg.omega))
    J0, J1, c = pc.spatial_parts()
    one = lambda t: np.ones_like(np.asarray(t, float))
    src = SeparableSource([(J0, one), (J1, c)])
    chg = SeparableSource([(pulse.laplacian, lambda t: np.sin(pc.omega * np.asarray(t)) / pc.omega)])
    modes = SOURCE_MODES if cfg.source_mode in (None, "all") else (cfg.source_mode,)
    res = CaseResult()
    for mode in modes:
        state, tr = maxwell_leapfrog(ops, np.zeros(ops.V1.dim), source=src, charge=chg,
                                     T=cfg.T if cfg.n_steps is None else None, n_steps=cfg.n_steps,
                                     cfl=cfg.cfl, source_mode=mode, source_quad=cfg.source_quad)
        q = max(len(tr) // 4, 1)
        res.scalars[mode] = {"max_gauss_E": float(tr.gauss_E.max()),
                             "max_gauss_PE": float(tr.gauss_PE.max()),
                             "gauss_PE_quarter_ratio": float(tr.gauss_PE[-q:].max() / max(tr.gauss_PE[:q].max(), 1e-300)),
                             "dt": tr.dt, "steps": len(tr)}
        res.tables[f"trace_{mode}"] = _trace_table(tr)
        res.fields[f"PE_{mode}"] = FemField(ops.V1, ops.P(1, HOM) @ state.E.coeffs)
    return res


@dataclass(frozen=True)
class CaseSpec:
    runner: object
    description: str
    defaults: dict
    has_error: bool = False


CASES = {
    "poisson_hom_manufactured": CaseSpec(
        _run_poisson, "Poisson, sin x sin y on (0, pi)^2, homogeneous boundary",
        {"domain": "pi_square", "bc": HOM, "source": "sinsin"}, True),
    "poisson_inhom_sincos": CaseSpec(
        _run_poisson, "Poisson, sin(pi x) cos(pi y) with lifted Dirichlet data",
        {"domain": "two_patch_square", "bc": INHOM, "source": "sincos"}, True),
    "maxwell_inhom_sincos": CaseSpec(
        _run_maxwell, "Time-harmonic Maxwell, omega = pi, lifted tangential data",
        {"domain": "two_patch_square", "bc": INHOM}, True),
    "eig_curlcurl_square": CaseSpec(
        _run_eig_curlcurl, "Curl-curl eigenvalues on (0, pi)^2 against m^2 + n^2",
        {"domain": "pi_square", "bc": HOM, "p": 3, "N": 16}),
    "eig_hodge_annulus": CaseSpec(
        _run_eig_hodge, "Stabilized Hodge-Laplace spectrum and harmonic fields on the annulus",
        {"domain": "four_patch_annulus", "bc": INHOM, "alpha": 10.0}),
    "magnetostatic_vacuum_annulus": CaseSpec(
        _run_magnetostatic, "Magnetostatics, pseudo-vacuum boundary, annulus",
        {"domain": "four_patch_annulus", "bc": "pseudo_vacuum", "source": "ring"}),
    "magnetostatic_metal_annulus": CaseSpec(
        _run_magnetostatic, "Magnetostatics, metallic boundary, annulus",
        {"domain": "four_patch_annulus", "bc": "metallic", "source": "ring"}),
    "td_maxwell_pulse": CaseSpec(
        _run_td_pulse, "Leap-frog Maxwell, curl-pulse initial field, no source",
        {"domain": "deformed_square", "p": 3, "N": 8, "T": 3.2}),
    "td_maxwell_source_compare": CaseSpec(
        _run_td_compare, "Leap-frog Maxwell driven by curl psi - cos(wt) grad psi, three source projections",
        {"domain": "deformed_square", "p": 3, "N": 8, "T": 20.0, "source_mode": "all"}),
}


# -- run and sweep ------------------------------------------------------------

def run_case(cfg, out_dir=None):
    """Run one configured case and write its artifacts.

    Returns the summary dictionary (also written to ``summary.json``).
    """
    cfg.validate()
    out = Path(cfg.out if out_dir is None else out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        topo = _resolve_domain(cfg.domain)
    except (GeometryError, DomainError, OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"invalid domain {cfg.domain!r}: {exc}") from exc
    ops = build_derham(topo, int(cfg.p), int(cfg.N))
    start = time.perf_counter()
    try:
        res = CASES[cfg.case].runner(cfg, ops)
    except CongaError as exc:
        exc.args = (f"case {cfg.case} (p={cfg.p}, N={cfg.N}): {exc}",) + exc.args[1:]
        raise
    elapsed = time.perf_counter() - start
    written = []
    for name, (header, rows) in sorted(res.tables.items()):
        path = out / f"{name}.csv"
        write_csv(path, header, rows, cfg)
        written.append(path.name)
    if cfg.sample_resolution:
        for name, fld in sorted(res.fields.items()):
            path = out / f"field_{name}.csv"
            sample_field(fld, cfg.sample_resolution, path, cfg)
            written.append(path.name)
    if cfg.dump_matrices:
        mats = dict(res.matrices, G=ops.G, C=ops.C,
                    P0=ops.P(0, HOM), P1=ops.P(1, HOM), M0=ops.mass(0).matrix, M1=ops.mass(1).matrix)
        for name, A in sorted(mats.items()):
            dump_coo(A, out / f"{name}.coo")
            written.append(f"{name}.coo")
    summary = {
        "library": "congafem", "version": __version__, "config_hash": cfg.config_hash(),
        "config": cfg.hashable(), "discretization": ops.metadata(),
        "tolerances": {"conformity": 1e-9, "zero_eigenvalue": 1e-8, "mass_solve_residual": 1e-12,
                       "pivot_ratio": 1e-12, "source_quadrature_points_per_span": cfg.source_quad},
        "results": _jsonable(res.scalars), "files": written, "elapsed_s": round(elapsed, 3),
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    summary["_error"] = res.error
    return summary


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


@dataclass
class ConvergenceReport:
    """Rows ``(N, dofs, error, order)``; order is ``None`` for the first row or at solver tolerance."""

    rows: list
    flagged: list

    def orders(self):
        return [r[3] for r in self.rows]


def convergence_sweep(cfg, N_list):
    """Run ``cfg`` for each ``N`` and report observed orders.

    Orders are ``log(e_prev / e) / log(N / N_prev)``; errors at solver
    tolerance (below ``1e-13``) get no order. Non-decreasing errors are
    flagged, not fatal.
    """
    if not CASES[cfg.case].has_error:
        raise ConfigurationError(f"case {cfg.case} has no exact solution to sweep against")
    Ns = [int(n) for n in N_list]
    if any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise ConfigurationError("N values must be strictly increasing")
    rows, flagged = [], []
    base = Path(cfg.out)
    prev = None
    for N in Ns:
        sub = RunConfig(**{**asdict(cfg), "N": N, "out": str(base / f"N{N}")})
        summary = run_case(sub)
        err = summary["_error"]
        dofs = summary["discretization"]["dims"][1 if cfg.case.startswith("maxwell") else 0]
        order = None
        if prev is not None:
            if err >= prev[1] and prev[1] > 1e-13:
                flagged.append(N)
            if err > 1e-13 and prev[1] > 1e-13:
                order = observed_order(prev[1], err, N / prev[0])
        rows.append((N, dofs, err, order))
        prev = (N, err)
    write_csv(base / "convergence.csv", ["N", "dofs", "relative_l2_error", "observed_order"],
              [(N, d, e, "N/A" if o is None else o) for N, d, e, o in rows], cfg)
    return ConvergenceReport(rows, flagged)


# -- command line -------------------------------------------------------------

def _build_parser():
    ap = argparse.ArgumentParser(prog="congafem", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("run", "sweep"):
        sp_ = sub.add_parser(name)
        sp_.add_argument("case", nargs="?", help="registry case (or 'case' in the config file)")
        sp_.add_argument("--config", help="JSON configuration file")
        sp_.add_argument("--out", help="output directory")
        sp_.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                         help="override a configuration key (value parsed as JSON when possible)")
        if name == "sweep":
            sp_.add_argument("--N", dest="N_list", type=int, nargs="+", default=[4, 8, 16])
    sub.add_parser("list-cases")
    return ap


def _load_config(args):
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError("config file must hold a JSON object")
    if args.case:
        data["case"] = args.case
    for item in args.override:
        k, v = _parse_override(item)
        data[k] = v
    if args.out:
        data["out"] = args.out
    return RunConfig.from_dict(data)


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "list-cases":
            for name, spec in CASES.items():
                print(f"{name:32s} {spec.description}")
            return EXIT_OK
        cfg = _load_config(args)
        if args.command == "run":
            summary = run_case(cfg)
            print(json.dumps(summary["results"], sort_keys=True, default=str))
        else:
            rep = convergence_sweep(cfg, args.N_list)
            for N, d, e, o in rep.rows:
                print(f"N={N:4d} dofs={d:7d} error={e:.6e} order={'N/A' if o is None else f'{o:.3f}'}")
            if rep.flagged:
                print(f"warning: error did not decrease at N={rep.flagged}", file=sys.stderr)
        return EXIT_OK
    except (ConfigurationError, DomainError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CongaError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ArithmeticError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())

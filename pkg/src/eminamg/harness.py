"""Experiment driver: generate or load a problem, build one hierarchy per
prolongation variant, solve, and write a JSON report (plus optional CSV
energy traces).

Variant names
-------------
``TENTATIVE``       max-vol tentative prolongation, no improvement
``SMOOTHED``        one weighted-Jacobi step on the tentative prolongation
``EMIN-J(n)``       energy minimization, Jacobi, exactly ``n`` iterations
``EMIN-GS(n)``      energy minimization, block SGS, exactly ``n`` iterations
``EMIN``            energy minimization with ``--precond``, stopped by ``--tau``
                    or ``--emin-maxit``
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import re
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
import scipy.sparse as sp

from . import __version__
from .emin import EminConfig
from .problems import gen_elasticity_cube, gen_poisson
from .solver import HierarchyConfig, build_hierarchy, pcg_solve
from .sparse import as_csr, mm_read

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
KINDS = ("poisson2d", "poisson3d", "elasticity3d", "file")
DEFAULT_THETA = {"poisson2d": 0.25, "poisson3d": 0.25, "elasticity3d": 0.06, "file": 0.25}

_NUM = {"type": "number"}
_INT = {"type": "integer", "minimum": 0}
_EMIN_SCHEMA = {
    "type": "object",
    "required": ["level", "n_it_E", "dE", "dE_rel", "energy_initial", "energy_final",
                 "constraint_residual", "time_seconds", "svd_rows", "stop"],
    "properties": {
        "level": _INT,
        "n_it_E": _INT,
        "dE": {"type": "array", "items": _NUM},
        "dE_rel": {"type": "array", "items": _NUM},
        "energy_initial": _NUM,
        "energy_final": _NUM,
        "constraint_residual": _NUM,
        "time_seconds": _NUM,
        "svd_rows": _INT,
        "stop": {"type": "string"},
    },
}
REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "software", "problem", "config", "runs"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "software": {
            "type": "object",
            "required": ["name", "version"],
            "properties": {"name": {"type": "string"}, "version": {"type": "string"}},
        },
        "problem": {
            "type": "object",
            "required": ["kind", "dims", "n", "nnz", "near_kernel_modes"],
            "properties": {"kind": {"enum": list(KINDS)}},
        },
        "config": {
            "type": "object",
            "required": ["theta", "pattern_distance", "tau", "precond", "emin_maxit",
                         "lmax", "omega", "seed", "tol", "maxit"],
        },
        "runs": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["variant", "hierarchy", "emin", "solve"],
                "properties": {
                    "variant": {"type": "string"},
                    "hierarchy": {
                        "type": "object",
                        "required": ["levels", "C_gd", "C_op", "level_sizes",
                                     "flagged_rows", "warnings"],
                        "properties": {
                            "levels": {"type": "integer", "minimum": 1},
                            "C_gd": {"type": "number", "minimum": 1},
                            "C_op": {"type": "number", "minimum": 1},
                            "level_sizes": {"type": "array", "items": {
                                "type": "array", "items": _INT,
                                "minItems": 2, "maxItems": 2}},
                            "flagged_rows": {"type": "array", "items": _INT},
                            "warnings": {"type": "array", "items": {"type": "string"}},
                        },
                    },
                    "emin": {"type": "array", "items": _EMIN_SCHEMA},
                    "solve": {
                        "type": "object",
                        "required": ["n_it", "converged", "residuals", "T_p", "T_s", "T_t", "T_i"],
                        "properties": {
                            "n_it": _INT,
                            "converged": {"type": "boolean"},
                            "residuals": {"type": "array", "items": _NUM},
                            "T_p": _NUM, "T_s": _NUM, "T_t": _NUM, "T_i": _NUM,
                        },
                    },
                },
            },
        },
    },
}


@dataclass
class ProblemSpec:
    kind: str
    dims: tuple = (64, 64)
    E: float = 1.0
    nu: float = 0.3
    path: str | None = None
    nullspace: str = "ones"     # "ones", "rigid_body" or a Matrix Market path

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}")
        self.dims = tuple(int(d) for d in self.dims)
        if self.kind == "elasticity3d":
            if len(self.dims) != 3 or min(self.dims) < 2:
                raise ValueError("elasticity3d needs three dimensions, each >= 2")
            if self.nullspace == "ones":
                self.nullspace = "rigid_body"
        elif self.nullspace == "rigid_body":
            raise ValueError("rigid_body modes need node coordinates (elasticity3d only)")
        if self.kind == "file" and not self.path:
            raise ValueError("file problems need a matrix path")

    def load(self):
        """Assemble or read the matrix; returns ``(A, V)``."""
        if self.kind in ("poisson2d", "poisson3d"):
            A, V = gen_poisson(self.dims)
        elif self.kind == "elasticity3d":
            A, _, V = gen_elasticity_cube(*self.dims, E=self.E, nu=self.nu)
        else:
            A = mm_read(self.path)
            if isinstance(A, np.ndarray):
                raise ValueError(f"{self.path} holds a dense array, expected a sparse matrix")
            A = as_csr(A)
            V = np.ones((A.shape[0], 1))
        if self.nullspace not in ("ones", "rigid_body"):
            V = np.asarray(mm_read(self.nullspace), dtype=np.float64)
            if sp.issparse(V):
                V = V.toarray()
            V = V.reshape(A.shape[0], -1)
        return A, V


_VARIANT = re.compile(r"^(TENTATIVE|SMOOTHED|EMIN)(?:-(J|GS)\((\d+)\))?$")


def parse_variant(name: str, base: EminConfig) -> tuple[str, EminConfig | None]:
    """Map a variant label to ``(prolongation kind, emin config)``."""
    mt = _VARIANT.match(name.strip().upper())
    if mt is None:
        raise ValueError(f"unknown variant {name!r}")
    kind, pc, n = mt.groups()
    if kind != "EMIN":
        if pc is not None:
            raise ValueError(f"variant {name!r} takes no preconditioner")
        return kind.lower(), None
    if pc is None:
        return "emin", base
    cfg = EminConfig(maxit=int(n), tau=base.tau, precond="jacobi" if pc == "J" else "sgs",
                     pattern_distance=base.pattern_distance, use_tau=False)
    return "emin", cfg


@dataclass
class ExperimentConfig:
    theta: float | None = None
    pattern_distance: int = 1
    tau: float = 0.1
    precond: str = "jacobi"
    emin_maxit: int = 10
    lmax: int = 3
    omega: float = 0.7
    seed: int = 42
    tol: float = 1e-8
    maxit: int = 500
    coarse_size: int = 500
    max_levels: int = 25

    def emin(self) -> EminConfig:
        return EminConfig(maxit=self.emin_maxit, tau=self.tau, precond=self.precond,
                          pattern_distance=self.pattern_distance)


@dataclass
class RunResult:
    variant: str
    report: dict
    traces: list = field(default_factory=list)


def energy_trace(rep) -> list:
    """Rows ``(iter, dE_rel, energy)``; energies follow from the ΔE telescoping."""
    rows = [(0, None, rep.energy_initial)]
    e = rep.energy_initial
    for k, (d, rel) in enumerate(zip(rep.dE, rep.dE_rel), start=1):
        e -= d
        rows.append((k, rel, e))
    return rows


def run_variant(A, V, name: str, cfg: ExperimentConfig, theta: float) -> RunResult:
    kind, ecfg = parse_variant(name, cfg.emin())
    hcfg = HierarchyConfig(prolongation=kind, theta=theta, lmax=cfg.lmax, omega=cfg.omega,
                           emin=ecfg or cfg.emin(), coarse_size=cfg.coarse_size,
                           max_levels=cfg.max_levels, seed=cfg.seed)
    H = build_hierarchy(A, V, hcfg)
    _, srep = pcg_solve(A, np.ones(A.shape[0]), H, tol=cfg.tol, maxit=cfg.maxit)
    emin = []
    for l, lv in enumerate(H.levels):
        if lv.emin is not None:
            emin.append({"level": l, **lv.emin.to_dict()})
    out = {
        "variant": name,
        "hierarchy": {
            "levels": len(H.levels),
            "C_gd": H.grid_complexity,
            "C_op": H.operator_complexity,
            "level_sizes": H.sizes(),
            "flagged_rows": [lv.flagged_rows for lv in H.levels[:-1]],
            "warnings": list(H.warnings),
        },
        "emin": emin,
        "solve": {
            "n_it": srep.n_it,
            "converged": srep.converged,
            "residuals": srep.residuals,
            "T_p": srep.T_p,
            "T_s": srep.T_s,
            "T_t": srep.T_t,
            "T_i": srep.T_i,
        },
    }
    log.info("%s: %d levels, C_op %.3f, %d iterations", name, len(H.levels),
             H.operator_complexity, srep.n_it)
    traces = [energy_trace(lv.emin) for lv in H.levels if lv.emin is not None]
    return RunResult(name, out, traces)


def _plain(x):
    # numpy scalars and tuples into JSON-native types
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


def run_experiment(problem: ProblemSpec, variants, cfg: ExperimentConfig | None = None,
                   out: str | Path | None = None, trace_csv: str | Path | None = None):
    """Run every variant on ``problem``; returns the validated report dict."""
    cfg = cfg or ExperimentConfig()
    if not variants:
        raise ValueError("no variants requested")
    A, V = problem.load()
    theta = DEFAULT_THETA[problem.kind] if cfg.theta is None else cfg.theta
    results = [run_variant(A, V, name, cfg, theta) for name in variants]
    config = asdict(cfg)
    config["theta"] = theta
    report = _plain({
        "schema_version": SCHEMA_VERSION,
        "software": {"name": "eminamg", "version": __version__},
        "problem": {**asdict(problem), "n": A.shape[0], "nnz": A.nnz,
                    "near_kernel_modes": int(np.atleast_2d(V.T).shape[0])},
        "config": config,
        "runs": [r.report for r in results],
    })
    jsonschema.validate(report, REPORT_SCHEMA)
    if out is not None:
        Path(out).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    if trace_csv is not None:
        write_traces(trace_csv, results)
    return report


def write_traces(path, results) -> list:
    """One CSV per EMIN run (finest level); suffixed by variant if several."""
    path = Path(path)
    runs = [r for r in results if r.traces]
    written = []
    for r in runs:
        p = path
        if len(runs) > 1:
            tag = re.sub(r"[^A-Za-z0-9]+", "_", r.variant).strip("_")
            p = path.with_name(f"{path.stem}_{tag}{path.suffix}")
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "dE_rel", "energy"])
            for k, rel, e in r.traces[0]:
                w.writerow([k, "" if rel is None else repr(rel), repr(e)])
        written.append(p)
    return written


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="eminamg",
        description="Compare AMG prolongations (tentative, smoothed, energy-minimized) "
                    "as PCG preconditioners.")
    ap.add_argument("--problem", choices=KINDS, default="poisson2d")
    ap.add_argument("--nx", type=int, default=64)
    ap.add_argument("--ny", type=int)
    ap.add_argument("--nz", type=int)
    ap.add_argument("--E", type=float, default=1.0, help="Young's modulus (elasticity)")
    ap.add_argument("--nu", type=float, default=0.3, help="Poisson ratio (elasticity)")
    ap.add_argument("--matrix", help="Matrix Market file for --problem file")
    ap.add_argument("--nullspace", default=None,
                    help="dense Matrix Market near-kernel basis (default: builtin)")
    ap.add_argument("--variant", action="append",
                    help="TENTATIVE, SMOOTHED, EMIN, EMIN-J(n) or EMIN-GS(n); repeatable")
    ap.add_argument("--theta", "--strength-threshold", dest="theta", type=float,
                    help="strength threshold (default 0.25 scalar, 0.06 elasticity)")
    ap.add_argument("--pattern-distance", type=int, default=1)
    ap.add_argument("--tau", type=float, default=0.1)
    ap.add_argument("--emin-maxit", type=int, default=10)
    ap.add_argument("--precond", choices=("jacobi", "sgs"), default="jacobi")
    ap.add_argument("--lmax", type=int, default=3)
    ap.add_argument("--omega", type=float, default=0.7)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--tol", type=float, default=1e-8)
    ap.add_argument("--maxit", type=int, default=500)
    ap.add_argument("--out", default="report.json")
    ap.add_argument("--trace-csv")
    ap.add_argument("--threads", type=int, help="kernel threads (default: all cores)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _problem_from_args(args) -> ProblemSpec:
    ny = args.ny or args.nx
    nz = args.nz or args.nx
    dims = {"poisson2d": (args.nx, ny), "poisson3d": (args.nx, ny, nz),
            "elasticity3d": (args.nx, ny, nz), "file": ()}[args.problem]
    default_ns = "rigid_body" if args.problem == "elasticity3d" else "ones"
    return ProblemSpec(kind=args.problem, dims=dims, E=args.E, nu=args.nu, path=args.matrix,
                       nullspace=args.nullspace or default_ns)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads is not None:
            import numba
            numba.set_num_threads(args.threads)
        problem = _problem_from_args(args)
        cfg = ExperimentConfig(theta=args.theta, pattern_distance=args.pattern_distance,
                               tau=args.tau, precond=args.precond, emin_maxit=args.emin_maxit,
                               lmax=args.lmax, omega=args.omega, seed=args.seed, tol=args.tol,
                               maxit=args.maxit)
        variants = args.variant or ["SMOOTHED", "EMIN-J(2)"]
        for v in variants:
            parse_variant(v, cfg.emin())
        report = run_experiment(problem, variants, cfg, out=args.out, trace_csv=args.trace_csv)
    except (ValueError, OSError) as exc:
        print(f"eminamg: error: {exc}", file=sys.stderr)
        return 2
    for run in report["runs"]:
        h, s = run["hierarchy"], run["solve"]
        print(f"{run['variant']:<12} levels={h['levels']} C_gd={h['C_gd']:.3f} "
              f"C_op={h['C_op']:.3f} n_it={s['n_it']} converged={s['converged']} "
              f"T_p={s['T_p']:.2f}s T_s={s['T_s']:.2f}s T_i={s['T_i']:.2f}s")
    return 0 if all(r["solve"]["converged"] for r in report["runs"]) else 1

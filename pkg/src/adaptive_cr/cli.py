"""Command-line front end.

Subcommands
-----------
solve      adaptive run for one configuration
uniform    uniform-refinement baseline
table1     unit-square presets, b in {(1,0), (3,0), (10,0)}, k in {1, 2}
table2     L-shape presets, b in {(1,0), (3,0), (10,0)}, k in {1, 8}
dump-mesh  write the initial mesh of a domain
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field

from . import exact
from .adaptive import AdaptiveConfig, ConvergenceHistory, run, uniform_study
from .errors import AdaptiveCRError
from .mesh import atomic_write_text, format_mesh, write_mesh

HEADER = "iter,ndof,lambda_re,lambda_im,lambda_dual_re,lambda_dual_im,eta_sq,eta_star_sq,err_exact"
SUBCOMMANDS = ("solve", "uniform", "table1", "table2", "dump-mesh")
TABLE_B = ((1.0, 0.0), (3.0, 0.0), (10.0, 0.0))
TABLE1_K = (1, 2)
TABLE2_K = (1, 8)
OK_TERMINATIONS = ("max_dof", "max_iter")


@dataclass
class CliInvocation:
    subcommand: str
    config: AdaptiveConfig
    out: str | None = None
    mesh_dir: str | None = None
    levels: int = 3
    options: dict = field(default_factory=dict)


def _vector(text: str) -> tuple[float, float]:
    try:
        parts = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}")
    return parts


def _theta(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid float {text!r}")
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"theta must lie in (0, 1), got {value}")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _nonnegative_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {text!r}")
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {value}")
    return value


def _add_common(p: argparse.ArgumentParser, *, problem: bool, table: bool = False):
    if problem:
        p.add_argument("--domain", choices=("square", "lshape"), default="square",
                       help="computational domain")
        p.add_argument("--mesh-file", default=None,
                       help="read the initial mesh from this file instead of --domain")
        p.add_argument("--b", type=_vector, default=(1.0, 0.0), metavar="BX,BY",
                       help="constant convection vector")
        p.add_argument("--k", type=_positive_int, default=1, help="eigenvalue index (1-based)")
        p.add_argument("--exact", type=float, default=None,
                       help="reference eigenvalue for the err_exact column")
    p.add_argument("--theta", type=_theta, default=0.5, help="bulk marking parameter in (0, 1)")
    p.add_argument("--n", type=_positive_int, default=16, help="initial subdivisions per unit length")
    p.add_argument("--max-dof", type=_positive_int, default=50_000,
                   help="stop after the first iteration with more free DOFs than this")
    p.add_argument("--max-iter", type=_nonnegative_int, default=100, help="maximum iteration index")
    p.add_argument("--tol", type=float, default=1e-10, help="eigensolver residual tolerance")
    p.add_argument("--out", default=None,
                   help="output directory for the CSV logs" if table else
                   "CSV log path; standard output when omitted")
    p.add_argument("--mesh-dir", default=None, help="write mesh_<l>.txt for every iteration here")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="adaptive-cr", formatter_class=fmt,
                                     description="Adaptive Crouzeix-Raviart solver for "
                                                 "-Lap u + b.grad u = lambda u")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    _add_common(sub.add_parser("solve", formatter_class=fmt, help="adaptive run"), problem=True)
    p = sub.add_parser("uniform", formatter_class=fmt, help="uniform-refinement baseline")
    _add_common(p, problem=True)
    p.add_argument("--levels", type=_positive_int, default=3, help="number of uniform refinements")
    _add_common(sub.add_parser("table1", formatter_class=fmt, help="unit-square presets"),
                problem=False, table=True)
    _add_common(sub.add_parser("table2", formatter_class=fmt, help="L-shape presets"),
                problem=False, table=True)
    p = sub.add_parser("dump-mesh", formatter_class=fmt, help="write the initial mesh")
    p.add_argument("--domain", choices=("square", "lshape"), default="square", help="domain")
    p.add_argument("--n", type=_positive_int, default=16, help="subdivisions per unit length")
    p.add_argument("--out", default=None, help="mesh file path; standard output when omitted")
    return parser


def parse(args: list[str]) -> CliInvocation:
    """Map command-line arguments onto a :class:`CliInvocation`.

    Usage errors raise ``SystemExit`` with status 2.
    """
    parser = build_parser()
    ns = parser.parse_args(args)
    sub = ns.subcommand
    if sub in ("table1", "table2"):
        cfg = AdaptiveConfig(domain="square" if sub == "table1" else "lshape", theta=ns.theta,
                             initial_n=ns.n, max_dof=ns.max_dof, max_iter=ns.max_iter, tol=ns.tol)
    elif sub == "dump-mesh":
        cfg = AdaptiveConfig(domain=ns.domain, initial_n=ns.n)
    else:
        try:
            cfg = AdaptiveConfig(domain="file" if ns.mesh_file else ns.domain, b=ns.b, theta=ns.theta,
                                 k=ns.k, initial_n=ns.n, max_dof=ns.max_dof, max_iter=ns.max_iter,
                                 tol=ns.tol, exact_lambda=ns.exact, mesh_file=ns.mesh_file,
                                 keep_meshes=ns.mesh_dir is not None)
        except AdaptiveCRError as exc:
            parser.error(str(exc))
    return CliInvocation(subcommand=sub, config=cfg, out=ns.out,
                         mesh_dir=getattr(ns, "mesh_dir", None), levels=getattr(ns, "levels", 3),
                         options={"verbose": getattr(ns, "verbose", False)})


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def format_log(history: ConvergenceHistory) -> str:
    if not history.records:
        raise ValueError("cannot write an empty convergence history")
    rows = [HEADER]
    for r in history.records:
        err = "" if r.err_exact is None else _fmt(r.err_exact)
        rows.append(",".join([
            str(r.iter), str(r.n_dof),
            _fmt(r.lambda_h.real), _fmt(r.lambda_h.imag),
            _fmt(r.lambda_star_h.real), _fmt(r.lambda_star_h.imag),
            _fmt(r.eta_sq_total), _fmt(r.eta_star_sq_total), err,
        ]))
    return "\n".join(rows) + "\n"


def emit_log(history: ConvergenceHistory, path) -> None:
    """Write the convergence log as CSV (atomically; ``None`` means stdout)."""
    text = format_log(history)
    if path is None:
        sys.stdout.write(text)
    else:
        atomic_write_text(path, text)


def dump_meshes(history: ConvergenceHistory, directory) -> list[str]:
    """Write ``mesh_<l>.txt`` for every mesh kept in ``history``."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for rec, mesh in zip(history.records, history.meshes):
        path = os.path.join(directory, f"mesh_{rec.iter}.txt")
        write_mesh(mesh, path)
        paths.append(path)
    return paths


def _reference(domain: str, b, k: int):
    if domain == "square":
        return exact.square_eigenvalue_by_index(b, k)
    return exact.lshape_reference(b, k)


def _run_one(cfg: AdaptiveConfig, out, mesh_dir, uniform_levels=None) -> int:
    if uniform_levels is None:
        history = run(cfg)
    else:
        history = uniform_study(cfg, uniform_levels)
    if history.records:
        emit_log(history, out)
    if mesh_dir is not None:
        dump_meshes(history, mesh_dir)
    if history.termination not in OK_TERMINATIONS:
        print(f"adaptive-cr: run ended with {history.termination}", file=sys.stderr)
        return 1
    return 0


def _run_table(inv: CliInvocation) -> int:
    base = inv.config
    ks = TABLE1_K if inv.subcommand == "table1" else TABLE2_K
    outdir = inv.out or "."
    os.makedirs(outdir, exist_ok=True)
    status = 0
    for b in TABLE_B:
        for k in ks:
            tag = f"{inv.subcommand}_b{b[0]:g}_{b[1]:g}_k{k}"
            cfg = AdaptiveConfig(domain=base.domain, b=b, theta=base.theta, k=k,
                                 initial_n=base.initial_n, max_dof=base.max_dof,
                                 max_iter=base.max_iter, tol=base.tol,
                                 exact_lambda=_reference(base.domain, b, k),
                                 keep_meshes=inv.mesh_dir is not None)
            mesh_dir = None if inv.mesh_dir is None else os.path.join(inv.mesh_dir, tag)
            status |= _run_one(cfg, os.path.join(outdir, f"{tag}.csv"), mesh_dir)
    return status


def main(argv: list[str] | None = None) -> int:
    inv = parse(sys.argv[1:] if argv is None else list(argv))
    if inv.options.get("verbose"):
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        if inv.subcommand == "dump-mesh":
            mesh = inv.config.initial_mesh()
            if inv.out is None:
                sys.stdout.write(format_mesh(mesh))
            else:
                write_mesh(mesh, inv.out)
            return 0
        if inv.subcommand in ("table1", "table2"):
            return _run_table(inv)
        levels = inv.levels if inv.subcommand == "uniform" else None
        return _run_one(inv.config, inv.out, inv.mesh_dir, levels)
    except (AdaptiveCRError, OSError) as exc:
        print(f"adaptive-cr: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

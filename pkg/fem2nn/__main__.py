from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence

import numpy as np
from rich.console import Console
from rich.table import Table

from . import __version__
from .config import Fem2nnConfig
from .errors import Fem2nnError, VerificationError
from .hofem import (
    FEFunction,
    audit_sweep,
    basis_values,
    compile_basis,
    fe_function_net,
    verify_network,
    write_audit_csv,
)
from .instances import INSTANCES, get_instance
from .logging_utils import configure_logging
from .mesh import (
    load_mesh,
    patch_index,
    sample_points,
    save_mesh,
    shape_regularity,
    validate_regularity,
)
from .network import load_network, realize, save_network, size_depth
from .nodes import interpolation_nodes
from .refine import DOMAINS, GeometricMeshSpec, build_domain, geometric_refine
from .runs import Run, RunStore
from .study import (
    convergence_study,
    dof_exponent,
    fit_exponential,
    write_study_csv,
    write_study_svg,
)

_logger = logging.getLogger("fem2nn.cli")
console = Console()


@dataclass
class RunConfig:
    """Parsed command line merged with the environment configuration."""

    command: str
    seed: int
    threads: int
    tol: float
    log_dir: Path
    args: argparse.Namespace
    run: Optional[Run] = None

    @classmethod
    def from_args(cls, args: argparse.Namespace, env: Fem2nnConfig) -> "RunConfig":
        return cls(
            command=" ".join(args.command_path),
            seed=env.seed if args.seed is None else args.seed,
            threads=env.threads if args.threads is None else args.threads,
            tol=env.tol if getattr(args, "tol", None) is None else args.tol,
            log_dir=env.log_dir if args.log_dir is None else Path(args.log_dir),
            args=args,
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fem2nn",
        description="Compile Lagrange finite element functions into exact ReLU/ReLU^2 networks.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--seed", type=int, default=None, help="Sampling seed (default: FEM2NN_SEED or 0)")
    parser.add_argument("--log-dir", default=None, help="Run/log directory (default: FEM2NN_LOG_DIR or ./logs)")
    parser.add_argument("--threads", type=int, default=None, help="Worker cap (default: FEM2NN_THREADS)")
    parser.add_argument("--verbose", action="store_true", help="Mirror log records to the console")
    sub = parser.add_subparsers(dest="cmd", required=True)

    mesh = sub.add_parser("mesh", help="Build, validate or inspect meshes")
    mesh_sub = mesh.add_subparsers(dest="mesh_cmd", required=True)
    build = mesh_sub.add_parser("build", help="Build a built-in domain, optionally graded toward its corners")
    build.add_argument("--domain", choices=DOMAINS, default="lshape")
    build.add_argument("--n", type=int, default=1, help="Structured resolution (cells per unit length)")
    build.add_argument("--levels", type=int, default=0, help="Geometric refinement levels")
    build.add_argument("--sigma", type=float, default=0.5, help="Grading ratio (built-in generator: 0.5)")
    build.add_argument("--out", required=True)
    validate = mesh_sub.add_parser("validate", help="Check regularity and shape of a mesh file")
    validate.add_argument("mesh")
    info = mesh_sub.add_parser("info", help="Print mesh statistics")
    info.add_argument("mesh")

    emulate = sub.add_parser("emulate", help="Compile an FE function (or the whole basis) into a network")
    emulate.add_argument("--mesh", required=True)
    emulate.add_argument("--p", type=int, required=True)
    emulate.add_argument("--coeffs", default=None, help="JSON array of nodal values; omit for the basis")
    emulate.add_argument("--out", required=True)

    verify = sub.add_parser("verify", help="Check a network file against direct FE evaluation")
    verify.add_argument("--net", required=True)
    verify.add_argument("--mesh", required=True)
    verify.add_argument("--p", type=int, required=True)
    verify.add_argument("--coeffs", default=None)
    verify.add_argument("--samples", type=int, default=1000)
    verify.add_argument("--tol", type=float, default=None)

    audit = sub.add_parser("audit", help="Size and depth audit over p = 1..pmax")
    audit.add_argument("--mesh", required=True)
    audit.add_argument("--pmax", type=int, default=6)
    audit.add_argument("--out", required=True)

    study = sub.add_parser(
        "study",
        help="hp convergence study of a singular instance",
        description="hp convergence study. The CSV is byte-reproducible only with --no-timings.",
    )
    study.add_argument("--instance", choices=sorted(INSTANCES), default="lshape")
    study.add_argument("--sigma", type=float, default=0.5)
    study.add_argument("--pmax", type=int, default=6)
    study.add_argument("--delta", type=float, default=None, help="Gevrey index (default: the instance's)")
    study.add_argument("--c-ell", type=float, default=1.0, help="Coupling constant in ell = ceil(c p^(1/delta))")
    study.add_argument("--a", type=float, default=None, help="Radial exponent for configurable instances")
    study.add_argument("--out", required=True)
    study.add_argument("--svg", default=None)
    study.add_argument(
        "--no-timings",
        action="store_true",
        help="Write 0.0 in the seconds column; without it the CSV is not byte-reproducible",
    )

    runs = sub.add_parser("runs", help="Inspect recorded runs")
    runs_sub = runs.add_subparsers(dest="runs_cmd", required=True)
    listing = runs_sub.add_parser("list", help="List runs, newest first")
    listing.add_argument("--label", default=None, help="Only runs with this label")
    show = runs_sub.add_parser("show", help="Show the status and events of one run")
    show.add_argument("run", help="Run id, or a label for its newest run")
    delete = runs_sub.add_parser("delete", help="Delete one run")
    delete.add_argument("run", help="Run id, or a label for its newest run")
    return parser


def _read_coeffs(path: Optional[str]) -> Optional[np.ndarray]:
    if path is None:
        return None
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise Fem2nnError(f"cannot read coefficients from {path}: {exc}") from exc
    return np.asarray(data, dtype=float)


def _start_run(config: RunConfig, label: str) -> Run:
    outputs = [str(p) for p in (getattr(config.args, "out", None), getattr(config.args, "svg", None)) if p]
    run = RunStore(config.log_dir).create(label, command=config.command, seed=config.seed, outputs=outputs)
    config.run = run
    run.logger().log_event("start", {"argv": config.command})
    return run


def cmd_mesh(config: RunConfig) -> int:
    args = config.args
    if args.mesh_cmd == "build":
        mesh = build_domain(args.domain, args.n)
        if args.levels:
            spec = GeometricMeshSpec(sigma=args.sigma, corners=mesh.corners, levels=args.levels, base_mesh=mesh)
            mesh = geometric_refine(spec)[-1]
        save_mesh(mesh, args.out)
        console.print(f"wrote {args.out}: {mesh.n_vertices} vertices, {mesh.n_elements} elements")
        return 0

    mesh = load_mesh(args.mesh)
    if args.mesh_cmd == "validate":
        report = validate_regularity(mesh)
        table = Table(title=f"regularity of {args.mesh}")
        table.add_column("check")
        table.add_column("result")
        table.add_row("regular", "yes" if report.ok else "no")
        table.add_row("violating pairs", str(len(report.violations)))
        table.add_row("degenerate elements", str(len(report.degenerate)))
        if report.ok:
            table.add_row("kappa", f"{shape_regularity(mesh).kappa:.6g}")
        console.print(table)
        for pair in report.violations[:20]:
            console.print(f"  violation: elements {pair[0]} and {pair[1]}")
        return 0 if report.ok else 1

    patches = patch_index(mesh)
    shape = shape_regularity(mesh)
    table = Table(title=f"mesh {args.mesh}")
    table.add_column("quantity")
    table.add_column("value", justify="right")
    for name, value in [
        ("dimension", mesh.dim),
        ("vertices", mesh.n_vertices),
        ("elements", mesh.n_elements),
        ("boundary vertices", len(mesh.boundary_vertices)),
        ("corners", len(mesh.corners)),
        ("max patch size", patches.s_max),
        ("kappa", f"{shape.kappa:.6g}"),
        ("h max", f"{shape.h.max():.6g}"),
        ("volume", f"{mesh.total_volume():.12g}"),
    ]:
        table.add_row(name, str(value))
    console.print(table)
    return 0


def cmd_emulate(config: RunConfig) -> int:
    args = config.args
    run = _start_run(config, "emulate")
    mesh = load_mesh(args.mesh)
    compiled = compile_basis(mesh, args.p)
    coeffs = _read_coeffs(args.coeffs)
    if coeffs is None:
        net = compiled.network
    else:
        net = fe_function_net(FEFunction(mesh, args.p, coeffs, compiled.nodes), compiled.network)
    save_network(net, args.out)
    report = size_depth(net)
    run.logger().log_event(
        "compiled",
        {"p": args.p, "nodes": compiled.nodes.size, "M": report.M, "L": report.L, "out": str(args.out)},
    )
    console.print(f"wrote {args.out}: M={report.M}, L={report.L}, outputs={net.output_dim}")
    return 0


def cmd_verify(config: RunConfig) -> int:
    args = config.args
    run = _start_run(config, "verify")
    mesh = load_mesh(args.mesh)
    net = load_network(args.net)
    nodes = interpolation_nodes(mesh, args.p)
    rng = np.random.default_rng(config.seed)
    points = np.vstack([sample_points(mesh, args.samples, rng), nodes.coords])
    coeffs = _read_coeffs(args.coeffs)
    if coeffs is None:
        expected = basis_values(mesh, nodes, points)
        got = realize(net, points)
        if got.shape != expected.shape:
            raise Fem2nnError(f"network has {got.shape[1]} outputs, basis has {expected.shape[1]}")
        diff = np.abs(got - expected)
        max_error = float(diff.max())
        location = points[int(np.argmax(diff.max(axis=1)))].tolist()
        threshold = config.tol
        passed = max_error <= threshold
    else:
        v = FEFunction(mesh, args.p, coeffs, nodes)
        report = verify_network(net, v, points, tol=config.tol)
        max_error, location, threshold, passed = report.max_error, report.location, report.threshold, report.passed
    run.logger().log_event("verify", {"max_error": max_error, "threshold": threshold, "passed": passed})
    console.print(f"max error {max_error:.3e} (threshold {threshold:.3e}) at {location}")
    if not passed:
        raise VerificationError("network does not match the FE function", max_error, location)
    console.print("[green]exact[/green]")
    return 0


def cmd_audit(config: RunConfig) -> int:
    args = config.args
    run = _start_run(config, "audit")
    mesh = load_mesh(args.mesh)
    sweep = audit_sweep(mesh, args.pmax)
    write_audit_csv(sweep.rows, args.out)
    table = Table(title="size / depth audit")
    for column in ("p", "|N|", "M", "L", "M/|N|", "ReLU layers", "ReLU^2 layers"):
        table.add_column(column, justify="right")
    for row in sweep.rows:
        table.add_row(
            str(row.p), str(row.n_nodes), str(row.M), str(row.L), f"{row.M_over_N:.2f}",
            str(row.relu_layers), str(row.relu2_layers),
        )
        run.logger().log_event("audit_row", {"p": row.p, "M": row.M, "L": row.L, "N": row.n_nodes})
    console.print(table)
    console.print(f"depth constant C = {sweep.depth_constant:.3f}; ratio limit {sweep.ratio_limit:.2f}")
    if sweep.flagged:
        console.print(f"[yellow]M/|N| above limit at p = {sweep.flagged}[/yellow]")
    if not sweep.layer_order_ok:
        console.print("[yellow]layer typing violated: ReLU after ReLU^2 or mixed layer[/yellow]")
    return 0


def cmd_study(config: RunConfig) -> int:
    args = config.args
    run = _start_run(config, f"study-{args.instance}")
    instance = get_instance(args.instance, args.a)
    delta = instance.delta if args.delta is None else args.delta
    log = run.logger()
    records = convergence_study(
        instance,
        sigma=args.sigma,
        p_max=args.pmax,
        c_ell=args.c_ell,
        delta=delta,
        seed=config.seed,
        threads=config.threads,
        on_record=lambda r: log.log_event("record", {"p": r.p, "N": r.n_dofs, "M": r.size, "h1": r.h1_error}),
    )
    write_study_csv(records, args.out, timings=not args.no_timings)
    table = Table(title=f"hp study: {instance.name}")
    for column in ("p", "ell", "N", "M", "L", "L2 error", "H1 error", "seconds"):
        table.add_column(column, justify="right")
    for r in records:
        table.add_row(
            str(r.p), str(r.ell), str(r.n_dofs), str(r.size), str(r.depth),
            f"{r.l2_error:.3e}", f"{r.h1_error:.3e}", f"{r.seconds:.1f}",
        )
    console.print(table)
    if len(records) >= 4:
        fit = fit_exponential(records, instance.corners.shape[1], delta)
        log.log_event("fit", {"b": fit.b, "C": fit.C, "r2": fit.r2})
        console.print(f"fit: b={fit.b:.4g}, C={fit.C:.4g}, R^2={fit.r2:.4f}; dof exponent {dof_exponent(records):.3f}")
        if args.svg:
            write_study_svg(records, fit, args.svg)
    elif args.svg:
        console.print("[yellow]fewer than 4 records; no fit, no SVG[/yellow]")
    return 0


def cmd_runs(config: RunConfig) -> int:
    args = config.args
    store = RunStore(config.log_dir)
    if args.runs_cmd == "list":
        table = Table(title="runs")
        for column in ("id", "status", "command", "created", "seed"):
            table.add_column(column)
        for run in store.list_runs(args.label):
            table.add_row(run.id, run.status, run.command, run.created_at.isoformat(timespec="seconds"), str(run.seed))
        console.print(table)
        return 0
    if args.runs_cmd == "show":
        run = store.resolve(args.run)
        console.print(f"{run.id}: {run.status}, seed {run.seed}, outputs {', '.join(run.outputs) or '-'}")
        for event in run.logger().read_events():
            console.print(f"{event['timestamp']} {event['event']} {json.dumps(event.get('payload', {}))}")
        return 0
    run = store.delete(args.run)
    console.print(f"deleted {run.id}")
    return 0


def _finish_run(config: RunConfig, status: int) -> None:
    if config.run is None:
        return
    RunStore(config.log_dir).finish(config.run, "ok" if status == 0 else "failed")


COMMANDS: Dict[str, Callable[[RunConfig], int]] = {
    "mesh": cmd_mesh,
    "emulate": cmd_emulate,
    "verify": cmd_verify,
    "audit": cmd_audit,
    "study": cmd_study,
    "runs": cmd_runs,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    args.command_path = ["fem2nn", *argv]
    try:
        config = RunConfig.from_args(args, Fem2nnConfig.from_env())
    except Fem2nnError as exc:
        console.print(f"[red]error:[/red] {exc}")
        return 1
    configure_logging(config.log_dir, verbose=args.verbose)
    try:
        status = COMMANDS[args.cmd](config)
    except VerificationError as exc:
        console.print(f"[red]verification failed:[/red] {exc}")
        status = 1
    except Fem2nnError as exc:
        console.print(f"[red]error:[/red] {exc}")
        status = 1
    except Exception:
        _logger.exception("unexpected failure in %s", args.cmd)
        _finish_run(config, 1)
        raise
    _finish_run(config, status)
    return status


if __name__ == "__main__":
    sys.exit(main())

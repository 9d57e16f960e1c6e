"""Command-line driver for the benchmarks.

``chdg run`` builds a benchmark problem, solves it with one of the iterative
methods, and writes the iteration history (``history.csv`` and
``history.json``) and optionally the fields (``fields.vtk``) in the output
directory.

Exit codes are 0 on success, 1 when ``--strict`` is set and the solver did
not converge, 2 for configuration errors, and 3 when a local solve fails or
transmission data is not tangential.
"""

# This file is part of the 'chdg' project and subject
# to the MIT License as defined in the file 'LICENSE',
# at the root of this project.

from __future__ import annotations

import argparse
import logging
import os
from collections import abc
from typing import Any

import numpy as np

from . import __version__
from .benchmarks import (
    DEFAULT_AMPLITUDE,
    DEFAULT_DIRECTION,
    DEFAULT_KAPPA,
    AmplitudeError,
    BenchmarkConfigError,
    BenchmarkSpec,
    ResonanceError,
    build_problem,
    l2_projection_error,
    l2_relative_error,
)
from .export import export_fields, write_history
from .local import SingularLocalSystemError, TangencyError
from .mesh import MeshError
from .reference import UnsupportedDegreeError
from .solvers import Method, SolverConfig, SolverConfigError, solve

logger = logging.getLogger(__name__)

CONFIGURATION_ERRORS = (
    AmplitudeError,
    BenchmarkConfigError,
    MeshError,
    ResonanceError,
    SolverConfigError,
    UnsupportedDegreeError,
)
"""Errors reported with exit code 2."""

EXIT_OK = 0
EXIT_NOT_CONVERGED = 1
EXIT_CONFIGURATION = 2
EXIT_SOLVER = 3

SOLVER_ERRORS = (SingularLocalSystemError, TangencyError)
"""Errors reported with exit code 3."""


def _vector(text: str) -> tuple[float, float, float]:
    try:
        values = tuple(float(v) for v in text.split(","))
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"Invalid vector '{text}'.") from err
    if len(values) != 3:
        raise argparse.ArgumentTypeError(f"Expected 3 components, got '{text}'.")
    return values  # type: ignore[return-value]


def _boundary(text: str) -> tuple[str, str]:
    name, sep, kind = text.partition("=")
    if not sep or not name or kind.strip().upper() not in ("E", "H", "I"):
        raise argparse.ArgumentTypeError(
            f"Invalid boundary '{text}', expected name=E, name=H or name=I."
        )
    return name.strip(), kind.strip().upper()


def make_parser() -> argparse.ArgumentParser:
    """Return the argument parser of the ``chdg`` command."""
    parser = argparse.ArgumentParser(
        prog="chdg",
        description="Hybridized DG solver for the time-harmonic Maxwell equations.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    subparsers = parser.add_subparsers(dest="command", required=True)

    run = subparsers.add_parser(
        "run",
        help="Solve a benchmark problem.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    problem = run.add_argument_group("problem")
    problem.add_argument(
        "--benchmark",
        default="plane-wave",
        choices=("plane-wave", "cavity", "custom"),
        help="Reference solution.",
    )
    problem.add_argument(
        "--mesh", default="box:2", help="'box:N' for the unit cube, or a MSH 4.1 file."
    )
    problem.add_argument(
        "--boundary",
        nargs="+",
        type=_boundary,
        default=[],
        metavar="NAME=KIND",
        help="Boundary kind (E, H or I) of a physical tag, by name or id.",
    )
    problem.add_argument("--p", type=int, default=3, help="Polynomial degree.")
    problem.add_argument(
        "--kappa", type=float, default=DEFAULT_KAPPA, help="Wavenumber."
    )
    problem.add_argument(
        "--kmax", type=int, default=25, help="Truncation of the cavity series (odd)."
    )
    problem.add_argument(
        "--direction",
        type=_vector,
        default=tuple(DEFAULT_DIRECTION),
        metavar="DX,DY,DZ",
        help="Plane-wave direction, normalized.",
    )
    problem.add_argument(
        "--amplitude",
        type=_vector,
        default=tuple(DEFAULT_AMPLITUDE),
        metavar="AX,AY,AZ",
        help="Plane-wave amplitude, orthogonal to the direction.",
    )

    solver = run.add_argument_group("solver")
    solver.add_argument(
        "--solver",
        default="cgnr-modal",
        choices=("fp", "cgnr-nodal", "cgnr-modal", "gmres-nodal", "gmres-modal"),
        help="Iterative method.",
    )
    solver.add_argument(
        "--restart", type=int, default=30, help="GMRES restart, 0 for none."
    )
    solver.add_argument("--rtol", type=float, default=1e-6, help="Relative tolerance.")
    solver.add_argument("--maxit", type=int, default=1000, help="Maximum iterations.")
    solver.add_argument(
        "--threads", type=int, default=1, help="Threads for element-wise work."
    )

    output = run.add_argument_group("output")
    output.add_argument("--out", default="chdg-out", help="Output directory.")
    output.add_argument(
        "--strict",
        action="store_true",
        help="Exit with a nonzero code if the solver does not converge.",
    )
    output.add_argument(
        "--log-error-every",
        type=int,
        default=10,
        metavar="K",
        help="Log the relative error every K iterations, 0 to disable.",
    )
    output.add_argument(
        "--export-vtk", action="store_true", help="Write the fields to fields.vtk."
    )
    output.add_argument(
        "--vtk-nodes",
        action="store_true",
        help="With --export-vtk and p > 1, also write every node to fields_nodes.vtk.",
    )

    verbosity = run.add_mutually_exclusive_group()
    verbosity.add_argument(
        "-v", "--verbose", action="store_true", help="Show debug messages."
    )
    verbosity.add_argument(
        "-q", "--quiet", action="store_true", help="Only show warnings and errors."
    )
    return parser


def spec_from_args(args: argparse.Namespace) -> BenchmarkSpec:
    """Build the benchmark definition from parsed arguments.

    Raises
    ------
    BenchmarkConfigError
        For a degree below 1 or a zero direction, and any invalid
        combination rejected by :class:`BenchmarkSpec`.
    """
    if args.p < 1:
        raise BenchmarkConfigError(
            f"Benchmarks need a degree of at least 1, got {args.p}."
        )
    direction = np.asarray(args.direction, dtype=float)
    norm = np.linalg.norm(direction)
    if norm == 0.0:
        raise BenchmarkConfigError("Plane-wave direction is zero.")
    return BenchmarkSpec(
        kind=args.benchmark,
        kappa=args.kappa,
        mesh=args.mesh,
        p=args.p,
        kmax=args.kmax,
        boundary=dict(args.boundary),
        direction=tuple(direction / norm),  # type: ignore[arg-type]
        amplitude=tuple(args.amplitude),
    )


def config_from_args(args: argparse.Namespace) -> SolverConfig:
    """Build the solver settings from parsed arguments."""
    every = args.log_error_every
    if every < 0:
        raise SolverConfigError(f"--log-error-every must be ≥ 0, got {every}.")
    return SolverConfig(
        method=Method.parse(args.solver),
        restart=args.restart,
        rtol=args.rtol,
        maxit=args.maxit,
        kappa=args.kappa,
        error_every=every if every > 0 else 1,
    )


def run_metadata(
    spec: BenchmarkSpec, cfg: SolverConfig, threads: int
) -> dict[str, Any]:
    """Return the run settings recorded in ``history.json``."""
    return dict(
        benchmark=spec.benchmark.value,
        kappa=spec.kappa,
        p=spec.p,
        mesh=spec.mesh,
        boundary=dict(spec.boundary),
        kmax=spec.kmax,
        solver=cfg.solver_method.value,
        restart=cfg.restart,
        rtol=cfg.rtol,
        maxit=cfg.maxit,
        threads=threads,
    )


def run_benchmark(
    spec: BenchmarkSpec,
    cfg: SolverConfig,
    out: str | os.PathLike,
    threads: int = 1,
    strict: bool = False,
    log_error: bool = True,
    export_vtk: bool = False,
    vtk_nodes: bool = False,
) -> int:
    """Solve a benchmark and write its outputs.

    Parameters
    ----------
    spec
        Benchmark definition.
    cfg
        Solver settings. Its ``error_every`` sets how often the field error
        is logged.
    out
        Output directory, created if needed.
    threads
        Threads for element-wise work.
    strict
        If True, return :data:`EXIT_NOT_CONVERGED` when the solver did not
        converge.
    log_error
        If True, reconstruct the fields to log the relative error during the
        iterations.
    export_vtk
        If True, write the final fields to ``fields.vtk``.
    vtk_nodes
        If True (and `export_vtk`), also write the node point cloud.

    Returns
    -------
    Exit code.
    """
    try:
        problem = build_problem(spec, threads=threads)
    except CONFIGURATION_ERRORS as err:
        logger.error("%s", err)
        return EXIT_CONFIGURATION
    except SOLVER_ERRORS as err:
        logger.error("%s", err)
        return EXIT_SOLVER

    system = problem.system
    monitor = problem.relative_error if log_error else None
    try:
        g, report = solve(
            system.as_linear_operator(),
            problem.rhs,
            cfg,
            mass=system.mass,
            monitor=monitor,
        )
        fields = problem.fields(g)
    except SOLVER_ERRORS as err:
        logger.error("Solver failed: %s", err)
        return EXIT_SOLVER

    mesh, ref, reference = problem.mesh, problem.ref, problem.reference
    final_error = l2_relative_error(fields, mesh, ref, reference)
    projection_error = l2_projection_error(reference, mesh, ref)
    logger.info(
        "Relative error %.4e (projection error %.4e)", final_error, projection_error
    )

    metadata = run_metadata(spec, cfg, threads)
    metadata.update(
        elements=mesh.K,
        unknowns=system.size,
        final_error=final_error,
        projection_error=projection_error,
    )
    write_history(report, out, metadata)
    if export_vtk:
        export_fields(
            fields,
            problem.mesh,
            problem.ref,
            os.path.join(out, "fields.vtk"),
            node_cloud=vtk_nodes,
        )

    if strict and not report.converged:
        logger.error("Solver did not converge (%s).", report.termination.value)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def main(argv: abc.Sequence[str] | None = None) -> int:
    """Entry point of the ``chdg`` command."""
    args = make_parser().parse_args(argv)
    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(
        level=level, format="%(asctime)s %(name)s %(levelname)s: %(message)s"
    )

    try:
        spec = spec_from_args(args)
        cfg = config_from_args(args)
    except CONFIGURATION_ERRORS as err:
        logger.error("%s", err)
        return EXIT_CONFIGURATION

    return run_benchmark(
        spec,
        cfg,
        args.out,
        threads=args.threads,
        strict=args.strict,
        log_error=args.log_error_every > 0,
        export_vtk=args.export_vtk,
        vtk_nodes=args.vtk_nodes,
    )

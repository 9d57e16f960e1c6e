"""Iterative solvers for the hybridized system ``A g = b``.

Five strategies are available (see :class:`Method`): the fixed-point
iteration, CGNR and restarted GMRES, the latter two either with Euclidean
inner products on nodal coefficients ("nodal") or with the inner product of
the face mass matrix ("modal", equivalent to Euclidean products on modal
coefficients of an orthonormal basis).

Every solver records the relative residual ``‖b - A g‖ / ‖b - A g⁰‖`` in the
2-norm and in the M-norm. The 2-norm is used for stopping.
"""

# This file is part of the 'chdg' project and subject
# to the MIT License as defined in the file 'LICENSE',
# at the root of this project.

from __future__ import annotations

import enum
import logging
import time
from collections import abc
from dataclasses import dataclass, field
from typing import Any, Protocol

import numpy as np
import scipy.linalg as la
from scipy.sparse.linalg import LinearOperator

logger = logging.getLogger(__name__)

REORTHOGONALIZATION_THRESHOLD = 0.7
"""Re-orthogonalize when Gram-Schmidt shrinks a vector below this ratio."""


class SolverConfigError(ValueError):
    """Invalid solver configuration."""


class Method(enum.Enum):
    """Iterative method."""

    FIXED_POINT = "fixed_point"
    CGNR_NODAL = "cgnr_nodal"
    CGNR_MODAL = "cgnr_modal"
    GMRES_NODAL = "gmres_nodal"
    GMRES_MODAL = "gmres_modal"

    @classmethod
    def parse(cls, value: str | Method) -> Method:
        """Return a method from its name; dashes and 'fp' are accepted."""
        if isinstance(value, cls):
            return value
        name = str(value).strip().lower().replace("-", "_")
        if name == "fp":
            name = "fixed_point"
        try:
            return cls(name)
        except ValueError as err:
            choices = ", ".join(m.value for m in cls)
            raise SolverConfigError(
                f"Unknown method '{value}' (choose from {choices})."
            ) from err

    @property
    def modal(self) -> bool:
        """True for methods working in the M inner product."""
        return self in (Method.CGNR_MODAL, Method.GMRES_MODAL)


class Termination(enum.Enum):
    """Why a solver stopped."""

    CONVERGED = "converged"
    MAXIT = "maxit"
    STAGNATION = "stagnation"


@dataclass(frozen=True)
class SolverConfig:
    """Settings of an iterative solve.

    Parameters
    ----------
    method
        Iterative method, or its name.
    restart
        GMRES restart length, 0 for unrestarted GMRES.
    rtol
        Relative residual tolerance.
    maxit
        Maximum number of iterations.
    initial_guess
        Initial iterate, zero by default.
    kappa
        Wavenumber, only carried for reporting.
    error_every
        Call the error monitor every this many iterations.
    stagnation_window
        Stop if the best residual did not improve for this many iterations.
    stagnation_factor
        Relative improvement below which an iteration does not count as one.
    """

    method: Method | str = Method.CGNR_MODAL
    restart: int = 30
    rtol: float = 1e-6
    maxit: int = 1000
    initial_guess: np.ndarray | None = field(default=None, repr=False)
    kappa: float | None = None
    error_every: int = 10
    stagnation_window: int = 50
    stagnation_factor: float = 1e-14

    def __post_init__(self):
        object.__setattr__(self, "method", Method.parse(self.method))
        if not self.rtol > 0:
            raise SolverConfigError(f"rtol must be positive, got {self.rtol}.")
        if self.maxit < 1:
            raise SolverConfigError(f"maxit must be at least 1, got {self.maxit}.")
        if self.restart < 0:
            raise SolverConfigError(f"restart must be ≥ 0, got {self.restart}.")
        if self.error_every < 1:
            raise SolverConfigError("error_every must be at least 1.")

    @property
    def solver_method(self) -> Method:
        """Method, typed."""
        assert isinstance(self.method, Method)
        return self.method


@dataclass
class IterationReport:
    """History of an iterative solve."""

    method: Method
    residuals: list[float] = field(default_factory=list)
    """Relative residual in the 2-norm, entry 0 is the initial iterate."""
    residuals_M: list[float] = field(default_factory=list)
    """Relative residual in the M-norm."""
    errors: dict[int, float] = field(default_factory=dict)
    """Relative field error, by iteration, where monitored."""
    termination: Termination = Termination.MAXIT
    wall_time: float = 0.0
    """Seconds spent in the solver."""

    @property
    def iterations(self) -> int:
        """Number of iterations performed."""
        return len(self.residuals) - 1

    @property
    def converged(self) -> bool:
        """True if the tolerance was reached."""
        return self.termination is Termination.CONVERGED

    @property
    def final_residual(self) -> float:
        """Last relative residual in the 2-norm."""
        return self.residuals[-1]

    def as_dict(self) -> dict[str, Any]:
        """Return a JSON-friendly summary."""
        return dict(
            method=self.method.value,
            iterations=self.iterations,
            termination=self.termination.value,
            wall_time=self.wall_time,
            final_residual=self.final_residual,
            residuals=list(self.residuals),
            residuals_M=list(self.residuals_M),
            errors={str(k): v for k, v in self.errors.items()},
        )

    def __str__(self) -> str:
        return (
            f"{self.method.value}: {self.termination.value} after "
            f"{self.iterations} iterations, residual {self.final_residual:.3e}, "
            f"{self.wall_time:.2f}s"
        )


class MassOperator(Protocol):
    """Symmetric positive definite operator defining the M inner product."""

    def apply(self, g: np.ndarray) -> np.ndarray: ...

    def solve(self, g: np.ndarray) -> np.ndarray: ...


class IdentityMass:
    """Euclidean inner product."""

    def apply(self, g: np.ndarray) -> np.ndarray:
        return g

    def solve(self, g: np.ndarray) -> np.ndarray:
        return g


Monitor = abc.Callable[[np.ndarray], float]
"""Returns the relative field error of an iterate."""


class _History:
    """Residual bookkeeping shared by all solvers."""

    def __init__(
        self,
        cfg: SolverConfig,
        mass: MassOperator,
        r0: np.ndarray,
        monitor: Monitor | None,
    ):
        self.cfg = cfg
        self.mass = mass
        self.monitor = monitor
        self.report = IterationReport(cfg.solver_method)
        self.norm0 = float(np.linalg.norm(r0))
        self.norm0_M = _norm(mass, r0)
        self.best = np.inf
        self.since_best = 0
        self._previous = (self.best, self.since_best)
        self.start = time.perf_counter()

    def record(self, r: np.ndarray) -> float:
        rel = float(np.linalg.norm(r)) / self.norm0 if self.norm0 > 0 else 0.0
        rel_m = _norm(self.mass, r) / self.norm0_M if self.norm0_M > 0 else 0.0
        self.report.residuals.append(rel)
        self.report.residuals_M.append(rel_m)
        logger.debug(
            "iter %d: residual %.6e (M-norm %.6e)",
            self.report.iterations,
            rel,
            rel_m,
        )
        self._previous = (self.best, self.since_best)
        if rel < self.best * (1.0 - self.cfg.stagnation_factor):
            self.best = rel
            self.since_best = 0
        else:
            self.since_best += 1
        return rel

    def replace_last(self, r: np.ndarray) -> float:
        """Overwrite the last entry with an explicitly computed residual."""
        self.report.residuals.pop()
        self.report.residuals_M.pop()
        self.best, self.since_best = self._previous
        return self.record(r)

    @property
    def stagnated(self) -> bool:
        return self.since_best >= self.cfg.stagnation_window

    def monitor_error(self, g: np.ndarray | abc.Callable[[], np.ndarray]) -> None:
        """Log the error of the current iterate if due."""
        it = self.report.iterations
        if self.monitor is None or (it % self.cfg.error_every and it > 0):
            return
        if it in self.report.errors:
            return
        iterate = g() if callable(g) else g
        self.report.errors[it] = float(self.monitor(iterate))

    def finish(
        self,
        termination: Termination,
        g: np.ndarray,
    ) -> IterationReport:
        if self.monitor is not None:
            self.report.errors[self.report.iterations] = float(self.monitor(g))
        self.report.termination = termination
        self.report.wall_time = time.perf_counter() - self.start
        log = logger.info if termination is Termination.CONVERGED else logger.warning
        log("%s", self.report)
        return self.report


def _norm(mass: MassOperator, g: np.ndarray) -> float:
    return float(np.sqrt(max(np.vdot(g, mass.apply(g)).real, 0.0)))


def _start(
    A: LinearOperator, b: np.ndarray, cfg: SolverConfig
) -> tuple[np.ndarray, np.ndarray]:
    b = np.asarray(b, dtype=complex).ravel()
    if cfg.initial_guess is None:
        g = np.zeros_like(b)
    else:
        g = np.array(cfg.initial_guess, dtype=complex).ravel()
        if g.shape != b.shape:
            raise SolverConfigError("Initial guess does not match the right-hand side.")
    return b, g


def fixed_point(
    A: LinearOperator,
    b: np.ndarray,
    cfg: SolverConfig,
    mass: MassOperator | None = None,
    monitor: Monitor | None = None,
) -> tuple[np.ndarray, IterationReport]:
    """Solve with the fixed-point iteration ``g ← Π S g + b``.

    Since ``Π S g = g - A g``, the update is ``g ← g + (b - A g)`` and costs a
    single application of ``A``, which also gives the residual.

    Returns
    -------
    g
        Final iterate, or the iterate of smallest residual when the
        iteration did not converge.
    report
        Iteration history.
    """
    b, g = _start(A, b, cfg)
    r = b - A.matvec(g)
    history = _History(cfg, mass or IdentityMass(), r, monitor)
    rel = history.record(r)
    history.monitor_error(g)
    best_g, best = g.copy(), rel

    if rel <= cfg.rtol:
        return g, history.finish(Termination.CONVERGED, g)

    termination = Termination.MAXIT
    for _ in range(cfg.maxit):
        g = g + r
        r = b - A.matvec(g)
        rel = history.record(r)
        history.monitor_error(g)
        if rel < best:
            best_g, best = g.copy(), rel
        if rel <= cfg.rtol:
            termination = Termination.CONVERGED
            break
        if history.stagnated:
            termination = Termination.STAGNATION
            break

    if termination is not Termination.CONVERGED:
        g = best_g
    return g, history.finish(termination, g)


def cgnr(
    A: LinearOperator,
    b: np.ndarray,
    cfg: SolverConfig,
    mass: MassOperator | None = None,
    monitor: Monitor | None = None,
) -> tuple[np.ndarray, IterationReport]:
    """Solve with conjugate gradient on the normal equations.

    The nodal variant is CG on ``Aᴴ A g = Aᴴ b`` with Euclidean products.
    The modal variant runs the same recurrence in the M inner product, with
    ``z = M⁻¹ Aᴴ M r``, ``α = ‖z‖²_M / ‖A p‖²_M`` and
    ``β = ‖z⁺‖²_M / ‖z‖²_M``.

    The residual ``b - A g`` is computed explicitly at every iteration and
    drives the next search direction.
    """
    mass = mass or IdentityMass()
    inner = mass if cfg.solver_method.modal else IdentityMass()

    def normal(r: np.ndarray) -> np.ndarray:
        return inner.solve(A.rmatvec(inner.apply(r)))

    b, g = _start(A, b, cfg)
    r = b - A.matvec(g)
    history = _History(cfg, mass, r, monitor)
    rel = history.record(r)
    history.monitor_error(g)
    if rel <= cfg.rtol:
        return g, history.finish(Termination.CONVERGED, g)

    z = normal(r)
    p = z.copy()
    gamma = _norm(inner, z) ** 2
    termination = Termination.MAXIT
    for _ in range(cfg.maxit):
        if gamma == 0.0:
            termination = Termination.STAGNATION
            break
        q = A.matvec(p)
        q_norm2 = _norm(inner, q) ** 2
        if q_norm2 == 0.0:
            termination = Termination.STAGNATION
            break
        alpha = gamma / q_norm2
        g = g + alpha * p
        r = b - A.matvec(g)
        rel = history.record(r)
        history.monitor_error(g)
        if rel <= cfg.rtol:
            termination = Termination.CONVERGED
            break
        if history.stagnated:
            termination = Termination.STAGNATION
            break

        z = normal(r)
        gamma_new = _norm(inner, z) ** 2
        p = z + (gamma_new / gamma) * p
        gamma = gamma_new

    return g, history.finish(termination, g)


def _givens(a: complex, b: complex) -> tuple[float, complex]:
    """Return ``(c, s)`` so that ``[[c, s], [-s̄, c]]`` maps ``(a, b)`` to ``(ρ, 0)``.

    ``c`` is real.
    """
    if a == 0:
        return 0.0, 1.0 + 0.0j
    rho = float(np.hypot(abs(a), abs(b)))
    return abs(a) / rho, (a / abs(a)) * np.conj(b) / rho


def _coefficients(columns: list[np.ndarray], gvec: list[complex]) -> np.ndarray:
    """Solve the triangular least-squares system of the current cycle."""
    m = len(columns)
    R = np.zeros((m, m), dtype=complex)
    for i, column in enumerate(columns):
        R[: i + 1, i] = column
    rhs = np.asarray(gvec[:m], dtype=complex)
    if np.all(np.abs(np.diag(R)) > 0):
        return la.solve_triangular(R, rhs)
    return la.lstsq(R, rhs)[0]


def _update(g: np.ndarray, basis: list[np.ndarray], y: np.ndarray) -> np.ndarray:
    out = g.copy()
    for yi, v in zip(y, basis[: y.size], strict=True):
        out += yi * v
    return out


def gmres(
    A: LinearOperator,
    b: np.ndarray,
    cfg: SolverConfig,
    mass: MassOperator | None = None,
    monitor: Monitor | None = None,
) -> tuple[np.ndarray, IterationReport]:
    """Solve with restarted GMRES.

    The Arnoldi basis is built with modified Gram-Schmidt in the Euclidean
    (nodal) or M (modal) inner product, with one extra pass when the vector
    norm drops below :data:`REORTHOGONALIZATION_THRESHOLD` of its initial
    value. The Hessenberg matrix is reduced by Givens rotations as it grows.

    The residual vector of iteration ``j`` is ``ĝ_{j+1} u_j``, where ``ĝ`` is
    the rotated right-hand side and ``u_j = -s_j u_{j-1} + c_j v_{j+1}``
    starts from ``u_{-1} = v_0``. Both of its norms are recorded. The
    residual is recomputed explicitly at each restart and at the end.
    """
    mass = mass or IdentityMass()
    inner = mass if cfg.solver_method.modal else IdentityMass()
    cycle = cfg.restart if cfg.restart > 0 else cfg.maxit

    b, g = _start(A, b, cfg)
    r = b - A.matvec(g)
    history = _History(cfg, mass, r, monitor)
    rel = history.record(r)
    history.monitor_error(g)
    if rel <= cfg.rtol:
        return g, history.finish(Termination.CONVERGED, g)

    total = 0
    termination = Termination.MAXIT
    while True:
        w_r = inner.apply(r)
        beta = float(np.sqrt(max(np.vdot(r, w_r).real, 0.0)))
        basis = [r / beta]
        weighted = [w_r / beta]
        columns: list[np.ndarray] = []
        rotations: list[tuple[float, complex]] = []
        gvec: list[complex] = [complex(beta)]
        direction = basis[0]
        breakdown = False
        stop = False

        for j in range(cycle):
            w = A.matvec(basis[j])
            total += 1
            h = np.zeros(j + 2, dtype=complex)
            norm_before = _norm(inner, w)
            for _ in range(2):
                for i in range(j + 1):
                    coef = np.vdot(weighted[i], w)
                    h[i] += coef
                    w = w - coef * basis[i]
                w_w = inner.apply(w)
                norm_w = float(np.sqrt(max(np.vdot(w, w_w).real, 0.0)))
                if norm_w >= REORTHOGONALIZATION_THRESHOLD * norm_before:
                    break
                norm_before = norm_w
            h[j + 1] = norm_w

            for i, (c, s) in enumerate(rotations):
                h[i], h[i + 1] = (
                    c * h[i] + s * h[i + 1],
                    -np.conj(s) * h[i] + c * h[i + 1],
                )
            c, s = _givens(h[j], h[j + 1])
            rotations.append((c, s))
            h[j] = c * h[j] + s * h[j + 1]
            columns.append(h[: j + 1])
            gvec.append(-np.conj(s) * gvec[j])
            gvec[j] = c * gvec[j]

            if norm_w > 0:
                v_next, w_next = w / norm_w, w_w / norm_w
            else:
                v_next, w_next = np.zeros_like(w), np.zeros_like(w_w)
            direction = -s * direction + c * v_next
            rel = history.record(gvec[j + 1] * direction)

            def iterate(g=g, columns=columns, gvec=gvec, basis=basis):
                return _update(g, basis, _coefficients(columns, gvec))

            history.monitor_error(iterate)

            breakdown = norm_w <= 1e-14 * beta
            if rel <= cfg.rtol or breakdown:
                break
            if total >= cfg.maxit or history.stagnated:
                stop = True
                break
            basis.append(v_next)
            weighted.append(w_next)

        g = _update(g, basis, _coefficients(columns, gvec))
        r = b - A.matvec(g)
        rel = history.replace_last(r)
        if rel <= cfg.rtol:
            termination = Termination.CONVERGED
            break
        if history.stagnated:
            termination = Termination.STAGNATION
            break
        if stop or total >= cfg.maxit:
            termination = Termination.MAXIT
            break
        if breakdown:
            logger.debug("Breakdown without convergence, restarting")

    return g, history.finish(termination, g)


def solve(
    A: LinearOperator,
    b: np.ndarray,
    cfg: SolverConfig,
    mass: MassOperator | None = None,
    monitor: Monitor | None = None,
) -> tuple[np.ndarray, IterationReport]:
    """Solve ``A g = b`` with the method of `cfg`.

    Parameters
    ----------
    A
        Linear operator with ``matvec`` and ``rmatvec``.
    b
        Right-hand side (any shape, flattened).
    cfg
        Solver settings.
    mass
        Operator of the M inner product. Identity if None.
    monitor
        Called with iterates to log the relative error.

    Returns
    -------
    g
        Solution as a flat vector.
    report
        Iteration history.
    """
    method = cfg.solver_method
    logger.info(
        "Solving with %s (restart=%d, rtol=%.1e, maxit=%d)",
        method.value,
        cfg.restart,
        cfg.rtol,
        cfg.maxit,
    )
    if method is Method.FIXED_POINT:
        return fixed_point(A, b, cfg, mass, monitor)
    if method in (Method.CGNR_NODAL, Method.CGNR_MODAL):
        return cgnr(A, b, cfg, mass, monitor)
    return gmres(A, b, cfg, mass, monitor)

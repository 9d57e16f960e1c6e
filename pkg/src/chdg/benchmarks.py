"""Benchmark problems and error measures.

Two reference solutions are available:

* a plane wave ``e = e0 exp(iκ d·x)``, ``h = -d × e`` in free space, imposed
  through boundary data on any mix of boundary kinds;
* the field in the unit cube with perfectly conducting walls driven by the
  constant current ``J = (-i/κ, 0, 0)``, given as a truncated sine series.
"""

# This file is part of the 'chdg' project and subject
# to the MIT License as defined in the file 'LICENSE',
# at the root of this project.

from __future__ import annotations

import enum
import logging
import os
from collections import abc
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .local import VolumeSource, cross, tangential_project
from .mesh import (
    BoundaryKind,
    Mesh,
    RawMesh,
    build_box_mesh,
    build_connectivity,
    read_msh,
)
from .quadrature import tetrahedron_rule
from .reference import ReferenceElement, get_reference
from .transmission import BoundarySources, SolutionFields, TransmissionSystem

logger = logging.getLogger(__name__)

DEFAULT_KAPPA = 2.1 * np.pi
DEFAULT_DIRECTION = np.ones(3) / np.sqrt(3.0)
DEFAULT_AMPLITUDE = np.array([0.0, 1.0, -1.0]) / np.sqrt(2.0)

_CAVITY_BOUNDARY = "The cavity benchmark requires an all-E boundary."

VectorField = abc.Callable[[np.ndarray], np.ndarray]
"""Maps points (..., 3) to complex vectors (..., 3)."""


class BenchmarkConfigError(ValueError):
    """Invalid benchmark definition."""


class AmplitudeError(ValueError):
    """Plane wave with a non-unit direction or a non-transverse amplitude."""


class ResonanceError(ValueError):
    """Wavenumber at a resonance of the cavity."""

    def __init__(self, kappa: float, k2: int, k3: int):
        self.mode = (k2, k3)
        super().__init__(
            f"Wavenumber {kappa:g} resonates with cavity mode (k2={k2}, k3={k3})."
        )


class BenchmarkKind(enum.Enum):
    """Available benchmarks."""

    PLANE_WAVE = "plane_wave"
    CAVITY = "cavity"
    CUSTOM = "custom"

    @classmethod
    def parse(cls, value: str | BenchmarkKind) -> BenchmarkKind:
        """Return a kind from its name, dashes accepted."""
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower().replace("-", "_"))
        except ValueError as err:
            raise BenchmarkConfigError(f"Unknown benchmark '{value}'.") from err


@dataclass(frozen=True)
class ReferenceSolution:
    """Exact electric and magnetic fields."""

    e: VectorField
    h: VectorField
    name: str = ""


def plane_wave_reference(
    kappa: float,
    direction: abc.Sequence[float] | np.ndarray = DEFAULT_DIRECTION,
    amplitude: abc.Sequence[complex] | np.ndarray = DEFAULT_AMPLITUDE,
) -> ReferenceSolution:
    """Return the plane wave ``e = e0 exp(iκ d·x)``, ``h = -d × e``.

    Raises
    ------
    AmplitudeError
        If `direction` is not a unit vector or `amplitude` is not
        orthogonal to it.
    """
    d = np.asarray(direction, dtype=float)
    e0 = np.asarray(amplitude, dtype=complex)
    if abs(np.linalg.norm(d) - 1.0) > 1e-12:
        raise AmplitudeError(f"Direction {d} is not a unit vector.")
    if abs(np.dot(d, e0)) > 1e-12 * max(1.0, float(np.linalg.norm(e0))):
        raise AmplitudeError(f"Amplitude {e0} is not orthogonal to direction {d}.")
    h0 = -np.cross(d, e0)

    def e_ref(x: np.ndarray) -> np.ndarray:
        phase = np.exp(1j * kappa * (np.asarray(x) @ d))
        return phase[..., None] * e0

    def h_ref(x: np.ndarray) -> np.ndarray:
        phase = np.exp(1j * kappa * (np.asarray(x) @ d))
        return phase[..., None] * h0

    return ReferenceSolution(e_ref, h_ref, "plane_wave")


def reference_boundary_sources(reference: ReferenceSolution) -> BoundarySources:
    """Return boundary data satisfied by `reference` on every boundary kind."""

    def s_e(x: np.ndarray, n: np.ndarray) -> np.ndarray:
        return cross(n, reference.e(x))

    def s_h(x: np.ndarray, n: np.ndarray) -> np.ndarray:
        return cross(n, reference.h(x))

    def s_i(x: np.ndarray, n: np.ndarray) -> np.ndarray:
        return tangential_project(n, reference.e(x)) + cross(n, reference.h(x))

    return BoundarySources(s_e, s_h, s_i)


def cavity_modes(kmax: int) -> np.ndarray:
    """Return the odd mode numbers 1, 3, ..., `kmax`."""
    if kmax < 1 or kmax % 2 == 0:
        raise BenchmarkConfigError(
            f"Truncation must be a positive odd number, got {kmax}."
        )
    return np.arange(1, kmax + 1, 2)


def cavity_coefficients(kappa: float, kmax: int = 25) -> np.ndarray:
    """Return the series coefficients of the cavity field, indexed [k2, k3].

    Raises
    ------
    ResonanceError
        If ``κ² = π² (k2² + k3²)`` for a retained mode.
    """
    k = cavity_modes(kmax)
    k2, k3 = np.meshgrid(k, k, indexing="ij")
    eig = np.pi**2 * (k2**2 + k3**2)
    close = np.abs(eig - kappa**2) <= 1e-10 * kappa**2
    if np.any(close):
        i, j = np.argwhere(close)[0]
        raise ResonanceError(kappa, int(k[i]), int(k[j]))
    return 16.0 / (np.pi**2 * k2 * k3 * (eig - kappa**2))


def cavity_reference(
    kappa: float, kmax: int = 25
) -> tuple[ReferenceSolution, VectorField]:
    """Return the cavity field and its driving current density.

    The electric field is ``(u(y, z), 0, 0)`` with
    ``u = Σ c_{k2,k3} sin(k2 π y) sin(k3 π z)`` over odd mode numbers up to
    `kmax`. The magnetic field ``h = -∇ × e / (iκ)`` is summed term by term.
    The current is ``J = (-i/κ, 0, 0)``.
    """
    coef = cavity_coefficients(kappa, kmax)
    k = cavity_modes(kmax) * np.pi

    def factors(x: np.ndarray):
        x = np.asarray(x, dtype=float)
        y, z = x[..., 1, None], x[..., 2, None]
        return np.sin(k * y), np.cos(k * y), np.sin(k * z), np.cos(k * z)

    def e_ref(x: np.ndarray) -> np.ndarray:
        sy, _, sz, _ = factors(x)
        u = np.einsum("...i,ij,...j->...", sy, coef, sz)
        out = np.zeros(np.shape(x), dtype=complex)
        out[..., 0] = u
        return out

    def h_ref(x: np.ndarray) -> np.ndarray:
        sy, cy, sz, cz = factors(x)
        du_dy = np.einsum("...i,ij,...j->...", cy * k, coef, sz)
        du_dz = np.einsum("...i,ij,...j->...", sy, coef, cz * k)
        out = np.zeros(np.shape(x), dtype=complex)
        out[..., 1] = 1j / kappa * du_dz
        out[..., 2] = -1j / kappa * du_dy
        return out

    current = np.array([-1j / kappa, 0.0, 0.0])

    def j_ref(x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(current, np.shape(x)).astype(complex)

    return ReferenceSolution(e_ref, h_ref, "cavity"), j_ref


# Error measures


def _quadrature_data(mesh: Mesh, ref: ReferenceElement):
    points, weights = tetrahedron_rule(2 * ref.p + 2)
    interp = ref.interpolation_matrix(points)
    physical = mesh.vertices[mesh.tetrahedra[:, None, 0]] + np.einsum(
        "kde,qe->kqd", mesh.jacobians, points + 1.0
    )
    scaled = mesh.determinants[:, None] * weights[None, :]
    return interp, physical, scaled


def l2_relative_error(
    fields: SolutionFields,
    mesh: Mesh,
    ref: ReferenceElement,
    reference: ReferenceSolution,
) -> float:
    """Return the relative L² error of `fields` over the whole mesh.

    ``√((‖e - e_ref‖² + ‖h - h_ref‖²) / (‖e_ref‖² + ‖h_ref‖²))``, with
    integrals from a volume quadrature exact to degree 2p+2.
    """
    if fields.e.shape[0] != mesh.K:
        raise ValueError("Fields do not cover every element.")
    interp, physical, scaled = _quadrature_data(mesh, ref)
    num = 0.0
    den = 0.0
    for approx, exact in [(fields.e, reference.e), (fields.h, reference.h)]:
        values = np.einsum("qn,kdn->kqd", interp, approx)
        expected = np.broadcast_to(exact(physical), values.shape)
        num += float(np.sum(scaled * np.sum(np.abs(values - expected) ** 2, axis=-1)))
        den += float(np.sum(scaled * np.sum(np.abs(expected) ** 2, axis=-1)))
    return float(np.sqrt(num / den)) if den > 0 else float(np.sqrt(num))


def interpolate(
    reference: ReferenceSolution, mesh: Mesh, ref: ReferenceElement
) -> SolutionFields:
    """Return the nodal interpolant of `reference`."""
    nodes = mesh.node_coordinates(ref)
    e = np.broadcast_to(reference.e(nodes), nodes.shape)
    h = np.broadcast_to(reference.h(nodes), nodes.shape)
    return SolutionFields(
        np.transpose(e, (0, 2, 1)).astype(complex),
        np.transpose(h, (0, 2, 1)).astype(complex),
    )


def l2_projection(
    reference: ReferenceSolution, mesh: Mesh, ref: ReferenceElement
) -> SolutionFields:
    """Return the element-wise L² projection of `reference`.

    Moments against the nodal basis are integrated by quadrature and the mass
    matrix ``MK = |J| Mref`` is solved for the nodal values.
    """
    interp, physical, scaled = _quadrature_data(mesh, ref)
    factor = la.cho_factor(ref.Mref)
    out = []
    for exact in (reference.e, reference.h):
        values = np.broadcast_to(exact(physical), physical.shape)
        moments = np.einsum("qn,kq,kqd->nkd", interp, scaled, values)
        coefs = la.cho_solve(factor, moments.reshape(ref.Np, -1))
        coefs = coefs.reshape(ref.Np, mesh.K, 3) / mesh.determinants[None, :, None]
        out.append(np.transpose(coefs, (1, 2, 0)))
    return SolutionFields(out[0], out[1])


def l2_projection_error(
    reference: ReferenceSolution, mesh: Mesh, ref: ReferenceElement
) -> float:
    """Return the relative L² error of the best approximation of `reference`."""
    return l2_relative_error(l2_projection(reference, mesh, ref), mesh, ref, reference)


# Benchmark definitions


def _parse_box(mesh: str) -> int | None:
    if not mesh.startswith("box:"):
        return None
    try:
        n = int(mesh[4:])
    except ValueError as err:
        raise BenchmarkConfigError(f"Invalid box mesh '{mesh}'.") from err
    if n < 1:
        raise BenchmarkConfigError(f"Invalid box mesh '{mesh}'.")
    return n


@dataclass(frozen=True)
class BenchmarkSpec:
    """Definition of a benchmark run.

    Parameters
    ----------
    kind
        Benchmark kind, or its name.
    kappa
        Wavenumber.
    mesh
        ``box:N`` for the unit cube split in N³ hexahedra, or the path of a
        MSH 4.1 file.
    p
        Polynomial degree.
    kmax
        Truncation of the cavity series.
    boundary
        Boundary kind of physical tags (by name or id). Box faces are named
        xmin, xmax, ymin, ymax, zmin, zmax.
    direction, amplitude
        Plane-wave parameters.
    """

    kind: BenchmarkKind | str = BenchmarkKind.PLANE_WAVE
    kappa: float = DEFAULT_KAPPA
    mesh: str = "box:2"
    p: int = 3
    kmax: int = 25
    boundary: dict[str, str] = field(default_factory=dict)
    direction: tuple[float, float, float] = tuple(DEFAULT_DIRECTION)  # type: ignore
    amplitude: tuple[complex, complex, complex] = tuple(  # type: ignore
        DEFAULT_AMPLITUDE
    )

    def __post_init__(self):
        object.__setattr__(self, "kind", BenchmarkKind.parse(self.kind))
        if not self.kappa > 0:
            raise BenchmarkConfigError(
                f"Wavenumber must be positive, got {self.kappa}."
            )
        if not 0 <= self.p <= 10:
            raise BenchmarkConfigError(f"Degree must be in [0, 10], got {self.p}.")
        cavity_modes(self.kmax)
        kinds = {
            name: BoundaryKind.parse(kind).value for name, kind in self.boundary.items()
        }
        object.__setattr__(self, "boundary", kinds)
        if self.benchmark is BenchmarkKind.CAVITY and any(
            k != "E" for k in kinds.values()
        ):
            raise BenchmarkConfigError(_CAVITY_BOUNDARY)
        if self.benchmark is BenchmarkKind.CUSTOM and not self.boundary:
            raise BenchmarkConfigError(
                "The custom benchmark requires boundary kinds (--boundary)."
            )
        _parse_box(self.mesh)

    @property
    def benchmark(self) -> BenchmarkKind:
        """Kind, typed."""
        assert isinstance(self.kind, BenchmarkKind)
        return self.kind

    @property
    def box_size(self) -> int | None:
        """Number of subdivisions for ``box:N`` meshes, None for files."""
        return _parse_box(self.mesh)

    @property
    def default_kind(self) -> BoundaryKind:
        """Boundary kind of untagged box faces."""
        if self.benchmark is BenchmarkKind.CAVITY:
            return BoundaryKind.E
        return BoundaryKind.I

    def load_mesh(self) -> Mesh:
        """Build the mesh with connectivity."""
        n = self.box_size
        raw: RawMesh
        if n is not None:
            raw = build_box_mesh(n, tags=self.default_kind)
        else:
            if not os.path.isfile(self.mesh):
                raise BenchmarkConfigError(f"Mesh file '{self.mesh}' not found.")
            raw = read_msh(self.mesh)
        mesh = build_connectivity(raw, self.boundary)
        if self.benchmark is BenchmarkKind.CAVITY and any(
            kind is not BoundaryKind.E for kind in mesh.boundary.values()
        ):
            raise BenchmarkConfigError(_CAVITY_BOUNDARY)
        return mesh


@dataclass
class Problem:
    """Discretized benchmark, ready to be solved."""

    spec: BenchmarkSpec
    mesh: Mesh
    ref: ReferenceElement
    system: TransmissionSystem
    rhs: np.ndarray
    """Right-hand side, shaped like the skeleton."""
    reference: ReferenceSolution

    def fields(self, g: np.ndarray) -> SolutionFields:
        """Reconstruct the fields from the tangential part of skeleton data.

        Iterative solutions carry normal components at rounding level.
        """
        return self.system.reconstruct(self.system.tangential_part(g))

    def relative_error(self, g: np.ndarray) -> float:
        """Reconstruct the fields from skeleton data and return their error."""
        fields = self.fields(g)
        return l2_relative_error(fields, self.mesh, self.ref, self.reference)


def build_problem(spec: BenchmarkSpec, threads: int = 1) -> Problem:
    """Build mesh, operators and right-hand side of a benchmark."""
    mesh = spec.load_mesh()
    ref = get_reference(spec.p)
    logger.info("Benchmark %s on %s, p=%d", spec.benchmark.value, mesh, spec.p)

    if spec.benchmark is BenchmarkKind.CAVITY:
        reference, current = cavity_reference(spec.kappa, spec.kmax)
        source = VolumeSource.from_function(mesh.node_coordinates(ref), current)
        sources = BoundarySources()
    else:
        reference = plane_wave_reference(spec.kappa, spec.direction, spec.amplitude)
        source = VolumeSource.absent()
        sources = reference_boundary_sources(reference)

    system = TransmissionSystem(mesh, ref, spec.kappa, source, threads=threads)
    rhs = system.build_rhs(sources)
    return Problem(spec, mesh, ref, system, rhs, reference)

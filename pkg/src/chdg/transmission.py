"""Skeleton operators of the hybridized problem.

The skeleton unknown is the incoming transmission data on every
(element, local face) pair. It is stored as a complex array of shape
(K, 4, 3, Nfp), element-major, or flattened in that order. Interior faces
contribute two slots, boundary faces one.

The hybridized problem reads ``(I - Π S) g = b`` where ``S`` is the scattering
operator (local solves followed by outgoing traces) and ``Π`` the exchange
operator.
"""

# This file is part of the 'chdg' project and subject
# to the MIT License as defined in the file 'LICENSE',
# at the root of this project.

from __future__ import annotations

import logging
from collections import abc
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
from scipy.sparse.linalg import LinearOperator

from .local import (
    ElementOperator,
    FieldState,
    VolumeSource,
    check_tangency,
    cross,
    tangential_project,
)
from .mesh import BoundaryKind, Mesh
from .quadrature import triangle_rule
from .reference import ReferenceElement, elemental_matrices, face_embedding
from .util import map_chunks

logger = logging.getLogger(__name__)

SurfaceData = abc.Callable[[np.ndarray, np.ndarray], np.ndarray]
"""Maps physical points (..., 3) and unit normals (..., 3) to complex vectors."""

BOUNDARY_SIGNS = {BoundaryKind.E: -1.0, BoundaryKind.H: 1.0, BoundaryKind.I: 0.0}
"""Action of the exchange operator on boundary faces."""


@dataclass
class BoundarySources:
    """Surface data of the boundary conditions. Missing data is zero."""

    s_E: SurfaceData | None = None
    """Electric data, ``n × e = s_E`` on Γ_E."""
    s_H: SurfaceData | None = None
    """Magnetic data, ``n × h = s_H`` on Γ_H."""
    s_I: SurfaceData | None = None
    """Impedance data, ``-n × (n × e) + n × h = s_I`` on Γ_I."""

    def rhs_values(
        self, kind: BoundaryKind, points: np.ndarray, normals: np.ndarray
    ) -> np.ndarray | None:
        """Evaluate the right-hand side formula of `kind` at `points`.

        ``-2 n × s_E`` on Γ_E, ``2 πᵗ(s_H)`` on Γ_H, ``πᵗ(s_I)`` on Γ_I.
        Returns None if the corresponding data is missing.
        """
        if kind is BoundaryKind.E and self.s_E is not None:
            return -2.0 * cross(normals, self.s_E(points, normals))
        if kind is BoundaryKind.H and self.s_H is not None:
            return 2.0 * tangential_project(normals, self.s_H(points, normals))
        if kind is BoundaryKind.I and self.s_I is not None:
            return tangential_project(normals, self.s_I(points, normals))
        return None


class FaceMass:
    """Block-diagonal face mass matrix of the skeleton.

    Blocks are the reference face mass matrices scaled by the face area
    scale. Their inverses come from a Cholesky factorization of the reference
    blocks.

    Parameters
    ----------
    face_scales
        Area scale of every (element, face), shape (K, 4).
    ref
        Reference element.
    """

    def __init__(self, face_scales: np.ndarray, ref: ReferenceElement):
        self.shape = (face_scales.shape[0], 4, 3, ref.Nfp)
        self.blocks = face_scales[:, :, None, None] * ref.face_M2ref[None]
        """Mass blocks, shape (K, 4, Nfp, Nfp)."""
        eye = np.eye(ref.Nfp)
        inv_ref = np.stack(
            [la.cho_solve(la.cho_factor(m), eye) for m in ref.face_M2ref]
        )
        self.inverse_blocks = inv_ref[None] / face_scales[:, :, None, None]

    def _apply(self, blocks: np.ndarray, g: np.ndarray) -> np.ndarray:
        shaped = np.reshape(g, self.shape)
        out = np.einsum("kfmn,kfdn->kfdm", blocks, shaped)
        return out.reshape(np.shape(g))

    def apply(self, g: np.ndarray) -> np.ndarray:
        """Return ``M g``, in the layout of `g` (flat or shaped)."""
        return self._apply(self.blocks, g)

    def solve(self, g: np.ndarray) -> np.ndarray:
        """Return ``M⁻¹ g``, in the layout of `g` (flat or shaped)."""
        return self._apply(self.inverse_blocks, g)

    def inner(self, g1: np.ndarray, g2: np.ndarray) -> complex:
        """Return ``⟨g1, g2⟩ = ∫ g1 · conj(g2)`` over the skeleton."""
        return complex(np.vdot(np.ravel(g2), np.ravel(self.apply(g1))))

    def norm(self, g: np.ndarray) -> float:
        """Return the M-norm of `g`."""
        return float(np.sqrt(max(self.inner(g, g).real, 0.0)))


@dataclass
class SolutionFields:
    """Fields on every element."""

    e: np.ndarray
    """Electric field, shape (K, 3, Np)."""
    h: np.ndarray
    """Magnetic field, shape (K, 3, Np)."""

    def state(self, k: int) -> FieldState:
        """Return the fields of element `k`."""
        return FieldState(k, self.e[k], self.h[k])

    @classmethod
    def zeros(cls, K: int, Np: int) -> SolutionFields:
        """Return zero fields."""
        return cls(np.zeros((K, 3, Np), complex), np.zeros((K, 3, Np), complex))


class TransmissionSystem:
    """Hybridized system of a mesh, a degree and a wavenumber.

    Local problems are assembled and factorized on construction. The
    per-element scattering matrices are kept dense, so that applying ``S`` is
    a batched matrix-vector product.

    Parameters
    ----------
    mesh
        Mesh with connectivity.
    ref
        Reference element.
    kappa
        Wavenumber.
    source
        Volume current density, optional.
    threads
        Number of threads used for element-wise work.
    """

    def __init__(
        self,
        mesh: Mesh,
        ref: ReferenceElement,
        kappa: float,
        source: VolumeSource | None = None,
        threads: int = 1,
    ):
        self.mesh = mesh
        self.ref = ref
        self.kappa = kappa
        self.source = source if source is not None else VolumeSource.absent()
        self.threads = threads
        self.shape = (mesh.K, 4, 3, ref.Nfp)
        self.size = int(np.prod(self.shape))
        """Number of skeleton unknowns."""
        if self.source.current is not None and self.source.current.shape != (
            mesh.K,
            3,
            ref.Np,
        ):
            raise ValueError("Volume source does not match the mesh and degree.")

        self.operators: list[ElementOperator] = [None] * mesh.K  # type: ignore
        nloc = 12 * ref.Nfp
        self.scattering = np.empty((mesh.K, nloc, nloc), dtype=complex)
        self.source_response = np.zeros((mesh.K, nloc), dtype=complex)

        def build(chunk: slice) -> None:
            for k in range(mesh.K)[chunk]:
                matrices = elemental_matrices(ref, mesh.geometry[k])
                op = ElementOperator(k, kappa, matrices, mesh.normals[k])
                self.operators[k] = op
                self.scattering[k] = op.scattering_matrix()
                current = self.source.element(k)
                if current is not None:
                    self.source_response[k] = op.source_response(current)

        map_chunks(build, mesh.K, threads)
        self.adjoint_scattering = np.conj(np.transpose(self.scattering, (0, 2, 1)))
        self.mass = FaceMass(mesh.face_scales, ref)
        self._build_exchange()
        logger.debug(
            "Transmission system: %d elements, p=%d, %d unknowns",
            mesh.K,
            ref.p,
            self.size,
        )

    def _build_exchange(self) -> None:
        mesh = self.mesh
        perm = mesh.match_face_nodes(self.ref)
        kk, ff, dd, ii = np.indices(self.shape)
        k2 = mesh.neighbor_element[kk, ff]
        f2 = mesh.neighbor_face[kk, ff]
        interior = k2 >= 0

        src = np.ravel_multi_index((kk, ff, dd, ii), self.shape)
        sign = np.ones(self.shape)
        j2 = perm[kk, ff, ii]
        src[interior] = np.ravel_multi_index(
            (k2[interior], f2[interior], dd[interior], j2[interior]), self.shape
        )
        for (k, f), kind in mesh.boundary.items():
            sign[k, f] = BOUNDARY_SIGNS[kind]

        self.exchange_source = src.ravel()
        """Flat index gathered into each slot by the exchange operator."""
        self.exchange_sign = sign.ravel()
        """Sign applied to each gathered value."""

    # Operators

    def _as_shape(self, g: np.ndarray) -> np.ndarray:
        return np.reshape(np.asarray(g), self.shape)

    def apply_exchange(self, g: np.ndarray) -> np.ndarray:
        """Return ``Π g``, in the layout of `g`.

        Interior slots receive the neighbour's values, re-ordered through the
        face node permutation. Γ_E slots are negated, Γ_H slots copied, Γ_I
        slots zeroed.
        """
        flat = np.ravel(g)
        out = self.exchange_sign * flat[self.exchange_source]
        return out.reshape(np.shape(g))

    def apply_exchange_adjoint(self, g: np.ndarray) -> np.ndarray:
        """Return ``Πᴴ g``, in the layout of `g`."""
        flat = np.ravel(g)
        out = np.zeros_like(flat, dtype=np.result_type(flat, float))
        out[self.exchange_source] = self.exchange_sign * flat
        return out.reshape(np.shape(g))

    def _batched(self, matrices: np.ndarray, g: np.ndarray) -> np.ndarray:
        vec = np.reshape(np.asarray(g, dtype=complex), (self.mesh.K, -1))
        out = np.empty_like(vec)

        def work(chunk: slice) -> None:
            out[chunk] = np.matmul(matrices[chunk], vec[chunk, :, None])[..., 0]

        map_chunks(work, self.mesh.K, self.threads)
        return out

    def tangential_part(self, g: np.ndarray) -> np.ndarray:
        """Return the face-wise tangential projection of `g`, in its layout."""
        shaped = self._as_shape(g)
        n = self.mesh.normals[..., None]
        out = shaped - n * np.sum(n * shaped, axis=2, keepdims=True)
        return out.reshape(np.shape(g))

    def apply_scattering(
        self, g: np.ndarray, with_source: bool = False, check: bool = True
    ) -> np.ndarray:
        """Return ``S g``, in the layout of `g`.

        Parameters
        ----------
        g
            Incoming data, tangential.
        with_source
            If True, add the outgoing data produced by the volume source.
        check
            If False, the tangency of `g` is not verified.

        Raises
        ------
        TangencyError
            If `check` and `g` has a normal component.
        """
        if check:
            check_tangency(self.mesh.normals, self._as_shape(g))
        out = self._batched(self.scattering, g)
        if with_source:
            out += self.source_response
        return out.reshape(np.shape(g))

    def apply_scattering_adjoint(self, g: np.ndarray) -> np.ndarray:
        """Return ``Sᴴ g``, in the layout of `g`."""
        return self._batched(self.adjoint_scattering, g).reshape(np.shape(g))

    def apply_A(self, g: np.ndarray, check: bool = True) -> np.ndarray:
        """Return ``(I - Π S) g``. See :meth:`apply_scattering` for `check`."""
        return g - self.apply_exchange(self.apply_scattering(g, check=check))

    def apply_A_adjoint(self, g: np.ndarray) -> np.ndarray:
        """Return ``(I - Sᴴ Πᴴ) g``, the conjugate transpose of :meth:`apply_A`."""
        return g - self.apply_scattering_adjoint(self.apply_exchange_adjoint(g))

    def as_linear_operator(self) -> LinearOperator:
        """Return ``A`` as a SciPy linear operator on flat vectors.

        With ``P`` the tangential projection, the operator is
        ``A P + (I - P)``: it equals ``A`` on tangential data and passes the
        normal part through unchanged, without a tangency check. Krylov
        vectors carry normal components at rounding level.
        """

        def matvec(g: np.ndarray) -> np.ndarray:
            t = self.tangential_part(g)
            return self.apply_A(t, check=False) + (g - t)

        def rmatvec(g: np.ndarray) -> np.ndarray:
            t = self.tangential_part(g)
            return self.tangential_part(self.apply_A_adjoint(g)) + (g - t)

        return LinearOperator(
            (self.size, self.size), matvec=matvec, rmatvec=rmatvec, dtype=complex
        )

    # Mass matrix

    def mass_apply(self, g: np.ndarray) -> np.ndarray:
        """Return ``M g``."""
        return self.mass.apply(g)

    def mass_solve(self, g: np.ndarray) -> np.ndarray:
        """Return ``M⁻¹ g``."""
        return self.mass.solve(g)

    def inner_M(self, g1: np.ndarray, g2: np.ndarray) -> complex:
        """Return the skeleton L² product ``⟨g1, g2⟩``."""
        return self.mass.inner(g1, g2)

    def norm_M(self, g: np.ndarray) -> float:
        """Return the skeleton L² norm of `g`."""
        return self.mass.norm(g)

    # Right-hand side and fields

    def zeros(self) -> np.ndarray:
        """Return a zero skeleton field (shaped)."""
        return np.zeros(self.shape, dtype=complex)

    def project_boundary(self, sources: BoundarySources) -> np.ndarray:
        """Return the L² projection of the boundary right-hand side."""
        b = self.zeros()
        if not self.mesh.boundary:
            return b
        rs, weights = triangle_rule(2 * self.ref.p + 2)
        # (Nfp, Nq) per face: M2ref⁻¹ Φᵀ diag(w)
        projectors = [
            la.solve(
                self.ref.face_M2ref[f],
                self.ref.face_interpolation_matrix(f, rs).T * weights,
                assume_a="pos",
            )
            for f in range(4)
        ]
        ref_points = [face_embedding(rs, f) for f in range(4)]

        for kind in BoundaryKind:
            slots = [kf for kf, kd in self.mesh.boundary.items() if kd is kind]
            if not slots:
                continue
            ks = np.array([k for k, _ in slots])
            fs = np.array([f for _, f in slots])
            points = np.stack(
                [self.mesh.geometry[k].to_physical(ref_points[f]) for k, f in slots]
            )
            normals = self.mesh.normals[ks, fs][:, None, :]
            values = sources.rhs_values(kind, points, normals)
            if values is None:
                continue
            values = np.broadcast_to(values, points.shape)
            for i, (k, f) in enumerate(slots):
                b[k, f] = (projectors[f] @ values[i]).T
        return b

    def build_rhs(
        self, sources: BoundarySources | None = None, with_source: bool = True
    ) -> np.ndarray:
        """Return the right-hand side ``b`` (shaped).

        The boundary part is the face-wise L² projection of ``-2 n × s_E``,
        ``2 s_H`` and ``s_I``. The volume source adds ``Π`` of the outgoing
        data of the source-only local solves.
        """
        b = self.project_boundary(sources or BoundarySources())
        if with_source and not self.source.is_absent:
            b += self.apply_exchange(self.source_response.reshape(self.shape))
        return b

    def reconstruct(self, g: np.ndarray, with_source: bool = True) -> SolutionFields:
        """Return the fields of the local solves with incoming data `g`."""
        g_shaped = self._as_shape(g)
        check_tangency(self.mesh.normals, g_shaped)
        fields = SolutionFields.zeros(self.mesh.K, self.ref.Np)

        def work(chunk: slice) -> None:
            for k in range(self.mesh.K)[chunk]:
                op = self.operators[k]
                rhs = op.rhs_matrix @ g_shaped[k].ravel()
                current = self.source.element(k)
                if with_source and current is not None:
                    rhs = rhs + op.source_rhs(current)
                sol = op.solve(rhs).reshape(2, 3, self.ref.Np)
                fields.e[k], fields.h[k] = sol[0], sol[1]

        map_chunks(work, self.mesh.K, self.threads)
        return fields

    def __repr__(self) -> str:
        return (
            f"{self.__class__.__name__}(K={self.mesh.K}, p={self.ref.p}, "
            f"kappa={self.kappa:g}, unknowns={self.size})"
        )

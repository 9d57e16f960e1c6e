"""Element-wise local problems.

On each element the fields ``(e, h)`` solve the local Maxwell problem with
incoming transmission data ``g⁻`` prescribed on the four faces, and give back
the outgoing transmission data ``g⁺ = πᵗ(e) - n × h``.

Unknowns of the local system are ordered ``[e_1, e_2, e_3, h_1, h_2, h_3]``,
each block holding the Np nodal values of one Cartesian component.
Transmission data of one element has shape (4, 3, Nfp): face, component, node.
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

from .reference import ElementMatrices, ReferenceElement
from .util import LEVI_CIVITA, cross_matrix, tangential_matrix

logger = logging.getLogger(__name__)

TANGENCY_TOL = 1e-10
"""Tolerance on ``|n · g|`` relative to ``max |g|``."""


class TangencyError(ValueError):
    """Transmission data with a normal component."""


class SingularLocalSystemError(RuntimeError):
    """Local system could not be factorized."""


def tangential_project(n: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Return ``πᵗ(v) = v - n (n · v)``, broadcasting over leading axes."""
    n = np.asarray(n)
    v = np.asarray(v)
    return v - n * np.sum(n * v, axis=-1, keepdims=True)


def cross(n: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Return ``n × v``, with components ``ε_def n_e v_f``."""
    return np.einsum("def,...e,...f->...d", LEVI_CIVITA, n, v)


def check_tangency(normals: np.ndarray, g: np.ndarray) -> None:
    """Check that transmission data is tangential.

    Parameters
    ----------
    normals
        Unit normals of shape (..., 4, 3).
    g
        Transmission data of shape (..., 4, 3, Nfp).

    Raises
    ------
    TangencyError
        If ``|n · g|`` exceeds :data:`TANGENCY_TOL` times ``max |g|``.
    """
    scale = np.max(np.abs(g), initial=0.0)
    if scale == 0.0:
        return
    normal_part = np.abs(np.einsum("...fd,...fdn->...fn", normals, g))
    worst = float(normal_part.max())
    if worst > TANGENCY_TOL * scale:
        raise TangencyError(
            f"Transmission data is not tangential: |n·g| = {worst:.3e} "
            f"for max |g| = {scale:.3e}."
        )


@dataclass
class FieldState:
    """Electric and magnetic fields on one element."""

    element: int
    e: np.ndarray
    """Nodal values of the electric field, shape (3, Np)."""
    h: np.ndarray
    """Nodal values of the magnetic field, shape (3, Np)."""

    def __post_init__(self):
        if not (np.all(np.isfinite(self.e)) and np.all(np.isfinite(self.h))):
            raise ValueError(f"Non-finite fields on element {self.element}.")


@dataclass
class VolumeSource:
    """Impressed electric current density, nodal on every element."""

    current: np.ndarray | None = None
    """Nodal values of shape (K, 3, Np), or None when there is no source."""

    def __post_init__(self):
        if self.current is not None:
            self.current = np.asarray(self.current, dtype=complex)
            if self.current.ndim != 3 or self.current.shape[1] != 3:
                raise ValueError(
                    f"Current must have shape (K, 3, Np), got {self.current.shape}."
                )
            if not np.all(np.isfinite(self.current)):
                raise ValueError("Current has non-finite values.")

    @classmethod
    def absent(cls) -> VolumeSource:
        """Return the marker for 'no volume source'."""
        return cls(None)

    @classmethod
    def from_function(
        cls,
        node_coordinates: np.ndarray,
        func: abc.Callable[[np.ndarray], np.ndarray],
    ) -> VolumeSource:
        """Interpolate a current density at the nodes.

        Parameters
        ----------
        node_coordinates
            Physical node coordinates of shape (K, Np, 3).
        func
            Maps points (..., 3) to complex vectors (..., 3).
        """
        values = np.broadcast_to(func(node_coordinates), node_coordinates.shape)
        return cls(np.transpose(values, (0, 2, 1)))

    @property
    def is_absent(self) -> bool:
        """True if there is no source."""
        return self.current is None

    def element(self, k: int) -> np.ndarray | None:
        """Return the nodal current on element `k`, or None."""
        return None if self.current is None else self.current[k]


def assemble_system(
    kappa: float, matrices: ElementMatrices, normals: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Assemble the matrices of the local problem of one element.

    Returns
    -------
    lhs
        System matrix of size 6 Np, complex.
    rhs_matrix
        Maps the flattened incoming data (4 * 3 * Nfp) to the right-hand side.
    trace_matrix
        Maps the fields (6 Np) to the flattened outgoing data.
    """
    np_ = matrices.MK.shape[0]
    nfp = matrices.MF.shape[1]
    eye3 = np.eye(3)
    proj = tangential_matrix(normals)
    crs = cross_matrix(normals)

    mass = np.kron(eye3, matrices.MK)
    # block (d, f) = Σ_e ε_def S_eᵀ
    curl = np.einsum("def,eij->difj", LEVI_CIVITA, np.transpose(matrices.SK, (0, 2, 1)))
    curl = curl.reshape(3 * np_, 3 * np_)

    face_p = np.zeros((3 * np_, 3 * np_))
    face_c = np.zeros((3 * np_, 3 * np_))
    rhs = np.zeros((6 * np_, 4 * 3 * nfp))
    trace = np.zeros((4 * 3 * nfp, 6 * np_))
    for f in range(4):
        bkf, rkf = matrices.BKF[f], matrices.RKF[f]
        qf = bkf @ rkf
        face_p += 0.5 * np.kron(proj[f], qf)
        face_c += 0.5 * np.kron(crs[f], qf)
        cols = slice(3 * nfp * f, 3 * nfp * (f + 1))
        rhs[: 3 * np_, cols] = 0.5 * np.kron(proj[f], bkf)
        rhs[3 * np_ :, cols] = -0.5 * np.kron(crs[f], bkf)
        trace[cols, : 3 * np_] = np.kron(proj[f], rkf)
        trace[cols, 3 * np_ :] = -np.kron(crs[f], rkf)

    diag = 1j * kappa * mass + face_p
    lhs = np.block([[diag, curl - face_c], [-curl + face_c, diag]])
    return lhs, rhs, trace


class ElementOperator:
    """Factorized local problem of one element.

    Parameters
    ----------
    element
        Element index.
    kappa
        Wavenumber.
    matrices
        Elemental matrices.
    normals
        Unit outward normals of the four faces, shape (4, 3).

    Raises
    ------
    SingularLocalSystemError
        If the factorization has a zero pivot.
    """

    def __init__(
        self,
        element: int,
        kappa: float,
        matrices: ElementMatrices,
        normals: np.ndarray,
    ):
        if not kappa > 0:
            raise ValueError(f"Wavenumber must be positive, got {kappa}.")
        self.element = element
        self.kappa = kappa
        self.matrices = matrices
        self.normals = normals
        self.Np = matrices.MK.shape[0]
        self.Nfp = matrices.MF.shape[1]

        lhs, self.rhs_matrix, self.trace_matrix = assemble_system(
            kappa, matrices, normals
        )
        self.lu = la.lu_factor(lhs, check_finite=True)
        pivots = np.abs(np.diag(self.lu[0]))
        if not np.all(np.isfinite(pivots)) or pivots.min() == 0.0:
            raise SingularLocalSystemError(
                f"Local system of element {element} is singular."
            )

    def source_rhs(self, current: np.ndarray) -> np.ndarray:
        """Right-hand side of a volume current (3, Np): ``MK J_d`` on e-rows."""
        rhs = np.zeros(6 * self.Np, dtype=complex)
        rhs[: 3 * self.Np] = (current @ self.matrices.MK.T).ravel()
        return rhs

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve the local system for one or more right-hand sides."""
        return la.lu_solve(self.lu, rhs)

    def scattering_matrix(self) -> np.ndarray:
        """Return the dense map from incoming to outgoing data (flattened)."""
        return self.trace_matrix @ self.solve(self.rhs_matrix.astype(complex))

    def source_response(self, current: np.ndarray) -> np.ndarray:
        """Return outgoing data (flattened) with zero incoming data and a current."""
        return self.trace_matrix @ self.solve(self.source_rhs(current))

    def __repr__(self) -> str:
        return (
            f"{self.__class__.__name__}(element={self.element}, "
            f"kappa={self.kappa:g}, size={6 * self.Np})"
        )


def assemble_element(
    kappa: float,
    matrices: ElementMatrices,
    normals: np.ndarray,
    element: int = 0,
) -> ElementOperator:
    """Assemble and factorize the local problem of one element."""
    return ElementOperator(element, kappa, matrices, normals)


def local_solve(
    op: ElementOperator,
    g_minus: np.ndarray,
    source: np.ndarray | None = None,
) -> FieldState:
    """Solve the local problem of one element.

    Parameters
    ----------
    op
        Factorized local operator.
    g_minus
        Incoming transmission data of shape (4, 3, Nfp), tangential.
    source
        Nodal current density of shape (3, Np), or None.

    Raises
    ------
    TangencyError
        If `g_minus` has a normal component.
    """
    check_tangency(op.normals, g_minus)
    rhs = op.rhs_matrix @ np.asarray(g_minus, dtype=complex).ravel()
    if source is not None:
        rhs = rhs + op.source_rhs(source)
    fields = op.solve(rhs).reshape(2, 3, op.Np)
    return FieldState(op.element, fields[0], fields[1])


def outgoing_trace(op: ElementOperator, state: FieldState, face: int) -> np.ndarray:
    """Return ``πᵗ(e) - n × h`` at the face nodes of `face`, shape (3, Nfp)."""
    if state.element != op.element:
        raise ValueError(
            f"Fields of element {state.element} given to the operator "
            f"of element {op.element}."
        )
    rkf = op.matrices.RKF[face]
    e_face = (state.e @ rkf.T).T
    h_face = (state.h @ rkf.T).T
    n = op.normals[face]
    return (tangential_project(n, e_face) - cross(n, h_face)).T


def outgoing_traces(op: ElementOperator, state: FieldState) -> np.ndarray:
    """Return the outgoing data on all faces, shape (4, 3, Nfp)."""
    return np.stack([outgoing_trace(op, state, f) for f in range(4)])


def incoming_trace(
    ref: ReferenceElement, normals: np.ndarray, state: FieldState
) -> np.ndarray:
    """Return ``πᵗ(e) + n × h`` on all faces, shape (4, 3, Nfp)."""
    e_face = state.e[:, ref.face_nodes]
    h_face = state.h[:, ref.face_nodes]
    e_face = np.transpose(e_face, (1, 2, 0))
    h_face = np.transpose(h_face, (1, 2, 0))
    n = normals[:, None, :]
    return np.transpose(tangential_project(n, e_face) + cross(n, h_face), (0, 2, 1))

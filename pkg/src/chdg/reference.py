"""Reference element machinery.

Nodal and modal descriptions of the polynomial spaces on the bi-unit
tetrahedron with vertices (-1,-1,-1), (1,-1,-1), (-1,1,-1), (-1,-1,1), and on
the bi-unit triangle (-1,-1), (1,-1), (-1,1).

Local face ``f`` of the tetrahedron is the face opposite local vertex ``f``.
Its three vertices are taken in increasing order ``(a, b, c)``; the face-local
coordinates of a point with barycentric coordinates λ are
``(-1 + 2 λ_b, -1 + 2 λ_c)``.
"""

# This file is part of the 'chdg' project and subject
# to the MIT License as defined in the file 'LICENSE',
# at the root of this project.

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from math import gamma, sqrt

import numpy as np
import scipy.linalg as la
from scipy.special import roots_jacobi

logger = logging.getLogger(__name__)

MAX_DEGREE = 10

REFERENCE_VERTICES = np.array(
    [[-1.0, -1.0, -1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]]
)
"""Vertices of the reference tetrahedron."""

REFERENCE_VOLUME = 4.0 / 3.0

FACE_VERTICES = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))
"""Local vertices of each local face, in increasing order."""

WARP_ALPHA = {
    1: 0.0,
    2: 0.0,
    3: 0.0,
    4: 0.1002,
    5: 1.1332,
    6: 1.5608,
    7: 1.3413,
    8: 1.2577,
    9: 1.1603,
    10: 1.10153,
}
"""Optimised blending parameters of the warp-and-blend construction."""

_EQUILATERAL = np.array(
    [
        [-1.0, -1.0 / sqrt(3.0), -1.0 / sqrt(6.0)],
        [1.0, -1.0 / sqrt(3.0), -1.0 / sqrt(6.0)],
        [0.0, 2.0 / sqrt(3.0), -1.0 / sqrt(6.0)],
        [0.0, 0.0, 3.0 / sqrt(6.0)],
    ]
)

_TOL = 1e-10


class UnsupportedDegreeError(ValueError):
    """Polynomial degree outside of the supported range."""

    def __init__(self, p: int, low: int = 0, high: int = MAX_DEGREE):
        super().__init__(f"Degree {p} not supported (must be in [{low}, {high}]).")


class NonPositiveJacobianError(ValueError):
    """Element map with a non-positive determinant."""


def node_counts(p: int) -> tuple[int, int]:
    """Return the number of volume and face nodes for degree `p`."""
    if p < 0:
        raise UnsupportedDegreeError(p)
    return (p + 1) * (p + 2) * (p + 3) // 6, (p + 1) * (p + 2) // 2


def barycentric(rst: np.ndarray) -> np.ndarray:
    """Return barycentric coordinates (..., 4) of reference points (..., 3)."""
    r, s, t = rst[..., 0], rst[..., 1], rst[..., 2]
    return np.stack(
        [-(1 + r + s + t) / 2, (1 + r) / 2, (1 + s) / 2, (1 + t) / 2], axis=-1
    )


def face_coordinates(rst: np.ndarray, face: int) -> np.ndarray:
    """Return face-local (r, s) coordinates of points lying on `face`."""
    lam = barycentric(rst)
    _, b, c = FACE_VERTICES[face]
    return np.stack([2 * lam[..., b] - 1, 2 * lam[..., c] - 1], axis=-1)


def face_embedding(rs: np.ndarray, face: int) -> np.ndarray:
    """Map face-local coordinates of `face` to reference-tetrahedron points."""
    a, b, c = FACE_VERTICES[face]
    lb = (1 + rs[..., 0]) / 2
    lc = (1 + rs[..., 1]) / 2
    la_ = 1 - lb - lc
    va, vb, vc = REFERENCE_VERTICES[[a, b, c]]
    return la_[..., None] * va + lb[..., None] * vb + lc[..., None] * vc


# Jacobi polynomials


def jacobi(alpha: float, beta: float, n: int, x: np.ndarray) -> np.ndarray:
    """Evaluate the normalised Jacobi polynomial of degree `n` at `x`.

    Polynomials are orthonormal with respect to the weight
    ``(1-x)^alpha (1+x)^beta`` on [-1, 1].
    """
    x = np.asarray(x, dtype=float)
    gamma0 = (
        2 ** (alpha + beta + 1)
        / (alpha + beta + 1)
        * gamma(alpha + 1)
        * gamma(beta + 1)
        / gamma(alpha + beta + 1)
    )
    p_prev = np.full_like(x, 1.0 / sqrt(gamma0))
    if n == 0:
        return p_prev
    gamma1 = (alpha + 1) * (beta + 1) / (alpha + beta + 3) * gamma0
    p_cur = ((alpha + beta + 2) * x / 2 + (alpha - beta) / 2) / sqrt(gamma1)

    a_old = 2 / (2 + alpha + beta) * sqrt((alpha + 1) * (beta + 1) / (alpha + beta + 3))
    for i in range(1, n):
        h1 = 2 * i + alpha + beta
        a_new = (
            2
            / (h1 + 2)
            * sqrt(
                (i + 1)
                * (i + 1 + alpha + beta)
                * (i + 1 + alpha)
                * (i + 1 + beta)
                / (h1 + 1)
                / (h1 + 3)
            )
        )
        b_new = -(alpha**2 - beta**2) / (h1 * (h1 + 2))
        p_prev, p_cur = p_cur, (-a_old * p_prev + (x - b_new) * p_cur) / a_new
        a_old = a_new
    return p_cur


def grad_jacobi(alpha: float, beta: float, n: int, x: np.ndarray) -> np.ndarray:
    """Evaluate the derivative of :func:`jacobi`."""
    if n == 0:
        return np.zeros_like(np.asarray(x, dtype=float))
    return sqrt(n * (n + alpha + beta + 1)) * jacobi(alpha + 1, beta + 1, n - 1, x)


def gauss_lobatto(p: int) -> np.ndarray:
    """Return the p+1 Legendre-Gauss-Lobatto points on [-1, 1], increasing."""
    if p == 1:
        return np.array([-1.0, 1.0])
    interior, _ = roots_jacobi(p - 1, 1.0, 1.0)
    return np.concatenate([[-1.0], np.sort(interior), [1.0]])


# Orthonormal modal bases


def _collapse_triangle(rs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    r, s = rs[..., 0], rs[..., 1]
    with np.errstate(all="ignore"):
        a = np.where(np.abs(1 - s) > 1e-12, 2 * (1 + r) / (1 - s) - 1, -1.0)
    return a, s


def _collapse_tetrahedron(
    rst: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    r, s, t = rst[..., 0], rst[..., 1], rst[..., 2]
    with np.errstate(all="ignore"):
        a = np.where(np.abs(s + t) > _TOL, 2 * (1 + r) / (-s - t) - 1, -1.0)
        b = np.where(np.abs(t - 1) > _TOL, 2 * (1 + s) / (1 - t) - 1, -1.0)
    return a, b, t


def triangle_modes(p: int) -> list[tuple[int, int]]:
    """Return the (i, j) indices of the triangle modes of degree ≤ `p`."""
    return [(i, j) for i in range(p + 1) for j in range(p + 1 - i)]


def tetrahedron_modes(p: int) -> list[tuple[int, int, int]]:
    """Return the (i, j, k) indices of the tetrahedron modes of degree ≤ `p`."""
    return [
        (i, j, k)
        for i in range(p + 1)
        for j in range(p + 1 - i)
        for k in range(p + 1 - i - j)
    ]


def orthonormal_basis(p: int, points: np.ndarray) -> np.ndarray:
    """Evaluate the orthonormal modal basis of degree `p` at `points`.

    Parameters
    ----------
    p
        Polynomial degree.
    points
        Array of shape (N, 2) for the triangle or (N, 3) for the tetrahedron,
        in reference coordinates.

    Returns
    -------
    Array of shape (N, number of modes); column j holds mode j.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    dim = points.shape[-1]
    if dim == 2:
        a, b = _collapse_triangle(points)
        cols = [
            sqrt(2.0) * jacobi(0, 0, i, a) * jacobi(2 * i + 1, 0, j, b) * (1 - b) ** i
            for i, j in triangle_modes(p)
        ]
    elif dim == 3:
        a, b, c = _collapse_tetrahedron(points)
        cols = [
            2
            * sqrt(2.0)
            * jacobi(0, 0, i, a)
            * jacobi(2 * i + 1, 0, j, b)
            * (1 - b) ** i
            * jacobi(2 * (i + j) + 2, 0, k, c)
            * (1 - c) ** (i + j)
            for i, j, k in tetrahedron_modes(p)
        ]
    else:
        raise ValueError(f"Points must be 2D or 3D, got dimension {dim}.")
    return np.stack(cols, axis=-1)


def orthonormal_basis_gradients(p: int, points: np.ndarray) -> np.ndarray:
    """Evaluate reference gradients of the tetrahedron modal basis.

    Returns an array of shape (3, N, Np): derivatives along r, s and t.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    a, b, c = _collapse_tetrahedron(points)
    grads = []
    for i, j, k in tetrahedron_modes(p):
        fa = jacobi(0, 0, i, a)
        dfa = grad_jacobi(0, 0, i, a)
        gb = jacobi(2 * i + 1, 0, j, b)
        dgb = grad_jacobi(2 * i + 1, 0, j, b)
        hc = jacobi(2 * (i + j) + 2, 0, k, c)
        dhc = grad_jacobi(2 * (i + j) + 2, 0, k, c)

        dr = dfa * gb * hc
        if i:
            dr = dr * (0.5 * (1 - b)) ** (i - 1)
        if i + j:
            dr = dr * (0.5 * (1 - c)) ** (i + j - 1)

        ds = 0.5 * (1 + a) * dr
        tmp = dgb * (0.5 * (1 - b)) ** i
        if i:
            tmp = tmp - 0.5 * i * gb * (0.5 * (1 - b)) ** (i - 1)
        if i + j:
            tmp = tmp * (0.5 * (1 - c)) ** (i + j - 1)
        tmp = fa * tmp * hc
        ds = ds + tmp

        dt = 0.5 * (1 + a) * dr + 0.5 * (1 + b) * tmp
        tmp = dhc * (0.5 * (1 - c)) ** (i + j)
        if i + j:
            tmp = tmp - 0.5 * (i + j) * hc * (0.5 * (1 - c)) ** (i + j - 1)
        dt = dt + fa * gb * tmp * (0.5 * (1 - b)) ** i

        scale = 2 ** (2 * i + j + 1.5)
        grads.append(np.stack([scale * dr, scale * ds, scale * dt]))
    return np.stack(grads, axis=-1)


# Warp and blend nodes


def _warp_factor(p: int, r: np.ndarray) -> np.ndarray:
    """Return the 1D warp (Lobatto minus equispaced) divided by ``1 - r²``."""
    lobatto = gauss_lobatto(p)
    equi = np.linspace(-1.0, 1.0, p + 1)
    v_equi = np.stack([jacobi(0, 0, n, equi) for n in range(p + 1)], axis=-1)
    v_out = np.stack([jacobi(0, 0, n, r) for n in range(p + 1)], axis=-1)
    warp = v_out @ la.solve(v_equi, lobatto - equi)
    interior = np.abs(r) < 1.0 - _TOL
    with np.errstate(all="ignore"):
        return np.where(interior, warp / (1.0 - r**2), 0.0)


def _eval_shift(
    p: int, alpha: float, l1: np.ndarray, l2: np.ndarray, l3: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Return the warp of triangle barycentric points in equilateral axes."""
    warp1 = 4 * l2 * l3 * _warp_factor(p, l3 - l2) * (1 + (alpha * l1) ** 2)
    warp2 = 4 * l1 * l3 * _warp_factor(p, l1 - l3) * (1 + (alpha * l2) ** 2)
    warp3 = 4 * l1 * l2 * _warp_factor(p, l2 - l1) * (1 + (alpha * l3) ** 2)
    c2, c4 = np.cos(2 * np.pi / 3), np.cos(4 * np.pi / 3)
    s2, s4 = np.sin(2 * np.pi / 3), np.sin(4 * np.pi / 3)
    dx = warp1 + c2 * warp2 + c4 * warp3
    dy = s2 * warp2 + s4 * warp3
    return dx, dy


def _check_node_degree(p: int) -> None:
    if not 1 <= p <= MAX_DEGREE:
        raise UnsupportedDegreeError(p, 1, MAX_DEGREE)


def warp_blend_triangle_nodes(p: int) -> np.ndarray:
    """Return the warp-and-blend nodes of the reference triangle, shape (Nfp, 2).

    The tetrahedron blending parameter is used, so that these nodes coincide
    with the traces of :func:`warp_blend_nodes` on every face.
    """
    _check_node_degree(p)
    alpha = WARP_ALPHA[p]
    l1, l3 = (
        np.array(x, dtype=float) / p
        for x in zip(*[(n, m) for n in range(p + 1) for m in range(p + 1 - n)])
    )
    l2 = 1.0 - l1 - l3
    x = -l2 + l3
    y = (-l2 - l3 + 2 * l1) / sqrt(3.0)
    dx, dy = _eval_shift(p, alpha, l1, l2, l3)
    x, y = x + dx, y + dy

    b1 = (sqrt(3.0) * y + 1) / 3
    b2 = (-3 * x - sqrt(3.0) * y + 2) / 6
    b3 = (3 * x - sqrt(3.0) * y + 2) / 6
    return np.stack([-b2 + b3 - b1, -b2 - b3 + b1], axis=-1)


def warp_blend_nodes(p: int) -> np.ndarray:
    """Return the warp-and-blend nodes of the reference tetrahedron.

    Parameters
    ----------
    p
        Polynomial degree, between 1 and 10.

    Returns
    -------
    Array of shape (Np, 3).

    Raises
    ------
    UnsupportedDegreeError
        If `p` is outside [1, 10].
    """
    _check_node_degree(p)
    alpha = WARP_ALPHA[p]
    equi = np.array(
        [
            [-1 + 2 * q / p, -1 + 2 * m / p, -1 + 2 * n / p]
            for n in range(p + 1)
            for m in range(p + 1 - n)
            for q in range(p + 1 - n - m)
        ]
    )
    r, s, t = equi.T
    big_l = [(1 + t) / 2, (1 + s) / 2, -(1 + r + s + t) / 2, (1 + r) / 2]
    v1, v2, v3, v4 = _EQUILATERAL

    tan1 = np.array([v2 - v1, v2 - v1, v3 - v2, v3 - v1])
    tan2 = np.array(
        [
            v3 - 0.5 * (v1 + v2),
            v4 - 0.5 * (v1 + v2),
            v4 - 0.5 * (v2 + v3),
            v4 - 0.5 * (v1 + v3),
        ]
    )
    tan1 /= np.linalg.norm(tan1, axis=1, keepdims=True)
    tan2 /= np.linalg.norm(tan2, axis=1, keepdims=True)

    xyz = (
        np.outer(big_l[2], v1)
        + np.outer(big_l[3], v2)
        + np.outer(big_l[1], v3)
        + np.outer(big_l[0], v4)
    )
    shift = np.zeros_like(xyz)
    for face, (ia, ib, ic, id_) in enumerate(
        [(0, 1, 2, 3), (1, 0, 2, 3), (2, 0, 3, 1), (3, 0, 2, 1)]
    ):
        la_, lb, lc, ld = big_l[ia], big_l[ib], big_l[ic], big_l[id_]
        warp1, warp2 = _eval_shift(p, alpha, lb, lc, ld)

        blend = lb * lc * ld
        denom = (lb + 0.5 * la_) * (lc + 0.5 * la_) * (ld + 0.5 * la_)
        ok = denom > 1e-8
        blend[ok] = (1 + (alpha * la_[ok]) ** 2) * blend[ok] / denom[ok]

        shift += np.outer(blend * warp1, tan1[face]) + np.outer(
            blend * warp2, tan2[face]
        )
        on_edge = (la_ < 1e-8) & (
            (lb > 1e-8).astype(int) + (lc > 1e-8) + (ld > 1e-8) < 3
        )
        shift[on_edge] = np.outer(warp1[on_edge], tan1[face]) + np.outer(
            warp2[on_edge], tan2[face]
        )
    xyz += shift

    rhs = xyz - 0.5 * (v2 + v3 + v4 - v1)
    mat = 0.5 * np.stack([v2 - v1, v3 - v1, v4 - v1], axis=1)
    return la.solve(mat, rhs.T).T


class ReferenceElement:
    """Nodal machinery of degree `p` on the reference tetrahedron and triangle.

    Parameters
    ----------
    p
        Polynomial degree, between 0 and 10. For ``p=0`` the single node is
        the centroid and each face carries one node at its centroid.
    """

    def __init__(self, p: int):
        if not 0 <= p <= MAX_DEGREE:
            raise UnsupportedDegreeError(p)
        self.p = p
        self.Np, self.Nfp = node_counts(p)

        if p == 0:
            self.nodes = np.full((1, 3), -0.5)
            self.triangle_nodes = np.full((1, 2), -1.0 / 3.0)
            face_points = [face_embedding(self.triangle_nodes, f) for f in range(4)]
            face_nodes = [np.array([0]) for _ in range(4)]
        else:
            self.nodes = warp_blend_nodes(p)
            self.triangle_nodes = warp_blend_triangle_nodes(p)
            lam = barycentric(self.nodes)
            face_nodes = [np.flatnonzero(np.abs(lam[:, f]) < _TOL) for f in range(4)]
            face_points = [self.nodes[idx] for idx in face_nodes]

        self.face_nodes: np.ndarray = np.stack(face_nodes)
        """Volume node indices of each face, shape (4, Nfp)."""
        self.face_points: np.ndarray = np.stack(face_points)
        """Reference coordinates of the face nodes, shape (4, Nfp, 3)."""

        self.V3 = orthonormal_basis(p, self.nodes)
        self.invV3 = la.inv(self.V3)
        self.Mref = self.invV3.T @ self.invV3
        grads = orthonormal_basis_gradients(p, self.nodes)
        self.D1, self.D2, self.D3 = (g @ self.invV3 for g in grads)

        self.V2 = orthonormal_basis(p, self.triangle_nodes)
        invV2 = la.inv(self.V2)
        self.M2ref = invV2.T @ invV2

        self.face_rs = np.stack(
            [face_coordinates(self.face_points[f], f) for f in range(4)]
        )
        """Face-local coordinates of the face nodes, shape (4, Nfp, 2)."""
        self.face_V2 = np.stack(
            [orthonormal_basis(p, self.face_rs[f]) for f in range(4)]
        )
        """Triangle Vandermonde at each face's own node ordering."""
        self.face_M2ref = np.stack(
            [la.inv(v @ v.T) for v in self.face_V2]
        )
        """Reference face mass matrix of each face, shape (4, Nfp, Nfp)."""

        logger.debug("Reference element p=%d: Np=%d, Nfp=%d", p, self.Np, self.Nfp)

    @property
    def D(self) -> np.ndarray:
        """Reference differentiation matrices stacked, shape (3, Np, Np)."""
        return np.stack([self.D1, self.D2, self.D3])

    def interpolation_matrix(self, points: np.ndarray) -> np.ndarray:
        """Return the matrix evaluating nodal fields at reference `points`."""
        return orthonormal_basis(self.p, points) @ self.invV3

    def face_interpolation_matrix(self, face: int, rs: np.ndarray) -> np.ndarray:
        """Return the matrix evaluating face-nodal data of `face` at `rs`."""
        return orthonormal_basis(self.p, rs) @ la.inv(self.face_V2[face])

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(p={self.p})"


@lru_cache
def get_reference(p: int) -> ReferenceElement:
    """Return the (shared) reference element of degree `p`."""
    return ReferenceElement(p)


@dataclass(frozen=True)
class ElementGeometry:
    """Affine geometric factors of one tetrahedron.

    The element map is ``x = x0 + J (rst + 1)``.
    """

    vertices: np.ndarray
    """Vertex coordinates, shape (4, 3)."""
    jacobian: np.ndarray
    """Jacobian matrix J of the element map."""
    inverse_transpose: np.ndarray
    """J^{-T}."""
    determinant: float
    """det(J), the volume scale."""
    normals: np.ndarray
    """Unit outward normals of the four local faces, shape (4, 3)."""
    face_scales: np.ndarray
    """Area scale J_F = area / 2 of each local face, shape (4,)."""

    @classmethod
    def from_vertices(cls, vertices: np.ndarray) -> ElementGeometry:
        """Compute the geometric factors from the four vertex coordinates."""
        vertices = np.asarray(vertices, dtype=float)
        jac = 0.5 * (vertices[1:] - vertices[0]).T
        det = float(np.linalg.det(jac))
        inv_t = np.linalg.inv(jac).T if det != 0.0 else np.full((3, 3), np.nan)

        grad_lambda = np.array(
            [[-0.5, -0.5, -0.5], [0.5, 0, 0], [0, 0.5, 0], [0, 0, 0.5]]
        )
        normals = -grad_lambda @ inv_t.T
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)

        areas = np.empty(4)
        for f, (a, b, c) in enumerate(FACE_VERTICES):
            edge1 = vertices[b] - vertices[a]
            edge2 = vertices[c] - vertices[a]
            areas[f] = 0.5 * np.linalg.norm(np.cross(edge1, edge2))

        return cls(vertices, jac, inv_t, det, normals, areas / 2.0)

    @property
    def volume(self) -> float:
        """Physical volume of the element."""
        return self.determinant * REFERENCE_VOLUME

    def to_physical(self, rst: np.ndarray) -> np.ndarray:
        """Map reference points (..., 3) to physical space."""
        return self.vertices[0] + (np.asarray(rst) + 1.0) @ self.jacobian.T


@dataclass(frozen=True)
class ElementMatrices:
    """Elemental matrices of one tetrahedron."""

    MK: np.ndarray
    """Mass matrix, (Np, Np)."""
    SK: np.ndarray
    """Stiffness matrices ``SK[d][i, j] = (∂_d ℓ_j, ℓ_i)``, (3, Np, Np)."""
    BKF: np.ndarray
    """Face matrices, (4, Np, Nfp)."""
    RKF: np.ndarray
    """Restriction (selection) matrices, (4, Nfp, Np)."""
    MF: np.ndarray
    """Face mass matrices, (4, Nfp, Nfp)."""
    D: np.ndarray
    """Physical differentiation matrices, (3, Np, Np)."""


def elemental_matrices(
    ref: ReferenceElement, geometry: ElementGeometry
) -> ElementMatrices:
    """Build the elemental matrices of an affine tetrahedron.

    Raises
    ------
    NonPositiveJacobianError
        If the element map is not positively oriented.
    """
    if not geometry.determinant > 0.0:
        raise NonPositiveJacobianError(
            f"Element map determinant is {geometry.determinant:g}."
        )
    mass = geometry.determinant * ref.Mref
    # ∂/∂x_d = Σ_k (J^{-1})_{kd} ∂/∂r_k
    diff = np.einsum("dk,kij->dij", geometry.inverse_transpose, ref.D)
    stiffness = mass @ diff

    restrict = np.zeros((4, ref.Nfp, ref.Np))
    for f in range(4):
        restrict[f, np.arange(ref.Nfp), ref.face_nodes[f]] = 1.0
    face_mass = geometry.face_scales[:, None, None] * ref.face_M2ref
    face_mat = np.transpose(restrict, (0, 2, 1)) @ face_mass
    return ElementMatrices(mass, stiffness, face_mat, restrict, face_mass, diff)

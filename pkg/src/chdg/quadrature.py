"""Collapsed-coordinate quadrature rules on the reference simplices.

Rules are conical products of Gauss-Jacobi rules: the weights of the collapsed
directions absorb the Jacobian of the Duffy transform, so a rule built with
``n`` points per direction integrates polynomials of total degree ``2n - 1``
exactly.
"""

# This file is part of the 'chdg' project and subject
# to the MIT License as defined in the file 'LICENSE',
# at the root of this project.

from __future__ import annotations

import logging
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

logger = logging.getLogger(__name__)


def _points_for_degree(degree: int) -> int:
    return max(1, degree // 2 + 1)


@lru_cache
def tetrahedron_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Return a quadrature rule on the bi-unit reference tetrahedron.

    Parameters
    ----------
    degree
        Polynomials of total degree up to `degree` are integrated exactly.

    Returns
    -------
    points
        Array of shape (Nq, 3) of (r, s, t) coordinates.
    weights
        Array of shape (Nq,). Weights sum to the reference volume 4/3.
    """
    n = _points_for_degree(degree)
    xa, wa = roots_jacobi(n, 0.0, 0.0)
    xb, wb = roots_jacobi(n, 1.0, 0.0)
    xc, wc = roots_jacobi(n, 2.0, 0.0)
    a, b, c = (x.ravel() for x in np.meshgrid(xa, xb, xc, indexing="ij"))
    w = np.einsum("i,j,k->ijk", wa, wb, wc).ravel() / 8.0

    r = 0.25 * (1 + a) * (1 - b) * (1 - c) - 1
    s = 0.5 * (1 + b) * (1 - c) - 1
    t = c
    points = np.stack([r, s, t], axis=-1)
    logger.debug("Tetrahedron rule of degree %d: %d points", degree, w.size)
    return points, w


@lru_cache
def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Return a quadrature rule on the bi-unit reference triangle.

    Points are (r, s) coordinates of shape (Nq, 2), weights sum to 2.
    """
    n = _points_for_degree(degree)
    xa, wa = roots_jacobi(n, 0.0, 0.0)
    xb, wb = roots_jacobi(n, 1.0, 0.0)
    a, b = (x.ravel() for x in np.meshgrid(xa, xb, indexing="ij"))
    w = np.outer(wa, wb).ravel() / 2.0

    r = 0.5 * (1 + a) * (1 - b) - 1
    s = b
    return np.stack([r, s], axis=-1), w

"""General utilities."""

# This file is part of the 'chdg' project and subject
# to the MIT License as defined in the file 'LICENSE',
# at the root of this project.

from collections import abc
from concurrent.futures import ThreadPoolExecutor

import numpy as np

LEVI_CIVITA = np.zeros((3, 3, 3))
"""Levi-Civita symbol, ``LEVI_CIVITA[d, e, f] = ε_def``."""
for _d, _e, _f in [(0, 1, 2), (1, 2, 0), (2, 0, 1)]:
    LEVI_CIVITA[_d, _e, _f] = 1.0
    LEVI_CIVITA[_d, _f, _e] = -1.0


def cross_matrix(n: np.ndarray) -> np.ndarray:
    """Return the matrix C such that ``C @ v == n x v``.

    Works on stacked normals: an input of shape (..., 3) gives (..., 3, 3).
    """
    return np.einsum("def,...e->...df", LEVI_CIVITA, n)


def tangential_matrix(n: np.ndarray) -> np.ndarray:
    """Return the projector ``I - n n^T`` onto the plane normal to `n`."""
    return np.eye(3) - n[..., :, None] * n[..., None, :]


def chunks(size: int, threads: int) -> list[slice]:
    """Split ``range(size)`` in at most `threads` contiguous slices.

    The split only depends on `size` and `threads`.
    """
    threads = max(1, min(threads, size))
    bounds = np.linspace(0, size, threads + 1).astype(int)
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:], strict=True) if b > a]


def map_chunks(
    func: abc.Callable[[slice], None], size: int, threads: int = 1
) -> None:
    """Call `func` on every chunk of ``range(size)``, possibly in threads.

    `func` must write to disjoint locations for different chunks.
    """
    parts = chunks(size, threads)
    if threads <= 1 or len(parts) <= 1:
        for part in parts:
            func(part)
        return
    with ThreadPoolExecutor(max_workers=len(parts)) as executor:
        # list() re-raises exceptions from workers
        list(executor.map(func, parts))

"""Generation of meshes, geometries and transmission data."""

import typing as t
from collections import abc

import numpy as np
from hypothesis import strategies as st

from chdg.mesh import BoundaryKind, Mesh, RawMesh, build_box_mesh, build_connectivity
from chdg.reference import REFERENCE_VERTICES

KAPPAS = [1.0, 2.1 * np.pi]

TWO_TET_VERTICES = np.array(
    [
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [1.0, 1.0, 1.0],
    ]
)
TWO_TET_ELEMENTS = np.array([[0, 1, 2, 3], [1, 2, 3, 4]])
TWO_TET_TRIANGLES = np.array(
    [[0, 2, 3], [0, 1, 3], [0, 1, 2], [2, 3, 4], [1, 3, 4], [1, 2, 4]]
)
"""Boundary triangles of the two-tet mesh, tagged 1 to 6 in that order."""

T = t.TypeVar("T")


class Drawer(t.Protocol):
    def __call__(self, __strat: st.SearchStrategy[T]) -> T: ...


def random_tetrahedron(rng: np.random.Generator) -> np.ndarray:
    """Return the vertices of a random, positively oriented, well-shaped tet."""
    jac = np.eye(3) + rng.uniform(-0.3, 0.3, size=(3, 3))
    scale = rng.uniform(0.2, 2.0)
    shift = rng.uniform(-5.0, 5.0, size=3)
    return shift + scale * (REFERENCE_VERTICES + 1.0) @ jac.T


def tangential_field(
    rng: np.random.Generator, normals: np.ndarray, nfp: int
) -> np.ndarray:
    """Return random complex tangential data matching `normals` (..., 4, 3).

    The result has shape (..., 4, 3, Nfp).
    """
    shape = (*normals.shape, nfp)
    g = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    n = normals[..., None]
    return g - n * np.sum(n * g, axis=-2, keepdims=True)


def tangent_vectors(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return two unit vectors orthogonal to `n` and to each other."""
    helper = np.eye(3)[np.argmin(np.abs(n))]
    t1 = np.cross(n, helper)
    t1 /= np.linalg.norm(t1)
    return t1, np.cross(n, t1)


def tangential_basis(normals: np.ndarray, nfp: int) -> np.ndarray:
    """Return an orthonormal basis of tangential skeleton fields.

    Parameters
    ----------
    normals
        Unit normals of shape (K, 4, 3).
    nfp
        Nodes per face.

    Returns
    -------
    Real array of shape (K * 4 * 3 * Nfp, 2 * K * 4 * Nfp), one basis vector
    per column, flattened like skeleton data.
    """
    n_el = normals.shape[0]
    shape = (n_el, 4, 3, nfp)
    columns = []
    for k in range(n_el):
        for f in range(4):
            for vec in tangent_vectors(normals[k, f]):
                for i in range(nfp):
                    col = np.zeros(shape)
                    col[k, f, :, i] = vec
                    columns.append(col.ravel())
    return np.stack(columns, axis=1)


def restricted_matrix(
    apply: abc.Callable[[np.ndarray], np.ndarray], basis: np.ndarray
) -> np.ndarray:
    """Return the dense matrix ``Bᴴ op B`` of an operator restricted to `basis`."""
    columns = [apply(basis[:, j].astype(complex)) for j in range(basis.shape[1])]
    return basis.T @ np.stack(columns, axis=1)


def two_tet_raw(kinds: abc.Sequence[str] = ("I",) * 6) -> RawMesh:
    """Return two tetrahedra sharing the face (1, 2, 3).

    Boundary triangle i has physical tag ``i + 1`` with kind ``kinds[i]``,
    and physical name ``side{i + 1}``.
    """
    return RawMesh(
        TWO_TET_VERTICES,
        TWO_TET_ELEMENTS,
        TWO_TET_TRIANGLES,
        np.arange(1, 7),
        physical_names={f"side{i + 1}": i + 1 for i in range(6)},
        tag_kinds={i + 1: BoundaryKind.parse(k) for i, k in enumerate(kinds)},
    )


def two_tet_mesh(kinds: abc.Sequence[str] = ("I",) * 6) -> Mesh:
    """Return the two-tet mesh with connectivity."""
    return build_connectivity(two_tet_raw(kinds))


def single_tet_mesh(kind: str = "I") -> Mesh:
    """Return the reference-shaped tetrahedron with every face of `kind`."""
    vertices = TWO_TET_VERTICES[:4]
    triangles = [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]]
    raw = RawMesh(
        vertices,
        [[0, 1, 2, 3]],
        triangles,
        [1, 1, 1, 1],
        tag_kinds={1: BoundaryKind.parse(kind)},
    )
    return build_connectivity(raw)


def box_mesh(n: int, kinds: str | abc.Mapping[str, str] = "I") -> Mesh:
    """Return the unit cube mesh with connectivity."""
    tags: t.Any = BoundaryKind.parse(kinds) if isinstance(kinds, str) else kinds
    return build_connectivity(build_box_mesh(n, tags=tags))


MIXED_BOX = dict(xmin="E", xmax="H", ymin="I", ymax="E", zmin="H", zmax="I")


def msh_document(
    vertices: np.ndarray,
    tetrahedra: np.ndarray,
    triangles: np.ndarray,
    tags: abc.Sequence[int],
    names: abc.Mapping[str, int] | None = None,
    extra_elements: bool = False,
) -> str:
    """Write a MSH 4.1 ASCII document.

    Every distinct tag gets its own surface entity carrying that physical
    tag. The volume entity carries tag 1000. If `extra_elements`, a block of
    two line elements is added on a curve entity with tag 50.
    """
    names = names or {}
    tags = [int(tag) for tag in tags]
    distinct = sorted(set(tags))
    lines = ["$MeshFormat", "4.1 0 8", "$EndMeshFormat"]

    if names:
        lines += ["$PhysicalNames", str(len(names))]
        lines += [f'2 {tag} "{name}"' for name, tag in names.items()]
        lines.append("$EndPhysicalNames")

    n_curves = 1 if extra_elements else 0
    lines += ["$Entities", f"0 {n_curves} {len(distinct)} 1"]
    if extra_elements:
        lines.append("1 0 0 0 1 0 0 1 50 0")
    lines += [f"{tag} 0 0 0 1 1 1 1 {tag} 0" for tag in distinct]
    lines += ["1 0 0 0 1 1 1 1 1000 0", "$EndEntities"]

    n_nodes = len(vertices)
    lines += ["$Nodes", f"1 {n_nodes} 1 {n_nodes}", f"3 1 0 {n_nodes}"]
    lines += [str(i + 1) for i in range(n_nodes)]
    lines += [" ".join(repr(float(x)) for x in v) for v in vertices]
    lines.append("$EndNodes")

    blocks = []
    elem = 1
    for tag in distinct:
        tris = [tri for tri, tg in zip(triangles, tags, strict=True) if tg == tag]
        block = [f"2 {tag} 2 {len(tris)}"]
        for tri in tris:
            block.append(" ".join(str(v) for v in [elem, *(int(i) + 1 for i in tri)]))
            elem += 1
        blocks.append(block)
    block = [f"3 1 4 {len(tetrahedra)}"]
    for tet in tetrahedra:
        block.append(" ".join(str(v) for v in [elem, *(int(i) + 1 for i in tet)]))
        elem += 1
    blocks.append(block)
    if extra_elements:
        blocks.append(["1 1 1 2", f"{elem} 1 2", f"{elem + 1} 2 3"])
        elem += 2

    lines += ["$Elements", f"{len(blocks)} {elem - 1} 1 {elem - 1}"]
    for block in blocks:
        lines += block
    lines.append("$EndElements")
    return "\n".join(lines) + "\n"


class StGeometry:
    """Store geometry-related strategies."""

    @classmethod
    def tetrahedron(cls) -> st.SearchStrategy[np.ndarray]:
        """Vertices of affine images of the reference tetrahedron."""

        @st.composite
        def comp(draw: Drawer) -> np.ndarray:
            seed = draw(st.integers(0, 2**32 - 1))
            return random_tetrahedron(np.random.default_rng(seed))

        return comp()

    @classmethod
    def degree(cls, low: int = 0, high: int = 4) -> st.SearchStrategy[int]:
        return st.integers(low, high)

    @classmethod
    def kappa(cls) -> st.SearchStrategy[float]:
        return st.one_of(
            st.sampled_from(KAPPAS), st.floats(0.5, 12.0, allow_nan=False)
        )

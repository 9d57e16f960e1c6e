"""Tetrahedral meshes.

Raw meshes come from a Gmsh MSH 4.1 ASCII file (:func:`read_msh`) or from the
structured box mesher (:func:`build_box_mesh`). :func:`build_connectivity`
turns them into a :class:`Mesh`, holding face connectivity, boundary kinds and
affine geometric factors.
"""

# This file is part of the 'chdg' project and subject
# to the MIT License as defined in the file 'LICENSE',
# at the root of this project.

from __future__ import annotations

import enum
import itertools
import logging
import os
import tempfile
from collections import abc
from dataclasses import dataclass, field

import meshio
import numpy as np
from scipy.spatial.distance import cdist

from .reference import FACE_VERTICES, ElementGeometry, ReferenceElement

logger = logging.getLogger(__name__)


class BoundaryKind(enum.Enum):
    """Boundary condition carried by a boundary face."""

    E = "E"
    """Electric boundary, ``n × e = s_E``."""
    H = "H"
    """Magnetic boundary, ``n × h = s_H``."""
    I = "I"  # noqa: E741
    """Impedance boundary, ``-n × (n × e) + n × h = s_I``."""

    @classmethod
    def parse(cls, value: str | BoundaryKind) -> BoundaryKind:
        """Return the kind named by `value` (case insensitive)."""
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().upper())
        except ValueError as err:
            raise MeshError(
                f"Invalid boundary kind '{value}' (expected E, H or I)."
            ) from err


class MeshError(ValueError):
    """Invalid mesh."""


class MshParseError(MeshError):
    """Malformed MSH document."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"{message} (line {line})")


class UnsupportedMshFormatError(MeshError):
    """MSH document in a version or encoding that is not supported."""


class DegenerateBoxError(MeshError):
    """Box with zero or negative extent."""


class NonManifoldError(MeshError):
    """Face shared by more than two tetrahedra."""


class MissingBoundaryTagError(MeshError):
    """Boundary face without a boundary kind."""


class DegenerateElementError(MeshError):
    """Tetrahedron of zero volume."""


@dataclass
class RawMesh:
    """Vertices, tetrahedra and tagged boundary triangles, without connectivity."""

    vertices: np.ndarray
    """Vertex coordinates, shape (N, 3)."""
    tetrahedra: np.ndarray
    """Vertex indices of each tetrahedron, shape (K, 4)."""
    boundary_triangles: np.ndarray
    """Vertex indices of each boundary triangle, shape (B, 3)."""
    boundary_tags: np.ndarray
    """Physical tag id of each boundary triangle, shape (B,)."""
    physical_names: dict[str, int] = field(default_factory=dict)
    """Names of the physical tags of boundary triangles."""
    tag_kinds: dict[int, BoundaryKind] = field(default_factory=dict)
    """Default boundary kind of physical tags, if known."""
    skipped: int = 0
    """Number of elements of unsupported types that were ignored."""

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.tetrahedra = np.asarray(self.tetrahedra, dtype=int).reshape(-1, 4)
        self.boundary_triangles = np.asarray(
            self.boundary_triangles, dtype=int
        ).reshape(-1, 3)
        self.boundary_tags = np.asarray(self.boundary_tags, dtype=int).reshape(-1)

        n = self.vertices.shape[0]
        if self.boundary_tags.size != self.boundary_triangles.shape[0]:
            raise MeshError("One physical tag is needed per boundary triangle.")
        for name, cells in [
            ("tetrahedron", self.tetrahedra),
            ("triangle", self.boundary_triangles),
        ]:
            if cells.size and (cells.min() < 0 or cells.max() >= n):
                raise MeshError(f"A {name} references a vertex out of range.")
            sorted_cells = np.sort(cells, axis=1)
            if np.any(sorted_cells[:, 1:] == sorted_cells[:, :-1]):
                raise MeshError(f"A {name} has repeated vertices.")

    def __str__(self) -> str:
        return (
            f"RawMesh: {self.vertices.shape[0]} vertices, "
            f"{self.tetrahedra.shape[0]} tetrahedra, "
            f"{self.boundary_triangles.shape[0]} boundary triangles"
        )


# MSH 4.1 reader

_NUMERIC_SECTIONS = ("Entities", "Nodes", "Elements")
"""Sections whose lines only hold numbers."""


def _check_format(line: str, lineno: int) -> None:
    tokens = line.split()
    if len(tokens) < 3:
        raise MshParseError("Malformed $MeshFormat", lineno)
    if tokens[0] != "4.1":
        raise UnsupportedMshFormatError(
            f"MSH version {tokens[0]} not supported, only 4.1 ASCII is."
        )
    if tokens[1] != "0":
        raise UnsupportedMshFormatError("Binary MSH files are not supported.")


def scan_msh(text: str) -> list[str]:
    """Check the section layout of a MSH document and return its sections.

    Only headers, the format line and the numeric sections are looked at,
    so that errors can point to a line. The payload is read by meshio.

    Raises
    ------
    MshParseError
        Malformed section, with the offending line number.
    UnsupportedMshFormatError
        Version other than 4.1, or binary file.
    """
    lines = text.splitlines()
    sections: list[str] = []
    current: str | None = None
    format_line = False

    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if current is None:
            if not line:
                continue
            if not line.startswith("$"):
                raise MshParseError(f"Expected a section header, got '{line}'", lineno)
            current = line[1:]
            if not sections and current != "MeshFormat":
                raise MshParseError("Document must start with $MeshFormat", lineno)
            sections.append(current)
            continue

        if line == f"$End{current}":
            if current == "MeshFormat" and not format_line:
                raise MshParseError("Malformed $MeshFormat", lineno)
            current = None
        elif current == "MeshFormat" and not format_line:
            _check_format(line, lineno)
            format_line = True
        elif line.startswith("$") and current != "MeshFormat":
            raise MshParseError(f"Expected '$End{current}', got '{line}'", lineno)
        elif current in _NUMERIC_SECTIONS:
            for token in line.split():
                try:
                    float(token)
                except ValueError as err:
                    raise MshParseError(
                        f"Malformed ${current} line '{line}'", lineno
                    ) from err

    if current is not None:
        raise MshParseError(f"Missing '$End{current}'", len(lines))
    for required in ("MeshFormat", "Nodes", "Elements"):
        if required not in sections:
            raise MshParseError(f"Missing ${required} section", len(lines))
    return sections


def _read_meshio(path: str | os.PathLike) -> meshio.Mesh:
    try:
        return meshio.read(path, file_format="gmsh")
    except (meshio.ReadError, ValueError, KeyError, IndexError) as err:
        raise MshParseError(f"Malformed MSH payload: {err}") from err


def raw_from_meshio(mio: meshio.Mesh) -> RawMesh:
    """Keep the tetrahedra and the tagged triangles of a meshio mesh.

    The tag of a triangle is its Gmsh physical tag, or its entity tag when the
    document declares no physical groups.
    """
    tags = mio.cell_data.get("gmsh:physical", mio.cell_data.get("gmsh:geometrical"))
    tets, triangles, triangle_tags = [], [], []
    skipped = 0
    for i, block in enumerate(mio.cells):
        if block.type == "tetra":
            tets.append(block.data)
        elif block.type == "triangle":
            if tags is None:
                raise MshParseError("Boundary triangles carry no tag")
            triangles.append(block.data)
            triangle_tags.append(tags[i])
        else:
            skipped += len(block.data)

    names = {
        str(name).strip('"'): int(value[0])
        for name, value in mio.field_data.items()
        if len(value) > 1 and int(value[1]) == 2
    }
    if skipped:
        logger.warning("Skipped %d elements of unsupported type", skipped)

    raw = RawMesh(
        mio.points[:, :3],
        np.concatenate(tets) if tets else np.empty((0, 4), int),
        np.concatenate(triangles) if triangles else np.empty((0, 3), int),
        np.concatenate(triangle_tags) if triangle_tags else np.empty(0, int),
        physical_names=names,
        skipped=skipped,
    )
    logger.debug("Parsed %s", raw)
    return raw


def parse_msh(text: str) -> RawMesh:
    """Parse a Gmsh MSH 4.1 ASCII document.

    The document is checked by :func:`scan_msh`, then read with meshio. Only
    4-node tetrahedra and 3-node triangles are kept, other elements are
    counted in :attr:`RawMesh.skipped`.

    Raises
    ------
    MshParseError
        Malformed document. The line number is given when known.
    UnsupportedMshFormatError
        Version other than 4.1, or binary file.
    """
    scan_msh(text)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "mesh.msh")
        with open(path, "w", encoding="utf-8") as fp:
            fp.write(text)
        return raw_from_meshio(_read_meshio(path))


def read_msh(path: str | os.PathLike) -> RawMesh:
    """Read a MSH 4.1 ASCII file. See :func:`parse_msh`."""
    with open(path, "rb") as fp:
        data = fp.read()
    scan_msh(data.decode("utf-8", errors="surrogateescape"))
    return raw_from_meshio(_read_meshio(path))


# Box mesher

BOX_FACES = ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax")
"""Names of the box faces, with physical tags 1 to 6 in that order."""


def build_box_mesh(
    n: int,
    bounds: abc.Sequence[tuple[float, float]] = ((0.0, 1.0),) * 3,
    tags: BoundaryKind | abc.Mapping[str, BoundaryKind | str] = BoundaryKind.I,
) -> RawMesh:
    """Mesh an axis-aligned box with the 6-tetrahedra Kuhn subdivision.

    Parameters
    ----------
    n
        Number of hexahedra along each axis.
    bounds
        (low, high) along each axis.
    tags
        Boundary kind of every box face, or a mapping from box face name
        (see :data:`BOX_FACES`) to kind.

    Raises
    ------
    DegenerateBoxError
        If ``n < 1`` or the box has a zero-length edge.
    """
    if n < 1:
        raise DegenerateBoxError(f"Need at least one subdivision, got {n}.")
    low = np.array([b[0] for b in bounds], dtype=float)
    high = np.array([b[1] for b in bounds], dtype=float)
    if low.shape != (3,) or np.any(high <= low):
        raise DegenerateBoxError(f"Degenerate box bounds {bounds}.")

    if isinstance(tags, abc.Mapping):
        missing = set(BOX_FACES) - set(tags)
        if missing:
            raise MissingBoundaryTagError(f"No kind for box faces {sorted(missing)}.")
        kinds = {
            i + 1: BoundaryKind.parse(tags[name]) for i, name in enumerate(BOX_FACES)
        }
    else:
        kinds = {i + 1: BoundaryKind.parse(tags) for i in range(6)}

    grid = np.stack(
        np.meshgrid(*[np.arange(n + 1)] * 3, indexing="ij"), axis=-1
    ).reshape(-1, 3)
    vertices = low + grid * (high - low) / n

    def vid(ijk: np.ndarray) -> int:
        return int(ijk[0] * (n + 1) ** 2 + ijk[1] * (n + 1) + ijk[2])

    unit = np.eye(3, dtype=int)
    tets = []
    for corner in itertools.product(range(n), repeat=3):
        for perm in itertools.permutations(range(3)):
            path = [np.array(corner)]
            for axis in perm:
                path.append(path[-1] + unit[axis])
            tet = [vid(v) for v in path]
            # odd permutations give negative orientation
            if np.linalg.det(unit[list(perm)]) < 0:
                tet[1], tet[2] = tet[2], tet[1]
            tets.append(tet)

    triangles = []
    face_tags = []
    for tet in tets:
        for face in FACE_VERTICES:
            tri = [tet[i] for i in face]
            ijk = grid[tri]
            for axis in range(3):
                for side, value in enumerate((0, n)):
                    if np.all(ijk[:, axis] == value):
                        triangles.append(tri)
                        face_tags.append(2 * axis + side + 1)

    raw = RawMesh(
        vertices,
        tets,
        triangles,
        face_tags,
        physical_names={name: i + 1 for i, name in enumerate(BOX_FACES)},
        tag_kinds=kinds,
    )
    logger.debug("Box mesh n=%d: %s", n, raw)
    return raw


# Connectivity


@dataclass(frozen=True)
class Face:
    """A unique mesh face."""

    vertices: tuple[int, int, int]
    """Sorted global vertex indices."""
    sides: tuple[tuple[int, int], ...]
    """(element, local face) pairs: two for interior faces, one on the boundary."""
    kind: BoundaryKind | None = None
    """Boundary kind, None for interior faces."""

    @property
    def interior(self) -> bool:
        """True if the face is shared by two elements."""
        return len(self.sides) == 2


class Mesh:
    """Conforming tetrahedral mesh with connectivity and affine geometry.

    Built by :func:`build_connectivity`. Instances are not modified after
    construction, except for the per-degree cache of node permutations.
    """

    def __init__(
        self,
        vertices: np.ndarray,
        tetrahedra: np.ndarray,
        faces: list[Face],
    ):
        self.vertices = vertices
        self.tetrahedra = tetrahedra
        self.faces = faces
        self.K = tetrahedra.shape[0]

        self.neighbor_element = np.full((self.K, 4), -1, dtype=int)
        """Neighbouring element across each local face, -1 on the boundary."""
        self.neighbor_face = np.full((self.K, 4), -1, dtype=int)
        """Local face index on the neighbour, -1 on the boundary."""
        self.boundary: dict[tuple[int, int], BoundaryKind] = {}
        """Boundary kind of each boundary (element, local face)."""
        for face in faces:
            if face.interior:
                (k1, f1), (k2, f2) = face.sides
                self.neighbor_element[k1, f1], self.neighbor_face[k1, f1] = k2, f2
                self.neighbor_element[k2, f2], self.neighbor_face[k2, f2] = k1, f1
            else:
                assert face.kind is not None
                self.boundary[face.sides[0]] = face.kind

        self.geometry = [ElementGeometry.from_vertices(vertices[t]) for t in tetrahedra]
        """Affine geometric factors of each element."""
        self.jacobians = np.stack([g.jacobian for g in self.geometry])
        self.inverse_transposes = np.stack([g.inverse_transpose for g in self.geometry])
        self.determinants = np.array([g.determinant for g in self.geometry])
        self.normals = np.stack([g.normals for g in self.geometry])
        """Unit outward normals, shape (K, 4, 3)."""
        self.face_scales = np.stack([g.face_scales for g in self.geometry])
        """Face area scales J_F, shape (K, 4)."""

        self._permutations: dict[int, np.ndarray] = {}

    @property
    def n_interior(self) -> int:
        """Number of interior faces."""
        return sum(face.interior for face in self.faces)

    @property
    def n_boundary(self) -> int:
        """Number of boundary faces."""
        return len(self.faces) - self.n_interior

    def neighbor(self, k: int, f: int) -> tuple[int, int] | BoundaryKind:
        """Return the (element, face) across local face `f` of `k`, or its kind."""
        if self.neighbor_element[k, f] >= 0:
            return int(self.neighbor_element[k, f]), int(self.neighbor_face[k, f])
        return self.boundary[(k, f)]

    def node_coordinates(self, ref: ReferenceElement) -> np.ndarray:
        """Return physical coordinates of the volume nodes, shape (K, Np, 3)."""
        return self.vertices[self.tetrahedra[:, :1]] + np.einsum(
            "kde,ne->knd", self.jacobians, ref.nodes + 1.0
        )

    def face_node_coordinates(self, ref: ReferenceElement) -> np.ndarray:
        """Return physical coordinates of the face nodes, shape (K, 4, Nfp, 3)."""
        return self.vertices[self.tetrahedra[:, None, :1]] + np.einsum(
            "kde,fne->kfnd", self.jacobians, ref.face_points + 1.0
        )

    def face_diameters(self) -> np.ndarray:
        """Return the longest edge of each local face, shape (K, 4)."""
        diam = np.zeros((self.K, 4))
        for f, face in enumerate(FACE_VERTICES):
            pts = self.vertices[self.tetrahedra[:, list(face)]]
            for a, b in itertools.combinations(range(3), 2):
                diam[:, f] = np.maximum(
                    diam[:, f], np.linalg.norm(pts[:, a] - pts[:, b], axis=-1)
                )
        return diam

    def match_face_nodes(self, ref: ReferenceElement) -> np.ndarray:
        """Return the node permutation across interior faces for degree ``ref.p``.

        ``perm[k, f, i]`` is the index, among the face nodes of the neighbour
        side, of the node coinciding with face node ``i`` of side (k, f).
        Boundary sides hold -1. Results are cached per degree.

        Raises
        ------
        MeshError
            If face nodes cannot be matched within 1e-8 of the face diameter.
        """
        if ref.p in self._permutations:
            return self._permutations[ref.p]
        coords = self.face_node_coordinates(ref)
        diam = self.face_diameters()
        perm = np.full((self.K, 4, ref.Nfp), -1, dtype=int)
        for face in self.faces:
            if not face.interior:
                continue
            for (k1, f1), (k2, f2) in (face.sides, face.sides[::-1]):
                dist = cdist(coords[k1, f1], coords[k2, f2])
                match = np.argmin(dist, axis=1)
                tol = 1e-8 * diam[k1, f1]
                if (
                    np.any(dist[np.arange(ref.Nfp), match] > tol)
                    or np.unique(match).size != ref.Nfp
                ):
                    raise MeshError(
                        f"Cannot match face nodes between element {k1} "
                        f"and element {k2}."
                    )
                perm[k1, f1] = match
        self._permutations[ref.p] = perm
        return perm

    def __str__(self) -> str:
        return (
            f"Mesh: {self.vertices.shape[0]} vertices, {self.K} tetrahedra, "
            f"{len(self.faces)} faces ({self.n_interior} interior)"
        )

    def __repr__(self) -> str:
        return str(self)


def resolve_tag_map(
    raw: RawMesh,
    tag_map: abc.Mapping[int | str, BoundaryKind | str] | None = None,
) -> dict[int, BoundaryKind]:
    """Return the kind of each physical tag id.

    Entries of `tag_map` may be keyed by tag id or by physical name, they
    override the defaults stored in the raw mesh.
    """
    kinds = dict(raw.tag_kinds)
    for key, kind in (tag_map or {}).items():
        if isinstance(key, str) and not key.lstrip("-").isdigit():
            if key not in raw.physical_names:
                raise MissingBoundaryTagError(
                    f"Unknown physical name '{key}' "
                    f"(known: {sorted(raw.physical_names)})."
                )
            tag = raw.physical_names[key]
        else:
            tag = int(key)
        kinds[tag] = BoundaryKind.parse(kind)
    return kinds


def build_connectivity(
    raw: RawMesh,
    tag_map: abc.Mapping[int | str, BoundaryKind | str] | None = None,
) -> Mesh:
    """Build face connectivity and geometry of a raw mesh.

    Negatively oriented tetrahedra are fixed by swapping their second and
    third vertices.

    Parameters
    ----------
    raw
        Raw mesh.
    tag_map
        Boundary kind of each physical tag, by id or physical name. Completes
        or overrides ``raw.tag_kinds``.

    Raises
    ------
    NonManifoldError
        A face is shared by three or more tetrahedra.
    MissingBoundaryTagError
        A boundary face has no tag, or a tag without kind.
    DegenerateElementError
        A tetrahedron has zero volume.
    """
    kinds = resolve_tag_map(raw, tag_map)
    tets = raw.tetrahedra.copy()
    vertices = raw.vertices

    edges = vertices[tets[:, 1:]] - vertices[tets[:, :1]]
    dets = np.linalg.det(edges)
    scale = np.max(np.abs(edges), axis=(1, 2)) ** 3
    degenerate = np.abs(dets) <= 1e-14 * scale
    if np.any(degenerate):
        raise DegenerateElementError(
            f"Element {int(np.flatnonzero(degenerate)[0])} has zero volume."
        )
    flip = dets < 0
    if np.any(flip):
        logger.debug("Reorienting %d elements", int(flip.sum()))
        tets[flip, 1], tets[flip, 2] = tets[flip, 2], tets[flip, 1].copy()

    sides: dict[tuple[int, int, int], list[tuple[int, int]]] = {}
    for k, tet in enumerate(tets):
        for f, local in enumerate(FACE_VERTICES):
            key = tuple(sorted(int(tet[i]) for i in local))
            sides.setdefault(key, []).append((k, f))  # type: ignore[arg-type]

    triangle_tags = {
        tuple(sorted(int(v) for v in tri)): int(tag)
        for tri, tag in zip(raw.boundary_triangles, raw.boundary_tags, strict=True)
    }

    faces = []
    for key, pairs in sides.items():
        if len(pairs) > 2:
            raise NonManifoldError(f"Face {key} is shared by {len(pairs)} elements.")
        if len(pairs) == 2:
            faces.append(Face(key, tuple(pairs)))
            continue
        if key not in triangle_tags:
            raise MissingBoundaryTagError(f"Boundary face {key} has no physical tag.")
        tag = triangle_tags.pop(key)
        if tag not in kinds:
            raise MissingBoundaryTagError(f"Physical tag {tag} has no boundary kind.")
        faces.append(Face(key, tuple(pairs), kinds[tag]))

    if triangle_tags:
        raise MeshError(
            f"{len(triangle_tags)} boundary triangles are not boundary faces "
            "of the mesh."
        )

    mesh = Mesh(vertices, tets, faces)
    logger.debug("Built %s", mesh)
    return mesh

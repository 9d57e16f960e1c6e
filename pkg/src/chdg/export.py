"""Output files: iteration histories and field snapshots."""

# This file is part of the 'chdg' project and subject
# to the MIT License as defined in the file 'LICENSE',
# at the root of this project.

from __future__ import annotations

import csv
import json
import logging
import os
from collections import abc
from typing import Any

import meshio
import numpy as np

from .mesh import Mesh
from .reference import REFERENCE_VERTICES, ReferenceElement
from .solvers import IterationReport
from .transmission import SolutionFields

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ("iter", "rel_residual_2", "rel_residual_M", "rel_error")


def history_rows(report: IterationReport) -> list[tuple[Any, ...]]:
    """Return the rows of the history table, None where no error was logged."""
    return [
        (it, r2, rm, report.errors.get(it))
        for it, (r2, rm) in enumerate(
            zip(report.residuals, report.residuals_M, strict=True)
        )
    ]


def write_history(
    report: IterationReport,
    directory: str | os.PathLike,
    metadata: abc.Mapping[str, Any] | None = None,
) -> tuple[str, str]:
    """Write ``history.csv`` and ``history.json`` in `directory`.

    The JSON file holds the same sequences as the CSV file, plus the report
    summary and `metadata`.

    Returns
    -------
    Paths of the CSV and JSON files.
    """
    os.makedirs(directory, exist_ok=True)
    csv_path = os.path.join(directory, "history.csv")
    json_path = os.path.join(directory, "history.json")
    rows = history_rows(report)

    with open(csv_path, "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(HISTORY_COLUMNS)
        for it, r2, rm, err in rows:
            writer.writerow([it, repr(r2), repr(rm), "" if err is None else repr(err)])

    content = dict(metadata or {})
    content.update(report.as_dict())
    content["history"] = {
        col: [row[i] for row in rows] for i, col in enumerate(HISTORY_COLUMNS)
    }
    with open(json_path, "w") as fp:
        json.dump(content, fp, indent=2)

    logger.debug("History written to %s", directory)
    return csv_path, json_path


def read_history_csv(path: str | os.PathLike) -> dict[str, list[float | None]]:
    """Read back a history table written by :func:`write_history`."""
    out: dict[str, list[float | None]] = {col: [] for col in HISTORY_COLUMNS}
    with open(path, newline="") as fp:
        for row in csv.DictReader(fp):
            for col in HISTORY_COLUMNS:
                out[col].append(float(row[col]) if row[col] != "" else None)
    return out


def vertex_node_indices(ref: ReferenceElement) -> np.ndarray:
    """Return the index of the node at each reference vertex.

    For ``p=0`` the single node stands for every vertex.
    """
    diff = ref.nodes[None, :, :] - REFERENCE_VERTICES[:, None, :]
    return np.argmin(np.linalg.norm(diff, axis=-1), axis=1)


def _point_data(values: np.ndarray, name: str) -> dict[str, np.ndarray]:
    return {f"Re_{name}": np.real(values), f"Im_{name}": np.imag(values)}


def export_fields(
    fields: SolutionFields,
    mesh: Mesh,
    ref: ReferenceElement,
    path: str | os.PathLike,
    node_cloud: bool = False,
) -> list[str]:
    """Write fields to a legacy VTK ASCII unstructured grid.

    Every tetrahedron is written as its own cell, with its own four points
    carrying the field values at the vertex nodes (degree 1 downsampling).

    Parameters
    ----------
    fields
        Fields on every element.
    mesh
        Mesh.
    ref
        Reference element of the fields.
    path
        Output file.
    node_cloud
        If True and ``p > 1``, also write every node as a vertex cell in a
        second file ending in ``_nodes.vtk``.

    Returns
    -------
    Paths of the written files.
    """
    written = []
    vertex_nodes = vertex_node_indices(ref)
    points = mesh.vertices[mesh.tetrahedra].reshape(-1, 3)
    cells = [("tetra", np.arange(4 * mesh.K).reshape(mesh.K, 4))]
    e = np.transpose(fields.e[:, :, vertex_nodes], (0, 2, 1)).reshape(-1, 3)
    h = np.transpose(fields.h[:, :, vertex_nodes], (0, 2, 1)).reshape(-1, 3)
    grid = meshio.Mesh(
        points, cells, point_data={**_point_data(e, "e"), **_point_data(h, "h")}
    )
    meshio.write(path, grid, file_format="vtk", binary=False)
    written.append(os.fspath(path))

    if node_cloud and ref.p > 1:
        cloud_path = os.fspath(path)
        cloud_path = cloud_path.removesuffix(".vtk") + "_nodes.vtk"
        nodes = mesh.node_coordinates(ref).reshape(-1, 3)
        e_all = np.transpose(fields.e, (0, 2, 1)).reshape(-1, 3)
        h_all = np.transpose(fields.h, (0, 2, 1)).reshape(-1, 3)
        cloud = meshio.Mesh(
            nodes,
            [("vertex", np.arange(nodes.shape[0])[:, None])],
            point_data={**_point_data(e_all, "e"), **_point_data(h_all, "h")},
        )
        meshio.write(cloud_path, cloud, file_format="vtk", binary=False)
        written.append(cloud_path)

    logger.info("Fields written to %s", ", ".join(written))
    return written

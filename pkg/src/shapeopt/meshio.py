"""Mesh exchange: Gmsh MSH 2.2 ASCII reader, legacy VTK ASCII writer/reader.

The exact grammar accepted and emitted is documented in docs/FORMATS.md.
Coordinates are written with 17 significant digits so a write/read round trip
reproduces every float bit-exactly.
"""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .mesh import MeshError, SimplicialMesh

logger = logging.getLogger(__name__)

_VTK_TRIANGLE = 5
_VTK_TETRA = 10
_MSH_LINE = 1
_MSH_TRIANGLE = 2
_MSH_TETRA = 4


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_vtk(
    mesh: SimplicialMesh,
    path: str | Path,
    point_data: dict[str, np.ndarray] | None = None,
    title: str = "shapeopt mesh",
) -> None:
    """Write a mesh (plus optional vertex fields) as legacy ASCII VTK.

    Scalar fields must have shape (nv,), vector fields (nv, dim); 2D vectors
    are padded with a zero third component as the format requires.
    """
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    nv = mesh.num_vertices
    pts = mesh.vertices
    if mesh.dim == 2:
        pts = np.column_stack((pts, np.zeros(nv)))
    lines.append(f"POINTS {nv} double")
    lines.extend(" ".join(_fmt(c) for c in p) for p in pts)
    npc = mesh.dim + 1
    lines.append(f"CELLS {mesh.num_cells} {mesh.num_cells * (npc + 1)}")
    lines.extend(f"{npc} " + " ".join(str(i) for i in cell) for cell in mesh.cells)
    lines.append(f"CELL_TYPES {mesh.num_cells}")
    ctype = _VTK_TRIANGLE if mesh.dim == 2 else _VTK_TETRA
    lines.extend(str(ctype) for _ in range(mesh.num_cells))
    if point_data:
        lines.append(f"POINT_DATA {nv}")
        for name, values in point_data.items():
            values = np.asarray(values, dtype=np.float64)
            if values.shape == (nv,):
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                lines.extend(_fmt(v) for v in values)
            elif values.shape == (nv, mesh.dim):
                padded = values
                if mesh.dim == 2:
                    padded = np.column_stack((values, np.zeros(nv)))
                lines.append(f"VECTORS {name} double")
                lines.extend(" ".join(_fmt(c) for c in row) for row in padded)
            else:
                raise ValueError(
                    f"point data {name!r} has shape {values.shape}, "
                    f"expected ({nv},) or ({nv}, {mesh.dim})"
                )
    Path(path).write_text("\n".join(lines) + "\n")
    logger.debug("wrote VTK mesh to %s", path)


def read_vtk(path: str | Path) -> tuple[SimplicialMesh, dict[str, np.ndarray]]:
    """Read a legacy ASCII VTK unstructured grid written by :func:`write_vtk`.

    Returns the mesh and any point data.  The spatial dimension is inferred
    from the cell type (triangle -> 2D, dropping the zero z column).
    """
    tokens = _tokenize_vtk(Path(path).read_text())
    cursor = 0

    def expect(word: str) -> None:
        nonlocal cursor
        if cursor >= len(tokens) or tokens[cursor].upper() != word:
            got = tokens[cursor] if cursor < len(tokens) else "<eof>"
            raise MeshError(f"VTK parse error: expected {word}, got {got!r}")
        cursor += 1

    def take(count: int) -> list[str]:
        nonlocal cursor
        if cursor + count > len(tokens):
            raise MeshError("VTK parse error: unexpected end of file")
        out = tokens[cursor : cursor + count]
        cursor += count
        return out

    expect("DATASET")
    expect("UNSTRUCTURED_GRID")
    expect("POINTS")
    nv = int(take(1)[0])
    take(1)  # dtype
    points = np.array([float(t) for t in take(3 * nv)]).reshape(nv, 3)
    expect("CELLS")
    nc = int(take(1)[0])
    total = int(take(1)[0])
    raw = [int(t) for t in take(total)]
    cells, pos = [], 0
    for _ in range(nc):
        npc = raw[pos]
        cells.append(raw[pos + 1 : pos + 1 + npc])
        pos += npc + 1
    expect("CELL_TYPES")
    if int(take(1)[0]) != nc:
        raise MeshError("VTK parse error: CELL_TYPES count mismatch")
    types = {int(t) for t in take(nc)}
    if types == {_VTK_TRIANGLE}:
        dim = 2
    elif types == {_VTK_TETRA}:
        dim = 3
    else:
        raise MeshError(f"unsupported VTK cell types {sorted(types)}")
    vertices = points[:, :dim]
    point_data: dict[str, np.ndarray] = {}
    while cursor < len(tokens):
        word = tokens[cursor].upper()
        cursor += 1
        if word == "POINT_DATA":
            if int(take(1)[0]) != nv:
                raise MeshError("VTK parse error: POINT_DATA count mismatch")
        elif word == "SCALARS":
            name, _dtype, _comps = take(3)
            expect("LOOKUP_TABLE")
            take(1)
            point_data[name] = np.array([float(t) for t in take(nv)])
        elif word == "VECTORS":
            name, _dtype = take(2)
            vec = np.array([float(t) for t in take(3 * nv)]).reshape(nv, 3)
            point_data[name] = vec[:, :dim]
        else:
            raise MeshError(f"VTK parse error: unexpected section {word!r}")
    return SimplicialMesh.from_cells(vertices, np.array(cells)), point_data


def _tokenize_vtk(text: str) -> list[str]:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# vtk DataFile"):
        raise MeshError("not a legacy VTK file (missing '# vtk DataFile' header)")
    if len(lines) < 3 or lines[2].strip().upper() != "ASCII":
        raise MeshError("only ASCII VTK files are supported")
    tokens: list[str] = []
    for line in lines[3:]:
        tokens.extend(line.split())
    return tokens


def read_gmsh(path: str | Path) -> SimplicialMesh:
    """Read a Gmsh MSH 2.2 ASCII file.

    Keeps the highest-dimensional simplices found (tetrahedra if present,
    otherwise triangles); lower-dimensional elements and physical tags are
    ignored, and boundary facets are re-derived from the cell complex.  Node
    ids may be non-contiguous.
    """
    lines = Path(path).read_text().splitlines()
    sections: dict[str, list[str]] = {}
    name = None
    for line in lines:
        stripped = line.strip()
        if stripped.startswith("$End"):
            name = None
        elif stripped.startswith("$"):
            name = stripped[1:]
            sections[name] = []
        elif name is not None:
            sections[name].append(stripped)
    if "MeshFormat" not in sections or not sections["MeshFormat"]:
        raise MeshError("not a Gmsh MSH file (missing $MeshFormat)")
    fields = sections["MeshFormat"][0].split()
    if not fields or not fields[0].startswith("2."):
        raise MeshError(f"unsupported MSH version {fields[0] if fields else '?'} (need 2.x)")
    if len(fields) > 1 and fields[1] != "0":
        raise MeshError("binary MSH files are not supported")
    if "Nodes" not in sections or "Elements" not in sections:
        raise MeshError("MSH file lacks $Nodes or $Elements")
    node_lines = sections["Nodes"]
    count = int(node_lines[0])
    ids = np.empty(count, dtype=np.int64)
    coords = np.empty((count, 3))
    for row, line in enumerate(node_lines[1 : 1 + count]):
        parts = line.split()
        ids[row] = int(parts[0])
        coords[row] = [float(x) for x in parts[1:4]]
    renumber = {int(i): k for k, i in enumerate(ids)}
    elem_lines = sections["Elements"]
    ecount = int(elem_lines[0])
    tris, tets = [], []
    for line in elem_lines[1 : 1 + ecount]:
        parts = [int(x) for x in line.split()]
        etype, ntags = parts[1], parts[2]
        nodes = parts[3 + ntags :]
        if etype == _MSH_TRIANGLE:
            tris.append(nodes)
        elif etype == _MSH_TETRA:
            tets.append(nodes)
        elif etype == _MSH_LINE:
            continue
        else:
            logger.debug("ignoring MSH element type %d", etype)
    if tets:
        cells = np.array([[renumber[n] for n in t] for t in tets], dtype=np.int64)
        vertices = coords
    elif tris:
        cells = np.array([[renumber[n] for n in t] for t in tris], dtype=np.int64)
        if np.any(coords[:, 2] != 0.0):
            raise MeshError("triangle mesh with nonzero z coordinates")
        vertices = coords[:, :2]
    else:
        raise MeshError("MSH file contains no triangles or tetrahedra")
    used = np.unique(cells)
    if len(used) != len(vertices):
        # drop nodes not referenced by any kept cell (e.g. standalone points)
        remap = -np.ones(len(vertices), dtype=np.int64)
        remap[used] = np.arange(len(used))
        vertices = vertices[used]
        cells = remap[cells]
    return SimplicialMesh.from_cells(vertices, cells)

"""Mesh file I/O: ASCII OBJ for surfaces, TetGen-style node/ele pairs for tet meshes."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Union

import numpy as np

from .errors import InvalidArgumentError, MeshFormatError
from .geometry import TetMesh, TriMesh


def _fmt(x: float) -> str:
    # 17 significant digits round-trips float64 exactly.
    return format(float(x), ".17g")


def _strip(line: str) -> str:
    return line.split("#", 1)[0].strip()


def save_mesh(mesh: Union[TriMesh, TetMesh], path) -> None:
    """Write a TriMesh as OBJ or a TetMesh as a .node/.ele pair.

    For TetMesh, `path` may point at either half of the pair (or carry no
    suffix); both files are written next to each other.
    """
    path = Path(path)
    if isinstance(mesh, TriMesh):
        if path.suffix.lower() != ".obj":
            raise InvalidArgumentError("TriMesh must be saved as .obj")
        lines = ["v %s %s %s" % tuple(_fmt(c) for c in v) for v in mesh.vertices]
        if mesh.normals is not None:
            lines += ["vn %s %s %s" % tuple(_fmt(c) for c in n) for n in mesh.normals]
        lines += ["f %d %d %d" % tuple(t + 1) for t in mesh.triangles]
        path.write_text("\n".join(lines) + "\n")
    elif isinstance(mesh, TetMesh):
        base = path.with_suffix("") if path.suffix in (".node", ".ele") else path
        node_lines = ["%d 3 0 0" % len(mesh.vertices)]
        node_lines += [
            "%d %s %s %s" % (i + 1, _fmt(v[0]), _fmt(v[1]), _fmt(v[2]))
            for i, v in enumerate(mesh.vertices)
        ]
        ele_lines = ["%d 4 0" % len(mesh.tets)]
        ele_lines += [
            "%d %d %d %d %d" % (i + 1, t[0] + 1, t[1] + 1, t[2] + 1, t[3] + 1)
            for i, t in enumerate(mesh.tets)
        ]
        base.with_suffix(".node").write_text("\n".join(node_lines) + "\n")
        base.with_suffix(".ele").write_text("\n".join(ele_lines) + "\n")
    else:
        raise InvalidArgumentError("mesh must be TriMesh or TetMesh")


def load_mesh(path) -> Union[TriMesh, TetMesh]:
    """Load an .obj TriMesh or a .node/.ele TetMesh pair.

    For tet meshes, pass the path of either file of the pair.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        return _load_obj(path)
    if suffix in (".node", ".ele"):
        return _load_node_ele(path.with_suffix(""))
    raise InvalidArgumentError(f"unsupported mesh extension: {path.suffix!r}")


def _load_obj(path: Path) -> TriMesh:
    if not path.exists():
        raise MeshFormatError(str(path), 0, "file not found")
    verts, normals, faces = [], [], []
    for ln, raw in enumerate(path.read_text().splitlines(), start=1):
        line = _strip(raw)
        if not line:
            continue
        parts = line.split()
        tag = parts[0]
        try:
            if tag == "v":
                verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
            elif tag == "vn":
                normals.append([float(parts[1]), float(parts[2]), float(parts[3])])
            elif tag == "f":
                idx = [int(p.split("/", 1)[0]) for p in parts[1:]]
                if len(idx) < 3:
                    raise ValueError("face needs at least 3 indices")
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                for j in range(1, len(idx) - 1):  # fan-triangulate polygons
                    faces.append([idx[0], idx[j], idx[j + 1]])
        except (ValueError, IndexError) as e:
            raise MeshFormatError(str(path), ln, f"bad OBJ line: {e}") from e
    if not verts:
        raise MeshFormatError(str(path), 0, "no vertices")
    n = np.asarray(normals) if len(normals) == len(verts) else None
    try:
        return TriMesh(np.asarray(verts), np.asarray(faces, dtype=np.int64).reshape(-1, 3), n)
    except InvalidArgumentError as e:
        raise MeshFormatError(str(path), 0, str(e)) from e


def _read_numeric_lines(path: Path):
    if not path.exists():
        raise MeshFormatError(str(path), 0, "file not found")
    out = []
    for ln, raw in enumerate(path.read_text().splitlines(), start=1):
        line = _strip(raw)
        if line:
            out.append((ln, line.split()))
    if not out:
        raise MeshFormatError(str(path), 0, "empty file")
    return out


def _load_node_ele(base: Path) -> TetMesh:
    node_path = base.with_suffix(".node")
    ele_path = base.with_suffix(".ele")

    rows = _read_numeric_lines(node_path)
    ln, header = rows[0]
    try:
        n_pts = int(header[0])
    except (ValueError, IndexError) as e:
        raise MeshFormatError(str(node_path), ln, "bad node header") from e
    if len(rows) - 1 != n_pts:
        raise MeshFormatError(str(node_path), ln, f"expected {n_pts} points, got {len(rows) - 1}")
    verts = np.zeros((n_pts, 3))
    for row, (ln, parts) in enumerate(rows[1:]):
        try:
            idx = int(parts[0])
            verts[row] = [float(parts[1]), float(parts[2]), float(parts[3])]
        except (ValueError, IndexError) as e:
            raise MeshFormatError(str(node_path), ln, f"bad node line: {e}") from e
        if idx != row + 1:
            raise MeshFormatError(str(node_path), ln, f"expected index {row + 1}, got {idx}")

    rows = _read_numeric_lines(ele_path)
    ln, header = rows[0]
    try:
        n_tets = int(header[0])
    except (ValueError, IndexError) as e:
        raise MeshFormatError(str(ele_path), ln, "bad ele header") from e
    if len(rows) - 1 != n_tets:
        raise MeshFormatError(str(ele_path), ln, f"expected {n_tets} tets, got {len(rows) - 1}")
    tets = np.zeros((n_tets, 4), dtype=np.int64)
    for row, (ln, parts) in enumerate(rows[1:]):
        try:
            tets[row] = [int(parts[1]) - 1, int(parts[2]) - 1, int(parts[3]) - 1, int(parts[4]) - 1]
        except (ValueError, IndexError) as e:
            raise MeshFormatError(str(ele_path), ln, f"bad ele line: {e}") from e
    try:
        return TetMesh(verts, tets)
    except InvalidArgumentError as e:
        raise MeshFormatError(str(ele_path), 0, str(e)) from e

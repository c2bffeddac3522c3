"""Meshes, primitive tetrahedralization, distance queries, and poses.

All lengths are SI meters. Mesh types are immutable value objects: their
arrays are frozen after construction and operations are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import InvalidArgumentError

_MIN_TRI_AREA = 1e-12  # m^2
_MIN_SEG_LEN = 1e-12  # m


def _frozen(a: np.ndarray, dtype) -> np.ndarray:
    out = np.ascontiguousarray(np.asarray(a, dtype=dtype))
    out.setflags(write=False)
    return out


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def tet_volumes(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Signed volumes of each tetrahedron (positive = correctly oriented)."""
    a = vertices[tets[:, 0]]
    d1 = vertices[tets[:, 1]] - a
    d2 = vertices[tets[:, 2]] - a
    d3 = vertices[tets[:, 3]] - a
    return np.einsum("ij,ij->i", np.cross(d1, d2), d3) / 6.0


@dataclass(frozen=True)
class TriMesh:
    """Triangle surface mesh.

    Attributes:
        vertices: (n, 3) float64 positions in meters.
        triangles: (m, 3) int vertex indices.
        normals: optional (n, 3) per-vertex unit normals.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        v = _frozen(self.vertices, np.float64)
        t = _frozen(self.triangles, np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise InvalidArgumentError("vertices must be (n, 3)")
        if t.ndim != 2 or t.shape[1] != 3:
            raise InvalidArgumentError("triangles must be (m, 3)")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise InvalidArgumentError("triangle index out of range")
        if t.size and triangle_areas(v, t).min() <= _MIN_TRI_AREA:
            raise InvalidArgumentError("degenerate triangle (area <= 1e-12 m^2)")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if self.normals is not None:
            n = _frozen(self.normals, np.float64)
            if n.shape != v.shape:
                raise InvalidArgumentError("normals must match vertices shape")
            object.__setattr__(self, "normals", n)

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges, (e, 2) with sorted endpoints."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)


def _boundary_surface(vertices: np.ndarray, tets: np.ndarray) -> TriMesh:
    # Local face pattern: the face opposite each tet vertex.
    pat = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])
    faces = tets[:, pat].reshape(-1, 3)
    opposite = tets[:, [0, 1, 2, 3]].reshape(-1)
    key = np.sort(faces, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    boundary = counts[inv] == 1
    out_faces = faces[boundary].copy()
    opp = opposite[boundary]
    # Outward orientation: signed volume of (face, opposite vertex) negative.
    vol = tet_volumes(vertices, np.column_stack([out_faces, opp]))
    flip = vol > 0
    out_faces[flip] = out_faces[flip][:, [0, 2, 1]]
    used = np.unique(out_faces)
    remap = np.full(len(vertices), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriMesh(vertices[used], remap[out_faces])


@dataclass(frozen=True)
class TetMesh:
    """Tetrahedral volume mesh with its precomputed boundary surface.

    Attributes:
        vertices: (n, 3) float64 positions in meters.
        tets: (m, 4) int vertex indices, positive signed volume each.
        surface: boundary TriMesh, outward oriented. Computed when omitted.
    """

    vertices: np.ndarray
    tets: np.ndarray
    surface: Optional[TriMesh] = None

    def __post_init__(self):
        v = _frozen(self.vertices, np.float64)
        t = _frozen(self.tets, np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise InvalidArgumentError("vertices must be (n, 3)")
        if t.ndim != 2 or t.shape[1] != 4:
            raise InvalidArgumentError("tets must be (m, 4)")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise InvalidArgumentError("tet index out of range")
        if t.size and tet_volumes(v, t).min() <= 0:
            raise InvalidArgumentError("tet with non-positive volume")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "tets", t)
        if self.surface is None:
            object.__setattr__(self, "surface", _boundary_surface(v, t))

    @property
    def volume(self) -> float:
        return float(tet_volumes(self.vertices, self.tets).sum())


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotation (unit quaternion, scalar-last) then translation."""

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))

    def __post_init__(self):
        t = _frozen(self.translation, np.float64)
        q = _frozen(self.rotation, np.float64)
        if t.shape != (3,):
            raise InvalidArgumentError("translation must be (3,)")
        if q.shape != (4,):
            raise InvalidArgumentError("rotation must be a quaternion (x, y, z, w)")
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise InvalidArgumentError("quaternion norm must be 1 within 1e-9")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", q)

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_parts(translation, rotation: Rotation) -> "Pose":
        return Pose(np.asarray(translation, dtype=np.float64), rotation.as_quat())

    @staticmethod
    def from_rotvec(translation, rotvec) -> "Pose":
        return Pose.from_parts(translation, Rotation.from_rotvec(np.asarray(rotvec)))

    def rot(self) -> Rotation:
        return Rotation.from_quat(self.rotation)

    def matrix(self) -> np.ndarray:
        return self.rot().as_matrix()

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.matrix().T + self.translation

    def compose(self, other: "Pose") -> "Pose":
        """self applied after other: (self * other)(p) = self(other(p))."""
        r = self.rot()
        return Pose.from_parts(r.apply(other.translation) + self.translation, r * other.rot())

    def inverse(self) -> "Pose":
        rinv = self.rot().inv()
        return Pose.from_parts(-rinv.apply(self.translation), rinv)

    def as_array(self) -> np.ndarray:
        """Pack as (7,): translation then quaternion."""
        return np.concatenate([self.translation, self.rotation])


# ---------------------------------------------------------------------------
# Primitive tetrahedralization


def tetrahedralize_box(dims, resolution: int) -> TetMesh:
    """Regular box tet mesh centered at the origin.

    Each grid cell is split into the same 6 tets around the cell's main
    diagonal, so face orientation is uniform across cells and the summed
    tet volume equals the box volume exactly.

    Args:
        dims: (3,) box extents in meters, all positive.
        resolution: cells per axis (same count on every axis), >= 1.

    Returns:
        TetMesh with (resolution+1)^3 vertices and 6*resolution^3 tets.
    """
    dims = np.asarray(dims, dtype=np.float64)
    if dims.shape != (3,) or np.any(dims <= 0):
        raise InvalidArgumentError("dims must be 3 positive extents")
    if int(resolution) != resolution or resolution < 1:
        raise InvalidArgumentError("resolution must be an integer >= 1")
    r = int(resolution)
    lin = [np.linspace(-0.5 * d, 0.5 * d, r + 1) for d in dims]
    gx, gy, gz = np.meshgrid(*lin, indexing="ij")
    verts = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])

    def vid(i, j, k):
        return (i * (r + 1) + j) * (r + 1) + k

    i, j, k = np.meshgrid(np.arange(r), np.arange(r), np.arange(r), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    c000 = vid(i, j, k)
    c100 = vid(i + 1, j, k)
    c010 = vid(i, j + 1, k)
    c001 = vid(i, j, k + 1)
    c110 = vid(i + 1, j + 1, k)
    c101 = vid(i + 1, j, k + 1)
    c011 = vid(i, j + 1, k + 1)
    c111 = vid(i + 1, j + 1, k + 1)
    # Six positively oriented tets sharing the c000-c111 diagonal.
    tets = np.concatenate(
        [
            np.column_stack([c000, c100, c110, c111]),
            np.column_stack([c000, c110, c010, c111]),
            np.column_stack([c000, c010, c011, c111]),
            np.column_stack([c000, c011, c001, c111]),
            np.column_stack([c000, c001, c101, c111]),
            np.column_stack([c000, c101, c100, c111]),
        ]
    )
    return TetMesh(verts, tets)


_ICO_T = (1.0 + np.sqrt(5.0)) / 2.0
_ICO_VERTS = np.array(
    [
        (-1, _ICO_T, 0), (1, _ICO_T, 0), (-1, -_ICO_T, 0), (1, -_ICO_T, 0),
        (0, -1, _ICO_T), (0, 1, _ICO_T), (0, -1, -_ICO_T), (0, 1, -_ICO_T),
        (_ICO_T, 0, -1), (_ICO_T, 0, 1), (-_ICO_T, 0, -1), (-_ICO_T, 0, 1),
    ],
    dtype=np.float64,
)
_ICO_FACES = np.array(
    [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ],
    dtype=np.int64,
)


def icosphere(subdivisions: int) -> Tuple[np.ndarray, np.ndarray]:
    """Unit-sphere surface: icosahedron subdivided and reprojected."""
    verts = _ICO_VERTS / np.linalg.norm(_ICO_VERTS, axis=1, keepdims=True)
    faces = _ICO_FACES.copy()
    for _ in range(int(subdivisions)):
        cache = {}
        vlist = list(verts)

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = vlist[a] + vlist[b]
                vlist.append(m / np.linalg.norm(m))
                cache[key] = len(vlist) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        verts = np.array(vlist)
        faces = np.array(new_faces, dtype=np.int64)
    # Force outward winding regardless of the base table's convention.
    centroids = verts[faces].mean(axis=1)
    normals = np.cross(verts[faces[:, 1]] - verts[faces[:, 0]], verts[faces[:, 2]] - verts[faces[:, 0]])
    flip = np.einsum("ij,ij->i", normals, centroids) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return verts, faces


def icosphere_surface(radius: float, subdivisions: int) -> TriMesh:
    """Origin-centered sphere surface mesh with outward-facing triangles."""
    if radius <= 0:
        raise InvalidArgumentError("radius must be positive")
    if not (0 <= int(subdivisions) <= 6):
        raise InvalidArgumentError("subdivisions must be in 0..6")
    verts, faces = icosphere(int(subdivisions))
    return TriMesh(radius * verts, faces)


def tetrahedralize_sphere(radius: float, subdivisions: int) -> TetMesh:
    """Ball tet mesh: icosphere boundary with concentric interior shells.

    The boundary is an icosahedron subdivided `subdivisions` times and
    projected to the sphere. The interior holds subdivisions+1 scaled
    copies of that surface plus the center; shells are stitched with
    prisms split into 3 tets each, with quad diagonals chosen by vertex
    id so adjacent prisms conform.

    Args:
        radius: sphere radius in meters, positive.
        subdivisions: refinement level, 0..6 (memory guard above 6).

    Returns:
        TetMesh whose boundary volume converges to the sphere volume as
        subdivisions increase.
    """
    if radius <= 0:
        raise InvalidArgumentError("radius must be positive")
    if int(subdivisions) != subdivisions or subdivisions < 0:
        raise InvalidArgumentError("subdivisions must be a non-negative integer")
    if subdivisions > 6:
        raise InvalidArgumentError("subdivisions > 6 refused (memory guard)")
    k = int(subdivisions)
    surf_v, surf_f = icosphere(k)
    ns = len(surf_v)
    layers = k + 1
    verts = [np.zeros((1, 3))]
    for j in range(1, layers + 1):
        verts.append(surf_v * (radius * j / layers))
    verts = np.concatenate(verts)

    def lid(layer, s):
        # layer 1..layers, s = surface vertex id
        return 1 + (layer - 1) * ns + s

    tets = []
    # Center fan to the innermost shell.
    for a, b, c in surf_f:
        tets.append((0, lid(1, a), lid(1, b), lid(1, c)))
    # Prisms between consecutive shells, fanned from the min-id vertex.
    for j in range(1, layers):
        for a, b, c in surf_f:
            bot = {a: lid(j, a), b: lid(j, b), c: lid(j, c)}
            top = {a: lid(j + 1, a), b: lid(j + 1, b), c: lid(j + 1, c)}
            m = min(a, b, c)
            apex = bot[m]
            tris = [(top[a], top[b], top[c])]  # outward top cap
            for u, v in ((a, b), (b, c), (c, a)):
                # Outward cyclic quad (bot u, bot v, top v, top u); shared
                # diagonal anchored at the smaller surface id.
                q = (bot[u], bot[v], top[v], top[u])
                if u < v:
                    tris += [(q[0], q[1], q[2]), (q[0], q[2], q[3])]
                else:
                    tris += [(q[1], q[2], q[3]), (q[1], q[3], q[0])]
            for tri in tris:
                if apex not in tri:
                    tets.append((apex,) + tri)
    return TetMesh(verts, np.array(tets, dtype=np.int64))


def surface_of(mesh: TetMesh) -> TriMesh:
    """Outward-oriented boundary of a tet mesh."""
    if mesh.surface is not None:
        return mesh.surface
    return _boundary_surface(mesh.vertices, mesh.tets)


# ---------------------------------------------------------------------------
# Distance queries


def point_triangle_closest(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray):
    """Batched closest point on triangles (a, b, c) to points p.

    All inputs (n, 3). Returns (distance (n,), closest (n, 3), bary (n, 3)).
    """
    p, a, b, c = (np.atleast_2d(np.asarray(x, dtype=np.float64)) for x in (p, a, b, c))
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    n = len(p)
    u = np.zeros(n)
    v = np.zeros(n)
    done = np.zeros(n, dtype=bool)

    # Vertex regions.
    m = (d1 <= 0) & (d2 <= 0)
    done |= m
    m = ~done & (d3 >= 0) & (d4 <= d3)
    u[m] = 1.0
    done |= m
    m = ~done & (d6 >= 0) & (d5 <= d6)
    v[m] = 1.0
    done |= m

    # Edge regions.
    vc = d1 * d4 - d3 * d2
    m = ~done & (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    denom = d1 - d3
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ab = np.where(denom != 0, d1 / denom, 0.0)
    u[m] = t_ab[m]
    done |= m

    vb = d5 * d2 - d1 * d6
    m = ~done & (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    denom = d2 - d6
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ac = np.where(denom != 0, d2 / denom, 0.0)
    v[m] = t_ac[m]
    done |= m

    va = d3 * d6 - d5 * d4
    m = ~done & (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
    denom = (d4 - d3) + (d5 - d6)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_bc = np.where(denom != 0, (d4 - d3) / denom, 0.0)
    u[m] = 1.0 - t_bc[m]
    v[m] = t_bc[m]
    done |= m

    # Interior.
    m = ~done
    denom = va + vb + vc
    with np.errstate(divide="ignore", invalid="ignore"):
        u_in = np.where(denom != 0, vb / denom, 1.0 / 3.0)
        v_in = np.where(denom != 0, vc / denom, 1.0 / 3.0)
    u[m] = u_in[m]
    v[m] = v_in[m]

    closest = a + ab * u[:, None] + ac * v[:, None]
    dist = np.linalg.norm(p - closest, axis=1)
    bary = np.column_stack([1.0 - u - v, u, v])
    return dist, closest, bary


def point_triangle_distance(p, tri) -> Tuple[float, np.ndarray]:
    """Distance from a point to a triangle and the closest point on it."""
    tri = np.asarray(tri, dtype=np.float64)
    if tri.shape != (3, 3):
        raise InvalidArgumentError("tri must be 3 points")
    area = 0.5 * np.linalg.norm(np.cross(tri[1] - tri[0], tri[2] - tri[0]))
    if area <= _MIN_TRI_AREA:
        raise InvalidArgumentError("degenerate triangle")
    d, q, _ = point_triangle_closest(
        np.asarray(p, dtype=np.float64)[None], tri[0][None], tri[1][None], tri[2][None]
    )
    return float(d[0]), q[0]


def segment_segment_closest(a0, a1, b0, b1):
    """Batched closest points between segments [a0,a1] and [b0,b1].

    All inputs (n, 3). Returns (distance (n,), s (n,), t (n,)) with the
    closest points at a0 + s*(a1-a0) and b0 + t*(b1-b0), s and t in [0,1].
    """
    a0, a1, b0, b1 = (np.atleast_2d(np.asarray(x, dtype=np.float64)) for x in (a0, a1, b0, b1))
    d1 = a1 - a0
    d2 = b1 - b0
    r = a0 - b0
    A = np.einsum("ij,ij->i", d1, d1)
    e = np.einsum("ij,ij->i", d2, d2)
    f = np.einsum("ij,ij->i", d2, r)
    cc = np.einsum("ij,ij->i", d1, r)
    bb = np.einsum("ij,ij->i", d1, d2)
    denom = A * e - bb * bb
    # Parallel segments fall back to s = 0 then clamp t against it.
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 1e-30 * np.maximum(A * e, 1e-300), (bb * f - cc * e) / denom, 0.0)
    s = np.clip(s, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(e > 0, (bb * s + f) / e, 0.0)
    tc = np.clip(t, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        s2 = np.where(A > 0, (bb * tc - cc) / A, 0.0)
    s = np.where(t != tc, np.clip(s2, 0.0, 1.0), s)
    t = tc
    pa = a0 + d1 * s[:, None]
    pb = b0 + d2 * t[:, None]
    return np.linalg.norm(pa - pb, axis=1), s, t


def edge_edge_distance(a0, a1, b0, b1) -> float:
    """Minimum distance between two segments."""
    a0, a1, b0, b1 = (np.asarray(x, dtype=np.float64) for x in (a0, a1, b0, b1))
    if np.linalg.norm(a1 - a0) <= _MIN_SEG_LEN or np.linalg.norm(b1 - b0) <= _MIN_SEG_LEN:
        raise InvalidArgumentError("degenerate segment")
    d, _, _ = segment_segment_closest(a0[None], a1[None], b0[None], b1[None])
    return float(d[0])

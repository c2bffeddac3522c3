"""Barrier contact machinery: pair collection, log-barrier, lagged Coulomb friction.

Pairs live in a combined vertex space: soft body vertices first (in input
order), then collider vertices. Pairs within one source are never collected
(no self contact).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import erf

from .errors import InvalidArgumentError
from .geometry import Pose, TriMesh, point_triangle_closest, segment_segment_closest

KIND_POINT_TRIANGLE = "point-triangle"
KIND_EDGE_EDGE = "edge-edge"


@dataclass(frozen=True)
class ContactParams:
    """Barrier and friction constants.

    kappa scales the log-barrier (Pa*m); dhat is the activation distance.
    mu_s/mu_k are static/kinetic friction coefficients with the transition
    governed by eps_v (m/s). Defaults are desk-scale, not paper values.
    """

    dhat: float = 1e-3
    kappa: float = 1e4
    mu_s: float = 0.8
    mu_k: float = 0.6
    eps_v: float = 1e-3

    def __post_init__(self):
        if self.dhat <= 0 or self.kappa <= 0:
            raise InvalidArgumentError("dhat and kappa must be positive")
        if not (self.mu_s >= self.mu_k >= 0):
            raise InvalidArgumentError("need mu_s >= mu_k >= 0")
        if self.eps_v <= 0:
            raise InvalidArgumentError("eps_v must be positive")


def barrier_energy(d, params: ContactParams):
    """Log-barrier value per unit stiffness: -(d - dhat)^2 * ln(d / dhat) inside dhat.

    Accepts a scalar or an array of distances; all must be positive.
    """
    d = np.asarray(d, dtype=np.float64)
    if np.any(d <= 0):
        raise InvalidArgumentError("barrier evaluated at non-positive distance")
    dhat = params.dhat
    inside = d < dhat
    out = np.zeros_like(d)
    ds = np.where(inside, d, dhat)
    out = np.where(inside, -((ds - dhat) ** 2) * np.log(ds / dhat), 0.0)
    return float(out) if out.ndim == 0 else out


def barrier_grad(d, params: ContactParams):
    d = np.asarray(d, dtype=np.float64)
    dhat = params.dhat
    inside = d < dhat
    ds = np.where(inside, d, dhat)
    g = -2.0 * (ds - dhat) * np.log(ds / dhat) - (ds - dhat) ** 2 / ds
    return np.where(inside, g, 0.0)


def barrier_hess(d, params: ContactParams):
    d = np.asarray(d, dtype=np.float64)
    dhat = params.dhat
    inside = d < dhat
    ds = np.where(inside, d, dhat)
    h = -2.0 * np.log(ds / dhat) - 4.0 * (ds - dhat) / ds + (ds - dhat) ** 2 / ds**2
    return np.where(inside, h, 0.0)


# ---------------------------------------------------------------------------
# Combined contact geometry


@dataclass
class ContactGeometry:
    """Flattened view of all contact sources.

    positions: (N, 3) combined vertices; sources listed soft-first.
    n_soft: vertices below this index are degrees of freedom.
    """

    positions: np.ndarray
    n_soft: int
    source_of_vertex: np.ndarray  # (N,) source id per vertex
    triangles: np.ndarray  # (T, 3) global ids
    tri_source: np.ndarray  # (T,)
    edges: np.ndarray  # (E, 2) global ids
    edge_source: np.ndarray  # (E,)
    surface_vertices: np.ndarray  # (S,) global ids of surface vertices
    surf_vert_source: np.ndarray  # (S,)


def build_contact_geometry(
    soft_surfaces: Sequence[Tuple[np.ndarray, np.ndarray]],
    rigid_colliders: Sequence[Tuple[TriMesh, Pose]],
) -> ContactGeometry:
    """Combine soft surfaces and posed colliders into one indexed vertex space.

    soft_surfaces: per body (vertices (n,3), surface triangle indices (t,3)).
    rigid_colliders: (TriMesh, Pose) pairs, transformed to world here.
    """
    pos_chunks: List[np.ndarray] = []
    tri_chunks: List[np.ndarray] = []
    src_tri: List[np.ndarray] = []
    src_vert: List[np.ndarray] = []
    offset = 0
    source = 0
    for verts, tris in soft_surfaces:
        verts = np.asarray(verts, dtype=np.float64)
        tris = np.asarray(tris, dtype=np.int64)
        pos_chunks.append(verts)
        tri_chunks.append(tris + offset)
        src_tri.append(np.full(len(tris), source))
        src_vert.append(np.full(len(verts), source))
        offset += len(verts)
        source += 1
    n_soft = offset
    for mesh, pose in rigid_colliders:
        verts = pose.apply(mesh.vertices)
        pos_chunks.append(verts)
        tri_chunks.append(mesh.triangles + offset)
        src_tri.append(np.full(len(mesh.triangles), source))
        src_vert.append(np.full(len(verts), source))
        offset += len(verts)
        source += 1
    positions = np.concatenate(pos_chunks) if pos_chunks else np.zeros((0, 3))
    triangles = np.concatenate(tri_chunks) if tri_chunks else np.zeros((0, 3), dtype=np.int64)
    tri_source = np.concatenate(src_tri) if src_tri else np.zeros(0, dtype=np.int64)
    vert_source = np.concatenate(src_vert) if src_vert else np.zeros(0, dtype=np.int64)

    # Surface vertices and unique edges come from the triangle set.
    surf_ids = np.unique(triangles)
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    e = np.unique(np.sort(e, axis=1), axis=0)
    return ContactGeometry(
        positions=positions,
        n_soft=n_soft,
        source_of_vertex=vert_source,
        triangles=triangles,
        tri_source=tri_source,
        edges=e,
        edge_source=vert_source[e[:, 0]],
        surface_vertices=surf_ids,
        surf_vert_source=vert_source[surf_ids],
    )


@dataclass
class PairSet:
    """Array-form contact pairs in the combined vertex space."""

    pt_points: np.ndarray  # (kp,) vertex ids
    pt_tris: np.ndarray  # (kp, 3) vertex ids
    pt_dist: np.ndarray  # (kp,)
    ee_a: np.ndarray  # (ke, 2)
    ee_b: np.ndarray  # (ke, 2)
    ee_dist: np.ndarray  # (ke,)

    @property
    def count(self) -> int:
        return len(self.pt_dist) + len(self.ee_dist)

    def min_distance(self) -> float:
        dists = np.concatenate([self.pt_dist, self.ee_dist])
        return float(dists.min()) if len(dists) else np.inf


def _empty_pairs() -> PairSet:
    z = np.zeros(0, dtype=np.int64)
    return PairSet(z, z.reshape(0, 3), np.zeros(0), z.reshape(0, 2), z.reshape(0, 2), np.zeros(0))


def collect_pairs(geo: ContactGeometry, positions: np.ndarray, radius: float) -> PairSet:
    """All cross-source pairs with distance < radius (exact narrow phase).

    positions overrides geo.positions so the same topology can be queried at
    trial configurations. Pair arrays are sorted for deterministic order.
    """
    x = positions
    if len(geo.triangles) == 0:
        return _empty_pairs()

    tri_pts = x[geo.triangles]
    tri_centroid = tri_pts.mean(axis=1)
    tri_rad = np.linalg.norm(tri_pts - tri_centroid[:, None, :], axis=2).max(axis=1)
    max_tri_rad = float(tri_rad.max()) if len(tri_rad) else 0.0

    # Point-triangle candidates via vertex tree against triangle centroids.
    vert_ids = geo.surface_vertices
    vtree = cKDTree(x[vert_ids])
    cand_lists = vtree.query_ball_point(tri_centroid, r=max_tri_rad + radius)
    counts = np.fromiter((len(c) for c in cand_lists), dtype=np.int64, count=len(cand_lists))
    if counts.sum() > 0:
        tri_idx = np.repeat(np.arange(len(geo.triangles)), counts)
        vert_idx = np.concatenate([np.asarray(c, dtype=np.int64) for c in cand_lists if len(c)])
        p_global = vert_ids[vert_idx]
        keep = geo.source_of_vertex[p_global] != geo.tri_source[tri_idx]
        # Colliders never collide with each other.
        keep &= (p_global < geo.n_soft) | (geo.triangles[tri_idx, 0] < geo.n_soft)
        tri_idx, p_global = tri_idx[keep], p_global[keep]
        if len(tri_idx):
            t = geo.triangles[tri_idx]
            d, _, _ = point_triangle_closest(x[p_global], x[t[:, 0]], x[t[:, 1]], x[t[:, 2]])
            near = d < radius
            pt_points, pt_tris, pt_dist = p_global[near], t[near], d[near]
        else:
            pt_points = np.zeros(0, dtype=np.int64)
            pt_tris = pt_points.reshape(0, 3)
            pt_dist = np.zeros(0)
    else:
        pt_points = np.zeros(0, dtype=np.int64)
        pt_tris = pt_points.reshape(0, 3)
        pt_dist = np.zeros(0)

    # Edge-edge candidates via midpoint trees.
    eps = geo.edges
    mids = 0.5 * (x[eps[:, 0]] + x[eps[:, 1]])
    half = 0.5 * np.linalg.norm(x[eps[:, 1]] - x[eps[:, 0]], axis=1)
    max_half = float(half.max()) if len(half) else 0.0
    etree = cKDTree(mids)
    pairs = etree.query_pairs(r=2 * max_half + radius, output_type="ndarray")
    if len(pairs):
        ia, ib = pairs[:, 0], pairs[:, 1]
        keep = geo.edge_source[ia] != geo.edge_source[ib]
        keep &= (eps[ia, 0] < geo.n_soft) | (eps[ib, 0] < geo.n_soft)
        ia, ib = ia[keep], ib[keep]
        if len(ia):
            ea, eb = eps[ia], eps[ib]
            d, _, _ = segment_segment_closest(x[ea[:, 0]], x[ea[:, 1]], x[eb[:, 0]], x[eb[:, 1]])
            near = d < radius
            ee_a, ee_b, ee_dist = ea[near], eb[near], d[near]
        else:
            ee_a = np.zeros((0, 2), dtype=np.int64)
            ee_b = np.zeros((0, 2), dtype=np.int64)
            ee_dist = np.zeros(0)
    else:
        ee_a = np.zeros((0, 2), dtype=np.int64)
        ee_b = np.zeros((0, 2), dtype=np.int64)
        ee_dist = np.zeros(0)

    # Canonical ordering keeps assembly deterministic.
    if len(pt_dist):
        order = np.lexsort((pt_tris[:, 0], pt_points))
        pt_points, pt_tris, pt_dist = pt_points[order], pt_tris[order], pt_dist[order]
    if len(ee_dist):
        order = np.lexsort((ee_b[:, 0], ee_a[:, 0]))
        ee_a, ee_b, ee_dist = ee_a[order], ee_b[order], ee_dist[order]
    return PairSet(pt_points, pt_tris, pt_dist, ee_a, ee_b, ee_dist)


def filter_pairs(ps: PairSet, positions: np.ndarray, radius: float) -> PairSet:
    """Re-evaluate a candidate pair set at new positions, keeping d < radius.

    Valid as a broad-phase substitute only when ps was collected with enough
    slack that no pair outside it can have moved below radius.
    """
    x = positions
    if len(ps.pt_dist):
        p, t = ps.pt_points, ps.pt_tris
        d, _, _ = point_triangle_closest(x[p], x[t[:, 0]], x[t[:, 1]], x[t[:, 2]])
        near = d < radius
        pt_points, pt_tris, pt_dist = p[near], t[near], d[near]
    else:
        pt_points = np.zeros(0, dtype=np.int64)
        pt_tris = pt_points.reshape(0, 3)
        pt_dist = np.zeros(0)
    if len(ps.ee_dist):
        ea, eb = ps.ee_a, ps.ee_b
        d, _, _ = segment_segment_closest(x[ea[:, 0]], x[ea[:, 1]], x[eb[:, 0]], x[eb[:, 1]])
        near = d < radius
        ee_a, ee_b, ee_dist = ea[near], eb[near], d[near]
    else:
        ee_a = np.zeros((0, 2), dtype=np.int64)
        ee_b = np.zeros((0, 2), dtype=np.int64)
        ee_dist = np.zeros(0)
    return PairSet(pt_points, pt_tris, pt_dist, ee_a, ee_b, ee_dist)


@dataclass(frozen=True)
class ContactPair:
    """One collected proximity pair, endpoints in combined vertex ids."""

    kind: str
    ids: Tuple[int, ...]
    distance: float


def collect_contact_pairs(
    soft_surfaces: Sequence[Tuple[np.ndarray, np.ndarray]],
    rigid_colliders: Sequence[Tuple[TriMesh, Pose]],
    dhat: float,
) -> List[ContactPair]:
    """Every cross-source pair closer than dhat.

    Point-triangle ids are (point, t0, t1, t2); edge-edge ids are
    (a0, a1, b0, b1). Indices refer to the combined space: soft body
    vertices first in input order, then collider vertices.
    """
    geo = build_contact_geometry(soft_surfaces, rigid_colliders)
    ps = collect_pairs(geo, geo.positions, dhat)
    out: List[ContactPair] = []
    for p, t, d in zip(ps.pt_points, ps.pt_tris, ps.pt_dist):
        out.append(ContactPair(KIND_POINT_TRIANGLE, (int(p), *map(int, t)), float(d)))
    for ea, eb, d in zip(ps.ee_a, ps.ee_b, ps.ee_dist):
        out.append(ContactPair(KIND_EDGE_EDGE, (*map(int, ea), *map(int, eb)), float(d)))
    return out


# ---------------------------------------------------------------------------
# Pair distance gradients (envelope form: closest-point weights)


def pair_geometry(ps: PairSet, x: np.ndarray):
    """Distances, endpoint ids, and signed combination weights per pair.

    Returns (ids (k,4), weights (k,4), dist (k,), normal (k,3)) where
    sum_i w_i * x[ids_i] is the separation vector and normal its direction.
    Edge-edge pairs reuse the point-triangle slot layout.
    """
    ids_list, w_list, d_list, n_list = [], [], [], []
    if len(ps.pt_dist):
        p, t = ps.pt_points, ps.pt_tris
        d, q, bary = point_triangle_closest(x[p], x[t[:, 0]], x[t[:, 1]], x[t[:, 2]])
        ids = np.column_stack([p, t])
        w = np.column_stack([np.ones(len(p)), -bary])
        sep = x[p] - q
        ids_list.append(ids)
        w_list.append(w)
        d_list.append(d)
        n_list.append(sep)
    if len(ps.ee_dist):
        ea, eb = ps.ee_a, ps.ee_b
        d, s, t = segment_segment_closest(x[ea[:, 0]], x[ea[:, 1]], x[eb[:, 0]], x[eb[:, 1]])
        ids = np.column_stack([ea, eb])
        w = np.column_stack([1.0 - s, s, -(1.0 - t), -t])
        pa = x[ea[:, 0]] * (1 - s)[:, None] + x[ea[:, 1]] * s[:, None]
        pb = x[eb[:, 0]] * (1 - t)[:, None] + x[eb[:, 1]] * t[:, None]
        ids_list.append(ids)
        w_list.append(w)
        d_list.append(d)
        n_list.append(pa - pb)
    if not ids_list:
        return (
            np.zeros((0, 4), dtype=np.int64),
            np.zeros((0, 4)),
            np.zeros(0),
            np.zeros((0, 3)),
        )
    ids = np.concatenate(ids_list)
    w = np.concatenate(w_list)
    d = np.concatenate(d_list)
    sep = np.concatenate(n_list)
    with np.errstate(invalid="ignore", divide="ignore"):
        normal = sep / np.maximum(d, 1e-300)[:, None]
    return ids, w, d, normal


# ---------------------------------------------------------------------------
# Friction (lagged normal force, smoothed static/kinetic Coulomb)


@dataclass
class FrictionPair:
    """Lagged per-pair friction data captured at the start of a step.

    ids: 4 endpoint ids in the combined space; weights: signed combination
    giving the relative contact point motion; normal: contact normal at
    capture time; lambda_n: frozen normal force magnitude (N); anchor:
    relative contact position at capture time; eps_slip: static/kinetic
    transition displacement eps_v * dt (m).
    """

    ids: np.ndarray
    weights: np.ndarray
    normal: np.ndarray
    lambda_n: float
    anchor: np.ndarray
    eps_slip: float


def build_friction_pairs(
    geo: ContactGeometry, x0: np.ndarray, params: ContactParams, dt: float
) -> List[FrictionPair]:
    """Capture active pairs at x0 with their barrier normal forces."""
    ps = collect_pairs(geo, x0, params.dhat)
    ids, w, d, n = pair_geometry(ps, x0)
    lam = params.kappa * np.maximum(-barrier_grad(d, params), 0.0)
    eps = params.eps_v * dt
    out = []
    for k in range(len(d)):
        if lam[k] <= 0:
            continue
        rel = (w[k][:, None] * x0[ids[k]]).sum(axis=0)
        out.append(FrictionPair(ids[k].copy(), w[k].copy(), n[k].copy(), float(lam[k]), rel, eps))
    return out


def _mu_profile(y: np.ndarray, eps: float, mu_s: float, mu_k: float):
    """Friction magnitude profile f1 (per unit normal force) and potential f0.

    Rises as the quadratic mollifier scaled by mu_s below eps, peaks at
    mu_s, then relaxes C1-smoothly onto the mu_k plateau above eps. With
    mu_s == mu_k this is the classic single-coefficient mollifier.
    """
    y = np.asarray(y, dtype=np.float64)
    t = y / eps
    inside = t < 1.0
    ts = np.where(inside, t, 1.0)
    f1_in = mu_s * (2.0 * ts - ts * ts)
    f0_in = mu_s * eps * (ts * ts - ts**3 / 3.0)
    to = np.where(inside, 1.0, t)
    gauss = np.exp(-((to - 1.0) ** 2))
    f1_out = mu_k + (mu_s - mu_k) * gauss
    f0_out = (
        mu_s * eps * (2.0 / 3.0)
        + mu_k * eps * (to - 1.0)
        + (mu_s - mu_k) * eps * (np.sqrt(np.pi) / 2.0) * erf(to - 1.0)
    )
    f1 = np.where(inside, f1_in, f1_out)
    f0 = np.where(inside, f0_in, f0_out)
    return f0, f1


def _slip(pair: FrictionPair, x: np.ndarray) -> np.ndarray:
    rel = (pair.weights[:, None] * x[pair.ids]).sum(axis=0)
    u = rel - pair.anchor
    return u - pair.normal * (u @ pair.normal)


def friction_energy(pair: FrictionPair, x: np.ndarray, x_prev: np.ndarray, params: ContactParams) -> float:
    """Dissipation potential of one lagged pair for the displacement x - x_prev.

    x_prev must be the configuration the pair was captured at; the tangential
    slip is measured against the pair's stored anchor.
    """
    if pair.lambda_n is None or pair.lambda_n < 0 or pair.eps_slip <= 0:
        raise InvalidArgumentError("friction pair lacks lagged normal force data")
    del x_prev  # anchor already captured; kept for signature symmetry
    u = _slip(pair, x)
    y = float(np.linalg.norm(u))
    f0, _ = _mu_profile(np.array([y]), pair.eps_slip, params.mu_s, params.mu_k)
    return float(pair.lambda_n * f0[0])


def friction_gradient(pair: FrictionPair, x: np.ndarray, params: ContactParams) -> np.ndarray:
    """(4, 3) gradient of friction_energy w.r.t. the pair endpoints."""
    u = _slip(pair, x)
    y = float(np.linalg.norm(u))
    if y < 1e-16:
        return np.zeros((4, 3))
    _, f1 = _mu_profile(np.array([y]), pair.eps_slip, params.mu_s, params.mu_k)
    uhat = u / y
    return pair.lambda_n * float(f1[0]) * pair.weights[:, None] * uhat[None, :]


def friction_hessian_block(pair: FrictionPair, x: np.ndarray, params: ContactParams) -> np.ndarray:
    """(12, 12) PSD Gauss-Newton block for the Newton solve."""
    u = _slip(pair, x)
    y = float(np.linalg.norm(u))
    eps = pair.eps_slip
    P = np.eye(3) - np.outer(pair.normal, pair.normal)
    mu_s, mu_k = params.mu_s, params.mu_k
    if y < 1e-12 * eps:
        Hu = (2.0 * mu_s / eps) * P
    else:
        _, f1 = _mu_profile(np.array([y]), eps, params.mu_s, params.mu_k)
        t = y / eps
        if t < 1.0:
            df1 = mu_s * (2.0 - 2.0 * t) / eps
        else:
            df1 = max(0.0, (mu_s - mu_k) * (-2.0 * (t - 1.0)) * np.exp(-((t - 1.0) ** 2)) / eps)
        uhat = u / y
        uu = np.outer(uhat, uhat)
        Hu = float(f1[0]) / y * (P - uu) + max(df1, 0.0) * uu
    Hu *= pair.lambda_n
    w = pair.weights
    return np.kron(np.outer(w, w), Hu)


# ---------------------------------------------------------------------------
# Conservative line-search bound


def feasible_alpha(ps: PairSet, d_pt: np.ndarray, d_ee: np.ndarray, dx_vert: np.ndarray) -> float:
    """Largest step fraction keeping every tracked pair distance positive.

    dx_vert is the per-vertex displacement proposal in the combined space
    (colliders carry zero rows). The bound |d(x + a*dx) - d(x)| <=
    a*(m_a + m_b), with m the max endpoint motion per pair side, keeps
    distances from crossing zero.
    """
    disp = np.linalg.norm(dx_vert, axis=1)
    caps = [1.0]
    if len(d_pt):
        ma = disp[ps.pt_points]
        mb = disp[ps.pt_tris].max(axis=1)
        motion = ma + mb
        with np.errstate(divide="ignore"):
            c = np.where(motion > 0, 0.9 * d_pt / np.maximum(motion, 1e-300), np.inf)
        caps.append(float(c.min()))
    if len(d_ee):
        ma = disp[ps.ee_a].max(axis=1)
        mb = disp[ps.ee_b].max(axis=1)
        motion = ma + mb
        with np.errstate(divide="ignore"):
            c = np.where(motion > 0, 0.9 * d_ee / np.maximum(motion, 1e-300), np.inf)
        caps.append(float(c.min()))
    return float(min(caps))

"""Implicit FEM soft bodies with barrier contact, friction, and attachments.

Each step minimizes the incremental potential (inertia + elastic + barrier
+ friction + attachment penalty) with a projected Newton method. The line
search first caps the step so no tracked contact pair can reach distance
zero, then backtracks on energy; elastic energy is infinite at inverted
tets, so accepted states are inversion-free and intersection-free.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import contact as ct
from .errors import InvalidArgumentError, NumericalError, SolverStallError
from .geometry import Pose, TetMesh, TriMesh, tet_volumes

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Material:
    """Isotropic hyperelastic material constants."""

    youngs_modulus: float
    poisson_ratio: float
    density: float

    def __post_init__(self):
        if self.youngs_modulus <= 0:
            raise InvalidArgumentError("youngs_modulus must be positive")
        if not (0 <= self.poisson_ratio < 0.5):
            raise InvalidArgumentError("poisson_ratio must be in [0, 0.5)")
        if self.density <= 0:
            raise InvalidArgumentError("density must be positive")

    @property
    def mu(self) -> float:
        return self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))

    @property
    def lam(self) -> float:
        nu = self.poisson_ratio
        return self.youngs_modulus * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))


@dataclass
class SoftBodyState:
    """Simulation state plus precomputed rest-shape quantities.

    rest_positions doubles as the reset snapshot: init_softbody starts
    bodies exactly at rest.
    """

    rest_positions: np.ndarray  # (n, 3)
    positions: np.ndarray  # (n, 3)
    velocities: np.ndarray  # (n, 3)
    masses: np.ndarray  # (n,)
    tets: np.ndarray  # (m, 4)
    dm_inv: np.ndarray  # (m, 3, 3)
    rest_volumes: np.ndarray  # (m,)
    surf_tris: np.ndarray  # (s, 3) local indices
    node_weights: np.ndarray  # (m, 4, 3): dF_ij = sum_n x[n,i] w[n,j]
    grad_map: np.ndarray  # (m, 9, 12): dvec(F)/dx
    dof_ids: np.ndarray  # (m, 12)

    @property
    def n_vertices(self) -> int:
        return len(self.positions)


@dataclass
class AttachmentSet:
    """Vertices glued to a sensor case by stiff quadratic penalties."""

    vertex_ids: np.ndarray
    offsets: np.ndarray  # case-frame coordinates (m)
    stiffness: float = 1e6  # N/m

    def __post_init__(self):
        ids = np.asarray(self.vertex_ids, dtype=np.int64)
        off = np.asarray(self.offsets, dtype=np.float64)
        if len(np.unique(ids)) != len(ids):
            raise InvalidArgumentError("attachment ids must be unique")
        if not np.all(np.isfinite(off)):
            raise InvalidArgumentError("attachment offsets must be finite")
        if off.shape != (len(ids), 3):
            raise InvalidArgumentError("offsets must be (len(ids), 3)")
        self.vertex_ids = ids
        self.offsets = off


@dataclass(frozen=True)
class SolverParams:
    """Implicit-Euler Newton solve controls."""

    dt: float = 1e-2
    max_newton_iters: int = 16
    newton_tol: float = 1e-4  # residual norm (N), sized for gram-scale bodies
    max_line_search: int = 40

    def __post_init__(self):
        if self.dt <= 0:
            raise InvalidArgumentError("dt must be positive")
        if self.max_newton_iters < 1:
            raise InvalidArgumentError("max_newton_iters must be >= 1")


@dataclass
class SolverDiagnostics:
    """Per-step solve record, exportable as one CSV row."""

    newton_iters: int = 0
    residual: float = 0.0
    min_pair_distance: float = np.inf
    min_tet_volume: float = np.inf
    wall_ms: float = 0.0
    converged: bool = True
    n_contact_pairs: int = 0

    CSV_HEADER = "newton_iters,residual,min_pair_distance,min_tet_volume,wall_ms,converged,n_contact_pairs"

    def csv_row(self) -> str:
        return "%d,%.9e,%.9e,%.9e,%.3f,%d,%d" % (
            self.newton_iters,
            self.residual,
            self.min_pair_distance,
            self.min_tet_volume,
            self.wall_ms,
            int(self.converged),
            self.n_contact_pairs,
        )


def save_diagnostics_csv(path, diags: Sequence["SolverDiagnostics"]) -> None:
    """Write one CSV row per step, with header."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(SolverDiagnostics.CSV_HEADER + "\n")
        for d in diags:
            fh.write(d.csv_row() + "\n")


# ---------------------------------------------------------------------------
# Construction


def init_softbody(mesh: TetMesh, material: Material) -> SoftBodyState:
    """Build a resting state: x = rest, v = 0, lumped vertex masses.

    Raises InvalidArgumentError for meshes with non-positive tet volumes
    (TetMesh construction already enforces this for its own instances).
    """
    X = np.array(mesh.vertices, dtype=np.float64)
    tets = np.array(mesh.tets, dtype=np.int64)
    vols = tet_volumes(X, tets)
    if vols.min() <= 0:
        raise InvalidArgumentError("inverted rest tet")
    d1 = X[tets[:, 1]] - X[tets[:, 0]]
    d2 = X[tets[:, 2]] - X[tets[:, 0]]
    d3 = X[tets[:, 3]] - X[tets[:, 0]]
    dm = np.stack([d1, d2, d3], axis=2)  # columns are edge vectors
    dm_inv = np.linalg.inv(dm)

    n = len(X)
    masses = np.zeros(n)
    share = material.density * vols / 4.0
    for c in range(4):
        masses += np.bincount(tets[:, c], weights=share, minlength=n)

    # w[t, node, j]: dF_ij = sum_node x[node, i] * w[node, j]
    w = np.zeros((len(tets), 4, 3))
    w[:, 1:, :] = dm_inv  # row c of dm_inv pairs with edge node c+1
    w[:, 0, :] = -dm_inv.sum(axis=1)

    m = len(tets)
    G = np.zeros((m, 9, 12))
    for i in range(3):
        for j in range(3):
            for node in range(4):
                G[:, 3 * i + j, 3 * node + i] = w[:, node, j]

    dof = (3 * tets[:, :, None] + np.arange(3)[None, None, :]).reshape(m, 12)

    return SoftBodyState(
        rest_positions=X.copy(),
        positions=X.copy(),
        velocities=np.zeros_like(X),
        masses=masses,
        tets=tets,
        dm_inv=dm_inv,
        rest_volumes=vols,
        surf_tris=_surface_local(mesh),
        node_weights=w,
        grad_map=G,
        dof_ids=dof.astype(np.int64),
    )


def _surface_local(mesh: TetMesh) -> np.ndarray:
    # Boundary triangles with indices into the tet mesh's own vertex array.
    pat = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])
    faces = mesh.tets[:, pat].reshape(-1, 3)
    opposite = mesh.tets.reshape(-1)
    key = np.sort(faces, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    sel = counts[inv] == 1
    out = faces[sel].copy()
    vol = tet_volumes(mesh.vertices, np.column_stack([out, opposite[sel]]))
    flip = vol > 0
    out[flip] = out[flip][:, [0, 2, 1]]
    return out


def find_attachments(
    mesh: TetMesh, case_pose: Pose, case_half_extents, probe_radius: float
) -> AttachmentSet:
    """Attach every vertex within probe_radius of the case box.

    Offsets are full case-frame coordinates captured at call time, so
    update_attachment_targets reproduces the capture positions under the
    capture pose.
    """
    if probe_radius < 0:
        raise InvalidArgumentError("probe_radius must be >= 0")
    he = np.asarray(case_half_extents, dtype=np.float64)
    local = case_pose.inverse().apply(mesh.vertices)
    outside = np.maximum(np.abs(local) - he, 0.0)
    dist = np.linalg.norm(outside, axis=1)
    ids = np.nonzero(dist <= probe_radius)[0]
    if len(ids) == 0:
        log.warning("find_attachments: empty set; gelpad would be free-floating")
    return AttachmentSet(ids, local[ids])


def update_attachment_targets(att: AttachmentSet, case_pose: Pose) -> np.ndarray:
    """World-space targets: rotate(case rotation, offset) + case translation."""
    return case_pose.apply(att.offsets)


def _attachment_terms(
    x: np.ndarray, ids: np.ndarray, targets: np.ndarray, k: np.ndarray
) -> Tuple[float, np.ndarray]:
    """Quadratic penalty energy and its gradient rows at the attached ids."""
    d = x[ids] - targets
    e = 0.5 * float(k @ np.einsum("ij,ij->i", d, d))
    return e, k[:, None] * d


def attachment_energy(x: np.ndarray, att: AttachmentSet, targets: np.ndarray) -> float:
    """Penalty energy binding att.vertex_ids of positions x to targets."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != att.offsets.shape:
        raise InvalidArgumentError("targets must be (len(ids), 3)")
    k = np.full(len(att.vertex_ids), att.stiffness)
    return _attachment_terms(np.asarray(x, dtype=np.float64), att.vertex_ids, targets, k)[0]


def attachment_gradient(x: np.ndarray, att: AttachmentSet, targets: np.ndarray) -> np.ndarray:
    """Gradient of attachment_energy in the full (n, 3) vertex layout."""
    x = np.asarray(x, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != att.offsets.shape:
        raise InvalidArgumentError("targets must be (len(ids), 3)")
    k = np.full(len(att.vertex_ids), att.stiffness)
    _, rows = _attachment_terms(x, att.vertex_ids, targets, k)
    g = np.zeros_like(x)
    g[att.vertex_ids] += rows
    return g


# ---------------------------------------------------------------------------
# Stable Neo-Hookean elasticity


def _deformation_gradients(state: SoftBodyState, x: Optional[np.ndarray] = None) -> np.ndarray:
    pos = state.positions if x is None else x
    F = np.einsum("tni,tnj->tij", pos[state.tets], state.node_weights)
    if not np.isfinite(F).all():
        bad = int(np.nonzero(~np.isfinite(F).reshape(len(F), -1).all(axis=1))[0][0])
        raise NumericalError("non-finite deformation gradient", element_id=bad)
    return F


def _psi_terms(F: np.ndarray, material: Material):
    J = np.linalg.det(F)
    if np.any(J <= 0):
        return J, None, None
    ic = np.einsum("tij,tij->t", F, F)
    lnj = np.log(J)
    psi = 0.5 * material.mu * (ic - 3.0) - material.mu * lnj + 0.5 * material.lam * lnj**2
    return J, lnj, psi


def elastic_energy(state: SoftBodyState, material: Material, x: Optional[np.ndarray] = None) -> float:
    """Total strain energy; +inf when any tet is inverted at the evaluation point."""
    F = _deformation_gradients(state, x)
    J, lnj, psi = _psi_terms(F, material)
    if lnj is None:
        return float(np.inf)
    return float(np.dot(state.rest_volumes, psi))


def _elastic_grad_nodes(state: SoftBodyState, material: Material, x: Optional[np.ndarray] = None):
    F = _deformation_gradients(state, x)
    J = np.linalg.det(F)
    if np.any(J <= 0):
        raise NumericalError("inverted tet during gradient evaluation", element_id=int(np.argmin(J)))
    finv_t = np.transpose(np.linalg.inv(F), (0, 2, 1))
    lnj = np.log(J)
    P = material.mu * F + (material.lam * lnj - material.mu)[:, None, None] * finv_t
    g_nodes = np.einsum("t,taj,tnj->tna", state.rest_volumes, P, state.node_weights)
    return g_nodes


def _scatter_nodes(n: int, tets: np.ndarray, g_nodes: np.ndarray) -> np.ndarray:
    g = np.zeros((n, 3))
    flat = tets.ravel()
    vals = g_nodes.reshape(-1, 3)
    for a in range(3):
        g[:, a] = np.bincount(flat, weights=vals[:, a], minlength=n)
    return g


def elastic_gradient(state: SoftBodyState, material: Material) -> np.ndarray:
    """Per-vertex elastic forces (negated energy gradient), (n, 3)."""
    g_nodes = _elastic_grad_nodes(state, material)
    return -_scatter_nodes(state.n_vertices, state.tets, g_nodes)


def _elastic_hessian_blocks(state: SoftBodyState, material: Material, x=None, project=False):
    F = _deformation_gradients(state, x)
    J = np.linalg.det(F)
    if np.any(J <= 0):
        raise NumericalError("inverted tet during hessian evaluation", element_id=int(np.argmin(J)))
    finv = np.linalg.inv(F)
    finv_t = np.transpose(finv, (0, 2, 1))
    lnj = np.log(J)
    m = len(F)
    v9 = finv_t.reshape(m, 9)
    D = np.einsum("tki,tjl->tijlk", finv, finv).reshape(m, 9, 9)
    H9 = (
        material.mu * np.eye(9)[None]
        + material.lam * np.einsum("ti,tj->tij", v9, v9)
        + (material.mu - material.lam * lnj)[:, None, None] * D
    )
    if project:
        # Eigenvalue clamp in deformation-gradient space keeps each block PSD.
        H9 = 0.5 * (H9 + np.transpose(H9, (0, 2, 1)))
        evals, evecs = np.linalg.eigh(H9)
        evals = np.maximum(evals, 0.0)
        H9 = np.einsum("tik,tk,tjk->tij", evecs, evals, evecs)
    tmp = np.einsum("tpq,tqj->tpj", H9, state.grad_map)
    K = np.einsum("tpi,tpj->tij", state.grad_map, tmp)
    K *= state.rest_volumes[:, None, None]
    return K


def elastic_hessian(state: SoftBodyState, material: Material) -> sp.csr_matrix:
    """Exact sparse second derivative of the elastic energy (3n x 3n)."""
    K = _elastic_hessian_blocks(state, material, project=False)
    n3 = 3 * state.n_vertices
    rows = np.repeat(state.dof_ids, 12, axis=1).ravel()
    cols = np.tile(state.dof_ids, (1, 12)).ravel()
    return sp.coo_matrix((K.ravel(), (rows, cols)), shape=(n3, n3)).tocsr()


# ---------------------------------------------------------------------------
# Queries


def body_centroid(state: SoftBodyState) -> np.ndarray:
    """Arithmetic mean of current vertex positions."""
    if state.n_vertices == 0:
        raise InvalidArgumentError("empty body")
    return state.positions.mean(axis=0)


def reset(state: SoftBodyState) -> SoftBodyState:
    """Fresh state at the stored initial positions with zero velocity."""
    return replace(
        state,
        positions=state.rest_positions.copy(),
        velocities=np.zeros_like(state.rest_positions),
    )


# ---------------------------------------------------------------------------
# Implicit step


Attachment = Tuple[int, AttachmentSet, np.ndarray]  # (body index, set, world targets)


def step(
    bodies: Sequence[SoftBodyState],
    materials: Sequence[Material],
    colliders: Sequence[Tuple[TriMesh, Pose]],
    attachments: Sequence[Attachment],
    solver: SolverParams,
    params: ct.ContactParams,
    gravity=(0.0, 0.0, -9.81),
) -> Tuple[List[SoftBodyState], SolverDiagnostics]:
    """Advance all bodies by one implicit-Euler step.

    Colliders are kinematic: pass their current poses each call. Friction
    anchors capture the posed collider positions, so commanded collider
    motion within a single step does not generate tangential drag; soft
    bodies driven through attachments do.
    """
    t_start = time.perf_counter()
    dt = solver.dt
    g = np.asarray(gravity, dtype=np.float64)

    offsets = np.cumsum([0] + [b.n_vertices for b in bodies])
    n_soft = offsets[-1]
    x0 = np.concatenate([b.positions for b in bodies]) if bodies else np.zeros((0, 3))
    v0 = np.concatenate([b.velocities for b in bodies]) if bodies else np.zeros((0, 3))
    mass = np.concatenate([b.masses for b in bodies]) if bodies else np.zeros(0)

    geo = ct.build_contact_geometry(
        [(b.positions, b.surf_tris) for b in bodies], colliders
    )
    n_total = len(geo.positions)

    def combined(x_soft: np.ndarray) -> np.ndarray:
        if n_total == n_soft:
            return x_soft
        return np.concatenate([x_soft, geo.positions[n_soft:]])

    if geo.triangles.size:
        start_pairs = ct.collect_pairs(geo, combined(x0), params.dhat)
        # Below ~1e-12 m the feasibility filter caps the step at numerical
        # zero, which is the line-search stall condition detected early.
        if start_pairs.count and start_pairs.min_distance() <= 1e-12:
            raise SolverStallError(
                "contact distance at numerical zero at step start "
                f"(min pair distance {start_pairs.min_distance():.3e} m)",
                diagnostics=SolverDiagnostics(min_pair_distance=start_pairs.min_distance()),
            )

    xhat = x0 + dt * v0 + dt * dt * g[None, :]
    fric_pairs = ct.build_friction_pairs(geo, combined(x0), params, dt) if geo.triangles.size else []

    # Attachment arrays in flat soft indexing.
    att_ids_list, att_targets_list, att_k_list = [], [], []
    for body_idx, att, targets in attachments:
        targets = np.asarray(targets, dtype=np.float64)
        if not np.all(np.isfinite(targets)):
            raise InvalidArgumentError("attachment targets must be finite")
        att_ids_list.append(att.vertex_ids + offsets[body_idx])
        att_targets_list.append(targets)
        att_k_list.append(np.full(len(att.vertex_ids), att.stiffness))
    att_ids = np.concatenate(att_ids_list) if att_ids_list else np.zeros(0, dtype=np.int64)
    att_targets = np.concatenate(att_targets_list) if att_targets_list else np.zeros((0, 3))
    att_k = np.concatenate(att_k_list) if att_k_list else np.zeros(0)

    mass3 = np.repeat(mass, 3)

    def body_slices(x_flat: np.ndarray):
        return [x_flat[offsets[i] : offsets[i + 1]] for i in range(len(bodies))]

    def ip_energy(x: np.ndarray, pairs: ct.PairSet) -> float:
        e = 0.0
        diff = (x - xhat).ravel()
        e += 0.5 / (dt * dt) * float(diff @ (mass3 * diff))
        for b, mat, xb in zip(bodies, materials, body_slices(x)):
            eb = elastic_energy(b, mat, xb)
            if not np.isfinite(eb):
                return float(np.inf)
            e += eb
        if len(att_ids):
            e += _attachment_terms(x, att_ids, att_targets, att_k)[0]
        if pairs.count:
            _, _, dists, _ = ct.pair_geometry(pairs, combined(x))
            if np.any(dists <= 0):
                return float(np.inf)
            e += params.kappa * float(ct.barrier_energy(dists, params).sum())
        xc = combined(x)
        for fp in fric_pairs:
            e += ct.friction_energy(fp, xc, None, params)
        return e

    diag = SolverDiagnostics()
    x = x0.copy()
    converged = False
    res = np.inf
    candidates: Optional[ct.PairSet] = None  # superset carried from the line search

    for it in range(solver.max_newton_iters):
        xc = combined(x)
        if not geo.triangles.size:
            pairs = ct._empty_pairs()
        elif candidates is None:
            pairs = ct.collect_pairs(geo, xc, params.dhat)
        else:
            pairs = ct.filter_pairs(candidates, xc, params.dhat)
        diag.n_contact_pairs = pairs.count

        grad = (mass3 * (x - xhat).ravel()).reshape(-1, 3) / (dt * dt)
        blocks_rows, blocks_cols, blocks_vals = [], [], []

        for i, (b, mat) in enumerate(zip(bodies, materials)):
            xb = x[offsets[i] : offsets[i + 1]]
            g_nodes = _elastic_grad_nodes(b, mat, xb)
            grad[offsets[i] : offsets[i + 1]] += _scatter_nodes(b.n_vertices, b.tets, g_nodes)
            K = _elastic_hessian_blocks(b, mat, xb, project=True)
            dof = b.dof_ids + 3 * offsets[i]
            blocks_rows.append(np.repeat(dof, 12, axis=1).ravel())
            blocks_cols.append(np.tile(dof, (1, 12)).ravel())
            blocks_vals.append(K.ravel())

        if len(att_ids):
            grad[att_ids] += _attachment_terms(x, att_ids, att_targets, att_k)[1]
            adof = (3 * att_ids[:, None] + np.arange(3)[None, :]).ravel()
            blocks_rows.append(adof)
            blocks_cols.append(adof)
            blocks_vals.append(np.repeat(att_k, 3))

        if pairs.count:
            ids, w, dists, normal = ct.pair_geometry(pairs, xc)
            db = params.kappa * ct.barrier_grad(dists, params)
            g12 = (w[:, :, None] * normal[:, None, :]).reshape(-1, 12)
            pair_grad = db[:, None] * g12
            dofp = np.where(ids < n_soft, ids, -1)
            dof12 = np.where(dofp[:, :, None] >= 0, 3 * dofp[:, :, None] + np.arange(3)[None, None, :], -1).reshape(-1, 12)
            valid = dof12.ravel() >= 0
            np.add.at(grad.reshape(-1), dof12.ravel()[valid], pair_grad.ravel()[valid])
            hb = params.kappa * ct.barrier_hess(dists, params)
            hblk = hb[:, None, None] * np.einsum("ki,kj->kij", g12, g12)
            rows = np.repeat(dof12, 12, axis=1).ravel()
            cols = np.tile(dof12, (1, 12)).ravel()
            ok = (rows >= 0) & (cols >= 0)
            blocks_rows.append(rows[ok])
            blocks_cols.append(cols[ok])
            blocks_vals.append(hblk.ravel()[ok])

        for fp in fric_pairs:
            fg = ct.friction_gradient(fp, xc, params)
            fh = ct.friction_hessian_block(fp, xc, params)
            dofp = np.where(fp.ids < n_soft, fp.ids, -1)
            dof12 = np.where(
                dofp[:, None] >= 0, 3 * dofp[:, None] + np.arange(3)[None, :], -1
            ).ravel()
            valid = dof12 >= 0
            np.add.at(grad.reshape(-1), dof12[valid], fg.ravel()[valid])
            rr = np.repeat(dof12, 12)
            cc = np.tile(dof12, 12)
            ok = (rr >= 0) & (cc >= 0)
            blocks_rows.append(rr[ok])
            blocks_cols.append(cc[ok])
            blocks_vals.append(fh.ravel()[ok])

        res = float(np.linalg.norm(grad))
        diag.residual = res
        if res < solver.newton_tol:
            converged = True
            break

        n3 = 3 * n_soft
        rows = np.concatenate([np.arange(n3)] + blocks_rows)
        cols = np.concatenate([np.arange(n3)] + blocks_cols)
        vals = np.concatenate([mass3 / (dt * dt)] + blocks_vals)
        H = sp.coo_matrix((vals, (rows, cols)), shape=(n3, n3)).tocsc()
        dx = splu(H).solve(-grad.ravel()).reshape(-1, 3)

        max_disp = float(np.abs(dx).max()) if dx.size else 0.0
        if geo.triangles.size and max_disp > 0:
            ls_pairs = ct.collect_pairs(geo, xc, params.dhat + 2.0 * max_disp)
            dx_comb = np.zeros((n_total, 3))
            dx_comb[:n_soft] = dx
            alpha = ct.feasible_alpha(ls_pairs, ls_pairs.pt_dist, ls_pairs.ee_dist, dx_comb)
        else:
            ls_pairs = ct._empty_pairs()
            alpha = 1.0

        e0 = ip_energy(x, ls_pairs)
        accepted = False
        for _ in range(solver.max_line_search):
            xt = x + alpha * dx
            if ip_energy(xt, ls_pairs) <= e0:
                x = xt
                accepted = True
                break
            alpha *= 0.5
        candidates = ls_pairs if ls_pairs.count else None
        if not accepted:
            worst = None
            if ls_pairs.count:
                _, _, dists, _ = ct.pair_geometry(ls_pairs, combined(x))
                worst = float(dists.min())
            diag.min_pair_distance = worst if worst is not None else np.inf
            raise SolverStallError(
                f"line search failed at residual {res:.3e} (worst pair distance {worst})",
                diagnostics=diag,
            )
    diag.newton_iters = it if converged else solver.max_newton_iters
    diag.converged = converged

    # Post-step records and invariant data.
    xc = combined(x)
    if geo.triangles.size:
        final_pairs = ct.collect_pairs(geo, xc, params.dhat)
        diag.min_pair_distance = final_pairs.min_distance()
        diag.n_contact_pairs = final_pairs.count
    new_states: List[SoftBodyState] = []
    min_vol = np.inf
    for i, b in enumerate(bodies):
        xb = x[offsets[i] : offsets[i + 1]]
        vb = (xb - b.positions) / dt
        vols = tet_volumes(xb, b.tets)
        min_vol = min(min_vol, float(vols.min()))
        new_states.append(replace(b, positions=xb.copy(), velocities=vb))
    diag.min_tet_volume = min_vol
    diag.wall_ms = (time.perf_counter() - t_start) * 1e3
    return new_states, diag

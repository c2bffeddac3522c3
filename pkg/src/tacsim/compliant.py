"""Fast rigid-body mode: penalty contact with damping and Coulomb-clamped friction.

The gelpad stays geometrically rigid here; sensing indentation comes from
the height-map renderer, not from deformation. Contact forces are sampled
at mesh vertices against the other body's surface triangles, so they are
approximate and intended for shallow overlaps.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidArgumentError, NumericalError
from .geometry import Pose, TriMesh, point_triangle_closest

_PROBE = 0.01  # max detectable vertex depth/proximity (m), desk scale


@dataclass
class RigidBody:
    """Rigid body with a triangle-mesh collider.

    velocity is a 6D twist: linear (m/s) then angular (rad/s), world frame.
    inertia is about the center of mass in the body frame. Kinematic bodies
    follow caller-prescribed poses and velocities; their mass properties are
    ignored.
    """

    pose: Pose
    collider: TriMesh
    mass: float = 1.0
    inertia: np.ndarray = field(default_factory=lambda: np.eye(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(6))
    kinematic: bool = False

    def __post_init__(self):
        self.velocity = np.asarray(self.velocity, dtype=np.float64).reshape(6)
        self.inertia = np.asarray(self.inertia, dtype=np.float64).reshape(3, 3)
        if not self.kinematic:
            if self.mass <= 0:
                raise InvalidArgumentError("dynamic body needs mass > 0")
            if not np.allclose(self.inertia, self.inertia.T, atol=1e-12):
                raise InvalidArgumentError("inertia must be symmetric")
            if np.linalg.eigvalsh(self.inertia).min() <= 0:
                raise InvalidArgumentError("inertia must be positive-definite")


@dataclass(frozen=True)
class CompliantParams:
    """Penalty contact constants (not calibrated to any engine's internals)."""

    k_c: float = 1e4  # contact stiffness (N/m)
    c_d: float = 10.0  # normal damping (N*s/m)
    mu: float = 0.6  # Coulomb friction coefficient
    eps_v: float = 1e-3  # tangential regularization speed (m/s)

    def __post_init__(self):
        if self.k_c <= 0:
            raise InvalidArgumentError("k_c must be positive")
        if self.c_d < 0 or self.mu < 0:
            raise InvalidArgumentError("c_d and mu must be >= 0")
        if self.eps_v <= 0:
            raise InvalidArgumentError("eps_v must be positive")


@dataclass
class Wrench:
    """Force and torque about a body's center of mass, world frame."""

    force: np.ndarray
    torque: np.ndarray


@dataclass
class ContactSample:
    """One penetrating vertex sample: used by tests and diagnostics."""

    point: np.ndarray  # application point on the surface (world)
    normal: np.ndarray  # push direction for the penetrating body
    depth: float
    f_normal: float
    f_tangent: np.ndarray


def inertia_of_solid_sphere(radius: float, mass: float) -> np.ndarray:
    return np.eye(3) * (0.4 * mass * radius * radius)


def inertia_of_solid_box(dims, mass: float) -> np.ndarray:
    d = np.asarray(dims, dtype=np.float64)
    return np.diag(mass / 12.0 * (d[[1, 2, 0]] ** 2 + d[[2, 0, 1]] ** 2))


def _world_mesh(body: RigidBody):
    verts = body.pose.apply(body.collider.vertices)
    return verts, body.collider.triangles


def _point_velocity(body: RigidBody, points: np.ndarray) -> np.ndarray:
    v, w = body.velocity[:3], body.velocity[3:]
    return v[None, :] + np.cross(w[None, :], points - body.pose.translation[None, :])


def _penetrating_samples(
    verts_a: np.ndarray, verts_b: np.ndarray, tris_b: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vertices of A behind B's surface: (vert index, surface point, outward normal, depth)."""
    tb = verts_b[tris_b]
    centroid = tb.mean(axis=1)
    rad = np.linalg.norm(tb - centroid[:, None, :], axis=2).max(axis=1)
    tree = cKDTree(centroid)
    lists = tree.query_ball_point(verts_a, r=float(rad.max()) + _PROBE)
    counts = np.fromiter((len(c) for c in lists), dtype=np.int64, count=len(lists))
    if counts.sum() == 0:
        return (np.zeros(0, np.int64), np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))
    vi = np.repeat(np.arange(len(verts_a)), counts)
    ti = np.concatenate([np.asarray(c, np.int64) for c in lists if len(c)])
    t = tris_b[ti]
    d, q, _ = point_triangle_closest(verts_a[vi], verts_b[t[:, 0]], verts_b[t[:, 1]], verts_b[t[:, 2]])
    # Nearest triangle per vertex wins; its outward normal signs the side.
    order = np.lexsort((d, vi))
    vi, ti, d, q = vi[order], ti[order], d[order], q[order]
    first = np.unique(vi, return_index=True)[1]
    vi, ti, d, q = vi[first], ti[first], d[first], q[first]
    t = tris_b[ti]
    n = np.cross(verts_b[t[:, 1]] - verts_b[t[:, 0]], verts_b[t[:, 2]] - verts_b[t[:, 0]])
    n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)
    side = np.einsum("ij,ij->i", verts_a[vi] - q, n)
    pen = (side < 0) & (d <= _PROBE)
    return vi[pen], q[pen], n[pen], -side[pen]


def _one_sided_samples(a: RigidBody, b: RigidBody, params: CompliantParams) -> List[ContactSample]:
    va, _ = _world_mesh(a)
    vb, tb = _world_mesh(b)
    idx, q, n, depth = _penetrating_samples(va, vb, tb)
    out: List[ContactSample] = []
    if not len(idx):
        return out
    rel_v = _point_velocity(a, q) - _point_velocity(b, q)
    vn = np.einsum("ij,ij->i", rel_v, n)
    fn = params.k_c * depth + params.c_d * np.maximum(0.0, -vn)
    vt = rel_v - vn[:, None] * n
    speed = np.linalg.norm(vt, axis=1)
    scale = np.where(speed > 0, params.mu * fn / np.maximum(speed, params.eps_v), 0.0)
    ft = -scale[:, None] * vt
    for k in range(len(idx)):
        out.append(ContactSample(q[k], n[k], float(depth[k]), float(fn[k]), ft[k]))
    return out


def contact_samples(a: RigidBody, b: RigidBody, params: CompliantParams) -> List[ContactSample]:
    """All penetrating samples between the two bodies, normals pushing a out of b."""
    samples = _one_sided_samples(a, b, params)
    for s in _one_sided_samples(b, a, params):
        # Flip so the stored normal always pushes body a.
        samples.append(ContactSample(s.point, -s.normal, s.depth, s.f_normal, -s.f_tangent))
    return samples


def contact_forces(a: RigidBody, b: RigidBody, params: CompliantParams) -> Tuple[Wrench, Wrench]:
    """Equal and opposite penalty contact wrenches (about each body's COM)."""
    samples = contact_samples(a, b, params)
    fa = np.zeros(3)
    ta = np.zeros(3)
    tb = np.zeros(3)
    for s in samples:
        f = s.f_normal * s.normal + s.f_tangent
        fa += f
        ta += np.cross(s.point - a.pose.translation, f)
        tb += np.cross(s.point - b.pose.translation, -f)
    return Wrench(fa, ta), Wrench(-fa, tb)


def step_rigid(
    bodies: Sequence[RigidBody],
    params: CompliantParams,
    dt: float,
    gravity=(0.0, 0.0, -9.81),
) -> List[RigidBody]:
    """Semi-implicit Euler over all body pairs' contact forces plus gravity.

    Kinematic bodies pass through unchanged (prescribe their poses and
    velocities between calls). Dynamic bodies integrate velocity first,
    then pose.
    """
    if dt <= 0:
        raise InvalidArgumentError("dt must be positive")
    g = np.asarray(gravity, dtype=np.float64)
    n = len(bodies)
    forces = [np.zeros(3) for _ in range(n)]
    torques = [np.zeros(3) for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if bodies[i].kinematic and bodies[j].kinematic:
                continue
            wa, wb = contact_forces(bodies[i], bodies[j], params)
            forces[i] += wa.force
            torques[i] += wa.torque
            forces[j] += wb.force
            torques[j] += wb.torque

    out: List[RigidBody] = []
    for i, body in enumerate(bodies):
        if body.kinematic:
            out.append(body)
            continue
        if not (np.all(np.isfinite(body.velocity)) and np.all(np.isfinite(body.pose.translation))):
            raise NumericalError("non-finite rigid body state", element_id=i)
        R = body.pose.matrix()
        iw = R @ body.inertia @ R.T
        v = body.velocity[:3] + dt * (forces[i] / body.mass + g)
        gyro = np.cross(body.velocity[3:], iw @ body.velocity[3:])
        w = body.velocity[3:] + dt * np.linalg.solve(iw, torques[i] - gyro)
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(w))):
            raise NumericalError("non-finite integrated velocity", element_id=i)
        new_pose = Pose.from_rotvec(body.pose.translation + dt * v, dt * w).compose(
            Pose(np.zeros(3), body.pose.rotation)
        )
        out.append(replace(body, pose=new_pose, velocity=np.concatenate([v, w])))
    return out

"""Steppable tactile task environments.

An Environment owns a small scene (one or two sensors plus a handful of
objects), advances it one control step at a time, and returns tactile
observations with per-stage wall times. Every step runs the same pipeline
in a fixed order: integrate sensor case poses from the action, advance the
physics (implicit soft solve or substepped rigid integration), render
height maps, run the optical model, then the marker model.

Scenes are described by SceneConfig, which round-trips through JSON so the
same description can cross process boundaries. Determinism contract: with
a fixed config and seed, build, step, and reset are bit-reproducible; no
stage consumes randomness after construction.

Scene randomization applies one rigid transform (xy shift plus yaw) to the
whole rig - sensors and objects together - so scripted trajectories keep
their relative geometry under any seed.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from . import contact as ct
from . import compliant as cp
from . import marker as mk
from . import optical as op
from . import softbody as sb
from . import tactile as tac
from .errors import ConfigError, InvalidArgumentError, SolverStallError
from .geometry import (
    Pose,
    TetMesh,
    TriMesh,
    icosphere_surface,
    surface_of,
    tetrahedralize_box,
    tetrahedralize_sphere,
)

log = logging.getLogger(__name__)

TASKS = ("ball_rolling", "object_lifting", "object_pushing", "beam_twisting")
MODE_RIGID = "rigid-compliant"
MODE_SOFT = "soft-ipc"
MODES = (MODE_RIGID, MODE_SOFT)

THREADS_ENV_VAR = "TACSIM_THREADS"


# ---------------------------------------------------------------------------
# Actions


@dataclass(frozen=True)
class ActionLimits:
    """Per-step command caps (m/s, rad/s, m/s of aperture change)."""

    linear: float = 0.05
    angular: float = 1.0
    aperture: float = 0.05

    def __post_init__(self):
        if min(self.linear, self.angular, self.aperture) <= 0:
            raise InvalidArgumentError("action limits must be positive")


@dataclass(frozen=True)
class Action:
    """World-frame velocity command applied to every sensor case.

    twist is (linear xyz, angular xyz); angular rotates the rig about the
    mean case position. aperture is the rate of change of the gap between
    opposing pads: negative closes, each case moving half the rate along
    its own sensing axis.
    """

    twist: np.ndarray = field(default_factory=lambda: np.zeros(6))
    aperture: float = 0.0

    def __post_init__(self):
        tw = np.asarray(self.twist, dtype=np.float64).reshape(6)
        if not np.all(np.isfinite(tw)) or not np.isfinite(self.aperture):
            raise InvalidArgumentError("action must be finite")
        object.__setattr__(self, "twist", tw)

    def clamped(self, limits: ActionLimits) -> "Action":
        """Rescale linear/angular parts to the limit norms, clip aperture."""
        lin, ang = self.twist[:3].copy(), self.twist[3:].copy()
        ln, an = float(np.linalg.norm(lin)), float(np.linalg.norm(ang))
        if ln > limits.linear:
            lin *= limits.linear / ln
        if an > limits.angular:
            ang *= limits.angular / an
        ap = float(np.clip(self.aperture, -limits.aperture, limits.aperture))
        return Action(np.concatenate([lin, ang]), ap)

    @staticmethod
    def zero() -> "Action":
        return Action()


# ---------------------------------------------------------------------------
# Scene description


@dataclass(frozen=True)
class Randomization:
    """Whole-rig pose jitter ranges (uniform, applied once per seed)."""

    pos_jitter: float = 5e-3  # m, xy shift
    rot_jitter: float = 0.1  # rad, yaw

    def __post_init__(self):
        if self.pos_jitter < 0 or self.rot_jitter < 0:
            raise InvalidArgumentError("jitter ranges must be >= 0")


@dataclass
class ObjectSpec:
    """One scene object. size is (radius,) for spheres, extents for boxes.

    resolution picks the mesh density: icosphere subdivisions for spheres,
    grid divisions per axis for boxes. Kinematic objects never move: they
    become static colliders (soft mode) or kinematic bodies (rigid mode).
    The first non-kinematic object is the task object for success/reward.
    """

    name: str
    shape: str
    size: Tuple[float, ...]
    pose: Pose
    material: sb.Material
    resolution: int = 2
    kinematic: bool = False

    def __post_init__(self):
        if self.shape not in ("sphere", "box"):
            raise ConfigError(f"unknown shape {self.shape!r}")
        want = 1 if self.shape == "sphere" else 3
        self.size = tuple(float(s) for s in self.size)
        if len(self.size) != want or min(self.size) <= 0:
            raise ConfigError(f"{self.shape} size needs {want} positive entries")
        if self.resolution < 1:
            raise ConfigError("resolution must be >= 1")

    def volume(self) -> float:
        if self.shape == "sphere":
            return 4.0 / 3.0 * math.pi * self.size[0] ** 3
        return self.size[0] * self.size[1] * self.size[2]


@dataclass
class SensorSpec:
    """Sensor placement and output switches.

    The case frame's +z is the sensing direction; the gel slab occupies
    case-frame z in [0, gelpad_thickness] with its back face glued to the
    case. render_heightmap only gates whether the map appears in the
    observation; markers always need it internally.
    """

    case_pose: Pose = field(default_factory=Pose.identity)
    image_size: Tuple[int, int] = (480, 640)
    sensing_area: Tuple[float, float] = (0.016, 0.012)
    gelpad_thickness: float = 4e-3
    marker_grid: Tuple[int, int] = (10, 10)
    render_rgb: bool = True
    render_heightmap: bool = True
    pad_resolution: int = 2

    def tactile_config(self) -> tac.SensorConfig:
        return tac.SensorConfig(
            image_size=tuple(self.image_size),
            sensing_area=tuple(self.sensing_area),
            gelpad_thickness=self.gelpad_thickness,
            marker_grid=tuple(self.marker_grid),
        )

    def pad_extents(self) -> Tuple[float, float, float]:
        """Gel slab footprint: sensing area plus a 2 mm rim per side."""
        return (
            self.sensing_area[0] + 4e-3,
            self.sensing_area[1] + 4e-3,
            self.gelpad_thickness,
        )


@dataclass
class SceneConfig:
    """Full scene description; round-trips through to_json/from_json."""

    physics_mode: str = MODE_RIGID
    seed: int = 0
    gravity: Tuple[float, float, float] = (0.0, 0.0, -9.81)
    sensors: List[SensorSpec] = field(default_factory=list)
    objects: List[ObjectSpec] = field(default_factory=list)
    solver: sb.SolverParams = field(default_factory=sb.SolverParams)
    contact: ct.ContactParams = field(default_factory=ct.ContactParams)
    compliant: cp.CompliantParams = field(default_factory=cp.CompliantParams)
    randomization: Randomization = field(default_factory=Randomization)
    action_limits: ActionLimits = field(default_factory=ActionLimits)
    max_steps: int = 300
    substeps: int = 10  # rigid-mode physics substeps per control step
    settle_steps: int = 80  # pre-episode relaxation budget
    release_step: Optional[int] = None  # drop task anchors at this step

    def __post_init__(self):
        if self.physics_mode not in MODES:
            raise ConfigError(f"physics_mode must be one of {MODES}")
        if self.max_steps < 1 or self.substeps < 1 or self.settle_steps < 0:
            raise ConfigError("max_steps/substeps must be >= 1, settle_steps >= 0")
        if self.release_step is not None and self.release_step < 0:
            raise ConfigError("release_step must be >= 0")


def _pose_to_dict(pose: Pose) -> dict:
    return {
        "translation": [float(v) for v in pose.translation],
        "rotvec": [float(v) for v in pose.rot().as_rotvec()],
    }


def _pose_from_dict(d: dict, where: str) -> Pose:
    _check_keys(d, {"translation", "rotvec"}, where)
    try:
        return Pose.from_rotvec(
            d.get("translation", (0.0, 0.0, 0.0)), d.get("rotvec", (0.0, 0.0, 0.0))
        )
    except Exception as exc:
        raise ConfigError(f"{where}: bad pose ({exc})")


def _check_keys(d: dict, allowed: set, where: str) -> None:
    extra = sorted(set(d) - allowed)
    if extra:
        raise ConfigError(f"{where}: unknown keys {extra}")


def _dataclass_from_dict(cls, d: dict, where: str):
    names = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
    _check_keys(d, names, where)
    try:
        return cls(**d)
    except (TypeError, InvalidArgumentError) as exc:
        raise ConfigError(f"{where}: {exc}")


def config_to_dict(cfg: SceneConfig) -> dict:
    return {
        "physics_mode": cfg.physics_mode,
        "seed": cfg.seed,
        "gravity": [float(g) for g in cfg.gravity],
        "sensors": [
            {
                "case_pose": _pose_to_dict(s.case_pose),
                "image_size": list(s.image_size),
                "sensing_area": [float(v) for v in s.sensing_area],
                "gelpad_thickness": s.gelpad_thickness,
                "marker_grid": list(s.marker_grid),
                "render_rgb": s.render_rgb,
                "render_heightmap": s.render_heightmap,
                "pad_resolution": s.pad_resolution,
            }
            for s in cfg.sensors
        ],
        "objects": [
            {
                "name": o.name,
                "shape": o.shape,
                "size": list(o.size),
                "pose": _pose_to_dict(o.pose),
                "material": {
                    "youngs_modulus": o.material.youngs_modulus,
                    "poisson_ratio": o.material.poisson_ratio,
                    "density": o.material.density,
                },
                "resolution": o.resolution,
                "kinematic": o.kinematic,
            }
            for o in cfg.objects
        ],
        "solver": {
            "dt": cfg.solver.dt,
            "max_newton_iters": cfg.solver.max_newton_iters,
            "newton_tol": cfg.solver.newton_tol,
            "max_line_search": cfg.solver.max_line_search,
        },
        "contact": {
            "dhat": cfg.contact.dhat,
            "kappa": cfg.contact.kappa,
            "mu_s": cfg.contact.mu_s,
            "mu_k": cfg.contact.mu_k,
            "eps_v": cfg.contact.eps_v,
        },
        "compliant": {
            "k_c": cfg.compliant.k_c,
            "c_d": cfg.compliant.c_d,
            "mu": cfg.compliant.mu,
            "eps_v": cfg.compliant.eps_v,
        },
        "randomization": {
            "pos_jitter": cfg.randomization.pos_jitter,
            "rot_jitter": cfg.randomization.rot_jitter,
        },
        "action_limits": {
            "linear": cfg.action_limits.linear,
            "angular": cfg.action_limits.angular,
            "aperture": cfg.action_limits.aperture,
        },
        "max_steps": cfg.max_steps,
        "substeps": cfg.substeps,
        "settle_steps": cfg.settle_steps,
        "release_step": cfg.release_step,
    }


_TOP_KEYS = {
    "physics_mode",
    "seed",
    "gravity",
    "sensors",
    "objects",
    "solver",
    "contact",
    "compliant",
    "randomization",
    "action_limits",
    "max_steps",
    "substeps",
    "settle_steps",
    "release_step",
}

_SENSOR_KEYS = {
    "case_pose",
    "image_size",
    "sensing_area",
    "gelpad_thickness",
    "marker_grid",
    "render_rgb",
    "render_heightmap",
    "pad_resolution",
}

_OBJECT_KEYS = {"name", "shape", "size", "pose", "material", "resolution", "kinematic"}


def config_from_dict(d: dict) -> SceneConfig:
    if not isinstance(d, dict):
        raise ConfigError("scene config must be a JSON object")
    _check_keys(d, _TOP_KEYS, "scene")
    sensors = []
    for i, sd in enumerate(d.get("sensors", [])):
        where = f"sensors[{i}]"
        _check_keys(sd, _SENSOR_KEYS, where)
        kw = dict(sd)
        if "case_pose" in kw:
            kw["case_pose"] = _pose_from_dict(kw["case_pose"], where)
        for key in ("image_size", "sensing_area", "marker_grid"):
            if key in kw:
                kw[key] = tuple(kw[key])
        try:
            sensors.append(SensorSpec(**kw))
        except (TypeError, InvalidArgumentError) as exc:
            raise ConfigError(f"{where}: {exc}")
    objects = []
    for i, od in enumerate(d.get("objects", [])):
        where = f"objects[{i}]"
        _check_keys(od, _OBJECT_KEYS, where)
        kw = dict(od)
        kw["pose"] = _pose_from_dict(kw.get("pose", {}), where)
        kw["size"] = tuple(kw.get("size", ()))
        mat = kw.get("material")
        if not isinstance(mat, dict):
            raise ConfigError(f"{where}: material must be an object")
        kw["material"] = _dataclass_from_dict(sb.Material, mat, f"{where}.material")
        try:
            objects.append(ObjectSpec(**kw))
        except TypeError as exc:
            raise ConfigError(f"{where}: {exc}")
    kw = {k: v for k, v in d.items() if k not in ("sensors", "objects")}
    if "gravity" in kw:
        kw["gravity"] = tuple(kw["gravity"])
    for key, cls in (
        ("solver", sb.SolverParams),
        ("contact", ct.ContactParams),
        ("compliant", cp.CompliantParams),
        ("randomization", Randomization),
        ("action_limits", ActionLimits),
    ):
        if key in kw:
            kw[key] = _dataclass_from_dict(cls, kw[key], key)
    try:
        return SceneConfig(sensors=sensors, objects=objects, **kw)
    except (TypeError, InvalidArgumentError) as exc:
        raise ConfigError(f"scene: {exc}")


def config_to_json(cfg: SceneConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True)


def config_from_json(text: str) -> SceneConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}")
    return config_from_dict(data)


# ---------------------------------------------------------------------------
# Task presets

_GEL = sb.Material(youngs_modulus=1.45e5, poisson_ratio=0.45, density=1070.0)

# Scripted phase constants. Durations are in control steps and assume the
# preset dt of 0.01 s; changing dt rescales the delivered motion.
_BALL_PRESS_RIGID = 20
_BALL_PRESS_SOFT = 25
_BALL_PRESS_RATE = 5e-3
_BALL_ROLL_RATE = 8e-3
_LIFT_SQUEEZE_STEPS = 18
_LIFT_HOLD_STEPS = 5
_LIFT_RATE = 0.045
_LIFT_SQUEEZE_RATE = -0.012
_PUSH_STEPS = 8
_PUSH_RATE = 0.04
_PUSH_GOAL = np.array([3e-3, 0.0, 0.0])
_BEAM_DRIVE_STEPS = 180
_BEAM_HOLD_STEPS = 15
_BEAM_TWIST_RATE = (math.pi / 2) / 1.8  # 90 degrees over the drive phase
_BEAM_STRETCH_RATE = 0.02 / 1.8  # 20% of the 0.1 m beam over the drive phase

_EPISODE_STEPS = {
    "ball_rolling": 60,
    "object_lifting": 93,
    "object_pushing": 60,
    "beam_twisting": 220,
}

_DEFAULT_MODE = {
    "ball_rolling": MODE_RIGID,
    "object_lifting": MODE_SOFT,
    "object_pushing": MODE_RIGID,
    "beam_twisting": MODE_SOFT,
}


def _down_sensor(z: float) -> SensorSpec:
    return SensorSpec(case_pose=Pose.from_rotvec((0.0, 0.0, z), (math.pi, 0.0, 0.0)))


def default_config(task: str, mode: Optional[str] = None) -> SceneConfig:
    """Preset scene for a task; tweak fields before make_env as needed."""
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; expected one of {TASKS}")
    mode = mode or _DEFAULT_MODE[task]
    if mode not in MODES:
        raise ConfigError(f"physics_mode must be one of {MODES}")

    if task == "ball_rolling":
        if mode == MODE_RIGID:
            return SceneConfig(
                physics_mode=mode,
                sensors=[_down_sensor(0.0245)],
                objects=[
                    ObjectSpec(
                        name="ball",
                        shape="sphere",
                        size=(0.01,),
                        pose=Pose.from_rotvec((0.0, 0.0, 0.01), (0, 0, 0)),
                        material=sb.Material(5e6, 0.3, 7800.0),
                        resolution=3,
                    ),
                    _ground((0.2, 0.2, 0.02)),
                ],
                compliant=cp.CompliantParams(k_c=3e3, c_d=5.0, mu=0.5, eps_v=0.05),
                substeps=25,
            )
        return SceneConfig(
            physics_mode=mode,
            sensors=[_down_sensor(0.0155)],
            objects=[
                ObjectSpec(
                    name="ball",
                    shape="sphere",
                    size=(0.005,),
                    pose=Pose.from_rotvec((0.0, 0.0, 0.006), (0, 0, 0)),
                    material=sb.Material(2e5, 0.45, 1070.0),
                    resolution=1,
                ),
                _ground((0.08, 0.08, 0.01)),
            ],
            settle_steps=40,
        )

    if task == "object_lifting":
        grip = [
            SensorSpec(case_pose=Pose.from_rotvec((-0.0085, 0.0, 0.011), (0.0, math.pi / 2, 0.0))),
            SensorSpec(case_pose=Pose.from_rotvec((0.0085, 0.0, 0.011), (0.0, -math.pi / 2, 0.0))),
        ]
        return SceneConfig(
            physics_mode=mode,
            sensors=grip,
            objects=[
                ObjectSpec(
                    name="box",
                    shape="box",
                    size=(0.008, 0.008, 0.008),
                    pose=Pose.from_rotvec((0.0, 0.0, 0.005), (0, 0, 0)),
                    material=sb.Material(3e5, 0.45, 1070.0),
                    resolution=2,
                ),
                _ground((0.2, 0.2, 0.02)),
            ],
            max_steps=120,
            settle_steps=40,
        )

    if task == "object_pushing":
        return SceneConfig(
            physics_mode=mode,
            sensors=[
                SensorSpec(case_pose=Pose.from_rotvec((-0.0105, 0.0, 0.0095), (0.0, math.pi / 2, 0.0)))
            ],
            objects=[
                ObjectSpec(
                    name="box",
                    shape="box",
                    size=(0.012, 0.012, 0.012),
                    pose=Pose.from_rotvec((0.0, 0.0, 0.006), (0, 0, 0)),
                    material=sb.Material(5e6, 0.3, 7800.0),
                    resolution=2,
                ),
                _ground((0.2, 0.2, 0.02)),
            ],
            # Soft contact: the sliding-equilibrium face penetration
            # (near-saturated mu*m*g shared by the face vertices) must
            # rise above the contact threshold to show in the image.
            compliant=cp.CompliantParams(k_c=60.0, c_d=5.0, mu=0.5, eps_v=0.05),
            substeps=25 if mode == MODE_RIGID else 10,
            settle_steps=80 if mode == MODE_RIGID else 40,
        )

    # beam_twisting: vertical soft beam anchored at both ends; the top
    # anchor rides the sensor case and is dropped at release_step.
    beam = ObjectSpec(
        name="beam",
        shape="box",
        size=(0.02, 0.02, 0.1),
        pose=Pose.from_rotvec((0.0, 0.0, 0.05), (0, 0, 0)),
        material=sb.Material(1.2e5, 0.45, 1070.0),
        resolution=4,
    )
    sensor = _down_sensor(0.135)
    sensor.render_rgb = False
    return SceneConfig(
        physics_mode=mode,
        sensors=[sensor],
        objects=[beam],
        solver=sb.SolverParams(dt=1e-2, max_newton_iters=24),
        max_steps=240,
        settle_steps=40,
        release_step=_BEAM_DRIVE_STEPS + _BEAM_HOLD_STEPS,
    )


def _ground(dims: Tuple[float, float, float]) -> ObjectSpec:
    return ObjectSpec(
        name="ground",
        shape="box",
        size=dims,
        pose=Pose.from_rotvec((0.0, 0.0, -dims[2] / 2), (0, 0, 0)),
        material=sb.Material(1e7, 0.3, 1000.0),
        resolution=1,
        kinematic=True,
    )


def scripted_action(task: str, mode: str, step_index: int) -> Action:
    """Hand-tuned trajectory matching the preset geometry for a task."""
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}")
    z = np.zeros(6)
    if task == "ball_rolling":
        press = _BALL_PRESS_RIGID if mode == MODE_RIGID else _BALL_PRESS_SOFT
        if step_index < press:
            return Action(np.array([0, 0, -_BALL_PRESS_RATE, 0, 0, 0.0]))
        return Action(np.array([_BALL_ROLL_RATE, 0, 0, 0, 0, 0.0]))
    if task == "object_lifting":
        if step_index < _LIFT_SQUEEZE_STEPS:
            return Action(z, aperture=_LIFT_SQUEEZE_RATE)
        if step_index < _LIFT_SQUEEZE_STEPS + _LIFT_HOLD_STEPS:
            return Action(z)
        return Action(np.array([0, 0, _LIFT_RATE, 0, 0, 0.0]))
    if task == "object_pushing":
        if step_index < _PUSH_STEPS:
            return Action(np.array([_PUSH_RATE, 0, 0, 0, 0, 0.0]))
        return Action(z)
    if step_index < _BEAM_DRIVE_STEPS:
        return Action(np.array([0, 0, _BEAM_STRETCH_RATE, 0, 0, _BEAM_TWIST_RATE]))
    return Action(z)


def scripted_episode_length(task: str) -> int:
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}")
    return _EPISODE_STEPS[task]


# ---------------------------------------------------------------------------
# Observations and timings


@dataclass(frozen=True)
class StageTimings:
    """Wall time of each pipeline stage for one control step (ms)."""

    physics_ms: float
    heightmap_ms: float
    optical_ms: float
    marker_ms: float

    CSV_HEADER = "step,physics_ms,heightmap_ms,optical_ms,marker_ms"

    def __post_init__(self):
        vals = (self.physics_ms, self.heightmap_ms, self.optical_ms, self.marker_ms)
        if any(not np.isfinite(v) or v < 0 for v in vals):
            raise InvalidArgumentError("stage timings must be finite and >= 0")

    @property
    def total_ms(self) -> float:
        return self.physics_ms + self.heightmap_ms + self.optical_ms + self.marker_ms

    def csv_row(self, step: int) -> str:
        return (
            f"{step},{self.physics_ms:.4f},{self.heightmap_ms:.4f},"
            f"{self.optical_ms:.4f},{self.marker_ms:.4f}"
        )


@dataclass(frozen=True)
class Observation:
    """Per-step sensor and scene readout; all arrays are host-owned copies."""

    step_index: int
    markers: Tuple[np.ndarray, ...]  # per sensor, (rows, cols, 2)
    load_states: Tuple[mk.LoadState, ...]
    rgb: Tuple[Optional[np.ndarray], ...]  # per sensor, (H, W, 3) in [0, 1]
    heightmap: Tuple[Optional[np.ndarray], ...]  # per sensor, (H, W) depth
    case_poses: Tuple[Pose, ...]
    object_centroids: np.ndarray  # (n_dynamic_objects, 3)
    object_poses: Tuple[Optional[Pose], ...]  # rigid bodies only, else None


def observation_digest(obs: Observation) -> str:
    """SHA-256 over every field; equal digests mean bit-identical content."""
    h = hashlib.sha256()
    h.update(str(obs.step_index).encode())

    def arr(a: Optional[np.ndarray]) -> None:
        if a is None:
            h.update(b"\x00none")
            return
        h.update(str(a.shape).encode())
        h.update(str(a.dtype).encode())
        h.update(np.ascontiguousarray(a).tobytes())

    for m in obs.markers:
        arr(m)
    for ls in obs.load_states:
        arr(np.array([*ls.contact_center, ls.max_indentation, *ls.shear, ls.twist, float(ls.in_contact)]))
    for r in obs.rgb:
        arr(r)
    for hm in obs.heightmap:
        arr(hm)
    for p in obs.case_poses:
        arr(p.as_array())
    arr(obs.object_centroids)
    for p in obs.object_poses:
        arr(None if p is None else p.as_array())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Environment internals


@dataclass
class _Anchor:
    """Attachment set driven by a sensor case or pinned in the world."""

    body_index: int
    attachment: sb.AttachmentSet
    sensor_index: Optional[int]  # None: fixed in the world
    offset: Pose  # anchor frame in the case frame (or world frame if fixed)
    release_step: Optional[int] = None

    def pose(self, case_poses: Sequence[Pose]) -> Pose:
        if self.sensor_index is None:
            return self.offset
        return case_poses[self.sensor_index].compose(self.offset)


@dataclass
class _SensorRig:
    spec: SensorSpec
    cfg: tac.SensorConfig
    case_pose: Pose
    rest_grid: np.ndarray
    table: Optional[op.PolyTable]
    lighting: Optional[op.LightingModel]
    # soft mode: index of the pad body and its top-face triangle mask
    pad_body: Optional[int] = None
    pad_faces: Optional[np.ndarray] = None
    # rigid mode: index of the pad body in the rigid list
    pad_rigid: Optional[int] = None
    load: mk.LoadState = field(default_factory=mk.LoadState.zero)
    prev_cam: Pose = field(default_factory=Pose.identity)

    def camera_pose(self) -> Pose:
        return self.case_pose.compose(self.cfg.camera_pose_in_case)


_TABLE_CACHE: Dict[Tuple, Tuple[op.PolyTable, op.LightingModel]] = {}

# Settled canonical states keyed by (task, seedless config JSON). The rig
# jitter is a gravity-invariant rigid transform (xy shift + yaw), so one
# settled state serves every seed after transformation.
_SETTLE_CACHE: Dict[Tuple[str, str], dict] = {}


def _calibration_for(cfg: tac.SensorConfig) -> Tuple[op.PolyTable, op.LightingModel]:
    key = (cfg.image_size, cfg.sensing_area)
    if key not in _TABLE_CACHE:
        lighting = op.default_lighting()
        _TABLE_CACHE[key] = (op.calibrate(lighting, cfg), lighting)
    return _TABLE_CACHE[key]


def _object_tet_mesh(spec: ObjectSpec) -> TetMesh:
    if spec.shape == "sphere":
        return tetrahedralize_sphere(spec.size[0], spec.resolution)
    return tetrahedralize_box(spec.size, max(spec.resolution, 2))


def _object_surface(spec: ObjectSpec) -> TriMesh:
    if spec.shape == "sphere":
        return icosphere_surface(spec.size[0], max(spec.resolution, 2))
    # Honor the requested box resolution: flat colliders stay exact at any
    # density, and coarse ones avoid interior face vertices whose nearest
    # triangle on a curved body has a tilted normal.
    return surface_of(tetrahedralize_box(spec.size, spec.resolution))


def _posed_tet(mesh: TetMesh, pose: Pose) -> TetMesh:
    return TetMesh(pose.apply(mesh.vertices), mesh.tets)


def _interp_pose(a: Pose, b: Pose, f: float) -> Pose:
    rv = (a.rot().inv() * b.rot()).as_rotvec()
    rot = a.rot() * Rotation.from_rotvec(rv * f)
    t = a.translation + f * (b.translation - a.translation)
    return Pose.from_parts(t, rot)


class Environment:
    """One steppable tactile scene. Build through make_env."""

    def __init__(self, task: str, config: SceneConfig):
        _validate_task_config(task, config)
        self.task = task
        self.config = config
        self.mode = config.physics_mode
        self.step_index = 0
        self.needs_reset = False
        self.diagnostics: List[sb.SolverDiagnostics] = []
        self._build(config.seed)

    # -- construction -------------------------------------------------------

    def _build(self, seed: int) -> None:
        cfg = self.config
        rng = np.random.default_rng(seed)
        r = cfg.randomization
        shift = rng.uniform(-r.pos_jitter, r.pos_jitter, size=2)
        yaw = float(rng.uniform(-r.rot_jitter, r.rot_jitter))
        rig = Pose.from_rotvec((shift[0], shift[1], 0.0), (0.0, 0.0, yaw))

        # The scene is built and settled in the canonical (unjittered) frame,
        # then the whole rig is transformed at once.
        self._rigs: List[_SensorRig] = []
        for spec in cfg.sensors:
            tcfg = spec.tactile_config()
            table, lighting = _calibration_for(tcfg) if spec.render_rgb else (None, None)
            self._rigs.append(
                _SensorRig(
                    spec=spec,
                    cfg=tcfg,
                    case_pose=spec.case_pose,
                    rest_grid=mk.grid_rest_positions(tcfg),
                    table=table,
                    lighting=lighting,
                )
            )

        self._soft: List[sb.SoftBodyState] = []
        self._materials: List[sb.Material] = []
        self._colliders: List[Tuple[TriMesh, Pose]] = []
        self._anchors: List[_Anchor] = []
        self._rigid: List[cp.RigidBody] = []
        self._dynamic_objects: List[Tuple[str, int]] = []  # (kind, index)

        for spec in cfg.objects:
            pose = spec.pose
            if self.mode == MODE_SOFT:
                if spec.kinematic:
                    self._colliders.append((_object_surface(spec), pose))
                else:
                    mesh = _posed_tet(_object_tet_mesh(spec), pose)
                    self._soft.append(sb.init_softbody(mesh, spec.material))
                    self._materials.append(spec.material)
                    self._dynamic_objects.append(("soft", len(self._soft) - 1))
            else:
                surf = _object_surface(spec)
                mass = spec.material.density * spec.volume()
                if spec.shape == "sphere":
                    inertia = cp.inertia_of_solid_sphere(spec.size[0], mass)
                else:
                    inertia = cp.inertia_of_solid_box(spec.size, mass)
                body = cp.RigidBody(
                    pose=pose,
                    collider=surf,
                    mass=mass,
                    inertia=inertia,
                    kinematic=spec.kinematic,
                )
                self._rigid.append(body)
                if not spec.kinematic:
                    self._dynamic_objects.append(("rigid", len(self._rigid) - 1))

        for si, rigx in enumerate(self._rigs):
            self._build_pad(si, rigx)
        if self.task == "beam_twisting":
            self._build_beam_anchors()

        d = config_to_dict(cfg)
        del d["seed"]
        key = (self.task, json.dumps(d, sort_keys=True))
        if key not in _SETTLE_CACHE:
            self._settle()
            _SETTLE_CACHE[key] = self._capture()
        self._restore(_SETTLE_CACHE[key])
        self._apply_rig(rig)
        self._snapshot = self._capture()
        self._restore(self._snapshot)

    def _apply_rig(self, rig: Pose) -> None:
        """Move the settled canonical scene by the randomization transform."""
        for rigx in self._rigs:
            rigx.case_pose = rig.compose(rigx.case_pose)
        self._soft = [
            replace(s, positions=rig.apply(s.positions)) for s in self._soft
        ]
        self._rigid = [replace(b, pose=rig.compose(b.pose)) for b in self._rigid]
        self._colliders = [(m, rig.compose(p)) for m, p in self._colliders]
        for a in self._anchors:
            if a.sensor_index is None:
                a.offset = rig.compose(a.offset)

    def _build_pad(self, sensor_index: int, rigx: _SensorRig) -> None:
        spec = rigx.spec
        pw, ph, th = spec.pad_extents()
        if self.mode == MODE_RIGID:
            collider = surface_of(tetrahedralize_box((pw, ph, th), 1))
            offset = Pose.from_rotvec((0.0, 0.0, th / 2), (0, 0, 0))
            body = cp.RigidBody(
                pose=rigx.case_pose.compose(offset),
                collider=collider,
                kinematic=True,
            )
            self._rigid.append(body)
            rigx.pad_rigid = len(self._rigid) - 1
            return

        local = _posed_tet(
            tetrahedralize_box((pw, ph, th), spec.pad_resolution),
            Pose.from_rotvec((0.0, 0.0, th / 2), (0, 0, 0)),
        )
        world = _posed_tet(local, rigx.case_pose)
        state = sb.init_softbody(world, _GEL)
        self._soft.append(state)
        self._materials.append(_GEL)
        rigx.pad_body = len(self._soft) - 1

        # Face mask: keep only the sensing surface (case-frame +z normals on
        # the front half) so the back face never wins the depth buffer.
        tris = state.surf_tris
        v = local.vertices
        n = np.cross(v[tris[:, 1]] - v[tris[:, 0]], v[tris[:, 2]] - v[tris[:, 0]])
        nz = n[:, 2] / np.linalg.norm(n, axis=1)
        cz = v[tris].mean(axis=1)[:, 2]
        rigx.pad_faces = (nz > 0.9) & (cz > 0.75 * th)
        if not rigx.pad_faces.any():
            raise ConfigError("gel pad has no sensing-surface triangles")

        att = sb.find_attachments(
            world, rigx.case_pose, (pw / 2 + 1e-3, ph / 2 + 1e-3, 2e-4), 1e-4
        )
        self._anchors.append(
            _Anchor(rigx.pad_body, att, sensor_index, Pose.identity())
        )

    def _build_beam_anchors(self) -> None:
        kind, idx = self._dynamic_objects[0]
        state = self._soft[idx]
        lo = state.rest_positions[:, 2].min()
        hi = state.rest_positions[:, 2].max()
        cxy = state.rest_positions.mean(axis=0)[:2]
        he = (0.011, 0.011, 1e-3)
        bottom = Pose.from_rotvec((cxy[0], cxy[1], lo), (0, 0, 0))
        top = Pose.from_rotvec((cxy[0], cxy[1], hi), (0, 0, 0))
        mesh = TetMesh(state.rest_positions.copy(), state.tets)
        self._anchors.append(
            _Anchor(idx, sb.find_attachments(mesh, bottom, he, 1e-4), None, bottom)
        )
        case = self._rigs[0].case_pose
        self._anchors.append(
            _Anchor(
                idx,
                sb.find_attachments(mesh, top, he, 1e-4),
                0,
                case.inverse().compose(top),
                release_step=self.config.release_step,
            )
        )

    # -- settle and snapshots ------------------------------------------------

    def _settle(self) -> None:
        cfg = self.config
        if cfg.settle_steps == 0:
            return
        if self.mode == MODE_SOFT:
            for _ in range(cfg.settle_steps):
                diag = self._soft_step()
                if diag.newton_iters == 0:
                    break
            self._soft = [replace(s, velocities=np.zeros_like(s.velocities)) for s in self._soft]
        else:
            sub_dt = cfg.solver.dt / cfg.substeps
            budget = cfg.settle_steps * cfg.substeps
            # Phase one: overdamped descent into a rest pose.  Faceted
            # hulls rock between surface vertices and pass through zero
            # velocity twice per cycle, so a one-shot speed check would
            # exit at a turning point with stored potential energy.
            quiet = 0
            used = 0
            while used < budget:
                used += 1
                self._rigid = cp.step_rigid(self._rigid, cfg.compliant, sub_dt, cfg.gravity)
                top = self._max_dynamic_speed()
                if top < 1e-7:
                    quiet += 1
                    if quiet >= 25:
                        break
                else:
                    quiet = 0
                    self._rigid = [
                        b if b.kinematic else replace(b, velocity=b.velocity * 0.9)
                        for b in self._rigid
                    ]
            # Phase two: verify the rest pose under the real dynamics.
            quiet = 0
            while used < budget:
                used += 1
                self._rigid = cp.step_rigid(self._rigid, cfg.compliant, sub_dt, cfg.gravity)
                if self._max_dynamic_speed() < 1e-7:
                    quiet += 1
                    if quiet >= 50:
                        break
                else:
                    quiet = 0
            self._rigid = [
                b if b.kinematic else replace(b, velocity=np.zeros(6)) for b in self._rigid
            ]

    def _max_dynamic_speed(self) -> float:
        speeds = [
            float(np.abs(b.velocity).max()) for b in self._rigid if not b.kinematic
        ]
        return max(speeds) if speeds else 0.0

    def _capture(self) -> dict:
        return {
            "soft": [
                (s.positions.copy(), np.zeros_like(s.velocities)) for s in self._soft
            ],
            "rigid": [
                (
                    Pose(b.pose.translation.copy(), b.pose.rotation.copy()),
                    b.velocity.copy(),
                )
                for b in self._rigid
            ],
            "cases": [
                Pose(r.case_pose.translation.copy(), r.case_pose.rotation.copy())
                for r in self._rigs
            ],
        }

    def _restore(self, snap: dict) -> None:
        self._soft = [
            replace(s, positions=p.copy(), velocities=v.copy())
            for s, (p, v) in zip(self._soft, snap["soft"])
        ]
        self._rigid = [
            replace(b, pose=Pose(p.translation.copy(), p.rotation.copy()), velocity=v.copy())
            for b, (p, v) in zip(self._rigid, snap["rigid"])
        ]
        for rigx, pose in zip(self._rigs, snap["cases"]):
            rigx.case_pose = Pose(pose.translation.copy(), pose.rotation.copy())
            rigx.load = mk.LoadState.zero()
            rigx.prev_cam = rigx.camera_pose()
        self.step_index = 0
        self.needs_reset = False
        self.diagnostics = []

    # -- stepping ------------------------------------------------------------

    def reset(self, seed: Optional[int] = None) -> Observation:
        """Restore the initial state exactly; a new seed rebuilds the rig."""
        if seed is None:
            self._restore(self._snapshot)
        else:
            self.config.seed = seed
            self.step_index = 0
            self.needs_reset = False
            self.diagnostics = []
            self._build(seed)
        obs, _ = self._observe()
        return obs

    def step(self, action: Action) -> Tuple[Observation, StageTimings]:
        """Advance one control step; raises after a stall until reset."""
        if self.needs_reset:
            raise InvalidArgumentError("environment needs reset before stepping")
        if not isinstance(action, Action):
            raise InvalidArgumentError("step expects an Action")
        act = action.clamped(self.config.action_limits)

        t0 = time.perf_counter()
        old_cases = [r.case_pose for r in self._rigs]
        self._integrate_cases(act)
        try:
            if self.mode == MODE_SOFT:
                diag = self._soft_step()
                self.diagnostics.append(diag)
            else:
                self._rigid_step(old_cases)
        except SolverStallError:
            self.needs_reset = True
            raise
        physics_ms = (time.perf_counter() - t0) * 1e3

        obs, (hm_ms, opt_ms, mark_ms) = self._observe()
        self.step_index += 1
        obs = replace(obs, step_index=self.step_index)
        if self.step_index >= self.config.max_steps:
            self.needs_reset = True
        return obs, StageTimings(physics_ms, hm_ms, opt_ms, mark_ms)

    def _integrate_cases(self, act: Action) -> None:
        dt = self.config.solver.dt
        lin, ang = act.twist[:3], act.twist[3:]
        center = np.mean([r.case_pose.translation for r in self._rigs], axis=0)
        rot_d = Rotation.from_rotvec(dt * ang)
        for rigx in self._rigs:
            pose = rigx.case_pose
            axis = pose.rot().apply([0.0, 0.0, 1.0])
            t = center + rot_d.apply(pose.translation - center) + dt * lin
            t = t + (-0.5 * act.aperture * dt) * axis
            rigx.case_pose = Pose.from_parts(t, rot_d * pose.rot())

    def _active_attachments(self) -> List[sb.Attachment]:
        cases = [r.case_pose for r in self._rigs]
        out = []
        for a in self._anchors:
            if a.release_step is not None and self.step_index >= a.release_step:
                continue
            out.append(
                (a.body_index, a.attachment, sb.update_attachment_targets(a.attachment, a.pose(cases)))
            )
        return out

    def _soft_step(self) -> sb.SolverDiagnostics:
        cfg = self.config
        self._soft, diag = sb.step(
            self._soft,
            self._materials,
            self._colliders,
            self._active_attachments(),
            cfg.solver,
            cfg.contact,
            cfg.gravity,
        )
        return diag

    def _rigid_step(self, old_cases: Sequence[Pose]) -> None:
        cfg = self.config
        dt = cfg.solver.dt
        n = cfg.substeps
        sub_dt = dt / n
        pads = [(r.pad_rigid, old, r.case_pose, r.spec) for r, old in zip(self._rigs, old_cases)]
        for k in range(n):
            for idx, old, new, spec in pads:
                th = spec.pad_extents()[2]
                off = Pose.from_rotvec((0.0, 0.0, th / 2), (0, 0, 0))
                p0 = _interp_pose(old, new, k / n).compose(off)
                p1 = _interp_pose(old, new, (k + 1) / n).compose(off)
                ang = (old.rot().inv() * new.rot()).as_rotvec()
                vel = np.concatenate(
                    [(p1.translation - p0.translation) / sub_dt, old.rot().apply(ang) / dt]
                )
                self._rigid[idx] = replace(self._rigid[idx], pose=p0, velocity=vel)
            self._rigid = cp.step_rigid(self._rigid, cfg.compliant, sub_dt, cfg.gravity)
        for idx, old, new, spec in pads:
            th = spec.pad_extents()[2]
            off = Pose.from_rotvec((0.0, 0.0, th / 2), (0, 0, 0))
            self._rigid[idx] = replace(self._rigid[idx], pose=new.compose(off))

    # -- observation ---------------------------------------------------------

    def _sensor_surfaces(self, rigx: _SensorRig) -> List:
        if self.mode == MODE_SOFT:
            state = self._soft[rigx.pad_body]
            return [(state.positions, state.surf_tris[rigx.pad_faces])]
        return [
            (b.collider, b.pose)
            for i, b in enumerate(self._rigid)
            if i not in {r.pad_rigid for r in self._rigs}
        ]

    def _observe(self) -> Tuple[Observation, Tuple[float, float, float]]:
        hm_ms = opt_ms = mark_ms = 0.0
        markers, loads, rgbs, heights, cases = [], [], [], [], []
        for rigx in self._rigs:
            cam = rigx.camera_pose()

            t0 = time.perf_counter()
            hm = tac.render_heightmap(self._sensor_surfaces(rigx), cam, rigx.cfg)
            ind = tac.indentation_from(hm, rigx.cfg)
            smooth = tac.smooth_pyramid(ind) if rigx.spec.render_rgb else None
            hm_ms += (time.perf_counter() - t0) * 1e3

            t0 = time.perf_counter()
            rgb = None
            if rigx.spec.render_rgb:
                normals = op.normals_from(smooth)
                rgb = op.shade(normals, rigx.table)
                rgb = op.add_shadows(rgb, hm, rigx.lighting)
            opt_ms += (time.perf_counter() - t0) * 1e3

            t0 = time.perf_counter()
            contact = mk.contact_center(ind)
            delta = rigx.prev_cam.inverse().compose(cam)
            rigx.load = mk.track_load(rigx.load, delta, contact)
            rigx.prev_cam = cam
            disp = mk.marker_displacements(rigx.load, rigx.rest_grid).displacements
            mark_ms += (time.perf_counter() - t0) * 1e3

            markers.append(disp)
            loads.append(rigx.load)
            rgbs.append(rgb)
            heights.append(hm.values.copy() if rigx.spec.render_heightmap else None)
            cases.append(rigx.case_pose)

        centroids, poses = [], []
        for kind, idx in self._dynamic_objects:
            if kind == "soft":
                centroids.append(sb.body_centroid(self._soft[idx]))
                poses.append(None)
            else:
                body = self._rigid[idx]
                centroids.append(body.pose.translation.copy())
                poses.append(body.pose)
        obs = Observation(
            step_index=self.step_index,
            markers=tuple(markers),
            load_states=tuple(loads),
            rgb=tuple(rgbs),
            heightmap=tuple(heights),
            case_poses=tuple(cases),
            object_centroids=np.array(centroids) if centroids else np.zeros((0, 3)),
            object_poses=tuple(poses),
        )
        return obs, (hm_ms, opt_ms, mark_ms)

    # -- task readouts -------------------------------------------------------

    @property
    def done(self) -> bool:
        return self.step_index >= self.config.max_steps

    def object_centroid(self, index: int = 0) -> np.ndarray:
        kind, idx = self._dynamic_objects[index]
        if kind == "soft":
            return sb.body_centroid(self._soft[idx])
        return self._rigid[idx].pose.translation.copy()

    def initial_object_centroid(self, index: int = 0) -> np.ndarray:
        kind, idx = self._dynamic_objects[index]
        if kind == "soft":
            pos, _ = self._snapshot["soft"][idx]
            state = self._soft[idx]
            w = state.masses / state.masses.sum()
            return (w[:, None] * pos).sum(axis=0)
        pose, _ = self._snapshot["rigid"][idx]
        return pose.translation.copy()

    def lift_success(self, height_gain: float = 0.02) -> bool:
        """True when the task object rose by height_gain with both pads loaded."""
        if self.task != "object_lifting":
            raise InvalidArgumentError("lift_success is only defined for object_lifting")
        gain = self.object_centroid()[2] - self.initial_object_centroid()[2]
        held = all(r.load.in_contact for r in self._rigs)
        return bool(gain >= height_gain and held)

    def reward(self) -> float:
        """Task shaping: negative distance to goal for pushing, else 0."""
        if self.task != "object_pushing":
            return 0.0
        goal = self.initial_object_centroid() + _PUSH_GOAL
        return -float(np.linalg.norm(self.object_centroid()[:2] - goal[:2]))

    def invariant_violations(self) -> int:
        """Steps whose soft diagnostics show an inversion or interpenetration."""
        bad = 0
        for d in self.diagnostics:
            if d.min_tet_volume <= 0 or (
                np.isfinite(d.min_pair_distance) and d.min_pair_distance <= 0
            ):
                bad += 1
        return bad


def _validate_task_config(task: str, cfg: SceneConfig) -> None:
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; expected one of {TASKS}")
    if not isinstance(cfg, SceneConfig):
        raise ConfigError("config must be a SceneConfig")
    if task in ("beam_twisting", "object_lifting") and cfg.physics_mode != MODE_SOFT:
        raise ConfigError(f"{task} requires the soft solver (physics_mode soft-ipc)")
    need = 2 if task == "object_lifting" else 1
    if len(cfg.sensors) != need:
        raise ConfigError(f"{task} needs exactly {need} sensor(s), got {len(cfg.sensors)}")
    dynamic = [o for o in cfg.objects if not o.kinematic]
    if not dynamic:
        raise ConfigError(f"{task} needs at least one non-kinematic object")
    if task == "beam_twisting" and cfg.release_step is None:
        raise ConfigError("beam_twisting needs release_step")


def make_env(task: str, config: Optional[SceneConfig] = None, mode: Optional[str] = None,
             seed: Optional[int] = None) -> Environment:
    """Build a task environment from a config (preset when omitted)."""
    if config is None:
        config = default_config(task, mode)
    elif mode is not None and mode != config.physics_mode:
        raise ConfigError("mode argument contradicts config.physics_mode")
    if seed is not None:
        config.seed = seed
    return Environment(task, config)


# ---------------------------------------------------------------------------
# Vectorized stepping


def thread_cap(n_envs: int, override: Optional[int] = None) -> int:
    """Worker count for n_envs, bounded by the TACSIM_THREADS variable."""
    if override is not None:
        cap = override
    else:
        raw = os.environ.get(THREADS_ENV_VAR, "")
        try:
            cap = int(raw) if raw else (os.cpu_count() or 1)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV_VAR} must be an integer, got {raw!r}")
    return max(1, min(cap, n_envs))


class VectorEnv:
    """Steps independent environments, in threads when the cap allows.

    Envs share nothing, so the parallel path is bit-identical to serial.
    """

    def __init__(self, envs: Sequence[Environment], max_threads: Optional[int] = None):
        if not envs:
            raise InvalidArgumentError("VectorEnv needs at least one environment")
        self.envs = list(envs)
        self._workers = thread_cap(len(self.envs), max_threads)

    @property
    def n_envs(self) -> int:
        return len(self.envs)

    def step(self, actions: Sequence[Action]) -> List[Tuple[Observation, StageTimings]]:
        if len(actions) != len(self.envs):
            raise InvalidArgumentError("need one action per environment")
        if self._workers == 1:
            return [e.step(a) for e, a in zip(self.envs, actions)]
        with ThreadPoolExecutor(max_workers=self._workers) as pool:
            return list(pool.map(lambda ea: ea[0].step(ea[1]), zip(self.envs, actions)))

    def reset(self, seeds: Optional[Sequence[Optional[int]]] = None) -> List[Observation]:
        if seeds is None:
            seeds = [None] * len(self.envs)
        if len(seeds) != len(self.envs):
            raise InvalidArgumentError("need one seed per environment")
        return [e.reset(s) for e, s in zip(self.envs, seeds)]


# ---------------------------------------------------------------------------
# Benchmarks


@dataclass(frozen=True)
class StageStats:
    mean_ms: float
    median_ms: float
    p95_ms: float


STAGES = ("physics", "heightmap", "optical", "marker")


@dataclass
class BenchReport:
    """Per-frame per-env stage statistics for one (task, mode, env count)."""

    task: str
    mode: str
    n_envs: int
    n_steps: int
    warmup: int
    stages: Dict[str, StageStats]
    per_env_step_ms: float  # post-warmup wall time / (steps * envs)
    n_soft_vertices: int
    n_soft_tets: int


def _stage_values(timings: StageTimings) -> Tuple[float, float, float, float]:
    return (timings.physics_ms, timings.heightmap_ms, timings.optical_ms, timings.marker_ms)


def run_bench(
    factory: Callable[[int], Environment],
    n_envs: int,
    n_steps: int = 10,
    warmup: int = 2,
    max_threads: Optional[int] = None,
) -> BenchReport:
    """Step n_envs scripted copies and aggregate post-warmup stage times."""
    if n_steps < 1 or warmup < 0:
        raise InvalidArgumentError("need n_steps >= 1 and warmup >= 0")
    envs = [factory(i) for i in range(n_envs)]
    venv = VectorEnv(envs, max_threads)
    task, mode = envs[0].task, envs[0].mode
    samples: List[List[float]] = [[] for _ in STAGES]

    for t in range(warmup):
        venv.step([scripted_action(task, mode, t) for _ in envs])
    t0 = time.perf_counter()
    for t in range(warmup, warmup + n_steps):
        results = venv.step([scripted_action(task, mode, t) for _ in envs])
        for _, timings in results:
            for i, v in enumerate(_stage_values(timings)):
                samples[i].append(v)
    wall_ms = (time.perf_counter() - t0) * 1e3

    stats = {
        name: StageStats(
            mean_ms=float(np.mean(vals)),
            median_ms=float(np.median(vals)),
            p95_ms=float(np.percentile(vals, 95)),
        )
        for name, vals in zip(STAGES, samples)
    }
    return BenchReport(
        task=task,
        mode=mode,
        n_envs=n_envs,
        n_steps=n_steps,
        warmup=warmup,
        stages=stats,
        per_env_step_ms=wall_ms / (n_steps * n_envs),
        n_soft_vertices=sum(s.n_vertices for s in envs[0]._soft),
        n_soft_tets=sum(len(s.tets) for s in envs[0]._soft),
    )


def bench_task(
    task: str,
    mode: str,
    env_counts: Sequence[int],
    n_steps: int = 10,
    warmup: int = 2,
    seed: int = 0,
    resolution: Optional[int] = None,
) -> List[BenchReport]:
    """Sweep environment counts for one task/mode with the preset scene."""

    def factory(i: int) -> Environment:
        cfg = default_config(task, mode)
        cfg.seed = seed + i
        if resolution is not None:
            cfg.objects[0].resolution = resolution
        return Environment(task, cfg)

    return [run_bench(factory, n, n_steps=n_steps, warmup=warmup) for n in env_counts]


def bench_soft_mesh_cost(
    resolutions: Sequence[int] = (1, 2, 3),
    n_steps: int = 6,
    warmup: int = 2,
    seed: int = 0,
) -> List[Tuple[int, int, float]]:
    """(n_vertices, n_tets, physics ms/frame) for soft ball presets."""
    rows = []
    for res in resolutions:
        rep = bench_task(
            "ball_rolling", MODE_SOFT, [1], n_steps=n_steps, warmup=warmup,
            seed=seed, resolution=res,
        )[0]
        rows.append((rep.n_soft_vertices, rep.n_soft_tets, rep.stages["physics"].mean_ms))
    return rows


def write_stage_sweep_csv(path: str, reports: Sequence[BenchReport]) -> None:
    """Mean per-frame sensor-stage cost (ms) against environment count."""
    lines = ["num_envs,height_map_gen,optical_sim,marker_sim"]
    for r in reports:
        lines.append(
            f"{r.n_envs},{r.stages['heightmap'].mean_ms:.3f},"
            f"{r.stages['optical'].mean_ms:.3f},{r.stages['marker'].mean_ms:.3f}"
        )
    _write_text(path, "\n".join(lines) + "\n")


def write_mode_scaling_csv(
    path: str,
    counts: Sequence[int],
    rigid: Sequence[BenchReport],
    soft: Sequence[BenchReport],
) -> None:
    """Per-env step wall time (ms) by mode; '-' where a count was not run."""
    by = {
        "rigid": {r.n_envs: r.per_env_step_ms for r in rigid},
        "soft": {r.n_envs: r.per_env_step_ms for r in soft},
    }
    lines = ["num_envs," + ",".join(str(c) for c in counts)]
    for mode in ("rigid", "soft"):
        cells = [f"{by[mode][c]:.3f}" if c in by[mode] else "-" for c in counts]
        lines.append(mode + "," + ",".join(cells))
    _write_text(path, "\n".join(lines) + "\n")


def write_mesh_cost_csv(path: str, rows: Sequence[Tuple[int, int, float]]) -> None:
    """Soft solver cost against mesh size."""
    lines = ["num_vert,num_tetra,physics_ms"]
    for nv, nt, ms in rows:
        lines.append(f"{nv},{nt},{ms:.3f}")
    _write_text(path, "\n".join(lines) + "\n")


def write_stage_stats_csv(path: str, reports: Sequence[BenchReport]) -> None:
    """Long-form stage statistics for every swept environment count."""
    lines = ["num_envs,stage,mean_ms,median_ms,p95_ms"]
    for r in reports:
        for name in STAGES:
            s = r.stages[name]
            lines.append(f"{r.n_envs},{name},{s.mean_ms:.3f},{s.median_ms:.3f},{s.p95_ms:.3f}")
    _write_text(path, "\n".join(lines) + "\n")


def rigid_scaling_note(reports: Sequence[BenchReport]) -> Tuple[bool, str]:
    """Whether per-env step time falls monotonically with env count."""
    ordered = sorted(reports, key=lambda r: r.n_envs)
    pairs = list(zip(ordered, ordered[1:]))
    bad = [
        f"{a.n_envs}->{b.n_envs}: {a.per_env_step_ms:.3f} -> {b.per_env_step_ms:.3f} ms"
        for a, b in pairs
        if b.per_env_step_ms >= a.per_env_step_ms
    ]
    if not bad:
        return True, "per-env step time decreases monotonically with env count"
    return False, "per-env step time deviates from monotone decrease: " + "; ".join(bad)


def _write_text(path: str, text: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)

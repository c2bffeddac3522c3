"""Marker motion fields from contact loads.

Markers printed on the gel surface displace under three load components,
each with an exponential falloff around the contact center: radial
expansion from normal indentation, translation from accumulated shear,
and circulation from accumulated twist. Loads are tracked per sensor
relative to contact onset.
"""

import csv
import dataclasses
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import cv2
import numpy as np

from .errors import InvalidArgumentError
from .tactile import IndentationMap, SensorConfig
from .geometry import Pose

DEFAULT_CONTACT_THRESHOLD = 5e-5


@dataclass(frozen=True)
class MarkerParams:
    """Displacement-distribution constants; lengths in meters."""

    k_n: float = 0.3
    lambda_n: float = 4e-3
    lambda_s: float = 5e-3
    k_t: float = 0.5
    lambda_t: float = 4e-3

    def __post_init__(self):
        vals = (self.k_n, self.lambda_n, self.lambda_s, self.k_t, self.lambda_t)
        if not all(np.isfinite(v) for v in vals):
            raise InvalidArgumentError("marker params must be finite")
        if self.lambda_n <= 0 or self.lambda_s <= 0 or self.lambda_t <= 0:
            raise InvalidArgumentError("marker length scales must be positive")


@dataclass(frozen=True)
class LoadState:
    """Per-sensor contact load accumulated since contact onset."""

    contact_center: Tuple[float, float] = (0.0, 0.0)
    max_indentation: float = 0.0
    shear: Tuple[float, float] = (0.0, 0.0)
    twist: float = 0.0
    in_contact: bool = False

    def __post_init__(self):
        c = np.asarray(self.contact_center, dtype=np.float64)
        s = np.asarray(self.shear, dtype=np.float64)
        if c.shape != (2,) or s.shape != (2,):
            raise InvalidArgumentError("contact_center and shear must be 2-vectors")
        vals = np.concatenate([c, s, [self.max_indentation, self.twist]])
        if not np.isfinite(vals).all():
            raise InvalidArgumentError("load state must be finite")
        if self.max_indentation < 0:
            raise InvalidArgumentError("max_indentation must be >= 0")
        if not self.in_contact and np.abs(vals).max() > 0:
            raise InvalidArgumentError("loads must be zero when not in contact")
        object.__setattr__(self, "contact_center", (float(c[0]), float(c[1])))
        object.__setattr__(self, "shear", (float(s[0]), float(s[1])))

    @staticmethod
    def zero() -> "LoadState":
        return LoadState()


@dataclass
class MarkerField:
    """Rest grid and displacement per marker, meters in the sensor plane."""

    rest_positions: np.ndarray
    displacements: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rest_positions, dtype=np.float64)
        u = np.asarray(self.displacements, dtype=np.float64)
        if r.ndim != 3 or r.shape[2] != 2 or u.shape != r.shape:
            raise InvalidArgumentError(
                "rest_positions and displacements must both be (rows, cols, 2)"
            )
        if not (np.isfinite(r).all() and np.isfinite(u).all()):
            raise InvalidArgumentError("marker field must be finite")
        self.rest_positions = r
        self.displacements = u


def grid_rest_positions(cfg: SensorConfig) -> np.ndarray:
    """Evenly spaced marker grid centered on the sensing area, (rows, cols, 2)."""
    rows, cols = int(cfg.marker_grid[0]), int(cfg.marker_grid[1])
    w, h = cfg.sensing_area
    xs = ((np.arange(cols) + 0.5) / cols - 0.5) * w
    ys = ((np.arange(rows) + 0.5) / rows - 0.5) * h
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy], axis=-1)


def contact_center(
    ind: IndentationMap, threshold: float = DEFAULT_CONTACT_THRESHOLD
) -> LoadState:
    """Indentation-weighted contact centroid; shear and twist left at zero."""
    if threshold <= 0:
        raise InvalidArgumentError("threshold must be positive")
    vals = ind.values
    mask = vals > threshold
    if not mask.any():
        return LoadState.zero()
    h, w = vals.shape
    ii, jj = np.nonzero(mask)
    weights = vals[ii, jj]
    xs = (jj + 0.5 - 0.5 * w) * ind.pixel_pitch
    ys = (ii + 0.5 - 0.5 * h) * ind.pixel_pitch
    total = weights.sum()
    cx = float((weights * xs).sum() / total)
    cy = float((weights * ys).sum() / total)
    return LoadState((cx, cy), float(vals.max()), (0.0, 0.0), 0.0, True)


def track_load(prev: LoadState, case_pose_delta: Pose, contact: LoadState) -> LoadState:
    """Advance accumulated shear and twist by one step of case motion.

    Shear accumulates the in-plane translation of the case delta; twist
    accumulates the negated z rotation (object motion relative to the
    gelpad). Both reset on contact onset and on contact loss.
    """
    if not contact.in_contact:
        return LoadState.zero()
    if not prev.in_contact:
        return dataclasses.replace(contact, shear=(0.0, 0.0), twist=0.0)
    delta_t = case_pose_delta.translation
    yaw = float(case_pose_delta.rot().as_rotvec()[2])
    shear = (prev.shear[0] + float(delta_t[0]), prev.shear[1] + float(delta_t[1]))
    return dataclasses.replace(
        contact, shear=shear, twist=prev.twist - yaw
    )


def marker_displacements(
    load: LoadState, rest_positions: np.ndarray, params: MarkerParams = MarkerParams()
) -> MarkerField:
    """Superpose normal, shear, and twist displacement distributions."""
    rest = np.asarray(rest_positions, dtype=np.float64)
    if rest.ndim != 3 or rest.shape[2] != 2:
        raise InvalidArgumentError("rest_positions must be (rows, cols, 2)")
    if not load.in_contact:
        return MarkerField(rest, np.zeros_like(rest))
    c = np.asarray(load.contact_center)
    r = rest - c
    dist = np.linalg.norm(r, axis=-1)
    safe = np.where(dist > 0, dist, 1.0)
    radial = r / safe[..., None]
    u_n = (params.k_n * load.max_indentation * np.exp(-dist / params.lambda_n))[
        ..., None
    ] * radial
    u_n[dist == 0] = 0.0
    s = np.asarray(load.shear)
    u_s = np.exp(-(dist * dist) / (2 * params.lambda_s**2))[..., None] * s
    perp = np.stack([-r[..., 1], r[..., 0]], axis=-1)
    u_t = (load.twist * params.k_t * np.exp(-dist / params.lambda_t))[..., None] * perp
    return MarkerField(rest, u_n + u_s + u_t)


def save_markers_csv(path: str, field: MarkerField) -> None:
    """Write one row per marker: row, col, rest_x, rest_y, u_x, u_y."""
    rows, cols = field.rest_positions.shape[:2]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["row", "col", "rest_x", "rest_y", "u_x", "u_y"])
        for i in range(rows):
            for j in range(cols):
                rx, ry = field.rest_positions[i, j]
                ux, uy = field.displacements[i, j]
                writer.writerow(
                    [i, j, f"{rx:.17g}", f"{ry:.17g}", f"{ux:.17g}", f"{uy:.17g}"]
                )


def load_markers_csv(path: str) -> MarkerField:
    """Read a field written by save_markers_csv."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != ["row", "col", "rest_x", "rest_y", "u_x", "u_y"]:
            raise InvalidArgumentError(f"unexpected marker CSV header in {path}")
        records = [(int(r[0]), int(r[1]), *map(float, r[2:])) for r in reader]
    if not records:
        raise InvalidArgumentError(f"empty marker CSV: {path}")
    rows = max(r[0] for r in records) + 1
    cols = max(r[1] for r in records) + 1
    rest = np.zeros((rows, cols, 2))
    disp = np.zeros((rows, cols, 2))
    for i, j, rx, ry, ux, uy in records:
        rest[i, j] = (rx, ry)
        disp[i, j] = (ux, uy)
    return MarkerField(rest, disp)


def render_markers(
    field: MarkerField,
    cfg: SensorConfig,
    background: Optional[np.ndarray] = None,
    draw_arrows: bool = False,
    dot_radius: int = 4,
) -> np.ndarray:
    """Draw markers as dark dots at rest + displacement; returns uint8 RGB."""
    h, w = int(cfg.image_size[0]), int(cfg.image_size[1])
    pitch = cfg.pixel_pitch
    if background is None:
        img = np.full((h, w, 3), 230, dtype=np.uint8)
    else:
        bg = np.asarray(background, dtype=np.float64)
        if bg.shape != (h, w, 3):
            raise InvalidArgumentError("background must match the sensor image size")
        img = np.round(np.clip(bg, 0.0, 1.0) * 255.0).astype(np.uint8)

    def to_px(p):
        return (
            int(round(p[0] / pitch + 0.5 * w - 0.5)),
            int(round(p[1] / pitch + 0.5 * h - 0.5)),
        )

    flat_rest = field.rest_positions.reshape(-1, 2)
    flat_disp = field.displacements.reshape(-1, 2)
    for rest, disp in zip(flat_rest, flat_disp):
        target = to_px(rest + disp)
        if draw_arrows and (abs(disp[0]) > 0 or abs(disp[1]) > 0):
            cv2.arrowedLine(img, to_px(rest), target, (90, 90, 90), 1)
        cv2.circle(img, target, dot_radius, (25, 25, 25), -1)
    return img

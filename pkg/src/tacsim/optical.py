"""Normal-based optical shading for tactile images.

Pipeline: an indentation (or height) map becomes a per-pixel unit normal
field, a fitted polynomial maps the tangential normal components to RGB,
and a ray-marched pass darkens pixels occluded from each light. The
polynomial is fitted once against Phong-shaded synthetic sphere presses,
so the whole stack is deterministic and needs no captured sensor data.
"""

import dataclasses
import json
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import cv2
import numpy as np

from .errors import CalibrationError, InvalidArgumentError, MeshFormatError
from .tactile import HeightMap, IndentationMap, SensorConfig

log = logging.getLogger(__name__)

# Phong constants for the synthetic calibration targets.
_DIFFUSE = 0.62
_SPECULAR = 0.18
_SHININESS = 8.0

_SATURATION_WARN_FRACTION = 0.01


def _unit_rows(a: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(a, axis=-1, keepdims=True)
    if (n <= 1e-12).any():
        raise InvalidArgumentError("light directions must be nonzero")
    return a / n


@dataclass(frozen=True)
class LightingModel:
    """Three directional lights plus ambient, colors in [0, 1].

    Directions point from the surface toward each light and are
    normalized on construction.
    """

    directions: np.ndarray
    colors: np.ndarray
    ambient: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.directions, dtype=np.float64)
        c = np.asarray(self.colors, dtype=np.float64)
        a = np.asarray(self.ambient, dtype=np.float64)
        if d.shape != (3, 3) or c.shape != (3, 3) or a.shape != (3,):
            raise InvalidArgumentError(
                "expected directions (3, 3), colors (3, 3), ambient (3,)"
            )
        if not (np.isfinite(d).all() and np.isfinite(c).all() and np.isfinite(a).all()):
            raise InvalidArgumentError("lighting values must be finite")
        if c.min() < 0 or a.min() < 0:
            raise InvalidArgumentError("light colors must be nonnegative")
        object.__setattr__(self, "directions", _unit_rows(d))
        object.__setattr__(self, "colors", c)
        object.__setattr__(self, "ambient", a)


def default_lighting() -> LightingModel:
    """R, G, B lights 120 degrees apart in azimuth at 35 degrees elevation."""
    el = np.deg2rad(35.0)
    az = np.deg2rad([0.0, 120.0, 240.0])
    dirs = np.stack(
        [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.full(3, np.sin(el))],
        axis=1,
    )
    colors = np.array(
        [[0.85, 0.10, 0.10], [0.10, 0.85, 0.10], [0.10, 0.10, 0.85]]
    )
    return LightingModel(dirs, colors, np.array([0.30, 0.30, 0.34]))


def _poly_exponents(degree: int) -> Tuple[Tuple[int, int], ...]:
    # Basis order for degree 2: 1, x, y, x^2, xy, y^2.
    out = []
    for total in range(degree + 1):
        for ix in range(total, -1, -1):
            out.append((ix, total - ix))
    return tuple(out)


def _poly_basis(nx: np.ndarray, ny: np.ndarray, degree: int) -> np.ndarray:
    exps = _poly_exponents(degree)
    cols = [np.power(nx, ix) * np.power(ny, iy) for ix, iy in exps]
    return np.stack(cols, axis=-1)


@dataclass
class PolyTable:
    """Per-channel polynomial over the tangential normal components.

    coeffs has shape (3, n_terms) over the monomial basis of total degree
    <= degree; background is the zero-contact frame the table reproduces.
    """

    coeffs: np.ndarray
    background: np.ndarray
    degree: int = 2
    fit_rmse: np.ndarray = dataclasses.field(
        default_factory=lambda: np.zeros(3)
    )

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        bg = np.asarray(self.background, dtype=np.float64)
        n_terms = len(_poly_exponents(int(self.degree)))
        if c.shape != (3, n_terms):
            raise InvalidArgumentError(
                f"coeffs must be (3, {n_terms}) for degree {self.degree}"
            )
        if bg.ndim != 3 or bg.shape[2] != 3:
            raise InvalidArgumentError("background must be (H, W, 3)")
        if not (np.isfinite(c).all() and np.isfinite(bg).all()):
            raise InvalidArgumentError("table values must be finite")
        mean = bg.reshape(-1, 3).mean(axis=0)
        if np.abs(c[:, 0] - mean).max() > 1e-6:
            raise InvalidArgumentError(
                "constant term must match the background mean per channel"
            )
        self.coeffs = c
        self.background = bg

    def eval(self, nx: np.ndarray, ny: np.ndarray) -> np.ndarray:
        """Evaluate the per-channel polynomial; returns (..., 3)."""
        basis = _poly_basis(np.asarray(nx), np.asarray(ny), self.degree)
        return basis @ self.coeffs.T


def normals_from(
    source: Union[HeightMap, IndentationMap, np.ndarray],
    pixel_pitch: Optional[float] = None,
) -> np.ndarray:
    """Unit surface normals from central-difference gradients, (H, W, 3).

    The input is read as an elevation field (larger = closer to the
    camera); a HeightMap stores depth and is negated internally.
    """
    if isinstance(source, HeightMap):
        elev = -source.values
        pitch = source.pixel_pitch
    elif isinstance(source, IndentationMap):
        elev = source.values
        pitch = source.pixel_pitch
    else:
        elev = np.asarray(source, dtype=np.float64)
        if pixel_pitch is None:
            raise InvalidArgumentError("pixel_pitch required for raw arrays")
        pitch = pixel_pitch
    if elev.ndim != 2:
        raise InvalidArgumentError("elevation field must be 2-D")
    dy, dx = np.gradient(elev, pitch)
    n = np.stack([-dx, -dy, np.ones_like(elev)], axis=-1)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    return n


def _phong(normals: np.ndarray, lighting: LightingModel) -> np.ndarray:
    """Phong-shade a normal field; returns intensities (..., 3) in [0, 1]."""
    n = np.asarray(normals, dtype=np.float64)
    out = np.broadcast_to(lighting.ambient, n.shape[:-1] + (3,)).copy()
    for ldir, lcol in zip(lighting.directions, lighting.colors):
        ndotl = np.clip(n @ ldir, 0.0, None)
        # Mirror reflection of the light about the normal, viewed along +z.
        refl_z = 2.0 * ndotl * n[..., 2] - ldir[2]
        spec = np.clip(refl_z, 0.0, None) ** _SHININESS
        out += (_DIFFUSE * ndotl + _SPECULAR * spec)[..., None] * lcol
    return np.clip(out, 0.0, 1.0)


def _sphere_press_indentation(
    shape: Tuple[int, int], pitch: float, radius: float, depth: float
) -> np.ndarray:
    h, w = shape
    ys = (np.arange(h) + 0.5 - 0.5 * h) * pitch
    xs = (np.arange(w) + 0.5 - 0.5 * w) * pitch
    gx, gy = np.meshgrid(xs, ys)
    rho2 = gx * gx + gy * gy
    cap = np.sqrt(np.clip(radius * radius - rho2, 0.0, None))
    return np.clip(depth - radius + cap, 0.0, None)


def calibrate(
    lighting: LightingModel,
    cfg: SensorConfig,
    degree: int = 2,
    press_depths: Sequence[float] = (4e-4, 8e-4, 1.2e-3),
    press_radius: float = 4e-3,
) -> PolyTable:
    """Fit the per-channel polynomial to Phong-shaded sphere presses.

    Training normals come from analytic sphere indentation fields rendered
    at the sensor pixel pitch, so their tilt range matches what presses of
    comparable depth produce at runtime.
    """
    if degree < 1:
        raise InvalidArgumentError("degree must be >= 1")
    pitch = cfg.pixel_pitch
    grid = (160, 160)
    rows = []
    targets = []
    for d in press_depths:
        ind = _sphere_press_indentation(grid, pitch, press_radius, d)
        n = normals_from(ind, pitch)
        rows.append(_poly_basis(n[..., 0], n[..., 1], degree).reshape(-1, len(_poly_exponents(degree))))
        targets.append(_phong(n, lighting).reshape(-1, 3))
    a = np.concatenate(rows)
    t = np.concatenate(targets)
    if np.linalg.matrix_rank(a) < a.shape[1]:
        raise CalibrationError(
            "calibration normals do not span the polynomial basis; "
            "press depths too shallow"
        )
    coeffs, *_ = np.linalg.lstsq(a, t, rcond=None)
    coeffs = coeffs.T  # (3, n_terms)
    resid = a @ coeffs.T - t
    rmse = np.sqrt((resid * resid).mean(axis=0))
    h, w = int(cfg.image_size[0]), int(cfg.image_size[1])
    background = np.broadcast_to(coeffs[:, 0], (h, w, 3)).copy()
    table = PolyTable(coeffs, background, degree, rmse)
    log.info("calibrated optical table, rmse per channel %s", rmse)
    return table


def shade(normals: np.ndarray, table: PolyTable) -> np.ndarray:
    """Map unit normals to an RGB image via the fitted table.

    Output is background + (P(n) - P(0, 0)) clipped to [0, 1], so a flat
    frame reproduces the background exactly.
    """
    n = np.asarray(normals, dtype=np.float64)
    if n.ndim != 3 or n.shape[2] != 3:
        raise InvalidArgumentError("normals must be (H, W, 3)")
    if n.shape[:2] != table.background.shape[:2]:
        raise InvalidArgumentError("normals and background shapes differ")
    delta = table.eval(n[..., 0], n[..., 1]) - table.coeffs[:, 0]
    raw = table.background + delta
    out = np.clip(raw, 0.0, 1.0)
    saturated = float((raw != out).mean())
    if saturated > _SATURATION_WARN_FRACTION:
        log.warning("shade: %.1f%% of pixels saturated", 100.0 * saturated)
    return out


def _shift_edge(a: np.ndarray, di: int, dj: int) -> np.ndarray:
    """Sample a at (i + di, j + dj) with edge replication."""
    h, w = a.shape
    ii = np.clip(np.arange(h) + di, 0, h - 1)
    jj = np.clip(np.arange(w) + dj, 0, w - 1)
    return a[np.ix_(ii, jj)]


def add_shadows(
    rgb: np.ndarray,
    hm: HeightMap,
    lighting: LightingModel,
    factor: float = 0.6,
    max_steps: int = 80,
    softness: float = 5e-5,
) -> np.ndarray:
    """Darken pixels whose view of a light is blocked by taller geometry.

    For each light the march walks the image plane toward the light one
    pixel at a time; a pixel is shadowed when some sample along the walk
    rises above the light ray. The shadow is multiplicative with a soft
    edge of width `softness` meters.
    """
    if not 0.0 <= factor <= 1.0:
        raise InvalidArgumentError("shadow factor must be in [0, 1]")
    img = np.asarray(rgb, dtype=np.float64)
    if img.shape[:2] != hm.values.shape:
        raise InvalidArgumentError("image and height map shapes differ")
    if factor == 1.0:
        return img.copy()
    elev = -hm.values  # bump height; constant offsets cancel below
    pitch = hm.pixel_pitch
    out = img.copy()
    for ldir in lighting.directions:
        lateral = float(np.hypot(ldir[0], ldir[1]))
        if lateral < 1e-9:
            continue  # overhead light casts no lateral shadow
        dx, dy = ldir[0] / lateral, ldir[1] / lateral
        rise_per_px = pitch * ldir[2] / lateral
        occ = np.full(elev.shape, -np.inf)
        for s in range(1, max_steps + 1):
            di = int(round(s * dy))
            dj = int(round(s * dx))
            sample = _shift_edge(elev, di, dj)
            np.maximum(occ, sample - elev - s * rise_per_px, out=occ)
        weight = np.clip(occ / softness, 0.0, 1.0)
        out *= 1.0 - (1.0 - factor) * weight[..., None]
    return out


def save_polytable(table: PolyTable, json_path: str, png_path: str) -> None:
    """Persist coefficients as JSON and the background as 16-bit PNG."""
    doc = {
        "degree": int(table.degree),
        "coeffs": table.coeffs.tolist(),
        "fit_rmse": np.asarray(table.fit_rmse, dtype=np.float64).tolist(),
        "background_shape": list(table.background.shape),
    }
    with open(json_path, "w") as f:
        json.dump(doc, f, indent=1)
    img = np.round(np.clip(table.background, 0.0, 1.0) * 65535.0).astype(np.uint16)
    if not cv2.imwrite(png_path, img[:, :, ::-1]):  # cv2 writes BGR
        raise MeshFormatError(png_path, 0, "failed to write PNG")


def load_polytable(json_path: str, png_path: str) -> PolyTable:
    """Load a table saved by save_polytable.

    The constant term is re-anchored to the quantized background so the
    flat-frame invariant holds exactly after the PNG round trip.
    """
    with open(json_path) as f:
        doc = json.load(f)
    img = cv2.imread(png_path, cv2.IMREAD_UNCHANGED)
    if img is None:
        raise MeshFormatError(png_path, 0, "failed to read PNG")
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint16:
        raise MeshFormatError(png_path, 0, "background must be 16-bit RGB")
    background = img[:, :, ::-1].astype(np.float64) / 65535.0
    coeffs = np.asarray(doc["coeffs"], dtype=np.float64)
    coeffs[:, 0] = background.reshape(-1, 3).mean(axis=0)
    return PolyTable(
        coeffs,
        background,
        int(doc["degree"]),
        np.asarray(doc["fit_rmse"], dtype=np.float64),
    )

"""Orthographic tactile height maps and indentation fields.

The sensor camera sits at the origin of its own frame looking along +z
through the gel. Depth is measured from the camera plane: the undisturbed
gel surface lies at ``gelpad_thickness`` and objects pressing into the gel
appear at smaller depths. Rendering is a z-min buffer over the pixel grid,
which makes the geometry oracles analytic.
"""

import dataclasses
import struct
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import cv2
import numpy as np
from scipy import ndimage

from .errors import InvalidArgumentError, MeshFormatError
from .geometry import Pose, TriMesh

DEFAULT_PYRAMID = (5, 11, 21, 31)

_RAW_MAGIC = b"TAC1"

# A surface to render: a mesh posed in world coordinates, or bare
# world-frame arrays (deformed soft bodies skip TriMesh validation).
Surface = Union[TriMesh, Tuple[TriMesh, Pose], Tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class SensorConfig:
    """Geometry of one tactile sensor.

    Attributes:
        image_size: (height, width) pixels.
        sensing_area: (width, height) of the gel window in meters.
        gelpad_thickness: gel depth from camera plane to rest surface, meters.
        marker_grid: (rows, cols) of printed markers.
        camera_pose_in_case: camera frame expressed in the sensor case frame.
    """

    image_size: Tuple[int, int] = (480, 640)
    sensing_area: Tuple[float, float] = (0.016, 0.012)
    gelpad_thickness: float = 0.004
    marker_grid: Tuple[int, int] = (10, 10)
    camera_pose_in_case: Pose = dataclasses.field(default_factory=Pose.identity)

    def __post_init__(self):
        h, w = self.image_size
        if int(h) <= 0 or int(w) <= 0:
            raise InvalidArgumentError("image_size must be positive")
        aw, ah = self.sensing_area
        if aw <= 0 or ah <= 0:
            raise InvalidArgumentError("sensing_area must be positive")
        if self.gelpad_thickness <= 0:
            raise InvalidArgumentError("gelpad_thickness must be positive")
        if int(self.marker_grid[0]) <= 0 or int(self.marker_grid[1]) <= 0:
            raise InvalidArgumentError("marker_grid must be positive")
        # Square pixels only: both axes must agree on meters per pixel.
        if abs(aw / w - ah / h) > 1e-12:
            raise InvalidArgumentError(
                "sensing_area and image_size imply unequal x/y pixel pitch"
            )

    @property
    def pixel_pitch(self) -> float:
        """Meters per pixel, identical along x and y."""
        return self.sensing_area[0] / self.image_size[1]


@dataclass
class HeightMap:
    """Per-pixel depth from the camera plane, meters."""

    values: np.ndarray
    pixel_pitch: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise InvalidArgumentError("height map values must be 2-D")
        if not np.isfinite(v).all():
            raise InvalidArgumentError("height map values must be finite")
        if self.pixel_pitch <= 0:
            raise InvalidArgumentError("pixel_pitch must be positive")
        self.values = v


@dataclass
class IndentationMap:
    """Per-pixel gel penetration depth, meters, nonnegative."""

    values: np.ndarray
    pixel_pitch: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise InvalidArgumentError("indentation values must be 2-D")
        if not np.isfinite(v).all():
            raise InvalidArgumentError("indentation values must be finite")
        if v.size and v.min() < 0:
            raise InvalidArgumentError("indentation values must be >= 0")
        if self.pixel_pitch <= 0:
            raise InvalidArgumentError("pixel_pitch must be positive")
        self.values = v


def _as_world_arrays(item: Surface) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(item, TriMesh):
        return item.vertices, item.triangles
    if isinstance(item, (tuple, list)) and len(item) == 2:
        first, second = item
        if isinstance(first, TriMesh):
            return second.apply(first.vertices), first.triangles
        verts = np.asarray(first, dtype=np.float64)
        tris = np.asarray(second, dtype=np.int64)
        if verts.ndim != 2 or verts.shape[1] != 3:
            raise InvalidArgumentError("surface vertices must be (n, 3)")
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise InvalidArgumentError("surface triangles must be (m, 3)")
        return verts, tris
    raise InvalidArgumentError(
        "surface must be TriMesh, (TriMesh, Pose), or (vertices, triangles)"
    )


def render_heightmap(
    surfaces: Sequence[Surface], sensor_pose: Pose, cfg: SensorConfig
) -> HeightMap:
    """Cast orthographic rays along +z of the camera frame.

    Each pixel takes the smallest depth among triangle hits no deeper than
    the rest surface; pixels with no hit stay at the rest surface depth.
    Row index increases with +y, column index with +x, pixel centers offset
    half a pitch from the sensing-area edge.
    """
    h, w = int(cfg.image_size[0]), int(cfg.image_size[1])
    pitch = cfg.pixel_pitch
    rest = cfg.gelpad_thickness
    depth = np.full((h, w), rest, dtype=np.float64)
    cam_inv = sensor_pose.inverse()
    for item in surfaces:
        verts_w, tris = _as_world_arrays(item)
        if tris.size == 0:
            continue
        verts = cam_inv.apply(verts_w)
        _raster_min_z(depth, verts, tris, pitch, h, w, rest)
    return HeightMap(depth, pitch)


def _raster_min_z(depth, verts, tris, pitch, h, w, z_max):
    corners = verts[tris]  # (m, 3, 3)
    # Skip triangles fully beyond the gel surface or fully off-window.
    zmin = corners[:, :, 2].min(axis=1)
    keep = zmin <= z_max
    half_w = 0.5 * w * pitch
    half_h = 0.5 * h * pitch
    keep &= corners[:, :, 0].max(axis=1) >= -half_w
    keep &= corners[:, :, 0].min(axis=1) <= half_w
    keep &= corners[:, :, 1].max(axis=1) >= -half_h
    keep &= corners[:, :, 1].min(axis=1) <= half_h
    corners = corners[keep]
    for tri in corners:
        (x0, y0, z0), (x1, y1, z1), (x2, y2, z2) = tri
        det = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2)
        if abs(det) < 1e-18:
            continue  # edge-on to the ray direction
        # Pixel-center grid: x = (j + 0.5 - w/2) * pitch, y likewise for rows.
        j0 = max(0, int(np.ceil(min(x0, x1, x2) / pitch + 0.5 * w - 0.5)))
        j1 = min(w - 1, int(np.floor(max(x0, x1, x2) / pitch + 0.5 * w - 0.5)))
        i0 = max(0, int(np.ceil(min(y0, y1, y2) / pitch + 0.5 * h - 0.5)))
        i1 = min(h - 1, int(np.floor(max(y0, y1, y2) / pitch + 0.5 * h - 0.5)))
        if j1 < j0 or i1 < i0:
            continue
        px = (np.arange(j0, j1 + 1) + 0.5 - 0.5 * w) * pitch
        py = (np.arange(i0, i1 + 1) + 0.5 - 0.5 * h) * pitch
        gx, gy = np.meshgrid(px, py)
        l0 = ((y1 - y2) * (gx - x2) + (x2 - x1) * (gy - y2)) / det
        l1 = ((y2 - y0) * (gx - x2) + (x0 - x2) * (gy - y2)) / det
        l2 = 1.0 - l0 - l1
        eps = 1e-12
        inside = (l0 >= -eps) & (l1 >= -eps) & (l2 >= -eps)
        if not inside.any():
            continue
        z = l0 * z0 + l1 * z1 + l2 * z2
        hit = inside & (z <= z_max)
        window = depth[i0 : i1 + 1, j0 : j1 + 1]
        np.minimum(window, np.where(hit, z, np.inf), out=window)


def indentation_from(hm: HeightMap, cfg: SensorConfig) -> IndentationMap:
    """Penetration depth per pixel, clamped to the gel thickness."""
    rest = cfg.gelpad_thickness
    vals = np.clip(rest - hm.values, 0.0, rest)
    return IndentationMap(vals, hm.pixel_pitch)


def smooth_pyramid(
    ind: IndentationMap, kernel_sizes: Sequence[int] = DEFAULT_PYRAMID
) -> IndentationMap:
    """Average of Gaussian blurs, one per kernel size, replicate-padded."""
    sizes = [int(k) for k in kernel_sizes]
    if not sizes:
        raise InvalidArgumentError("kernel_sizes must be nonempty")
    for k in sizes:
        if k < 1 or k % 2 == 0:
            raise InvalidArgumentError("kernel sizes must be odd and >= 1")
    if sizes != sorted(sizes):
        raise InvalidArgumentError("kernel sizes must be ascending")
    acc = np.zeros_like(ind.values)
    for k in sizes:
        if k == 1:
            acc += ind.values
            continue
        sigma = k / 6.0
        radius = (k - 1) // 2
        acc += ndimage.gaussian_filter(
            ind.values, sigma=sigma, mode="nearest", truncate=radius / sigma
        )
    return IndentationMap(acc / len(sizes), ind.pixel_pitch)


def save_map_raw(path: str, values: np.ndarray, pixel_pitch: float) -> None:
    """Write a 2-D grid as little-endian float32 with a 16-byte header."""
    v = np.ascontiguousarray(values, dtype="<f4")
    if v.ndim != 2:
        raise InvalidArgumentError("raw map must be 2-D")
    header = _RAW_MAGIC + struct.pack("<IIf", v.shape[0], v.shape[1], pixel_pitch)
    with open(path, "wb") as f:
        f.write(header)
        f.write(v.tobytes())


def load_map_raw(path: str) -> Tuple[np.ndarray, float]:
    """Read a grid written by save_map_raw; returns (values, pixel_pitch)."""
    with open(path, "rb") as f:
        header = f.read(16)
        if len(header) != 16 or header[:4] != _RAW_MAGIC:
            raise MeshFormatError(path, 0, "not a raw tactile map")
        h, w, pitch = struct.unpack("<IIf", header[4:])
        body = f.read(h * w * 4)
    if len(body) != h * w * 4:
        raise MeshFormatError(path, 0, "truncated raw tactile map")
    values = np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float64)
    return values, float(pitch)


def save_heightmap_raw(path: str, hm: HeightMap) -> None:
    save_map_raw(path, hm.values, hm.pixel_pitch)


def load_heightmap_raw(path: str) -> HeightMap:
    values, pitch = load_map_raw(path)
    return HeightMap(values, pitch)


def save_map_png(path: str, values: np.ndarray, scale: Optional[float] = None) -> float:
    """Write a 16-bit grayscale PNG for inspection; returns meters-per-65535.

    Values are mapped as round(clip(v / scale, 0, 1) * 65535). When scale is
    omitted it defaults to the map maximum (or 1.0 for an all-zero map).
    """
    v = np.asarray(values, dtype=np.float64)
    if scale is None:
        peak = float(v.max()) if v.size else 0.0
        scale = peak if peak > 0 else 1.0
    img = np.round(np.clip(v / scale, 0.0, 1.0) * 65535.0).astype(np.uint16)
    if not cv2.imwrite(path, img):
        raise MeshFormatError(path, 0, "failed to write PNG")
    return scale


def load_map_png(path: str, scale: float) -> np.ndarray:
    """Read a 16-bit PNG written by save_map_png back to meters."""
    img = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if img is None:
        raise MeshFormatError(path, 0, "failed to read PNG")
    return img.astype(np.float64) / 65535.0 * scale

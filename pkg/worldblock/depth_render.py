"""Orthographic depth rendering of blockouts and depth-proportional noise.

The camera looks down at a fixed 45 degree elevation from a caller-chosen
azimuth. Depth is measured along the view direction from a camera plane
placed one meter in front of the scene's bounding sphere. Triangles are
rasterized in index order with a strict depth test, so on equal depth the
lower triangle index wins. Coverage follows the top-left fill rule.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np
from PIL import Image
from shapely.geometry import MultiPoint

from _utils import atomic_write_json, print_debug
from .errors import BadParamsError, EmptyMeshError, WorldblockIOError
from .mesh_ops import TriMesh

ELEVATION_DEG = 45.0
FRAME_MARGIN = 0.05
NEAR_OFFSET = 1.0
CANONICAL_AZIMUTHS = 8
MIN_VISIBLE_FRACTION = 0.25
PNG_MAX = 65535
EPS_FLOOR = -0.5


@dataclass(frozen=True)
class OrthoCamera:
    azimuth: float
    elevation: float
    center: tuple[float, float, float]
    eye_distance: float
    frame_center: tuple[float, float]
    half_size: float
    resolution: int

    @property
    def forward(self) -> np.ndarray:
        ce = math.cos(self.elevation)
        return -np.array([ce * math.cos(self.azimuth), ce * math.sin(self.azimuth), math.sin(self.elevation)])

    @property
    def right(self) -> np.ndarray:
        r = np.cross(self.forward, [0.0, 0.0, 1.0])
        return r / np.linalg.norm(r)

    @property
    def up(self) -> np.ndarray:
        return np.cross(self.right, self.forward)

    @property
    def eye(self) -> np.ndarray:
        return np.asarray(self.center) - self.forward * self.eye_distance

    @property
    def pixel_size(self) -> float:
        return 2.0 * self.half_size / self.resolution

    def project(self, points) -> np.ndarray:
        """Continuous pixel coordinates (x right, y down) and depth."""
        rel = np.asarray(points, dtype=np.float64) - np.asarray(self.center)
        u = rel @ self.right
        v = rel @ self.up
        px = self.pixel_size
        x = (u - (self.frame_center[0] - self.half_size)) / px
        y = ((self.frame_center[1] + self.half_size) - v) / px
        depth = (np.asarray(points, dtype=np.float64) - self.eye) @ self.forward
        return np.stack([x, y, depth], axis=-1)

    def pixel_ray(self, row: int, col: int) -> tuple[np.ndarray, np.ndarray]:
        """Origin on the camera plane and direction of the ray through a pixel center."""
        px = self.pixel_size
        u = self.frame_center[0] - self.half_size + (col + 0.5) * px
        v = self.frame_center[1] + self.half_size - (row + 0.5) * px
        return self.eye + u * self.right + v * self.up, self.forward

    def to_dict(self) -> dict:
        return {
            "projection": "orthographic",
            "azimuth": self.azimuth,
            "elevation": self.elevation,
            "center": list(self.center),
            "eye_distance": self.eye_distance,
            "frame_center": list(self.frame_center),
            "half_size": self.half_size,
            "resolution": self.resolution,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "OrthoCamera":
        return cls(
            azimuth=float(data["azimuth"]),
            elevation=float(data["elevation"]),
            center=tuple(data["center"]),
            eye_distance=float(data["eye_distance"]),
            frame_center=tuple(data["frame_center"]),
            half_size=float(data["half_size"]),
            resolution=int(data["resolution"]),
        )


@dataclass(frozen=True)
class DepthMap:
    depth: np.ndarray
    terrain_mask: np.ndarray
    face_index: np.ndarray | None = None
    camera: OrthoCamera | None = None

    def __post_init__(self):
        if self.depth.shape != self.terrain_mask.shape:
            raise ValueError("depth and terrain_mask must have identical dimensions")

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def finite(self) -> np.ndarray:
        return np.isfinite(self.depth)


def frame_camera(mesh: TriMesh, azimuth: float, resolution: int, elevation: float = math.radians(ELEVATION_DEG)) -> OrthoCamera:
    """Camera whose square frame encloses ``mesh`` with a 5% margin."""
    lo, hi = mesh.bounds
    center = tuple(float(v) for v in (lo + hi) / 2.0)
    radius = 0.5 * float(np.linalg.norm(hi - lo))
    probe = OrthoCamera(azimuth, elevation, center, radius + NEAR_OFFSET, (0.0, 0.0), 1.0, resolution)
    rel = mesh.vertices - np.asarray(center)
    u, v = rel @ probe.right, rel @ probe.up
    span = max(float(np.ptp(u)), float(np.ptp(v)))
    half = 0.5 * span * (1.0 + 2.0 * FRAME_MARGIN) if span > 0 else 1.0
    return replace(
        probe,
        frame_center=(float((u.min() + u.max()) / 2.0), float((v.min() + v.max()) / 2.0)),
        half_size=half,
    )


def _is_top_left(dx: float, dy: float) -> bool:
    return (dy == 0.0 and dx > 0.0) or dy < 0.0


def rasterize(mesh: TriMesh, camera: OrthoCamera) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-hit depth and winning face index per pixel (-1 for background)."""
    res = camera.resolution
    depth = np.full((res, res), np.inf)
    face = np.full((res, res), -1, dtype=np.int64)
    proj = camera.project(mesh.vertices)

    for t, tri in enumerate(mesh.triangles):
        p = proj[tri]
        a, b, c = p[0], p[1], p[2]
        area2 = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if area2 == 0.0:
            continue
        if area2 < 0.0:
            b, c = c, b
            area2 = -area2
        x0 = max(int(math.floor(min(a[0], b[0], c[0]) - 0.5)), 0)
        x1 = min(int(math.ceil(max(a[0], b[0], c[0]) - 0.5)), res - 1)
        y0 = max(int(math.floor(min(a[1], b[1], c[1]) - 0.5)), 0)
        y1 = min(int(math.ceil(max(a[1], b[1], c[1]) - 0.5)), res - 1)
        if x0 > x1 or y0 > y1:
            continue
        xs, ys = np.meshgrid(np.arange(x0, x1 + 1) + 0.5, np.arange(y0, y1 + 1) + 0.5)

        inside = np.ones(xs.shape, dtype=bool)
        weights = []
        for s, e in ((b, c), (c, a), (a, b)):
            dx, dy = e[0] - s[0], e[1] - s[1]
            w = dx * (ys - s[1]) - dy * (xs - s[0])
            inside &= (w > 0) | ((w == 0) & _is_top_left(dx, dy))
            weights.append(w)
        if not inside.any():
            continue
        z = (weights[0] * a[2] + weights[1] * b[2] + weights[2] * c[2]) / area2
        window = (slice(y0, y1 + 1), slice(x0, x1 + 1))
        closer = inside & (z < depth[window])
        depth[window] = np.where(closer, z, depth[window])
        face[window] = np.where(closer, t, face[window])
    return depth, face


def render_mesh_depth(mesh: TriMesh, azimuth: float, resolution: int, ground_part: str = "ground") -> DepthMap:
    """Depth map of a labeled mesh; faces of ``ground_part`` form the terrain mask."""
    if mesh.is_empty:
        raise EmptyMeshError("cannot render an empty mesh")
    if resolution < 1:
        raise BadParamsError(f"resolution must be >= 1, got {resolution}")
    camera = frame_camera(mesh, azimuth, resolution)
    depth, face = rasterize(mesh, camera)
    if mesh.face_parts is not None and ground_part in mesh.part_names:
        is_ground = np.append(mesh.face_parts == mesh.part_names.index(ground_part), False)
        terrain = is_ground[face]
    else:
        terrain = np.zeros(face.shape, dtype=bool)
    print_debug(
        f"-> Rendered depth {resolution}x{resolution} at azimuth {math.degrees(azimuth):.1f} deg "
        f"({int(np.isfinite(depth).sum())} covered pixels)"
    )
    return DepthMap(depth, terrain, face, camera)


def render_depth(b, azimuth: float, resolution: int) -> DepthMap:
    """Render a :class:`~worldblock.blockout.Blockout` (or labeled mesh)."""
    mesh = b if isinstance(b, TriMesh) else b.to_trimesh()
    return render_mesh_depth(mesh, azimuth, resolution)


def perturb_depth(dm: DepthMap, sigma_rel: float, seed) -> DepthMap:
    """Multiply non-terrain depths by ``1 + eps``, ``eps ~ N(0, sigma_rel)``.

    ``eps`` is floored at ``EPS_FLOOR`` so depths stay positive. Terrain and
    background pixels are left untouched.
    """
    if sigma_rel < 0:
        raise BadParamsError(f"sigma_rel must be >= 0, got {sigma_rel}")
    mask = dm.finite & ~dm.terrain_mask
    if sigma_rel == 0 or not mask.any():
        return dm
    rng = np.random.default_rng(seed)
    eps = rng.normal(0.0, sigma_rel, size=int(mask.sum()))
    eps = np.maximum(eps, EPS_FLOOR)
    depth = np.array(dm.depth, copy=True)
    depth[mask] = depth[mask] * (1.0 + eps)
    return replace(dm, depth=depth)


# --------------------------------------------------------------------------
# PNG export
# --------------------------------------------------------------------------


def _run_lengths(mask: np.ndarray) -> list[int]:
    """Alternating run lengths of the flattened mask, starting with False."""
    flat = mask.reshape(-1).astype(np.int8)
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.r_[0, change, flat.size]
    runs = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        runs = [0] + runs
    return runs


def _from_run_lengths(runs, shape) -> np.ndarray:
    values = np.arange(len(runs)) % 2 == 1
    return np.repeat(values, runs).reshape(shape)


def write_depth_png(dm: DepthMap, path: str | os.PathLike, *, sigma_rel: float | None = None, seed=None) -> dict:
    """16-bit PNG plus ``.json`` sidecar with the depth mapping and camera.

    Finite depths map linearly onto ``[1, 65535]`` over their min/max;
    background pixels are 0.
    """
    finite = dm.finite
    if finite.any():
        d_min = float(dm.depth[finite].min())
        d_max = float(dm.depth[finite].max())
    else:
        d_min = d_max = 0.0
    span = d_max - d_min
    pixels = np.zeros(dm.depth.shape, dtype=np.uint16)
    if span > 0:
        pixels[finite] = 1 + np.round((dm.depth[finite] - d_min) / span * (PNG_MAX - 1)).astype(np.uint16)
    else:
        pixels[finite] = 1
    sidecar = {
        "depth_min": d_min,
        "depth_max": d_max,
        "step": span / (PNG_MAX - 1) if span > 0 else 0.0,
        "background_value": 0,
        "value_range": [1, PNG_MAX],
        "width": dm.width,
        "height": dm.height,
        "camera": dm.camera.to_dict() if dm.camera is not None else None,
        "sigma_rel": sigma_rel,
        "eps_floor": EPS_FLOOR,
        "seed": seed,
        "terrain_mask_runs": _run_lengths(dm.terrain_mask),
    }
    path = os.fspath(path)
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        Image.fromarray(pixels).save(path, format="PNG")
        atomic_write_json(os.path.splitext(path)[0] + ".json", sidecar)
    except OSError as e:
        raise WorldblockIOError(f"could not write depth PNG '{path}': {e}") from e
    return sidecar


def read_depth_png(path: str | os.PathLike) -> DepthMap:
    """Restore a depth map written by :func:`write_depth_png`."""
    path = os.fspath(path)
    try:
        with Image.open(path) as img:
            pixels = np.asarray(img).astype(np.int64)
        with open(os.path.splitext(path)[0] + ".json", "r", encoding="utf-8") as f:
            sidecar = json.load(f)
    except OSError as e:
        raise WorldblockIOError(f"could not read depth PNG '{path}': {e}") from e
    depth = np.full(pixels.shape, np.inf)
    hit = pixels > 0
    depth[hit] = sidecar["depth_min"] + (pixels[hit] - 1) * sidecar["step"]
    terrain = _from_run_lengths(sidecar.get("terrain_mask_runs", [pixels.size]), pixels.shape)
    camera = OrthoCamera.from_dict(sidecar["camera"]) if sidecar.get("camera") else None
    return DepthMap(depth, terrain, None, camera)


# --------------------------------------------------------------------------
# Azimuth helper
# --------------------------------------------------------------------------


def occluded_parts(mesh: TriMesh, dm: DepthMap, skip: str = "ground") -> list[str]:
    """Parts with less than 25% of their silhouette hull visible."""
    occluded = []
    proj = dm.camera.project(mesh.vertices)
    for k, name in enumerate(mesh.part_names):
        if name == skip:
            continue
        faces = np.flatnonzero(mesh.face_parts == k)
        if not len(faces):
            continue
        verts = np.unique(mesh.triangles[faces])
        hull = MultiPoint([tuple(p) for p in proj[verts, :2]]).convex_hull
        visible = int(np.isin(dm.face_index, faces).sum())
        if visible < MIN_VISIBLE_FRACTION * hull.area:
            occluded.append(name)
    return occluded


def best_azimuth(b, resolution: int = 128) -> float:
    """The canonical azimuth (multiple of 45 degrees) hiding the fewest boxes."""
    mesh = b if isinstance(b, TriMesh) else b.to_trimesh()
    best = None
    for k in range(CANONICAL_AZIMUTHS):
        azimuth = 2.0 * math.pi * k / CANONICAL_AZIMUTHS
        dm = render_mesh_depth(mesh, azimuth, resolution)
        count = len(occluded_parts(mesh, dm)) if mesh.face_parts is not None else 0
        print_debug(f"-> Azimuth {math.degrees(azimuth):.0f} deg: {count} occluded part(s)")
        if best is None or count < best[0]:
            best = (count, azimuth)
    return best[1]

"""Heightfield terrain: synthesis, bilinear sampling and pad smoothing.

Grid convention: ``heights[i, j]`` is the node at world position
``origin + (j * cell_size, i * cell_size)``; rows run along +y, columns
along +x.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage
from shapely.geometry import Polygon

from _utils import atomic_write_json, print_debug
from .errors import OutOfBoundsError, WorldblockIOError
from .scene_spec import SceneSpec

PERLIN_OCTAVES = 4
PERLIN_LACUNARITY = 2.0
PERLIN_BASE_CYCLES = 1.5
PLATEAU_LEVELS = 3
PLATEAU_RAMP_DEG = 25.0
_BOUNDS_TOL = 1e-9


@dataclass(frozen=True)
class HeightField:
    heights: np.ndarray
    cell_size: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        h = np.asarray(self.heights, dtype=np.float64)
        if h.ndim != 2 or h.shape[0] != h.shape[1] or h.shape[0] < 2:
            raise ValueError(f"heights must be an N x N grid with N >= 2, got {h.shape}")
        if not np.all(np.isfinite(h)):
            raise ValueError("heights must be finite")
        h.setflags(write=False)
        object.__setattr__(self, "heights", h)

    @property
    def resolution(self) -> int:
        return self.heights.shape[0]

    @property
    def extent(self) -> float:
        return (self.resolution - 1) * self.cell_size

    def node_coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """World x and y of every node, each shaped like ``heights``."""
        axis = np.arange(self.resolution) * self.cell_size
        xs, ys = np.meshgrid(axis + self.origin[0], axis + self.origin[1])
        return xs, ys

    def with_heights(self, heights: np.ndarray) -> "HeightField":
        return HeightField(heights, self.cell_size, self.origin)


@dataclass(frozen=True)
class Rect:
    """A yawed rectangle in the ground plane (center, full side lengths)."""

    cx: float
    cy: float
    sx: float
    sy: float
    yaw: float = 0.0

    @property
    def area(self) -> float:
        return self.sx * self.sy

    def corners(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hx, hy = self.sx / 2.0, self.sy / 2.0
        local = np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.cx, self.cy])

    def polygon(self) -> Polygon:
        return Polygon(self.corners())

    def distance(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Euclidean distance from points to the rectangle (0 inside)."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        dx, dy = np.asarray(xs) - self.cx, np.asarray(ys) - self.cy
        u = np.abs(c * dx + s * dy) - self.sx / 2.0
        v = np.abs(-s * dx + c * dy) - self.sy / 2.0
        return np.hypot(np.maximum(u, 0.0), np.maximum(v, 0.0))

    def to_list(self) -> list[float]:
        return [self.cx, self.cy, self.sx, self.sy, self.yaw]


# --------------------------------------------------------------------------
# Gradient noise
# --------------------------------------------------------------------------

_GRADIENTS = np.array(
    [[1, 1], [-1, 1], [1, -1], [-1, -1], [1, 0], [-1, 0], [0, 1], [0, -1]],
    dtype=np.float64,
)


def _fade(t):
    return t * t * t * (t * (t * 6 - 15) + 10)


def _lerp(t, a, b):
    return a + t * (b - a)


def permutation_table(rng: np.random.Generator) -> np.ndarray:
    perm = rng.permutation(256)
    return np.concatenate([perm, perm])


def perlin2(x: np.ndarray, y: np.ndarray, perm: np.ndarray) -> np.ndarray:
    """Classic 2D gradient noise evaluated element-wise."""
    x0 = np.floor(x)
    y0 = np.floor(y)
    xi = x0.astype(np.int64) & 255
    yi = y0.astype(np.int64) & 255
    xf = x - x0
    yf = y - y0
    u = _fade(xf)
    v = _fade(yf)

    def grad(h, dx, dy):
        g = _GRADIENTS[h & 7]
        return g[..., 0] * dx + g[..., 1] * dy

    aa = perm[perm[xi] + yi]
    ab = perm[perm[xi] + yi + 1]
    ba = perm[perm[xi + 1] + yi]
    bb = perm[perm[xi + 1] + yi + 1]

    x1 = _lerp(u, grad(aa, xf, yf), grad(ba, xf - 1, yf))
    x2 = _lerp(u, grad(ab, xf, yf - 1), grad(bb, xf - 1, yf - 1))
    return _lerp(v, x1, x2)


def fractal_noise(
    x: np.ndarray,
    y: np.ndarray,
    perm: np.ndarray,
    octaves: int = PERLIN_OCTAVES,
    persistence: float = 0.5,
    lacunarity: float = PERLIN_LACUNARITY,
) -> np.ndarray:
    total = np.zeros_like(x, dtype=np.float64)
    amplitude, frequency, norm = 1.0, 1.0, 0.0
    for _ in range(octaves):
        total += amplitude * perlin2(x * frequency, y * frequency, perm)
        norm += amplitude
        amplitude *= persistence
        frequency *= lacunarity
    return total / norm


def noise_grid(shape: tuple[int, int], cycles: float, rng: np.random.Generator, **kwargs) -> np.ndarray:
    """Fractal noise on a ``shape`` lattice spanning ``cycles`` noise periods."""
    perm = permutation_table(rng)
    offset = rng.uniform(0.0, 256.0, size=2)
    rows, cols = shape
    ys = np.linspace(0.0, cycles, rows) + offset[1]
    xs = np.linspace(0.0, cycles, cols) + offset[0]
    gx, gy = np.meshgrid(xs, ys)
    return fractal_noise(gx, gy, perm, **kwargs)


def _rescale(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    vmin, vmax = float(values.min()), float(values.max())
    if vmax - vmin <= 0.0:
        return np.full_like(values, lo)
    return lo + (values - vmin) * ((hi - lo) / (vmax - vmin))


def _plateau(unit: np.ndarray, lo: float, hi: float, cell_size: float) -> np.ndarray:
    step = (hi - lo) / (PLATEAU_LEVELS - 1)
    if step <= 0.0:
        return np.full_like(unit, lo)
    # Each terrace edge is a ramp whose slope stays below PLATEAU_RAMP_DEG.
    ramp = max(step / math.tan(math.radians(PLATEAU_RAMP_DEG)), cell_size)
    heights = np.full_like(unit, lo)
    for level in range(1, PLATEAU_LEVELS):
        mask = unit >= level / PLATEAU_LEVELS
        if not mask.any():
            continue
        if mask.all():
            heights += step
            continue
        inside = ndimage.distance_transform_edt(mask) * cell_size
        heights += step * np.clip(inside / ramp, 0.0, 1.0)
    return heights


def generate_heightfield(spec: SceneSpec, rng_seed: int) -> HeightField:
    """Build the base terrain for ``spec``.

    Args:
        spec: Validated scene spec.
        rng_seed: Seed for every stochastic choice.

    Returns:
        A HeightField covering ``[0, extent]^2`` with heights clamped to
        ``spec.terrain.elevation_range``.
    """
    terrain = spec.terrain
    n = terrain.resolution
    lo, hi = terrain.elevation_range
    cell = spec.extent / (n - 1)
    rng = np.random.default_rng(rng_seed)

    if terrain.kind == "flat":
        heights = np.full((n, n), lo, dtype=np.float64)
    elif terrain.kind == "steep":
        ramp = np.linspace(lo, hi, n)
        heights = np.tile(ramp, (n, 1))
    elif terrain.kind == "plateau":
        unit = _rescale(noise_grid((n, n), 1.0, rng, octaves=1), 0.0, 1.0)
        heights = _plateau(unit, lo, hi, cell)
    else:
        raw = noise_grid((n, n), PERLIN_BASE_CYCLES, rng, persistence=terrain.roughness)
        heights = _rescale(raw, lo, hi)

    heights = np.clip(heights, lo, hi)
    print_debug(
        f"-> Terrain '{terrain.kind}' {n}x{n}, cell {cell:.3f} m, "
        f"heights [{heights.min():.3f}, {heights.max():.3f}]"
    )
    return HeightField(heights, cell, (0.0, 0.0))


def _check_inside(hf: HeightField, xs: np.ndarray, ys: np.ndarray):
    x0, y0 = hf.origin
    ext = hf.extent
    bad = (
        (xs < x0 - _BOUNDS_TOL) | (xs > x0 + ext + _BOUNDS_TOL)
        | (ys < y0 - _BOUNDS_TOL) | (ys > y0 + ext + _BOUNDS_TOL)
    )
    if np.any(bad):
        k = int(np.argmax(bad))
        raise OutOfBoundsError(
            f"point ({float(np.ravel(xs)[k]):.6g}, {float(np.ravel(ys)[k]):.6g}) is outside "
            f"the heightfield [{x0}, {x0 + ext}] x [{y0}, {y0 + ext}]"
        )


def sample_heights(hf: HeightField, xs, ys) -> np.ndarray:
    """Vectorized :func:`sample_height`."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    _check_inside(hf, xs, ys)
    n = hf.resolution
    fx = np.clip((xs - hf.origin[0]) / hf.cell_size, 0.0, n - 1)
    fy = np.clip((ys - hf.origin[1]) / hf.cell_size, 0.0, n - 1)
    j0 = np.minimum(np.floor(fx).astype(np.int64), n - 2)
    i0 = np.minimum(np.floor(fy).astype(np.int64), n - 2)
    tx = fx - j0
    ty = fy - i0
    h = hf.heights
    return (
        (1 - tx) * (1 - ty) * h[i0, j0]
        + tx * (1 - ty) * h[i0, j0 + 1]
        + (1 - tx) * ty * h[i0 + 1, j0]
        + tx * ty * h[i0 + 1, j0 + 1]
    )


def sample_height(hf: HeightField, x: float, y: float) -> float:
    """Bilinear height at world ``(x, y)``; raises OutOfBoundsError outside."""
    return float(sample_heights(hf, np.array([x]), np.array([y]))[0])


def smooth_under_footprints(hf: HeightField, footprints: Sequence[Rect]) -> HeightField:
    """Flatten a pad under every footprint and blend it into the terrain.

    Inside each footprint dilated by one cell the heights become the
    pre-smoothing mean of the nodes within the footprint itself (the nearest
    node for footprints smaller than a cell). A cosine blend over the next two cells
    joins the pad to the surrounding terrain. Nodes farther away are not
    touched.
    """
    if not footprints:
        return hf
    cs = hf.cell_size
    margin = 2.0 * cs
    xs, ys = hf.node_coordinates()
    source = hf.heights
    out = np.array(source, copy=True)
    n = hf.resolution

    for fp in footprints:
        corners = fp.corners()
        _check_inside(hf, corners[:, 0], corners[:, 1])
        reach = cs + margin
        j_lo = max(int(math.floor((corners[:, 0].min() - reach - hf.origin[0]) / cs)), 0)
        j_hi = min(int(math.ceil((corners[:, 0].max() + reach - hf.origin[0]) / cs)), n - 1)
        i_lo = max(int(math.floor((corners[:, 1].min() - reach - hf.origin[1]) / cs)), 0)
        i_hi = min(int(math.ceil((corners[:, 1].max() + reach - hf.origin[1]) / cs)), n - 1)
        window = (slice(i_lo, i_hi + 1), slice(j_lo, j_hi + 1))

        dist = fp.distance(xs[window], ys[window])
        pad_mask = dist <= cs + 1e-12
        if not pad_mask.any():
            continue
        # mean over nodes inside the footprint, or its nearest node
        inside = dist <= 1e-12
        if inside.any():
            pad_values = source[window][inside]
        else:
            pad_values = source[window].reshape(-1)[[int(np.argmin(dist))]]
        pad = float(pad_values[0]) if np.ptp(pad_values) == 0.0 else float(pad_values.mean())

        region = out[window]
        region[pad_mask] = pad
        blend_mask = (~pad_mask) & (dist < cs + margin)
        t = (dist[blend_mask] - cs) / margin
        weight = 0.5 - 0.5 * np.cos(np.pi * t)
        region[blend_mask] = pad + (region[blend_mask] - pad) * weight
        out[window] = region

    return hf.with_heights(out)


def slope_deg(hf: HeightField) -> np.ndarray:
    """Per-node terrain slope in degrees from central differences."""
    gy, gx = np.gradient(hf.heights, hf.cell_size)
    return np.degrees(np.arctan(np.hypot(gx, gy)))


def heightfield_to_png(hf: HeightField, path: str | os.PathLike, elevation_range: Iterable[float]) -> dict:
    """Write a 16-bit grayscale PNG of the heights plus a ``.json`` sidecar.

    ``value = round((h - min) / (max - min) * 65535)``; image row 0 is the
    northern (max y) edge. A zero-width elevation range maps to all zeros.
    """
    lo, hi = (float(v) for v in elevation_range)
    span = hi - lo
    if span > 0:
        scaled = np.round((np.asarray(hf.heights) - lo) / span * 65535.0)
    else:
        scaled = np.zeros_like(hf.heights)
    pixels = np.flipud(np.clip(scaled, 0, 65535).astype(np.uint16))
    mapping = {
        "elevation_min": lo,
        "elevation_max": hi,
        "scale": span / 65535.0 if span > 0 else 0.0,
        "origin": list(hf.origin),
        "cell_size": hf.cell_size,
        "resolution": hf.resolution,
        "row_order": "north_up",
    }
    path = os.fspath(path)
    try:
        Image.fromarray(pixels).save(path, format="PNG")
        atomic_write_json(os.path.splitext(path)[0] + ".json", mapping)
    except OSError as e:
        raise WorldblockIOError(f"could not write heightfield PNG '{path}': {e}") from e
    return mapping

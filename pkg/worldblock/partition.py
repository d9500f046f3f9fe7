"""Region partitioning of the terrain extent and role assignment.

Tiling strategies (bsp, grid, kdtree, voronoi) cover the square extent with
disjoint polygons. Mask strategies (noise, drunkard) work on a cell grid and
expose a single 4-connected walkable mask next to their regions.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

import networkx as nx
import numpy as np
from scipy import ndimage
from shapely.geometry import Polygon, box
from shapely.geometry.polygon import orient
from shapely.ops import unary_union

from _utils import print_debug
from .errors import BadParamsError, WorldblockIOError
from .terrain import noise_grid

ROLES = ("cluster", "open", "transition")
CLUSTER_FRACTION = {"low": 0.3, "medium": 0.5, "high": 0.7}
TILING_STRATEGIES = ("bsp", "grid", "kdtree", "voronoi")
MASK_STRATEGIES = ("noise", "drunkard")

# strategy -> {param: (type, default)}
STRATEGY_PARAMS: dict[str, dict[str, tuple[type, Any]]] = {
    "bsp": {"split_min": (float, 0.35), "split_max": (float, 0.65)},
    "grid": {},
    "kdtree": {"samples": (int, 256)},
    "voronoi": {"attempts": (int, 30)},
    "noise": {"grid": (int, 64), "cycles": (float, 3.0), "threshold": (float, 0.5)},
    "drunkard": {"grid": (int, 64), "coverage": (float, 0.45)},
}

_ROLE_COLORS = {"cluster": "#d9534f", "open": "#5cb85c", "transition": "#f0ad4e", None: "#999999"}


def _bad(key, message):
    err = BadParamsError(message)
    err.key = key
    return err


def validate_params(strategy: str, params: Mapping[str, Any]) -> dict[str, Any]:
    """Type-check ``params`` for ``strategy`` without filling defaults."""
    if strategy not in STRATEGY_PARAMS:
        raise _bad(None, f"unknown partition strategy {strategy!r}")
    table = STRATEGY_PARAMS[strategy]
    out: dict[str, Any] = {}
    for key, value in params.items():
        if key not in table:
            raise _bad(key, f"unknown parameter {key!r} for strategy {strategy!r}")
        kind, _ = table[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise _bad(key, f"parameter {key!r} must be a number")
        if kind is int:
            if not float(value).is_integer():
                raise _bad(key, f"parameter {key!r} must be an integer")
            value = int(value)
        else:
            value = float(value)
        out[key] = value

    merged = resolved_params(strategy, out, check=False)
    if strategy == "bsp":
        lo, hi = merged["split_min"], merged["split_max"]
        if not (0.0 < lo <= hi < 1.0):
            raise _bad("split_min", f"split band must satisfy 0 < split_min <= split_max < 1, got ({lo}, {hi})")
    if strategy == "kdtree" and merged["samples"] < 2:
        raise _bad("samples", "samples must be >= 2")
    if strategy == "voronoi" and merged["attempts"] < 1:
        raise _bad("attempts", "attempts must be >= 1")
    if strategy in MASK_STRATEGIES and not (2 <= merged["grid"] <= 1024):
        raise _bad("grid", f"grid must be in [2, 1024], got {merged['grid']}")
    if strategy == "drunkard" and not (0.0 < merged["coverage"] < 1.0):
        raise _bad("coverage", f"coverage must be in (0, 1), got {merged['coverage']}")
    if strategy == "noise":
        if not (0.0 < merged["threshold"] < 1.0):
            raise _bad("threshold", f"threshold must be in (0, 1), got {merged['threshold']}")
        if merged["cycles"] <= 0.0:
            raise _bad("cycles", "cycles must be > 0")
    return out


def resolved_params(strategy: str, params: Mapping[str, Any], check: bool = True) -> dict[str, Any]:
    if check:
        params = validate_params(strategy, params)
    merged = {key: default for key, (_, default) in STRATEGY_PARAMS[strategy].items()}
    merged.update(params)
    return merged


@dataclass(frozen=True)
class Region:
    id: int
    polygon: Polygon
    role: str | None = None

    @property
    def area(self) -> float:
        return float(self.polygon.area)

    def anchor(self) -> tuple[float, float]:
        """Centroid, or an interior point when the centroid falls outside."""
        c = self.polygon.centroid
        if not self.polygon.contains(c):
            c = self.polygon.representative_point()
        return (float(c.x), float(c.y))


@dataclass(frozen=True)
class RegionSet:
    regions: tuple[Region, ...]
    extent: float
    strategy: str
    walkable_mask: np.ndarray | None = None
    walkable_region: int | None = None
    border_open: bool = False
    params: Mapping[str, Any] = field(default_factory=dict)

    @property
    def is_tiling(self) -> bool:
        return self.strategy in TILING_STRATEGIES

    def roles(self) -> list[str | None]:
        return [r.role for r in self.regions]

    def by_role(self, role: str) -> list[Region]:
        return [r for r in self.regions if r.role == role]

    def to_svg(self, path: str | os.PathLike, scale: float = 10.0) -> None:
        """Write region polygons as an SVG file colored by role."""
        size = self.extent * scale
        parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{size:.0f}" height="{size:.0f}" '
            f'viewBox="0 0 {self.extent} {self.extent}">',
            # Flip y so north is up.
            f'<g transform="translate(0,{self.extent}) scale(1,-1)">',
        ]
        for region in self.regions:
            parts.append(region.polygon.svg(scale_factor=1.0 / scale, fill_color=_ROLE_COLORS.get(region.role, "#999999")))
        parts.append("</g></svg>\n")
        try:
            with open(path, "w", encoding="utf-8") as f:
                f.write("\n".join(parts))
        except OSError as e:
            raise WorldblockIOError(f"could not write SVG '{path}': {e}") from e


def _ccw(poly: Polygon) -> Polygon:
    return orient(poly, sign=1.0)


def _boxes_to_regions(boxes) -> list[Polygon]:
    return [_ccw(box(x0, y0, x1, y1)) for x0, y0, x1, y1 in boxes]


def _bsp(extent, hint, params, rng):
    leaves = [(0.0, 0.0, extent, extent)]
    while len(leaves) < hint:
        areas = [(x1 - x0) * (y1 - y0) for x0, y0, x1, y1 in leaves]
        k = int(np.argmax(areas))
        x0, y0, x1, y1 = leaves[k]
        t = rng.uniform(params["split_min"], params["split_max"])
        if (x1 - x0) >= (y1 - y0):
            cut = x0 + t * (x1 - x0)
            a, b = (x0, y0, cut, y1), (cut, y0, x1, y1)
        else:
            cut = y0 + t * (y1 - y0)
            a, b = (x0, y0, x1, cut), (x0, cut, x1, y1)
        leaves[k] = a
        leaves.append(b)
    return _boxes_to_regions(leaves)


def _grid(extent, hint):
    k = math.ceil(math.sqrt(hint))
    step = extent / k
    edges = [i * step for i in range(k)] + [extent]
    boxes = [
        (edges[c], edges[r], edges[c + 1], edges[r + 1])
        for r in range(k)
        for c in range(k)
    ]
    return _boxes_to_regions(boxes)


def _kdtree(extent, hint, params, rng):
    points = rng.uniform(0.0, extent, size=(params["samples"], 2))
    leaves = [((0.0, 0.0, extent, extent), points, 0)]
    while len(leaves) < hint:
        # Breadth-first: shallowest leaf, then largest, then earliest.
        order = sorted(
            range(len(leaves)),
            key=lambda i: (leaves[i][2], -(leaves[i][0][2] - leaves[i][0][0]) * (leaves[i][0][3] - leaves[i][0][1]), i),
        )
        k = order[0]
        (x0, y0, x1, y1), pts, depth = leaves[k]
        axis = depth % 2
        lo, hi = (x0, x1) if axis == 0 else (y0, y1)
        cut = float(np.median(pts[:, axis])) if len(pts) >= 2 else (lo + hi) / 2.0
        if not (lo < cut < hi):
            cut = (lo + hi) / 2.0
        left = pts[pts[:, axis] < cut]
        right = pts[pts[:, axis] >= cut]
        if axis == 0:
            a, b = (x0, y0, cut, y1), (cut, y0, x1, y1)
        else:
            a, b = (x0, y0, x1, cut), (x0, cut, x1, y1)
        leaves[k] = (a, left, depth + 1)
        leaves.append((b, right, depth + 1))
    return _boxes_to_regions([leaf[0] for leaf in leaves])


def poisson_disc_sites(extent: float, count: int, attempts: int, rng: np.random.Generator) -> np.ndarray:
    """Dart-throwing Poisson-disc sampling of ``count`` sites.

    The exclusion radius starts near the ideal packing distance and shrinks
    by 20% whenever a round of ``attempts * count`` darts fails to finish.
    """
    radius = 0.7 * extent / math.sqrt(count)
    sites: list[np.ndarray] = []
    while len(sites) < count:
        for _ in range(attempts * count):
            candidate = rng.uniform(0.0, extent, size=2)
            if all(np.hypot(*(candidate - s)) >= radius for s in sites):
                sites.append(candidate)
                if len(sites) == count:
                    break
        radius *= 0.8
    return np.array(sites)


def _half_plane(site, other, reach):
    normal = other - site
    normal = normal / np.hypot(*normal)
    tangent = np.array([-normal[1], normal[0]])
    mid = (site + other) / 2.0
    return Polygon([
        mid + tangent * reach,
        mid - tangent * reach,
        mid - tangent * reach - normal * reach,
        mid + tangent * reach - normal * reach,
    ])


def _voronoi(extent, hint, params, rng):
    sites = poisson_disc_sites(extent, hint, params["attempts"], rng)
    domain = box(0.0, 0.0, extent, extent)
    reach = 4.0 * extent
    polygons = []
    for i, site in enumerate(sites):
        cell = domain
        for j, other in enumerate(sites):
            if i != j:
                cell = cell.intersection(_half_plane(site, other, reach))
        if cell.is_empty:
            continue
        if cell.geom_type != "Polygon":
            cell = max(getattr(cell, "geoms", [cell]), key=lambda g: g.area)
        polygons.append(_ccw(cell))
    return polygons


def _cells_polygon(mask: np.ndarray, cell: float) -> Polygon:
    rows, cols = np.nonzero(mask)
    geom = unary_union([box(c * cell, r * cell, (c + 1) * cell, (r + 1) * cell) for r, c in zip(rows, cols)])
    if geom.geom_type != "Polygon":
        geom = max(geom.geoms, key=lambda g: g.area)
    return _ccw(geom)


def _mask_regions(walkable: np.ndarray, extent: float):
    """Walkable region first, then one region per blocked 4-component."""
    cell = extent / walkable.shape[0]
    polygons = [_cells_polygon(walkable, cell)]
    labels, count = ndimage.label(~walkable)
    for label in range(1, count + 1):
        polygons.append(_cells_polygon(labels == label, cell))
    return polygons


def _largest_component(mask: np.ndarray) -> np.ndarray:
    labels, count = ndimage.label(mask)
    if count == 0:
        return mask
    sizes = ndimage.sum(mask, labels, index=range(1, count + 1))
    return labels == (int(np.argmax(sizes)) + 1)


def _noise_mask(params, rng):
    g = params["grid"]
    values = noise_grid((g, g), params["cycles"], rng, octaves=2)
    open_cells = values <= np.quantile(values, params["threshold"])
    return _largest_component(open_cells)


def drunkard_walk(grid: int, coverage: float, rng: np.random.Generator) -> np.ndarray:
    """Carve a connected corridor mask by a seeded 4-neighbor random walk.

    The walk starts at the grid center and stops once ``ceil(coverage * grid^2)``
    distinct cells are carved.
    """
    target = max(1, math.ceil(coverage * grid * grid))
    carved = np.zeros((grid, grid), dtype=bool)
    r = c = grid // 2
    carved[r, c] = True
    count = 1
    steps = np.array([(0, 1), (0, -1), (1, 0), (-1, 0)])
    while count < target:
        for d in rng.integers(0, 4, size=4096):
            nr, nc = r + steps[d, 0], c + steps[d, 1]
            if 0 <= nr < grid and 0 <= nc < grid:
                r, c = nr, nc
                if not carved[r, c]:
                    carved[r, c] = True
                    count += 1
                    if count >= target:
                        break
    return carved


def partition(
    extent: float,
    strategy: str,
    params: Mapping[str, Any],
    seed: int,
    region_count_hint: int = 8,
) -> RegionSet:
    """Divide ``[0, extent]^2`` into regions.

    Args:
        extent: Square side in meters.
        strategy: One of bsp, grid, kdtree, voronoi, noise, drunkard.
        params: Strategy parameters (see ``STRATEGY_PARAMS``).
        seed: RNG seed.
        region_count_hint: Target region count for tiling strategies.

    Returns:
        A RegionSet with unassigned roles (mask strategies pre-label their
        walkable region ``open``).

    Raises:
        BadParamsError: invalid parameters for the strategy.
    """
    if extent <= 0:
        raise BadParamsError(f"extent must be > 0, got {extent}")
    if region_count_hint < 1:
        raise BadParamsError(f"region_count_hint must be >= 1, got {region_count_hint}")
    merged = resolved_params(strategy, params)
    rng = np.random.default_rng(seed)

    walkable = None
    if strategy == "bsp":
        polygons = _bsp(extent, region_count_hint, merged, rng)
    elif strategy == "grid":
        polygons = _grid(extent, region_count_hint)
    elif strategy == "kdtree":
        polygons = _kdtree(extent, region_count_hint, merged, rng)
    elif strategy == "voronoi":
        polygons = _voronoi(extent, region_count_hint, merged, rng)
    elif strategy == "noise":
        walkable = _noise_mask(merged, rng)
        polygons = _mask_regions(walkable, extent)
    else:
        walkable = drunkard_walk(merged["grid"], merged["coverage"], rng)
        polygons = _mask_regions(walkable, extent)

    regions = tuple(
        Region(i, poly, "open" if walkable is not None and i == 0 else None)
        for i, poly in enumerate(polygons)
    )
    print_debug(f"-> Partition '{strategy}': {len(regions)} regions")
    if walkable is not None:
        walkable.setflags(write=False)
    return RegionSet(
        regions=regions,
        extent=float(extent),
        strategy=strategy,
        walkable_mask=walkable,
        walkable_region=0 if walkable is not None else None,
        params=merged,
    )


def region_adjacency(rs: RegionSet) -> nx.Graph:
    """Regions sharing a boundary of positive length."""
    graph = nx.Graph()
    graph.add_nodes_from(r.id for r in rs.regions)
    regions = rs.regions
    for a_idx, a in enumerate(regions):
        for b in regions[a_idx + 1:]:
            if not a.polygon.intersects(b.polygon):
                continue
            shared = a.polygon.boundary.intersection(b.polygon.boundary)
            if shared.length > 1e-9:
                graph.add_edge(a.id, b.id)
    return graph


def assign_roles(rs: RegionSet, spec, seed: int) -> RegionSet:
    """Label each region cluster, open or transition.

    The cluster share follows ``spec.density.tier`` (low 0.3, medium 0.5,
    high 0.7). At least one region stays open; a single-region set becomes a
    cluster whose border band counts as the open region.
    """
    regions = list(rs.regions)
    if len(regions) == 1:
        only = replace(regions[0], role="cluster")
        return replace(rs, regions=(only,), border_open=True)

    rng = np.random.default_rng(seed)
    fixed_open = {r.id for r in regions if rs.walkable_region is not None and r.id == rs.walkable_region}
    candidates = [r.id for r in regions if r.id not in fixed_open]
    fraction = CLUSTER_FRACTION[spec.density.tier]
    upper = len(candidates) - (0 if fixed_open else 1)
    n_cluster = min(max(int(round(fraction * len(regions))), 1), upper)

    shuffled = [candidates[i] for i in rng.permutation(len(candidates))]
    cluster = set(shuffled[:n_cluster])
    graph = region_adjacency(rs)
    roles: dict[int, str] = {rid: "open" for rid in fixed_open}
    for rid in shuffled[n_cluster:]:
        touches_cluster = any(nb in cluster for nb in graph.neighbors(rid))
        roles[rid] = "transition" if touches_cluster else "open"
    for rid in cluster:
        roles[rid] = "cluster"

    if "open" not in roles.values():
        rest = [r for r in regions if r.id not in cluster]
        largest = max(rest, key=lambda r: (r.area, -r.id))
        roles[largest.id] = "open"

    labeled = tuple(replace(r, role=roles[r.id]) for r in regions)
    return replace(rs, regions=labeled, border_open=False)

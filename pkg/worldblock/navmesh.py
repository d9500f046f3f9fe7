"""Navmesh baking, connectivity analysis and surface point sampling.

The bake follows the usual voxel pipeline:

1. Triangles are sampled into vertical intervals per grid column.
2. Intervals become solid spans. A downward-facing surface closes the solid
   up to the next upward-facing surface above it.
3. The topmost walkable span with enough head room is kept per column. The
   kept area is then eroded by the agent radius.
4. Climb-connected cells are grouped into regions. Regions below
   ``min_region_fraction`` of the walkable area are pruned.
5. Each region is covered by greedy rectangle merging. Rectangles are split
   until neighbours meet along whole edges, with at most six vertices per
   polygon. Vertex heights average the climb-linked cells at each grid node,
   so neighbouring polygons share their edges exactly.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import networkx as nx
import numpy as np
import trimesh
from scipy import sparse
from scipy.ndimage import distance_transform_edt
from scipy.sparse.csgraph import connected_components

from _utils import atomic_write_text, dumps_stable, print_debug
from .errors import (
    BadKError,
    BadParamsError,
    EmptyMeshError,
    EmptyNavMeshError,
    SchemaError,
    WorldblockIOError,
    ZeroAreaError,
)
from .mesh_ops import TriMesh
from .scene_spec import AgentParams

NAVMESH_FORMAT = "worldblock.navmesh"
NAVMESH_FORMAT_VERSION = 1
_SAMPLE_BUDGET = 2_000_000


@dataclass(frozen=True)
class NavMesh:
    """Convex CCW polygons with a polygon adjacency list.

    ``region_ids[k]`` is the connected-component label of polygon ``k``;
    labels are ordered by decreasing component area.
    """

    polygons: tuple[np.ndarray, ...]
    adjacency: tuple[tuple[int, int], ...]
    region_ids: tuple[int, ...]
    cell_size: float
    cell_height: float
    agent: AgentParams = field(default_factory=AgentParams)

    def __post_init__(self):
        polys = tuple(np.asarray(p, dtype=np.float64).reshape(-1, 3) for p in self.polygons)
        for p in polys:
            p.setflags(write=False)
        object.__setattr__(self, "polygons", polys)
        object.__setattr__(self, "adjacency", tuple(sorted((min(a, b), max(a, b)) for a, b in self.adjacency)))
        object.__setattr__(self, "region_ids", tuple(int(r) for r in self.region_ids))
        if len(self.region_ids) != len(polys):
            raise ValueError("region_ids must have one entry per polygon")

    def __len__(self) -> int:
        return len(self.polygons)

    @property
    def is_empty(self) -> bool:
        return not self.polygons

    def polygon_areas(self) -> np.ndarray:
        """Projected (xy) shoelace area of each polygon."""
        areas = []
        for p in self.polygons:
            x, y = p[:, 0], p[:, 1]
            areas.append(0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))))
        return np.asarray(areas, dtype=np.float64)

    @property
    def total_area(self) -> float:
        return float(self.polygon_areas().sum())

    def graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(len(self.polygons)))
        g.add_edges_from(self.adjacency)
        return g

    def to_trimesh(self) -> TriMesh:
        """Fan-triangulated mesh of all polygons, labeled ``navmesh``."""
        if self.is_empty:
            return TriMesh.empty()
        verts, faces = [], []
        offset = 0
        for p in self.polygons:
            verts.append(p)
            k = len(p)
            for t in range(1, k - 1):
                e1, e2 = p[t, :2] - p[0, :2], p[t + 1, :2] - p[0, :2]
                # side points next to vertex 0 give zero-area fans
                if abs(e1[0] * e2[1] - e1[1] * e2[0]) > 1e-12:
                    faces.append([offset, offset + t, offset + t + 1])
            offset += k
        return TriMesh(np.concatenate(verts), np.asarray(faces, dtype=np.int64)).labeled("navmesh")

    def to_json(self) -> dict:
        return {
            "format": NAVMESH_FORMAT,
            "version": NAVMESH_FORMAT_VERSION,
            "cell_size": self.cell_size,
            "cell_height": self.cell_height,
            "agent": asdict(self.agent),
            "polygons": [p.tolist() for p in self.polygons],
            "adjacency": [list(e) for e in self.adjacency],
            "region_ids": list(self.region_ids),
        }


def navmesh_from_json(data: dict) -> NavMesh:
    if data.get("format") != NAVMESH_FORMAT:
        raise SchemaError("format", f"expected {NAVMESH_FORMAT!r}, got {data.get('format')!r}")
    try:
        return NavMesh(
            polygons=tuple(np.asarray(p, dtype=np.float64) for p in data["polygons"]),
            adjacency=tuple((int(a), int(b)) for a, b in data["adjacency"]),
            region_ids=tuple(data["region_ids"]),
            cell_size=float(data["cell_size"]),
            cell_height=float(data["cell_height"]),
            agent=AgentParams(**data.get("agent", {})),
        )
    except KeyError as e:
        raise SchemaError(str(e.args[0]), "missing key") from e


def read_navmesh(path: str | os.PathLike) -> NavMesh:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except OSError as e:
        raise WorldblockIOError(f"could not read navmesh '{path}': {e}") from e
    return navmesh_from_json(data)


def write_navmesh(nm: NavMesh, obj_path: str | os.PathLike | None, json_path: str | os.PathLike | None) -> None:
    """Write the triangulated OBJ and/or the polygon JSON."""
    from .blockout import export_mesh

    if obj_path is not None:
        export_mesh(nm.to_trimesh(), "obj", obj_path)
    if json_path is not None:
        try:
            atomic_write_text(os.fspath(json_path), dumps_stable(nm.to_json()))
        except OSError as e:
            raise WorldblockIOError(f"could not write navmesh JSON '{json_path}': {e}") from e


# --------------------------------------------------------------------------
# Baking
# --------------------------------------------------------------------------


def _barycentric_grid(n: int) -> np.ndarray:
    k = np.arange(n + 1)
    u, v = np.meshgrid(k, k, indexing="ij")
    keep = (u + v) <= n
    return np.stack([u[keep], v[keep]], axis=1).astype(np.float64) / n


def _column_intervals(mesh: TriMesh, origin, shape, cell_size, cell_height, cos_slope, surface=None):
    """Per (column, triangle) z interval with walkable and facing flags.

    ``surface`` optionally masks the faces that may be walked on at all.
    """
    corners = mesh.corners()
    normals = mesh.face_normals()
    valid = np.flatnonzero(np.linalg.norm(normals, axis=1) > 0)
    corners = corners[valid]
    nz = normals[valid, 2]
    allowed = np.ones(len(valid), dtype=bool) if surface is None else np.asarray(surface, dtype=bool)[valid]

    edges = corners[:, [1, 2, 0], :2] - corners[:, :, :2]
    xy_edge = np.linalg.norm(edges, axis=2).max(axis=1)
    z_extent = np.ptp(corners[:, :, 2], axis=1)
    steps = np.maximum.reduce([
        np.ones(len(corners), dtype=np.int64),
        np.ceil(xy_edge / (cell_size / 2.0)).astype(np.int64),
        np.ceil(z_extent / cell_height).astype(np.int64),
    ])

    rows, cols = shape
    col_ids, tri_ids, zs = [], [], []
    for n in np.unique(steps):
        members = np.flatnonzero(steps == n)
        bary = _barycentric_grid(int(n))
        chunk = max(1, _SAMPLE_BUDGET // len(bary))
        for start in range(0, len(members), chunk):
            idx = members[start:start + chunk]
            a = corners[idx, 0][:, None, :]
            ab = (corners[idx, 1] - corners[idx, 0])[:, None, :]
            ac = (corners[idx, 2] - corners[idx, 0])[:, None, :]
            pts = a + bary[None, :, 0:1] * ab + bary[None, :, 1:2] * ac
            j = np.clip(np.floor((pts[..., 0] - origin[0]) / cell_size), 0, cols - 1).astype(np.int64)
            i = np.clip(np.floor((pts[..., 1] - origin[1]) / cell_size), 0, rows - 1).astype(np.int64)
            col_ids.append((i * cols + j).reshape(-1))
            tri_ids.append(np.repeat(idx, len(bary)))
            zs.append(pts[..., 2].reshape(-1))

    col = np.concatenate(col_ids)
    tri = np.concatenate(tri_ids)
    z = np.concatenate(zs)
    key = col * len(corners) + tri
    order = np.lexsort((z, key))
    key, z = key[order], z[order]
    starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
    zmin = z[starts]
    zmax = np.maximum.reduceat(z, starts)
    ukey = key[starts]
    col = ukey // len(corners)
    tri = ukey % len(corners)

    tri_nz = nz[tri]
    facing = np.where(tri_nz > 1e-9, 1, np.where(tri_nz < -1e-9, -1, 0))
    walkable = (tri_nz >= cos_slope) & allowed[tri]
    return col, zmin, zmax, walkable, facing


def _column_surface(zmin, zmax, walkable, facing, cell_height, clearance):
    """Top of the highest walkable span with enough head room, or NaN."""
    order = np.argsort(zmin, kind="stable")
    lo, hi, walk, face = zmin[order], zmax[order], walkable[order], facing[order]

    intervals = list(zip(lo.tolist(), hi.tolist(), walk.tolist()))
    # Close solids: each down-facing surface fills up to the next up-facing one.
    for k in np.flatnonzero(face == -1):
        above = np.flatnonzero((face == 1) & (lo > hi[k]))
        if len(above):
            u = above[np.argmin(lo[above])]
            intervals.append((float(lo[k]), float(lo[u]), False))
    intervals.sort(key=lambda t: (t[0], t[1]))

    spans = []
    s_lo, s_hi, s_walk = intervals[0]
    for a, b, w in intervals[1:]:
        if a <= s_hi + cell_height:
            if b > s_hi + cell_height:
                s_hi, s_walk = b, w
            elif b >= s_hi - cell_height:
                s_walk = s_walk or w
                s_hi = max(s_hi, b)
        else:
            spans.append((s_lo, s_hi, s_walk))
            s_lo, s_hi, s_walk = a, b, w
    spans.append((s_lo, s_hi, s_walk))

    for k in range(len(spans) - 1, -1, -1):
        _, top, walk = spans[k]
        room = spans[k + 1][0] - top if k + 1 < len(spans) else math.inf
        if walk and room >= clearance:
            return top
    return math.nan


def _neighbour_edges(keep: np.ndarray, top: np.ndarray, max_climb: float):
    """Flat-index pairs of 4-neighbour cells that are both kept and climb-connected."""
    rows, cols = keep.shape
    flat = np.arange(rows * cols).reshape(rows, cols)
    pairs = []
    for a, b, ta, tb, ka, kb in (
        (flat[:, :-1], flat[:, 1:], top[:, :-1], top[:, 1:], keep[:, :-1], keep[:, 1:]),
        (flat[:-1, :], flat[1:, :], top[:-1, :], top[1:, :], keep[:-1, :], keep[1:, :]),
    ):
        with np.errstate(invalid="ignore"):
            ok = ka & kb & (np.abs(ta - tb) <= max_climb)
        pairs.append(np.stack([a[ok], b[ok]], axis=1))
    return np.concatenate(pairs)


def _erode(walkable: np.ndarray, top: np.ndarray, agent: AgentParams, cell_size: float) -> np.ndarray:
    rows, cols = walkable.shape
    interior = walkable.copy()
    padded = np.pad(walkable, 1, constant_values=False)
    tpad = np.pad(top, 1, constant_values=np.nan)
    for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        nb = padded[1 + di:1 + di + rows, 1 + dj:1 + dj + cols]
        nt = tpad[1 + di:1 + di + rows, 1 + dj:1 + dj + cols]
        with np.errstate(invalid="ignore"):
            interior &= nb & (np.abs(nt - top) <= agent.max_climb)
    if agent.radius <= 0:
        return walkable
    dist = distance_transform_edt(interior) * cell_size
    return interior & (dist >= agent.radius - 1e-9)


def _label_regions(keep, top, max_climb, cell_size, min_region_fraction, largest_only):
    rows, cols = keep.shape
    n = rows * cols
    edges = _neighbour_edges(keep, top, max_climb)
    graph = sparse.coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    labels = labels.reshape(rows, cols)

    kept_labels = labels[keep]
    uniq, first, counts = np.unique(kept_labels, return_index=True, return_counts=True)
    cell_area = cell_size * cell_size
    total = counts.sum() * cell_area
    first_cell = np.flatnonzero(keep.reshape(-1))[first]
    order = sorted(range(len(uniq)), key=lambda k: (-counts[k], first_cell[k]))
    if largest_only:
        order = order[:1]
    survivors = [k for k in order if counts[k] * cell_area >= min_region_fraction * total - 1e-12]

    region = np.full((rows, cols), -1, dtype=np.int64)
    for new_id, k in enumerate(survivors):
        region[labels == uniq[k]] = new_id
    region[~keep] = -1
    pruned = len(uniq) - len(survivors)
    if pruned:
        print_debug(f"-> Pruned {pruned} small region(s) below {min_region_fraction:.2%} of walkable area")
    return region


def _merge_rectangles(region: np.ndarray, top: np.ndarray, tol: float):
    """Greedy row-major rectangle cover of same-region, near-level cells."""
    rows, cols = region.shape
    poly_id = np.full((rows, cols), -1, dtype=np.int64)
    rects = []
    for i in range(rows):
        for j in range(cols):
            r = region[i, j]
            if r < 0 or poly_id[i, j] >= 0:
                continue
            seed = top[i, j]

            def fits(ii, jj):
                return region[ii, jj] == r and poly_id[ii, jj] < 0 and abs(top[ii, jj] - seed) <= tol

            w = 1
            while j + w < cols and fits(i, j + w):
                w += 1
            h = 1
            while i + h < rows and all(fits(i + h, jj) for jj in range(j, j + w)):
                h += 1
            poly_id[i:i + h, j:j + w] = len(rects)
            rects.append((i, j, h, w, int(r)))
    return rects, poly_id


def _rect_pairs(poly_id: np.ndarray, edges: np.ndarray) -> set[tuple[int, int]]:
    flat = poly_id.reshape(-1)
    pa, pb = flat[edges[:, 0]], flat[edges[:, 1]]
    cross = pa != pb
    return {(int(min(a, b)), int(max(a, b))) for a, b in zip(pa[cross], pb[cross])}


def _side_points(rects, pairs):
    """Neighbour corners lying strictly inside each rectangle side, in grid-node units."""
    points = [{"bottom": set(), "right": set(), "top": set(), "left": set()} for _ in rects]

    def inside(lo, hi, values):
        return {v for v in values if lo < v < hi}

    for a, b in pairs:
        for p, q in ((a, b), (b, a)):
            pi, pj, ph, pw, _ = rects[p]
            qi, qj, qh, qw, _ = rects[q]
            if qi == pi + ph:
                points[p]["top"] |= inside(pj, pj + pw, (qj, qj + qw))
            elif qi + qh == pi:
                points[p]["bottom"] |= inside(pj, pj + pw, (qj, qj + qw))
            elif qj == pj + pw:
                points[p]["right"] |= inside(pi, pi + ph, (qi, qi + qh))
            elif qj + qw == pj:
                points[p]["left"] |= inside(pi, pi + ph, (qi, qi + qh))
    return points


def _conform_rectangles(rects, poly_id, edges, max_vertices: int = 6):
    """Split rectangles until every shared side is a whole edge of both polygons.

    Neighbour corners become extra vertices; a rectangle that would need more
    than ``max_vertices`` is cut at the median of its side points and the pass
    repeats. Single cells never carry side points, so the loop terminates.
    """
    rects = list(rects)
    poly_id = poly_id.copy()
    while True:
        pairs = _rect_pairs(poly_id, edges)
        points = _side_points(rects, pairs)
        over = [k for k, pts in enumerate(points) if sum(len(s) for s in pts.values()) > max_vertices - 4]
        if not over:
            return rects, poly_id, pairs, points
        for k in over:
            i, j, h, w, r = rects[k]
            across = sorted(points[k]["bottom"] | points[k]["top"])
            along = sorted(points[k]["left"] | points[k]["right"])
            if len(across) >= len(along):
                c = across[len(across) // 2]
                rects[k] = (i, j, h, c - j, r)
                poly_id[i:i + h, c:j + w] = len(rects)
                rects.append((i, c, h, j + w - c, r))
            else:
                c = along[len(along) // 2]
                rects[k] = (i, j, c - i, w, r)
                poly_id[c:i + h, j:j + w] = len(rects)
                rects.append((c, j, i + h - c, w, r))


def _rect_nodes(rect, points) -> list[tuple[int, int]]:
    """CCW (row, col) grid nodes of a rectangle including its side points."""
    i, j, h, w, _ = rect
    nodes = [(i, c) for c in [j] + sorted(points["bottom"])]
    nodes += [(c, j + w) for c in [i] + sorted(points["right"])]
    nodes += [(i + h, c) for c in [j + w] + sorted(points["top"], reverse=True)]
    nodes += [(c, j) for c in [i + h] + sorted(points["left"], reverse=True)]
    return nodes


def _node_height(region, top, node, ref, max_climb) -> float:
    """Mean top of the climb-linked cells around ``node`` that include ``ref``."""
    rows, cols = region.shape
    a, b = node
    block = [
        (ii, jj) for ii in (a - 1, a) for jj in (b - 1, b)
        if 0 <= ii < rows and 0 <= jj < cols and region[ii, jj] >= 0
    ]
    members, stack = {ref}, [ref]
    while stack:
        ci, cj = stack.pop()
        for c in block:
            if c in members or abs(c[0] - ci) + abs(c[1] - cj) != 1:
                continue
            if abs(top[c] - top[ci, cj]) <= max_climb:
                members.add(c)
                stack.append(c)
    return float(np.mean([top[c] for c in sorted(members)]))


def _shares_edge(pa: np.ndarray, pb: np.ndarray, tol: float = 1e-6) -> bool:
    """True when some edge of ``pa`` appears reversed in ``pb``."""
    na, nb = len(pa), len(pb)
    for s in range(na):
        u, v = pa[s], pa[(s + 1) % na]
        for t in range(nb):
            if np.allclose(pb[t], v, atol=tol) and np.allclose(pb[(t + 1) % nb], u, atol=tol):
                return True
    return False


def bake_navmesh(
    mesh: TriMesh,
    agent: AgentParams,
    cell_size: float,
    cell_height: float = 0.2,
    *,
    min_region_fraction: float = 0.05,
    largest_only: bool = False,
    walkable_parts: tuple[str, ...] | None = None,
) -> NavMesh:
    """Bake a navmesh from solid geometry.

    Args:
        mesh: Scene geometry in meters (z up).
        agent: Agent radius, height, climb and slope limits.
        cell_size: Horizontal voxel size.
        cell_height: Vertical voxel size; also the merge tolerance for
            stacked surfaces.
        min_region_fraction: Regions smaller than this share of the walkable
            area are dropped.
        largest_only: Keep only the largest connected region.
        walkable_parts: When given, only faces of these labeled parts can be
            walked on. Other faces still block and close solids.

    Raises:
        EmptyMeshError: ``mesh`` has no triangles.
        BadParamsError: non-positive cell sizes.
        EmptyNavMeshError: nothing is walkable.
    """
    if mesh.is_empty:
        raise EmptyMeshError("cannot bake a navmesh from an empty mesh")
    if not mesh.area > 0:
        raise EmptyNavMeshError("mesh has no positive-area triangle")
    if not cell_size > 0 or not cell_height > 0:
        raise BadParamsError(f"cell_size and cell_height must be positive, got {cell_size}, {cell_height}")

    lo, hi = mesh.bounds
    origin = (float(lo[0]), float(lo[1]))
    cols = max(1, math.ceil((hi[0] - lo[0]) / cell_size - 1e-9))
    rows = max(1, math.ceil((hi[1] - lo[1]) / cell_size - 1e-9))
    print_debug(f"-> Baking navmesh on a {cols}x{rows} grid (cell {cell_size:.4f} m)")

    cos_slope = math.cos(math.radians(agent.max_slope_deg))
    surface = None
    if walkable_parts is not None:
        if mesh.face_parts is None:
            surface = np.zeros(mesh.n_triangles, dtype=bool)
        else:
            named = np.array([name in walkable_parts for name in mesh.part_names], dtype=bool)
            surface = named[mesh.face_parts]
    col, zmin, zmax, walk, facing = _column_intervals(
        mesh, origin, (rows, cols), cell_size, cell_height, cos_slope, surface
    )

    top = np.full(rows * cols, np.nan)
    starts = np.flatnonzero(np.r_[True, col[1:] != col[:-1]])
    ends = np.r_[starts[1:], len(col)]
    for s, e in zip(starts, ends):
        top[col[s]] = _column_surface(zmin[s:e], zmax[s:e], walk[s:e], facing[s:e], cell_height, agent.height)
    top = top.reshape(rows, cols)
    walkable = np.isfinite(top)

    keep = _erode(walkable, top, agent, cell_size)
    if not keep.any():
        raise EmptyNavMeshError("no walkable surface survives slope, clearance and radius filtering")
    region = _label_regions(keep, top, agent.max_climb, cell_size, min_region_fraction, largest_only)

    rects, poly_id = _merge_rectangles(region, top, cell_height / 2.0)
    edges = _neighbour_edges(region >= 0, top, agent.max_climb)
    rects, poly_id, pairs, points = _conform_rectangles(rects, poly_id, edges)

    polygons, region_ids = [], []
    for rect, pts in zip(rects, points):
        i, j, h, w, r = rect
        vertices = []
        for a, b in _rect_nodes(rect, pts):
            ref = (min(a, i + h - 1), min(b, j + w - 1))
            z = _node_height(region, top, (a, b), ref, agent.max_climb)
            vertices.append([origin[0] + b * cell_size, origin[1] + a * cell_size, z])
        polygons.append(np.asarray(vertices, dtype=np.float64))
        region_ids.append(r)

    adjacency = {(a, b) for a, b in pairs if _shares_edge(polygons[a], polygons[b])}
    dropped = len(pairs) - len(adjacency)
    if dropped:
        print_debug(f"-> Dropped {dropped} adjacency link(s) without a common edge")

    nm = NavMesh(
        polygons=tuple(polygons),
        adjacency=tuple(sorted(adjacency)),
        region_ids=tuple(region_ids),
        cell_size=float(cell_size),
        cell_height=float(cell_height),
        agent=agent,
    )
    print_debug(f"-> Navmesh: {len(nm)} polygons, {len(set(region_ids))} region(s), {nm.total_area:.2f} m^2")
    return nm


def reextract_navmesh(
    scene: TriMesh,
    agent: AgentParams,
    cell_size: float,
    cell_height: float = 0.2,
    *,
    min_region_fraction: float = 0.05,
) -> NavMesh:
    """Navmesh of a generated scene: the dominant connected walkable surface."""
    return bake_navmesh(
        scene, agent, cell_size, cell_height,
        min_region_fraction=min_region_fraction, largest_only=True,
    )


# --------------------------------------------------------------------------
# Connectivity
# --------------------------------------------------------------------------


def connectivity_components(nm: NavMesh) -> list[tuple[int, float]]:
    """(region id, summed area) per adjacency component, largest first."""
    if nm.is_empty:
        return []
    areas = nm.polygon_areas()
    out = []
    for comp in nx.connected_components(nm.graph()):
        members = sorted(comp)
        rid = min(nm.region_ids[k] for k in members)
        out.append((rid, float(sum(areas[k] for k in members))))
    out.sort(key=lambda t: (-t[1], t[0]))
    return out


def connectivity_report(nm: NavMesh) -> dict:
    components = connectivity_components(nm)
    total = sum(a for _, a in components)
    return {
        "polygon_count": len(nm),
        "component_count": len(components),
        "components": [{"region_id": r, "area": a} for r, a in components],
        "total_area": total,
        "largest_fraction": components[0][1] / total if components and total > 0 else 0.0,
        "agent": asdict(nm.agent),
        "cell_size": nm.cell_size,
        "cell_height": nm.cell_height,
    }


# --------------------------------------------------------------------------
# Point clouds
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(nrm) != len(pts):
                raise ValueError("normals must have one entry per point")
            if len(nrm) and np.max(np.abs(np.linalg.norm(nrm, axis=1) - 1.0)) > 1e-9:
                raise ValueError("normals must have unit length")
            object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, index) -> "PointCloud":
        normals = None if self.normals is None else self.normals[index]
        return PointCloud(self.points[index], normals)

    def transformed(self, matrix: np.ndarray) -> "PointCloud":
        matrix = np.asarray(matrix, dtype=np.float64)
        normals = None
        if self.normals is not None:
            normals = self.normals @ matrix[:3, :3].T
            normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        return PointCloud(self.points @ matrix[:3, :3].T + matrix[:3, 3], normals)


def sample_surface(mesh: TriMesh, count: int, seed) -> PointCloud:
    """Area-weighted uniform samples with the normal of the sampled face.

    Raises:
        ZeroAreaError: the mesh has no positive-area triangle.
    """
    if mesh.is_empty or not mesh.area > 0:
        raise ZeroAreaError("cannot sample a surface with zero total area")
    points, face_index = trimesh.sample.sample_surface(mesh.to_trimesh(), int(count), seed=seed)
    normals = mesh.face_normals()[face_index]
    return PointCloud(np.asarray(points), normals / np.linalg.norm(normals, axis=1, keepdims=True))


def fps(pc: PointCloud, k: int) -> PointCloud:
    """Greedy farthest-point subset of ``k`` points, seeded with point 0.

    Raises:
        BadKError: ``k`` outside ``[1, len(pc)]``.
    """
    n = len(pc)
    if not 1 <= k <= n:
        raise BadKError(f"k must be in [1, {n}], got {k}")
    pts = pc.points
    selected = np.empty(k, dtype=np.int64)
    selected[0] = 0
    dist = np.linalg.norm(pts - pts[0], axis=1)
    dist[0] = -1.0
    for s in range(1, k):
        nxt = int(np.argmax(dist))
        selected[s] = nxt
        dist = np.minimum(dist, np.linalg.norm(pts - pts[nxt], axis=1))
        dist[selected[:s + 1]] = -1.0
    return pc.subset(selected)


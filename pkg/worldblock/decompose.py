"""Split a monolithic scene mesh into a ground part and object parts.

Pipeline: vertex welding, face de-duplication, connected components,
ground detection, overlay merge and iterative small-part merge. The result
is a :class:`PartSet` whose parts are stored centered at their vertex mean
with the translation kept as the part pose.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import trimesh

from _utils import print_debug, print_info, print_warning
from .errors import BadParamsError, EmptyMeshError, ZeroAreaError
from .mesh_ops import TriMesh, concatenate, remove_duplicate_faces, split_components, vertex_components, weld_vertices

GROUND = "ground"
OBJECT = "object"
OVERLAY_MERGED = "overlay-merged"
SMALL_MERGED = "small-merged"
GROUND_MAX_SLOPE_DEG = 15.0
CONTACT_SAMPLES = 256
WELD_EPS_FRACTION = 1e-4
SMALL_PART_FRACTION = 0.005
CONTACT_EPS_FACTOR = 10.0


@dataclass(frozen=True)
class PartStats:
    area: float
    volume_proxy: float
    vertex_count: int
    projected_area: float


@dataclass(frozen=True)
class Part:
    id: int
    name: str
    mesh: TriMesh
    pose: np.ndarray
    label: str
    stats: PartStats
    members: tuple[tuple[int, str], ...] = ()

    @property
    def translation(self) -> np.ndarray:
        return self.pose[:3, 3]

    def world_mesh(self) -> TriMesh:
        return self.mesh.transformed(self.pose)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "label": self.label,
            "translation": self.translation.tolist(),
            "stats": asdict(self.stats),
            "members": [{"component": c, "role": r} for c, r in self.members],
        }


@dataclass(frozen=True)
class PartSet:
    parts: tuple[Part, ...]
    ground_confidence: float = 0.0
    weld_eps: float = 0.0

    def __len__(self) -> int:
        return len(self.parts)

    @property
    def ground(self) -> Part | None:
        for p in self.parts:
            if p.label == GROUND:
                return p
        return None

    @property
    def objects(self) -> list[Part]:
        return [p for p in self.parts if p.label != GROUND]

    @property
    def vertex_count(self) -> int:
        return sum(p.stats.vertex_count for p in self.parts)

    def by_id(self, part_id: int) -> Part:
        for p in self.parts:
            if p.id == part_id:
                return p
        raise KeyError(part_id)

    def world_mesh(self) -> TriMesh:
        return concatenate([p.world_mesh() for p in self.parts], [p.name for p in self.parts])


@dataclass(frozen=True)
class DecomposeConfig:
    """Thresholds; ``None`` picks the scale-relative default for each mesh."""

    weld_eps: float | None = None
    small_part_vertex_threshold: float | None = None
    overlay_thickness: float = 0.05
    min_parts: int = 2
    max_parts: int = 64
    max_imbalance_ratio: float = 100.0
    min_ground_confidence: float = 0.3

    def __post_init__(self):
        for name in ("weld_eps", "small_part_vertex_threshold", "overlay_thickness", "max_imbalance_ratio"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise BadParamsError(f"{name} must be positive, got {value}")
        if self.min_parts < 1 or self.max_parts < self.min_parts:
            raise BadParamsError(f"need 1 <= min_parts <= max_parts, got {self.min_parts}, {self.max_parts}")
        if not 0.0 <= self.min_ground_confidence <= 1.0:
            raise BadParamsError(f"min_ground_confidence must be in [0, 1], got {self.min_ground_confidence}")

    def resolved_weld_eps(self, mesh: TriMesh) -> float:
        if self.weld_eps is not None:
            return self.weld_eps
        lo, hi = mesh.bounds
        return WELD_EPS_FRACTION * float(np.linalg.norm(hi - lo))

    def resolved_small_threshold(self, vertex_count: int) -> float:
        if self.small_part_vertex_threshold is not None:
            return self.small_part_vertex_threshold
        return SMALL_PART_FRACTION * vertex_count

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FilterVerdict:
    accepted: bool
    reasons: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"accepted": self.accepted, "reasons": list(self.reasons)}


@dataclass(frozen=True)
class PartDegree:
    part_id: int
    degree: int


# --------------------------------------------------------------------------
# Geometry helpers
# --------------------------------------------------------------------------


def projected_area(mesh: TriMesh) -> float:
    """Area of upward-facing triangles projected onto the xy plane.

    Meshes with no upward-facing area (e.g. inverted winding) fall back to
    the absolute projected area.
    """
    cz = mesh.face_cross()[:, 2] if mesh.n_triangles else np.zeros(0)
    up = 0.5 * float(np.maximum(cz, 0.0).sum())
    return up if up > 0 else 0.5 * float(np.abs(cz).sum())


def median_slope_deg(mesh: TriMesh) -> float:
    normals = mesh.face_normals()
    valid = np.linalg.norm(normals, axis=1) > 0
    if not valid.any():
        return 90.0
    return float(np.median(np.degrees(np.arccos(np.clip(np.abs(normals[valid, 2]), 0.0, 1.0)))))


def _stats(mesh: TriMesh) -> PartStats:
    lo, hi = mesh.bounds
    return PartStats(
        area=mesh.area,
        volume_proxy=float(np.prod(hi - lo)),
        vertex_count=mesh.n_vertices,
        projected_area=projected_area(mesh),
    )


def _make_part(part_id: int, name: str, world: TriMesh, label: str, members=()) -> Part:
    centroid = world.vertices.mean(axis=0) if world.n_vertices else np.zeros(3)
    pose = np.eye(4)
    pose[:3, 3] = centroid
    return Part(
        id=part_id,
        name=name,
        mesh=world.translated(-centroid),
        pose=pose,
        label=label,
        stats=_stats(world),
        members=tuple(members),
    )


def part_set_from_meshes(
    meshes: Sequence[TriMesh],
    names: Sequence[str] | None = None,
    ground_index: int | None = None,
    weld_eps: float = 0.0,
) -> PartSet:
    """Wrap known parts (ground truth, remainders) as a :class:`PartSet`."""
    names = list(names) if names is not None else [f"part_{k}" for k in range(len(meshes))]
    parts = []
    for k, m in enumerate(meshes):
        label = GROUND if k == ground_index else OBJECT
        parts.append(_make_part(k, names[k], m, label))
    confidence = 0.0
    if ground_index is not None:
        total = sum(p.stats.projected_area for p in parts)
        confidence = parts[ground_index].stats.projected_area / total if total > 0 else 0.0
    return PartSet(tuple(parts), confidence, weld_eps)


def _closest_distance(target: TriMesh, points: np.ndarray) -> np.ndarray:
    if len(points) == 0 or target.is_empty:
        return np.full(len(points), np.inf)
    _, distance, _ = trimesh.proximity.closest_point(target.to_trimesh(), points)
    return np.asarray(distance)


# --------------------------------------------------------------------------
# Decomposition
# --------------------------------------------------------------------------


class _Component:
    __slots__ = ("faces", "index", "members")

    def __init__(self, index, faces):
        self.index = index
        self.faces = faces
        self.members = [(index, OBJECT)]


def detect_ground(components: Sequence[TriMesh]) -> tuple[int | None, float]:
    """Index of the ground component and its projected-area share.

    The ground is the component with the largest horizontal projected area
    among those whose median face slope is below 15 degrees.
    """
    areas = np.array([projected_area(c) for c in components])
    total = float(areas.sum())
    best = None
    for k, comp in enumerate(components):
        if median_slope_deg(comp) >= GROUND_MAX_SLOPE_DEG:
            continue
        if best is None or areas[k] > areas[best]:
            best = k
    if best is None or total <= 0:
        return None, 0.0
    return best, float(areas[best] / total)


def decompose_scene(mesh: TriMesh, cfg: DecomposeConfig | None = None) -> PartSet:
    """Ground + object parts of a scene mesh.

    Raises:
        EmptyMeshError: ``mesh`` has no triangles.
    """
    cfg = cfg or DecomposeConfig()
    if mesh.is_empty:
        raise EmptyMeshError("cannot decompose an empty mesh")

    print_debug("STEP 1: WELD")
    weld_eps = cfg.resolved_weld_eps(mesh)
    welded, _ = weld_vertices(mesh, weld_eps)
    welded = remove_duplicate_faces(welded)
    if welded.is_empty:
        raise EmptyMeshError("mesh has no non-degenerate triangles after welding")
    print_debug(f"-> Welded {mesh.n_vertices} -> {welded.n_vertices} vertices (eps {weld_eps:.3g})")

    print_debug("STEP 2: CONNECTED COMPONENTS")
    count, labels = vertex_components(welded)
    face_label = labels[welded.triangles[:, 0]]
    comps = [_Component(k, np.flatnonzero(face_label == k)) for k in range(count)]
    comp_meshes = [welded.submesh(c.faces) for c in comps]
    print_debug(f"-> {count} component(s)")

    print_debug("STEP 3: GROUND DETECTION")
    ground_idx, confidence = detect_ground(comp_meshes)
    if ground_idx is None:
        print_warning("No ground component found (no flat, dominant component)")
    else:
        print_debug(f"-> Ground is component {ground_idx} (confidence {confidence:.3f})")

    print_debug("STEP 4: OVERLAY MERGE")
    ground = comps[ground_idx] if ground_idx is not None else None
    if ground is not None:
        ground.members = [(ground.index, GROUND)]
    objects = [c for c in comps if c is not ground]
    if ground is not None:
        ground_mesh = comp_meshes[ground_idx]
        kept = []
        for c in objects:
            cm = comp_meshes[c.index]
            lo, hi = cm.bounds
            if hi[2] - lo[2] < cfg.overlay_thickness:
                dist = _closest_distance(ground_mesh, cm.vertices)
                if float(dist.min()) <= weld_eps + 1e-12:
                    ground.faces = np.concatenate([ground.faces, c.faces])
                    ground.members.append((c.index, OVERLAY_MERGED))
                    continue
            kept.append(c)
        if len(kept) < len(objects):
            print_debug(f"-> Merged {len(objects) - len(kept)} overlay(s) into the ground")
        objects = kept

    print_debug("STEP 5: SMALL-PART MERGE")
    threshold = cfg.resolved_small_threshold(welded.n_vertices)
    vert_sets = {c.index: set(np.unique(welded.triangles[c.faces]).tolist()) for c in objects}
    while len(objects) > 1:
        small = [c for c in objects if len(vert_sets[c.index]) < threshold]
        if not small:
            break
        victim = min(small, key=lambda c: (len(vert_sets[c.index]), c.index))
        centroid = welded.vertices[sorted(vert_sets[victim.index])].mean(axis=0)
        others = [c for c in objects if c is not victim]
        target = min(
            others,
            key=lambda c: (float(np.linalg.norm(welded.vertices[sorted(vert_sets[c.index])].mean(axis=0) - centroid)), c.index),
        )
        target.faces = np.concatenate([target.faces, victim.faces])
        target.members.extend((idx, SMALL_MERGED) for idx, _ in victim.members)
        vert_sets[target.index] |= vert_sets.pop(victim.index)
        objects.remove(victim)

    print_debug("STEP 6: BUILD PARTS")
    parts = []
    if ground is not None:
        parts.append(_make_part(0, GROUND, welded.submesh(np.sort(ground.faces)), GROUND, ground.members))
    for c in sorted(objects, key=lambda c: c.index):
        pid = len(parts)
        parts.append(_make_part(pid, f"part_{pid}", welded.submesh(np.sort(c.faces)), OBJECT, c.members))
    ps = PartSet(tuple(parts), confidence, weld_eps)
    print_info(f"Decomposed into {len(parts)} part(s), ground confidence {confidence:.3f}")
    return ps


def quality_filter(ps: PartSet, cfg: DecomposeConfig | None = None) -> FilterVerdict:
    """Accept or reject a decomposition; reasons name each failed check."""
    cfg = cfg or DecomposeConfig()
    reasons = []
    if not cfg.min_parts <= len(ps.parts) <= cfg.max_parts:
        reasons.append("part_count")
    counts = [p.stats.vertex_count for p in ps.objects]
    if counts and max(counts) / max(min(counts), 1) > cfg.max_imbalance_ratio:
        reasons.append("imbalance")
    if ps.ground_confidence < cfg.min_ground_confidence:
        reasons.append("ground_confidence")
    return FilterVerdict(not reasons, tuple(reasons))


# --------------------------------------------------------------------------
# Connectivity ordering
# --------------------------------------------------------------------------


def _probe_points(mesh: TriMesh, seed: int) -> np.ndarray:
    from .navmesh import sample_surface

    try:
        samples = sample_surface(mesh, CONTACT_SAMPLES, seed).points
    except ZeroAreaError:
        samples = np.zeros((0, 3))
    return np.concatenate([mesh.vertices, samples])


def parts_in_contact(a: TriMesh, b: TriMesh, eps: float, probes_a=None, probes_b=None) -> bool:
    """True when the two surfaces come within ``eps`` of each other."""
    (alo, ahi), (blo, bhi) = a.bounds, b.bounds
    if np.any(alo - eps > bhi) or np.any(blo - eps > ahi):
        return False
    probes_a = a.vertices if probes_a is None else probes_a
    probes_b = b.vertices if probes_b is None else probes_b
    if float(_closest_distance(b, probes_a).min()) <= eps:
        return True
    return float(_closest_distance(a, probes_b).min()) <= eps


def _default_contact_eps(ps: PartSet, worlds: dict[int, TriMesh]) -> float:
    weld_eps = ps.weld_eps
    if weld_eps <= 0.0 and worlds:
        # unwelded sets (built from meshes) fall back to the default weld tolerance
        bounds = np.array([m.bounds for m in worlds.values()])
        diagonal = bounds[:, 1].max(axis=0) - bounds[:, 0].min(axis=0)
        weld_eps = WELD_EPS_FRACTION * float(np.linalg.norm(diagonal))
    return CONTACT_EPS_FACTOR * weld_eps


def contact_graph(ps: PartSet, contact_eps: float | None = None) -> dict[int, set[int]]:
    worlds = {p.id: p.world_mesh() for p in ps.parts}
    eps = contact_eps if contact_eps is not None else _default_contact_eps(ps, worlds)
    probes = {pid: _probe_points(m, pid) for pid, m in worlds.items()}
    neighbours = {p.id: set() for p in ps.parts}
    ids = [p.id for p in ps.parts]
    for k, i in enumerate(ids):
        for j in ids[k + 1:]:
            if parts_in_contact(worlds[i], worlds[j], eps, probes[i], probes[j]):
                neighbours[i].add(j)
                neighbours[j].add(i)
    return neighbours


def connectivity_degree_order(ps: PartSet, contact_eps: float | None = None) -> list[PartDegree]:
    """Parts by decreasing contact degree (ties: larger projected area, lower id).

    ``contact_eps`` defaults to ten times the decomposition weld tolerance.
    Sets without one use the default tolerance of the combined bounding box.
    """
    neighbours = contact_graph(ps, contact_eps)
    area = {p.id: p.stats.projected_area for p in ps.parts}
    order = sorted(ps.parts, key=lambda p: (-len(neighbours[p.id]), -area[p.id], p.id))
    return [PartDegree(p.id, len(neighbours[p.id])) for p in order]


def pivot_remainder_split(
    ps: PartSet,
    pivot_count: int = 4,
    contact_eps: float | None = None,
) -> tuple[tuple[Part, ...], tuple[Part, ...]]:
    """Top ``pivot_count`` parts by connectivity, plus the re-split remainder."""
    if pivot_count < 0:
        raise BadParamsError(f"pivot_count must be >= 0, got {pivot_count}")
    order = connectivity_degree_order(ps, contact_eps)
    pivot_ids = [d.part_id for d in order[:pivot_count]]
    pivots = tuple(ps.by_id(i) for i in pivot_ids)
    rest = [p for p in ps.parts if p.id not in set(pivot_ids)]
    if not rest:
        return pivots, ()
    union = concatenate([p.world_mesh() for p in rest], [p.name for p in rest])
    pieces = split_components(union)
    remainder = part_set_from_meshes(pieces, [f"remainder_{k}" for k in range(len(pieces))], weld_eps=ps.weld_eps)
    print_debug(f"-> {len(pivots)} pivot(s), remainder split into {len(pieces)} part(s)")
    return pivots, remainder.parts


# --------------------------------------------------------------------------
# Reports and export
# --------------------------------------------------------------------------


def decomposition_report(
    ps: PartSet,
    cfg: DecomposeConfig,
    verdict: FilterVerdict,
    order: Sequence[PartDegree] = (),
) -> dict:
    degrees = {d.part_id: d.degree for d in order}
    parts = []
    for p in ps.parts:
        entry = p.to_dict()
        if p.id in degrees:
            entry["degree"] = degrees[p.id]
        parts.append(entry)
    return {
        "config": cfg.to_dict(),
        "weld_eps": ps.weld_eps,
        "ground_confidence": ps.ground_confidence,
        "part_count": len(ps.parts),
        "vertex_count": ps.vertex_count,
        "parts": parts,
        "connectivity_order": [p.part_id for p in order],
        "verdict": verdict.to_dict(),
    }


def export_parts(ps: PartSet, path: str | os.PathLike, format: str | None = None) -> None:
    """Multi-part OBJ or glTF (format guessed from the extension)."""
    from .blockout import export_mesh

    if format is None:
        ext = os.path.splitext(os.fspath(path))[1].lower().lstrip(".")
        format = ext if ext in ("obj", "glb") else "gltf"
    export_mesh(ps.world_mesh(), format, path)


def part_set_from_labeled_mesh(mesh: TriMesh, ground_name: str = GROUND) -> PartSet:
    """Parts from a mesh whose faces already carry part labels."""
    names, meshes = [], []
    for name, part in mesh.iter_parts():
        names.append(name or f"part_{len(names)}")
        meshes.append(part)
    ground_index = names.index(ground_name) if ground_name in names else None
    return part_set_from_meshes(meshes, names, ground_index)


"""Blockout assembly, declarative edits, scene normalization and mesh I/O."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np
import trimesh
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from _utils import atomic_write_text, print_debug
from .errors import (
    BadParamsError,
    DegenerateBoundsError,
    EmptyMeshError,
    SchemaError,
    SpecSyntaxError,
    UnknownIdError,
    WorldblockIOError,
)
from .mesh_ops import TriMesh, box_mesh, concatenate
from .placement import Placement, PlacementSet
from .terrain import HeightField, Rect, sample_height

GROUND_PART = "ground"
NORMALIZE_MARGIN = 0.02
GROUND_SLOPE_DEG = 5.0
MESH_FORMATS = ("obj", "gltf", "glb")


def box_part_name(placement_id: int) -> str:
    return f"box_{placement_id}"


def ground_mesh(hf: HeightField) -> TriMesh:
    """Two upward-facing triangles per heightfield cell."""
    n = hf.resolution
    xs, ys = hf.node_coordinates()
    vertices = np.stack([xs.ravel(), ys.ravel(), np.asarray(hf.heights).ravel()], axis=1)
    idx = np.arange(n * n).reshape(n, n)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[1:, :-1].ravel()
    triangles = np.concatenate([np.stack([a, b, c], axis=1), np.stack([a, c, d], axis=1)])
    return TriMesh(vertices, triangles)


def placement_box(p: Placement) -> TriMesh:
    fp = p.footprint
    return box_mesh((fp.cx, fp.cy, p.base_z), (fp.sx, fp.sy, p.height), fp.yaw)


@dataclass(frozen=True)
class Blockout:
    """Ground heightfield plus yawed boxes; meshes are derived on demand."""

    heightfield: HeightField
    placements: tuple[Placement, ...] = ()
    extent: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "placements", tuple(self.placements))
        if not self.extent:
            object.__setattr__(self, "extent", self.heightfield.extent)

    @property
    def ground(self) -> TriMesh:
        return ground_mesh(self.heightfield)

    @property
    def boxes(self) -> list[TriMesh]:
        return [placement_box(p) for p in self.placements]

    @property
    def bounds(self) -> np.ndarray:
        return self.to_trimesh().bounds

    def placement(self, placement_id: int) -> Placement:
        for p in self.placements:
            if p.id == placement_id:
                return p
        raise UnknownIdError(f"no box with id {placement_id}")

    def to_trimesh(self) -> TriMesh:
        """Labeled scene mesh: ``ground`` then ``box_<id>`` per placement."""
        names = [GROUND_PART] + [box_part_name(p.id) for p in self.placements]
        return concatenate([self.ground] + self.boxes, names)

    def to_dict(self) -> dict:
        return {
            "extent": self.extent,
            "heightfield": {
                "cell_size": self.heightfield.cell_size,
                "origin": list(self.heightfield.origin),
                "heights": np.asarray(self.heightfield.heights).tolist(),
            },
            "placements": [p.to_dict() for p in self.placements],
        }


def blockout_from_dict(data: dict) -> Blockout:
    try:
        hf_data = data["heightfield"]
        hf = HeightField(np.asarray(hf_data["heights"], dtype=np.float64), float(hf_data["cell_size"]), tuple(hf_data["origin"]))
        placements = tuple(
            Placement(
                id=int(p["id"]),
                tier=p["tier"],
                footprint=Rect(*(float(v) for v in p["footprint"])),
                height=float(p["height"]),
                base_z=float(p["base_z"]),
            )
            for p in data["placements"]
        )
    except KeyError as e:
        raise SchemaError(str(e.args[0]), "missing key") from e
    return Blockout(hf, placements, float(data.get("extent", hf.extent)))


def assemble_blockout(hf: HeightField, ps: Union[PlacementSet, Sequence[Placement]]) -> Blockout:
    """Blockout over ``hf`` (already smoothed under footprints)."""
    placements = ps.placements if isinstance(ps, PlacementSet) else tuple(ps)
    b = Blockout(hf, placements)
    print_debug(f"-> Blockout: ground {hf.resolution}x{hf.resolution} nodes, {len(placements)} box(es)")
    return b


def blockout_parts(b: Blockout):
    """Ground-truth part annotation: the ground plus one part per box."""
    from .decompose import part_set_from_meshes

    names = [GROUND_PART] + [box_part_name(p.id) for p in b.placements]
    return part_set_from_meshes([b.ground] + b.boxes, names, ground_index=0)


# --------------------------------------------------------------------------
# Edits
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RemoveBox:
    id: int
    op: str = field(default="remove_box", init=False)


@dataclass(frozen=True)
class SetBoxHeight:
    id: int
    height: float
    op: str = field(default="set_box_height", init=False)


@dataclass(frozen=True)
class OffsetTerrain:
    rect: tuple[float, float, float, float]
    dz: float
    op: str = field(default="offset_terrain", init=False)


Edit = Union[RemoveBox, SetBoxHeight, OffsetTerrain]
EditScript = tuple  # ordered tuple of Edit


def _read_number(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise SchemaError(path, "expected a finite number")
    return float(value)


def _read_id(value, path):
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(path, "expected an integer id")
    return value


def edit_script_from_dict(data) -> EditScript:
    if not isinstance(data, dict) or set(data) != {"edits"} or not isinstance(data["edits"], list):
        raise SchemaError("", 'edit script must be an object {"edits": [...]}')
    edits = []
    for k, item in enumerate(data["edits"]):
        path = f"edits[{k}]"
        if not isinstance(item, dict) or "op" not in item:
            raise SchemaError(path, "expected an object with an 'op' key")
        op = item["op"]
        keys = set(item) - {"op"}
        if op == "remove_box" and keys == {"id"}:
            edits.append(RemoveBox(_read_id(item["id"], f"{path}.id")))
        elif op == "set_box_height" and keys == {"id", "height"}:
            height = _read_number(item["height"], f"{path}.height")
            if height <= 0:
                raise SchemaError(f"{path}.height", "must be > 0")
            edits.append(SetBoxHeight(_read_id(item["id"], f"{path}.id"), height))
        elif op == "offset_terrain" and keys == {"rect", "dz"}:
            rect = item["rect"]
            if not isinstance(rect, list) or len(rect) != 4:
                raise SchemaError(f"{path}.rect", "expected [x0, y0, x1, y1]")
            x0, y0, x1, y1 = (_read_number(v, f"{path}.rect[{i}]") for i, v in enumerate(rect))
            if x0 > x1 or y0 > y1:
                raise SchemaError(f"{path}.rect", "min corner must not exceed max corner")
            edits.append(OffsetTerrain((x0, y0, x1, y1), _read_number(item["dz"], f"{path}.dz")))
        elif op in ("remove_box", "set_box_height", "offset_terrain"):
            raise SchemaError(path, f"wrong fields for '{op}': {sorted(keys)}")
        else:
            raise SchemaError(f"{path}.op", f"unknown edit op {op!r}")
    return tuple(edits)


def parse_edit_script(text: str) -> EditScript:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise SpecSyntaxError(f"edit script is not valid JSON: {e}") from e
    return edit_script_from_dict(data)


def edit_script_to_dict(edits: EditScript) -> dict:
    out = []
    for e in edits:
        if isinstance(e, RemoveBox):
            out.append({"op": e.op, "id": e.id})
        elif isinstance(e, SetBoxHeight):
            out.append({"op": e.op, "id": e.id, "height": e.height})
        else:
            out.append({"op": e.op, "rect": list(e.rect), "dz": e.dz})
    return {"edits": out}


def _offset_terrain(b: Blockout, edit: OffsetTerrain) -> Blockout:
    x0, y0, x1, y1 = edit.rect
    hf = b.heightfield
    xs, ys = hf.node_coordinates()
    inside = (xs >= x0) & (xs <= x1) & (ys >= y0) & (ys <= y1)
    if not inside.any():
        return b
    heights = np.array(hf.heights, copy=True)
    heights[inside] += edit.dz
    new_hf = hf.with_heights(heights)

    # Any box whose footprint overlaps the touched nodes settles on the new surface.
    cs = hf.cell_size
    placements = []
    for p in b.placements:
        corners = p.footprint.corners()
        touches = not (
            corners[:, 0].max() < x0 - cs or corners[:, 0].min() > x1 + cs
            or corners[:, 1].max() < y0 - cs or corners[:, 1].min() > y1 + cs
        )
        if touches:
            p = replace(p, base_z=sample_height(new_hf, p.footprint.cx, p.footprint.cy))
        placements.append(p)
    return replace(b, heightfield=new_hf, placements=tuple(placements))


def apply_edits(b: Blockout, edits: EditScript) -> Blockout:
    """Apply ``edits`` in order.

    Raises:
        UnknownIdError: an edit names a box that does not exist (at that point
            in the script).
    """
    for k, edit in enumerate(edits):
        if isinstance(edit, RemoveBox):
            b.placement(edit.id)
            b = replace(b, placements=tuple(p for p in b.placements if p.id != edit.id))
        elif isinstance(edit, SetBoxHeight):
            b.placement(edit.id)
            if not edit.height > 0:
                raise BadParamsError(f"edit {k}: box height must be positive, got {edit.height}")
            b = replace(
                b,
                placements=tuple(replace(p, height=edit.height) if p.id == edit.id else p for p in b.placements),
            )
        elif isinstance(edit, OffsetTerrain):
            b = _offset_terrain(b, edit)
        else:
            raise SchemaError(f"edits[{k}]", f"unsupported edit {edit!r}")
        print_debug(f"-> Applied edit {k}: {edit}")
    return b


# --------------------------------------------------------------------------
# Normalization
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NormalizationTransform:
    """``p -> scale * p + translation``."""

    scale: float
    translation: tuple[float, float, float]
    margin: float = NORMALIZE_MARGIN
    ground_anchor: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] *= self.scale
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        return self.scale * np.asarray(points, dtype=np.float64) + np.asarray(self.translation)

    def apply_mesh(self, mesh: TriMesh) -> TriMesh:
        return mesh.with_vertices(self.apply(mesh.vertices))

    def invert(self) -> "NormalizationTransform":
        inv = 1.0 / self.scale
        return NormalizationTransform(
            scale=inv,
            translation=tuple(float(v) for v in -inv * np.asarray(self.translation)),
            margin=self.margin,
            ground_anchor=tuple(float(v) for v in self.apply(self.ground_anchor)),
        )

    def is_identity(self, tol: float = 1e-9) -> bool:
        return abs(self.scale - 1.0) <= tol and max(abs(v) for v in self.translation) <= tol

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "translation": list(self.translation),
            "margin": self.margin,
            "ground_anchor": list(self.ground_anchor),
            "matrix": self.matrix.tolist(),
        }


def ground_plane_anchor(navmesh: TriMesh, tol: float) -> np.ndarray:
    """Area-weighted centroid of the navmesh ground plane.

    Faces flatter than 5 degrees are clustered by vertex proximity
    (``tol``); the ground plane is the largest cluster among those within
    ``tol`` of the lowest cluster elevation.
    """
    normals = navmesh.face_normals()
    areas = navmesh.face_areas()
    flat = (np.abs(normals[:, 2]) >= math.cos(math.radians(GROUND_SLOPE_DEG))) & (areas > 0)
    if not flat.any():
        flat = areas > 0
    if not flat.any():
        raise DegenerateBoundsError("navmesh has no positive-area face")

    faces = navmesh.triangles[flat]
    face_area = areas[flat]
    centroids = navmesh.corners()[flat].mean(axis=1)

    n = navmesh.n_vertices
    pairs = cKDTree(navmesh.vertices).query_pairs(r=tol, output_type="ndarray")
    rows = np.concatenate([pairs[:, 0], faces[:, 0], faces[:, 1]])
    cols = np.concatenate([pairs[:, 1], faces[:, 1], faces[:, 2]])
    graph = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    face_label = labels[faces[:, 0]]

    clusters = np.unique(face_label)
    cluster_area = np.array([face_area[face_label == c].sum() for c in clusters])
    cluster_z = np.array([
        np.average(centroids[face_label == c, 2], weights=face_area[face_label == c]) for c in clusters
    ])
    band = cluster_z <= cluster_z.min() + tol
    candidates = np.flatnonzero(band)
    best = clusters[candidates[np.argmax(cluster_area[candidates])]]
    members = face_label == best
    return np.average(centroids[members], axis=0, weights=face_area[members])


def normalize_scene(
    mesh: TriMesh,
    navmesh: TriMesh,
    *,
    scale_reference: TriMesh | None = None,
    margin: float = NORMALIZE_MARGIN,
) -> tuple[TriMesh, TriMesh, NormalizationTransform]:
    """Rescale into the ``[-1, 1]^3`` cube with the ground plane at the origin.

    One uniform scale and translation are applied to both meshes. The
    translation moves the navmesh ground-plane centroid to the origin. The
    scale fits ``scale_reference`` (default: ``mesh``) about that centroid
    into ``1 - margin``. Pass the procedural blockout as the reference
    when no ground-truth scene exists.

    Raises:
        EmptyMeshError: either mesh is empty.
        DegenerateBoundsError: the reference mesh has zero extent.
    """
    if mesh.is_empty or navmesh.is_empty:
        raise EmptyMeshError("normalize_scene needs a non-empty scene and navmesh")
    reference = mesh if scale_reference is None else scale_reference
    if reference.n_vertices == 0:
        raise EmptyMeshError("scale reference mesh is empty")
    lo, hi = reference.bounds
    extent = float(np.max(hi - lo))
    if not extent > 0:
        raise DegenerateBoundsError("scene mesh has zero extent")

    anchor = ground_plane_anchor(navmesh, tol=0.02 * extent)
    radius = float(np.max(np.abs(reference.vertices - anchor)))
    if not radius > 0:
        raise DegenerateBoundsError("scene mesh collapses onto the ground anchor")
    scale = (1.0 - margin) / radius
    transform = NormalizationTransform(
        scale=scale,
        translation=tuple(float(v) for v in -scale * anchor),
        margin=margin,
        ground_anchor=tuple(float(v) for v in anchor),
    )
    return transform.apply_mesh(mesh), transform.apply_mesh(navmesh), transform


# --------------------------------------------------------------------------
# Export / import
# --------------------------------------------------------------------------


def _obj_text(mesh: TriMesh) -> str:
    lines = ["# worldblock blockout mesh"]
    lines.extend("v %.6f %.6f %.6f" % tuple(v) for v in mesh.vertices)
    for name, mask in _part_masks(mesh):
        if name:
            lines.append(f"o {name}")
        lines.extend("f %d %d %d" % tuple(t + 1) for t in mesh.triangles[mask])
    return "\n".join(lines) + "\n"


def _part_masks(mesh: TriMesh):
    if mesh.face_parts is None:
        yield "", np.ones(mesh.n_triangles, dtype=bool)
        return
    for k, name in enumerate(mesh.part_names):
        mask = mesh.face_parts == k
        if mask.any():
            yield name, mask


def _scene(mesh: TriMesh) -> trimesh.Scene:
    scene = trimesh.Scene()
    for name, part in mesh.iter_parts():
        label = name or "mesh"
        scene.add_geometry(part.to_trimesh(), node_name=label, geom_name=label)
    return scene


def export_mesh(mesh: TriMesh, format: str, path: str | os.PathLike) -> None:
    """Write ``mesh`` as OBJ (``o`` group per part) or glTF (node per part).

    Raises:
        WorldblockIOError: the file cannot be written.
    """
    path = os.fspath(path)
    if format not in MESH_FORMATS:
        raise BadParamsError(f"unknown mesh format {format!r}; expected one of {', '.join(MESH_FORMATS)}")
    try:
        if format == "obj":
            atomic_write_text(path, _obj_text(mesh))
            return
        scene = _scene(mesh)
        if format == "glb":
            data = trimesh.exchange.gltf.export_glb(scene)
        else:
            files = trimesh.exchange.gltf.export_gltf(scene, merge_buffers=True, embed_buffers=True)
            data = files["model.gltf"]
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        with open(path, "wb") as f:
            f.write(data)
    except OSError as e:
        raise WorldblockIOError(f"could not write mesh '{path}': {e}") from e


def _read_obj(path: str) -> TriMesh:
    vertices, faces, parts = [], [], []
    names: list[str] = []
    current = None
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            tokens = line.split()
            if not tokens or tokens[0].startswith("#"):
                continue
            if tokens[0] == "v":
                vertices.append([float(t) for t in tokens[1:4]])
            elif tokens[0] in ("o", "g"):
                name = " ".join(tokens[1:]) or "mesh"
                if name not in names:
                    names.append(name)
                current = names.index(name)
            elif tokens[0] == "f":
                idx = []
                for t in tokens[1:]:
                    k = int(t.split("/")[0])
                    idx.append(k - 1 if k > 0 else len(vertices) + k)
                for t in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[t], idx[t + 1]])
                    parts.append(current)
    triangles = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if names and all(p is not None for p in parts):
        return TriMesh(vertices, triangles, np.asarray(parts, dtype=np.int64), tuple(names))
    return TriMesh(np.asarray(vertices, dtype=np.float64).reshape(-1, 3), triangles)


def _read_scene(path: str) -> TriMesh:
    loaded = trimesh.load(path, force="scene", process=False)
    meshes, names = [], []
    for node in loaded.graph.nodes_geometry:
        transform, geom_name = loaded.graph[node]
        geom = loaded.geometry[geom_name]
        if not isinstance(geom, trimesh.Trimesh):
            continue
        part = TriMesh(np.asarray(geom.vertices), np.asarray(geom.faces)).transformed(transform)
        meshes.append(part)
        names.append(str(node))
    return concatenate(meshes, names)


def load_mesh(path: str | os.PathLike) -> TriMesh:
    """Read OBJ (``o`` groups become part labels) or any trimesh scene format.

    Raises:
        WorldblockIOError: the file cannot be read.
    """
    path = os.fspath(path)
    ext = os.path.splitext(path)[1].lower()
    try:
        if ext == ".obj":
            mesh = _read_obj(path)
        else:
            mesh = _read_scene(path)
    except OSError as e:
        raise WorldblockIOError(f"could not read mesh '{path}': {e}") from e
    except ValueError as e:
        raise SchemaError(path, f"malformed mesh file: {e}") from e
    print_debug(f"-> Loaded {path}: {mesh.n_vertices} vertices, {mesh.n_triangles} triangles")
    return mesh


def write_blockout(b: Blockout, path: str | os.PathLike) -> None:
    """Layout JSON (heightfield + placements) that `edit` can reload."""
    try:
        atomic_write_text(os.fspath(path), json.dumps(b.to_dict(), sort_keys=True) + "\n")
    except OSError as e:
        raise WorldblockIOError(f"could not write blockout '{path}': {e}") from e


def read_blockout(path: str | os.PathLike) -> Blockout:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise WorldblockIOError(f"could not read blockout '{path}': {e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise SpecSyntaxError(f"blockout file is not valid JSON: {e}") from e
    return blockout_from_dict(data)

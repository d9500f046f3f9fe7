"""Synthetic training and evaluation data.

Two dataset families are produced here:

* grid scenes: known objects arranged on a 2x2 or 3x3 grid over a ground
  plane, with exact per-part ground truth, plus a degradation model that
  simulates reconstruction artifacts on the extracted objects;
* the navmesh benchmark: procedurally generated scenes in the moderate
  verticality, dense-placement regime, one directory per scene.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from multiprocessing import Pool

import numpy as np
import trimesh

from _utils import atomic_write_json, print_debug, print_info
from .blockout import GROUND_PART, export_mesh
from .decompose import PartSet, export_parts, part_set_from_meshes
from .errors import BadParamsError, EmptyMeshError, InsufficientAssetsError
from .generator import build_scene, write_scene
from .mesh_ops import TriMesh, concatenate
from .scene_spec import SceneSpec, scene_spec_to_dict

try:
    from tqdm import tqdm

    TQDM_AVAILABLE = True
except ImportError:
    TQDM_AVAILABLE = False

GRID_SIZES = {"2x2": 2, "3x3": 3}
BENCHMARK_SCENES = 50
BENCHMARK_OBJECTS = (10, 30)
BENCHMARK_INDEX = "benchmark.json"
GRID_INDEX = "grid.json"


def _scene_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint64)[0])


def _run_indexed(worker, tasks: list, jobs: int, desc: str) -> list:
    """Map ``worker`` over ``tasks``; results come back in task order."""
    if jobs > 1 and len(tasks) > 1:
        with Pool(processes=min(jobs, len(tasks))) as pool:
            it = pool.imap(worker, tasks)
            if TQDM_AVAILABLE:
                it = tqdm(it, total=len(tasks), desc=desc, unit="scene")
            return list(it)
    it = tqdm(tasks, desc=desc, unit="scene") if TQDM_AVAILABLE and len(tasks) > 1 else tasks
    return [worker(t) for t in it]


# --------------------------------------------------------------------------
# Grid scenes
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSceneSpec:
    grid: str = "2x2"
    spacing: float = 1.0
    assets: tuple[TriMesh, ...] = ()
    seed: int = 0
    with_replacement: bool = False

    def __post_init__(self):
        if self.grid not in GRID_SIZES:
            raise BadParamsError(f"grid must be one of {sorted(GRID_SIZES)}, got '{self.grid}'")
        if not self.spacing >= 0:
            raise BadParamsError(f"spacing must be >= 0, got {self.spacing}")
        object.__setattr__(self, "assets", tuple(self.assets))

    @property
    def size(self) -> int:
        return GRID_SIZES[self.grid]

    @property
    def cells(self) -> int:
        return self.size * self.size

    @property
    def pitch(self) -> float:
        """Distance between neighbouring cell centers (unit object + spacing)."""
        return 1.0 + self.spacing

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        half = (self.size - 1) / 2.0
        return ((col - half) * self.pitch, (row - half) * self.pitch)

    def cell_indices(self) -> list[tuple[int, int]]:
        return [(r, c) for r in range(self.size) for c in range(self.size)]


def unit_box_normalize(mesh: TriMesh) -> TriMesh:
    """Uniformly scale ``mesh`` so its largest side is 1, base-centered at the origin."""
    if mesh.is_empty:
        raise EmptyMeshError("cannot normalize an empty asset")
    lo, hi = mesh.bounds
    extent = float(np.max(hi - lo))
    if not extent > 0:
        raise BadParamsError("asset has zero extent")
    base = np.array([(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, lo[2]])
    return mesh.with_vertices((mesh.vertices - base) / extent)


def procedural_assets(count: int, seed: int) -> list[TriMesh]:
    """Simple primitive assets (boxes, cylinders, capsules, spheres) of random proportions."""
    rng = np.random.default_rng(seed)
    assets = []
    for _ in range(count):
        kind = int(rng.integers(4))
        if kind == 0:
            m = trimesh.creation.box(extents=rng.uniform(0.3, 1.0, size=3))
        elif kind == 1:
            m = trimesh.creation.cylinder(radius=float(rng.uniform(0.2, 0.5)), height=float(rng.uniform(0.3, 1.0)), sections=16)
        elif kind == 2:
            m = trimesh.creation.capsule(height=float(rng.uniform(0.2, 0.6)), radius=float(rng.uniform(0.15, 0.3)), count=[8, 8])
        else:
            m = trimesh.creation.icosphere(subdivisions=2, radius=float(rng.uniform(0.2, 0.5)))
        assets.append(TriMesh(np.asarray(m.vertices), np.asarray(m.faces)))
    return assets


def _ground_quad(gs: GridSceneSpec) -> TriMesh:
    half = gs.size * gs.pitch / 2.0
    vertices = np.array([[-half, -half, 0.0], [half, -half, 0.0], [half, half, 0.0], [-half, half, 0.0]])
    return TriMesh(vertices, np.array([[0, 1, 2], [0, 2, 3]]))


def object_name(row: int, col: int) -> str:
    return f"object_{row}_{col}"


def compose_grid_scene(gs: GridSceneSpec) -> tuple[TriMesh, PartSet]:
    """Lay one unit-box-normalized asset per grid cell over a shared ground plane.

    Objects rest on the plane ``z = 0`` at their cell centers. The ground
    plane spans the whole grid.

    Returns:
        The labeled scene mesh (``ground`` first, then ``object_<row>_<col>``)
        and the exact ground-truth part set.

    Raises:
        InsufficientAssetsError: fewer assets than cells without replacement.
    """
    n_assets = len(gs.assets)
    if n_assets == 0 or (n_assets < gs.cells and not gs.with_replacement):
        raise InsufficientAssetsError(
            f"grid {gs.grid} needs {gs.cells} assets (or with_replacement), got {n_assets}"
        )
    rng = np.random.default_rng(gs.seed)
    if gs.with_replacement:
        picks = rng.integers(n_assets, size=gs.cells)
    else:
        picks = rng.permutation(n_assets)[:gs.cells]

    meshes = [_ground_quad(gs)]
    names = [GROUND_PART]
    for (row, col), pick in zip(gs.cell_indices(), picks):
        cx, cy = gs.cell_center(row, col)
        meshes.append(unit_box_normalize(gs.assets[int(pick)]).translated((cx, cy, 0.0)))
        names.append(object_name(row, col))
    scene = concatenate(meshes, names)
    parts = part_set_from_meshes(meshes, names, ground_index=0)
    print_debug(f"-> Grid scene {gs.grid}: {len(meshes) - 1} object(s), pitch {gs.pitch:.3f}")
    return scene, parts


# --------------------------------------------------------------------------
# Degradation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DegradeParams:
    """Artifact model; radii are fractions of the mesh bounding-box diagonal."""

    floater_prob: float = 0.5
    floater_count: int = 3
    floater_radius: float = 0.03
    mask_prob: float = 0.5
    mask_spheres: int = 2
    mask_radius: float = 0.15
    break_prob: float = 0.5
    break_patches: int = 2
    break_radius: float = 0.1
    break_amp: float = 0.02
    max_removal: float = 0.3

    def __post_init__(self):
        for name in ("floater_prob", "mask_prob", "break_prob", "max_removal"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise BadParamsError(f"{name} must be in [0, 1], got {value}")
        for name in ("floater_count", "mask_spheres", "break_patches"):
            if getattr(self, name) < 0:
                raise BadParamsError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("floater_radius", "mask_radius", "break_radius"):
            if not getattr(self, name) > 0:
                raise BadParamsError(f"{name} must be positive, got {getattr(self, name)}")
        if self.break_amp < 0:
            raise BadParamsError(f"break_amp must be >= 0, got {self.break_amp}")

    @classmethod
    def none(cls) -> "DegradeParams":
        return cls(floater_prob=0.0, mask_prob=0.0, break_prob=0.0)


def _mask_regions(mesh: TriMesh, rng, params: DegradeParams, diagonal: float) -> TriMesh:
    centroids = mesh.corners().mean(axis=1)
    budget = int(np.floor(params.max_removal * mesh.n_triangles))
    removed = np.zeros(mesh.n_triangles, dtype=bool)
    for _ in range(params.mask_spheres):
        center = centroids[int(rng.integers(mesh.n_triangles))]
        radius = params.mask_radius * diagonal
        dist = np.linalg.norm(centroids - center, axis=1)
        inside = np.flatnonzero((dist <= radius) & ~removed)
        room = budget - int(removed.sum())
        if room <= 0:
            break
        if len(inside) > room:
            # Closest triangles first; index order breaks ties.
            inside = inside[np.lexsort((inside, dist[inside]))[:room]]
        removed[inside] = True
    if not removed.any():
        return mesh
    print_debug(f"-> Masked out {int(removed.sum())} of {mesh.n_triangles} triangle(s)")
    return mesh.submesh(~removed)


def _break_surface(mesh: TriMesh, rng, params: DegradeParams, diagonal: float) -> TriMesh:
    vertices = np.array(mesh.vertices, copy=True)
    for _ in range(params.break_patches):
        center = vertices[int(rng.integers(len(vertices)))]
        radius = params.break_radius * diagonal
        dist = np.linalg.norm(vertices - center, axis=1)
        inside = np.flatnonzero(dist <= radius)
        falloff = 1.0 - dist[inside] / radius
        offsets = rng.uniform(-params.break_amp, params.break_amp, size=(len(inside), 3))
        vertices[inside] += offsets * falloff[:, None]
    return mesh.with_vertices(vertices)


def _floaters(mesh: TriMesh, rng, params: DegradeParams, diagonal: float) -> list[TriMesh]:
    areas = mesh.face_areas()
    weights = areas / areas.sum()
    normals = mesh.face_normals()
    radius = params.floater_radius * diagonal
    sphere = trimesh.creation.icosphere(subdivisions=1, radius=radius)
    blob = TriMesh(np.asarray(sphere.vertices), np.asarray(sphere.faces))
    corners = mesh.corners()
    out = []
    for k in range(params.floater_count):
        face = int(rng.choice(mesh.n_triangles, p=weights))
        u, v = rng.random(2)
        if u + v > 1.0:
            u, v = 1.0 - u, 1.0 - v
        a, b, c = corners[face]
        anchor = a + u * (b - a) + v * (c - a)
        lift = 3.0 * radius * (1.0 + rng.random())
        out.append(blob.translated(anchor + normals[face] * lift).labeled(f"floater_{k}"))
    return out


def degrade_mesh(m: TriMesh, seed, params: DegradeParams | None = None) -> TriMesh:
    """Simulate reconstruction artifacts on an object mesh.

    Each artifact is applied with its own probability, in a fixed order:
    masked-out regions (triangles within random spheres are deleted, at most
    ``max_removal`` of all triangles), broken surfaces (vertices inside
    random patches are displaced by up to ``break_amp``), then floaters
    (small detached spheres hovering just off the surface).

    Raises:
        EmptyMeshError: ``m`` has no triangles.
    """
    params = params or DegradeParams()
    if m.is_empty:
        raise EmptyMeshError("cannot degrade an empty mesh")
    rng = np.random.default_rng(seed)
    lo, hi = m.bounds
    diagonal = float(np.linalg.norm(hi - lo)) or 1.0
    roll = rng.random(3)

    out = m
    if roll[0] < params.mask_prob and params.mask_spheres:
        out = _mask_regions(out, rng, params, diagonal)
    if roll[1] < params.break_prob and params.break_patches and params.break_amp > 0:
        out = _break_surface(out, rng, params, diagonal)
    if roll[2] < params.floater_prob and params.floater_count and out.area > 0:
        base = out if out.face_parts is not None else out.labeled("object")
        out = concatenate([base] + _floaters(out, rng, params, diagonal))
    return out


# --------------------------------------------------------------------------
# Object extraction and restoration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ObjectNormalization:
    """Axis-wise ``p -> (p - center) / scale`` into the unit box."""

    center: tuple[float, float, float]
    scale: tuple[float, float, float]

    def apply(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - np.asarray(self.center)) / np.asarray(self.scale)

    def invert(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) * np.asarray(self.scale) + np.asarray(self.center)

    def to_dict(self) -> dict:
        return {"center": list(self.center), "scale": list(self.scale)}


@dataclass(frozen=True)
class GridObject:
    cell: tuple[int, int]
    mesh: TriMesh
    normalization: ObjectNormalization


def extract_grid_objects(scene: TriMesh, gs: GridSceneSpec, ground_name: str = GROUND_PART) -> list[GridObject]:
    """Cut each cell's object out of a (possibly degraded) grid scene.

    Faces are assigned to the cell containing their centroid; faces labeled
    ``ground_name`` are skipped. Each object is returned normalized into
    the unit box centered at the origin, with the axis-wise scale and
    center needed to put it back.
    """
    centroids = scene.corners().mean(axis=1) if scene.n_triangles else np.zeros((0, 3))
    keep = np.ones(scene.n_triangles, dtype=bool)
    if scene.face_parts is not None and ground_name in scene.part_names:
        keep &= scene.face_parts != scene.part_names.index(ground_name)
    col = np.floor(centroids[:, 0] / gs.pitch + gs.size / 2.0).astype(np.int64)
    row = np.floor(centroids[:, 1] / gs.pitch + gs.size / 2.0).astype(np.int64)

    out = []
    for r, c in gs.cell_indices():
        mask = keep & (row == r) & (col == c)
        cx, cy = gs.cell_center(r, c)
        if not mask.any():
            norm = ObjectNormalization((cx, cy, 0.0), (1.0, 1.0, 1.0))
            out.append(GridObject((r, c), TriMesh.empty(), norm))
            continue
        obj = scene.submesh(mask)
        lo, hi = obj.bounds
        extent = hi - lo
        scale = np.where(extent > 0, extent, 1.0)
        norm = ObjectNormalization(
            tuple(float(v) for v in (lo + hi) / 2.0),
            tuple(float(v) for v in scale),
        )
        out.append(GridObject((r, c), obj.with_vertices(norm.apply(obj.vertices)), norm))
    return out


def restore_to_layout(mesh: TriMesh, normalization: ObjectNormalization) -> TriMesh:
    """Put a normalized (for example, refined) object back into the scene layout."""
    return mesh.with_vertices(normalization.invert(mesh.vertices))


def _grid_scene_task(task) -> dict:
    index, grid, seed, out_dir, spacing, degrade = task
    scene_seed = _scene_seed(seed, index)
    gs = GridSceneSpec(
        grid=grid,
        spacing=spacing,
        assets=tuple(procedural_assets(GRID_SIZES[grid] ** 2, scene_seed)),
        seed=scene_seed,
    )
    scene, parts = compose_grid_scene(gs)
    name = f"grid_{index:04d}"
    scene_dir = os.path.join(out_dir, name)
    os.makedirs(scene_dir, exist_ok=True)
    export_mesh(scene, "obj", os.path.join(scene_dir, "scene.obj"))
    export_parts(parts, os.path.join(scene_dir, "parts.gltf"))
    manifest = {"grid": grid, "spacing": spacing, "seed": scene_seed, "parts": len(parts)}
    if degrade:
        objects = extract_grid_objects(scene, gs)
        degraded, names = [], [GROUND_PART]
        for k, obj in enumerate(objects):
            if obj.mesh.is_empty:
                continue
            coarse = degrade_mesh(obj.mesh, _scene_seed(scene_seed, k), DegradeParams())
            degraded.append(restore_to_layout(coarse, obj.normalization))
            names.append(object_name(*obj.cell))
        coarse_scene = concatenate([scene.part(GROUND_PART)] + degraded, names)
        export_mesh(coarse_scene, "obj", os.path.join(scene_dir, "degraded.obj"))
        manifest["degraded"] = "degraded.obj"
        manifest["normalizations"] = [
            {"cell": list(obj.cell), **obj.normalization.to_dict()} for obj in objects
        ]
    atomic_write_json(os.path.join(scene_dir, "manifest.json"), manifest)
    return {"dir": name, "parts": len(parts)}


def build_grid_dataset(
    n_scenes: int,
    grid: str,
    seed: int,
    out: str | os.PathLike,
    *,
    spacing: float = 1.0,
    degrade: bool = False,
    jobs: int = 1,
) -> dict:
    """Write ``n_scenes`` grid scenes with procedural assets and their ground truth."""
    if n_scenes < 1:
        raise BadParamsError(f"n_scenes must be >= 1, got {n_scenes}")
    out = os.fspath(out)
    os.makedirs(out, exist_ok=True)
    tasks = [(i, grid, int(seed), out, float(spacing), bool(degrade)) for i in range(n_scenes)]
    scenes = _run_indexed(_grid_scene_task, tasks, jobs, "grid scenes")
    index = {"grid": grid, "seed": int(seed), "spacing": spacing, "degrade": degrade, "scenes": scenes}
    atomic_write_json(os.path.join(out, GRID_INDEX), index)
    print_info(f"Wrote {len(scenes)} grid scene(s) to '{out}'")
    return index


# --------------------------------------------------------------------------
# Navmesh benchmark
# --------------------------------------------------------------------------


def tier_counts(total: int) -> tuple[int, int, int]:
    """Split an object count into (hero, medium, small), roughly 1:3:6."""
    hero = max(1, int(round(total / 10.0)))
    medium = int(round(3.0 * total / 10.0))
    small = max(0, total - hero - medium)
    return hero, medium, small


def benchmark_scene_spec(template: SceneSpec, seed: int, index: int, objects_range: tuple[int, int]) -> SceneSpec:
    """The scene spec of benchmark scene ``index``: template, own seed, own object count."""
    scene_seed = _scene_seed(seed, index)
    rng = np.random.default_rng(scene_seed)
    total = int(rng.integers(objects_range[0], objects_range[1] + 1))
    return replace(template.with_counts(*tier_counts(total)), seed=scene_seed)


def _benchmark_task(task) -> dict:
    index, template, seed, objects_range, out_dir, config = task
    spec = benchmark_scene_spec(template, seed, index, objects_range)
    name = f"scene_{index:04d}"
    art = build_scene(spec)
    manifest = write_scene(art, os.path.join(out_dir, name), {**config, "scene_index": index})
    return {
        "dir": name,
        "seed": spec.seed,
        "object_count": manifest["object_count"],
        "placed_count": manifest["placed_count"],
        "navmesh_components": manifest["navmesh"]["component_count"],
    }


def build_benchmark(
    n_scenes: int = BENCHMARK_SCENES,
    objects_range: tuple[int, int] = BENCHMARK_OBJECTS,
    spec_template: SceneSpec | None = None,
    seed: int = 0,
    out: str | os.PathLike = "benchmark",
    *,
    jobs: int = 1,
    config: dict | None = None,
) -> dict:
    """Generate the navmesh benchmark, one directory per scene.

    Every scene runs the full generate pipeline with a seed derived from
    ``(seed, index)`` and an object count drawn uniformly from
    ``objects_range``. ``benchmark.json`` lists the scenes in index order.

    Raises:
        BadParamsError: ``n_scenes < 1`` or an invalid ``objects_range``.
        WorldblockIOError: a file could not be written.
    """
    if n_scenes < 1:
        raise BadParamsError(f"n_scenes must be >= 1, got {n_scenes}")
    lo, hi = (int(v) for v in objects_range)
    if lo < 1 or hi < lo:
        raise BadParamsError(f"objects_range must satisfy 1 <= min <= max, got {objects_range}")
    template = spec_template or SceneSpec()
    out = os.fspath(out)
    os.makedirs(out, exist_ok=True)
    tasks = [(i, template, int(seed), (lo, hi), out, dict(config or {})) for i in range(n_scenes)]
    scenes = _run_indexed(_benchmark_task, tasks, jobs, "benchmark")
    index = {
        "seed": int(seed),
        "n_scenes": n_scenes,
        "objects_range": [lo, hi],
        "template": scene_spec_to_dict(template),
        "scenes": scenes,
    }
    atomic_write_json(os.path.join(out, BENCHMARK_INDEX), index)
    print_info(f"Wrote {n_scenes} benchmark scene(s) to '{out}'")
    return index

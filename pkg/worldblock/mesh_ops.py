"""Triangle-mesh container and topology helpers shared by every module."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import trimesh
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class TriMesh:
    """Vertices (meters), index triples and optional per-face part labels.

    ``face_parts[k]`` indexes ``part_names``; both are absent for unlabeled
    meshes.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    face_parts: np.ndarray | None = None
    part_names: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise ValueError("mesh vertices must be finite")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "part_names", tuple(self.part_names))
        if self.face_parts is not None:
            fp = np.asarray(self.face_parts, dtype=np.int64).reshape(-1)
            if len(fp) != len(t):
                raise ValueError("face_parts must have one entry per triangle")
            if fp.size and (fp.min() < 0 or fp.max() >= len(self.part_names)):
                raise ValueError("face_parts index out of range of part_names")
            object.__setattr__(self, "face_parts", fp)

    # -- basic queries ----------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def is_empty(self) -> bool:
        return self.n_triangles == 0

    @property
    def bounds(self) -> np.ndarray:
        if self.n_vertices == 0:
            return np.zeros((2, 3))
        return np.stack([self.vertices.min(axis=0), self.vertices.max(axis=0)])

    def corners(self) -> np.ndarray:
        return self.vertices[self.triangles]

    def face_cross(self) -> np.ndarray:
        c = self.corners()
        return np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_cross(), axis=1)

    @property
    def area(self) -> float:
        return float(self.face_areas().sum())

    def face_normals(self) -> np.ndarray:
        """Unit normals; zero rows for degenerate triangles."""
        cross = self.face_cross()
        norm = np.linalg.norm(cross, axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(norm > 0, cross / np.where(norm > 0, norm, 1.0), 0.0)

    def labels(self) -> list[str]:
        """Per-face part name (empty string when unlabeled)."""
        if self.face_parts is None:
            return [""] * self.n_triangles
        return [self.part_names[k] for k in self.face_parts]

    # -- constructors / transforms -----------------------------------------

    def submesh(self, face_mask) -> "TriMesh":
        """Faces selected by ``face_mask`` with unreferenced vertices dropped."""
        faces = self.triangles[face_mask]
        used, inverse = np.unique(faces.reshape(-1), return_inverse=True)
        face_parts = None if self.face_parts is None else self.face_parts[face_mask]
        return TriMesh(self.vertices[used], inverse.reshape(-1, 3), face_parts, self.part_names)

    def part(self, name: str) -> "TriMesh":
        if self.face_parts is None or name not in self.part_names:
            raise KeyError(name)
        return self.submesh(self.face_parts == self.part_names.index(name))

    def iter_parts(self) -> Iterable[tuple[str, "TriMesh"]]:
        if self.face_parts is None:
            yield "", self
            return
        for k, name in enumerate(self.part_names):
            mask = self.face_parts == k
            if mask.any():
                yield name, self.submesh(mask)

    def with_vertices(self, vertices: np.ndarray) -> "TriMesh":
        return TriMesh(vertices, self.triangles, self.face_parts, self.part_names)

    def transformed(self, matrix: np.ndarray) -> "TriMesh":
        """Apply a 4x4 homogeneous transform."""
        matrix = np.asarray(matrix, dtype=np.float64)
        v = self.vertices @ matrix[:3, :3].T + matrix[:3, 3]
        return self.with_vertices(v)

    def translated(self, offset) -> "TriMesh":
        return self.with_vertices(self.vertices + np.asarray(offset, dtype=np.float64))

    def labeled(self, name: str) -> "TriMesh":
        return TriMesh(self.vertices, self.triangles, np.zeros(self.n_triangles, dtype=np.int64), (name,))

    def to_trimesh(self) -> trimesh.Trimesh:
        return trimesh.Trimesh(vertices=self.vertices.copy(), faces=self.triangles.copy(), process=False)

    @classmethod
    def from_trimesh(cls, mesh: trimesh.Trimesh, name: str | None = None) -> "TriMesh":
        out = cls(np.asarray(mesh.vertices), np.asarray(mesh.faces))
        return out.labeled(name) if name else out

    @classmethod
    def empty(cls) -> "TriMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))


def concatenate(meshes: Sequence[TriMesh], names: Sequence[str] | None = None) -> TriMesh:
    """Stack meshes into one; ``names`` labels each input as a part.

    Without ``names`` existing labels are kept (parts with equal names merge).
    """
    if not meshes:
        return TriMesh.empty()
    verts, faces, parts = [], [], []
    part_names: list[str] = []
    offset = 0
    for k, m in enumerate(meshes):
        verts.append(m.vertices)
        faces.append(m.triangles + offset)
        offset += m.n_vertices
        if names is not None:
            if names[k] not in part_names:
                part_names.append(names[k])
            parts.append(np.full(m.n_triangles, part_names.index(names[k]), dtype=np.int64))
        else:
            local = m.labels() if m.face_parts is not None else ["mesh"] * m.n_triangles
            ids = []
            for label in local:
                if label not in part_names:
                    part_names.append(label)
                ids.append(part_names.index(label))
            parts.append(np.asarray(ids, dtype=np.int64))
    return TriMesh(
        np.concatenate(verts),
        np.concatenate(faces) if faces else np.zeros((0, 3), dtype=np.int64),
        np.concatenate(parts),
        tuple(part_names),
    )


def weld_vertices(mesh: TriMesh, eps: float) -> tuple[TriMesh, np.ndarray]:
    """Merge vertices closer than ``eps``; drop collapsed and unused geometry.

    Each cluster is represented by its lowest original index. Returns the
    welded mesh and the old -> new vertex map (-1 for dropped vertices).
    """
    n = mesh.n_vertices
    if n == 0:
        return mesh, np.zeros(0, dtype=np.int64)
    pairs = cKDTree(mesh.vertices).query_pairs(r=eps, output_type="ndarray") if eps > 0 else np.zeros((0, 2), dtype=np.int64)
    graph = sparse.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, cluster = connected_components(graph, directed=False)
    rep = np.full(cluster.max() + 1, n, dtype=np.int64)
    np.minimum.at(rep, cluster, np.arange(n))
    target = rep[cluster]

    faces = target[mesh.triangles]
    keep = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    faces = faces[keep]
    used = np.unique(faces.reshape(-1))
    remap = np.full(n, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    face_parts = None if mesh.face_parts is None else mesh.face_parts[keep]
    welded = TriMesh(mesh.vertices[used], remap[faces], face_parts, mesh.part_names)
    old_to_new = remap[target]
    return welded, old_to_new


def vertex_components(mesh: TriMesh) -> tuple[int, np.ndarray]:
    """Connected components of the vertex graph spanned by triangle edges."""
    n = mesh.n_vertices
    t = mesh.triangles
    rows = np.concatenate([t[:, 0], t[:, 1], t[:, 2]])
    cols = np.concatenate([t[:, 1], t[:, 2], t[:, 0]])
    graph = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    count, labels = connected_components(graph, directed=False)
    return int(count), labels


def split_components(mesh: TriMesh) -> list[TriMesh]:
    """One mesh per connected component, ordered by lowest vertex index."""
    count, labels = vertex_components(mesh)
    face_label = labels[mesh.triangles[:, 0]] if mesh.n_triangles else np.zeros(0, dtype=np.int64)
    out = []
    for label in range(count):
        mask = face_label == label
        if mask.any():
            out.append(mesh.submesh(mask))
    return out


def remove_duplicate_faces(mesh: TriMesh) -> TriMesh:
    """Drop triangles whose vertex-index set repeats an earlier triangle."""
    if mesh.n_triangles == 0:
        return mesh
    key = np.sort(mesh.triangles, axis=1)
    _, first = np.unique(key, axis=0, return_index=True)
    keep = np.zeros(mesh.n_triangles, dtype=bool)
    keep[first] = True
    if keep.all():
        return mesh
    face_parts = None if mesh.face_parts is None else mesh.face_parts[keep]
    return TriMesh(mesh.vertices, mesh.triangles[keep], face_parts, mesh.part_names)


def canonical_triangles(mesh: TriMesh, decimals: int = 9) -> np.ndarray:
    """Triangle corner coordinates in an order independent of indexing.

    Corners are rotated so the lexicographically smallest comes first
    (winding preserved), then triangles are sorted lexicographically.
    """
    corners = mesh.corners()
    if len(corners) == 0:
        return corners
    keys = np.round(corners, decimals)
    # Rotate each triangle so its smallest corner leads.
    flat = keys.reshape(len(keys), 3, 3)
    lead = np.array([min(range(3), key=lambda k, tri=tri: tuple(tri[k])) for tri in flat])
    idx = (np.arange(3)[None, :] + lead[:, None]) % 3
    rotated = np.take_along_axis(corners, idx[:, :, None], axis=1)
    rotated_keys = np.take_along_axis(keys, idx[:, :, None], axis=1).reshape(len(keys), 9)
    order = np.lexsort(rotated_keys.T[::-1])
    return rotated[order]


def geometry_digest(mesh: TriMesh, decimals: int = 9) -> str:
    """Stable hash of the mesh geometry (indexing and face order ignored)."""
    h = hashlib.md5()
    canon = np.round(canonical_triangles(mesh, decimals), decimals) + 0.0
    h.update(np.ascontiguousarray(canon).tobytes())
    return h.hexdigest()


def box_mesh(center, size, yaw: float = 0.0) -> TriMesh:
    """Closed box with outward-facing triangles; ``center`` is the base center."""
    sx, sy, sz = (float(s) for s in size)
    local = np.array([
        [-0.5, -0.5, 0.0], [0.5, -0.5, 0.0], [0.5, 0.5, 0.0], [-0.5, 0.5, 0.0],
        [-0.5, -0.5, 1.0], [0.5, -0.5, 1.0], [0.5, 0.5, 1.0], [-0.5, 0.5, 1.0],
    ]) * np.array([sx, sy, sz])
    c, s = np.cos(yaw), np.sin(yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    vertices = local @ rot.T + np.asarray(center, dtype=np.float64)
    triangles = np.array([
        [0, 2, 1], [0, 3, 2],  # bottom (-z)
        [4, 5, 6], [4, 6, 7],  # top (+z)
        [0, 1, 5], [0, 5, 4],  # -y
        [1, 2, 6], [1, 6, 5],  # +x
        [2, 3, 7], [2, 7, 6],  # +y
        [3, 0, 4], [3, 4, 7],  # -x
    ])
    return TriMesh(vertices, triangles)

"""Evaluation metrics and protocols.

Chamfer distance here is the mean Euclidean (not squared) nearest-neighbour
distance, symmetrized with a factor of one half. All protocol thresholds are
in normalized-cube units. Both choices are recorded in every report.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import asdict, dataclass, field
from multiprocessing import Pool
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from _utils import atomic_write_json, atomic_write_text, print_debug, print_info
from .blockout import NormalizationTransform, normalize_scene
from .errors import (
    BadParamsError,
    DegenerateBoundsError,
    DegenerateCloudError,
    DimensionMismatchError,
    EmptyCloudError,
    EmptySetError,
)
from .mesh_ops import TriMesh, canonical_triangles, concatenate, geometry_digest
from .navmesh import PointCloud, reextract_navmesh, sample_surface
from .scene_spec import AgentParams

try:
    from tqdm import tqdm

    TQDM_AVAILABLE = True
except ImportError:
    TQDM_AVAILABLE = False

FSCORE_TAUS = (0.01, 0.02, 0.03, 0.05)
DEFAULT_SAMPLES = 20_000
CHAMFER_VARIANT = "0.5 * (mean_p min_q |p-q| + mean_q min_p |q-p|), euclidean"
UNITS = "normalized cube [-1, 1]^3"
NAVMESH_COLUMNS = ("method", "navmesh_cd")


def _points(cloud) -> np.ndarray:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyCloudError("point cloud is empty")
    return pts


def nearest_distances(p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distances from each point of ``p`` to ``q`` and from each of ``q`` to ``p``."""
    d_pq, _ = cKDTree(q).query(p, k=1)
    d_qp, _ = cKDTree(p).query(q, k=1)
    return d_pq, d_qp


def chamfer(p, q) -> float:
    """Symmetric Chamfer distance.

    Raises:
        EmptyCloudError: either cloud is empty.
    """
    d_pq, d_qp = nearest_distances(_points(p), _points(q))
    return 0.5 * (float(d_pq.mean()) + float(d_qp.mean()))


def fscore(p, q, tau: float) -> float:
    """Harmonic mean of precision (P near Q) and recall (Q near P) at ``tau``."""
    if not tau > 0:
        raise BadParamsError(f"tau must be positive, got {tau}")
    d_pq, d_qp = nearest_distances(_points(p), _points(q))
    precision = float(np.mean(d_pq <= tau))
    recall = float(np.mean(d_qp <= tau))
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


# --------------------------------------------------------------------------
# ICP
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class IcpResult:
    rotation: np.ndarray
    translation: np.ndarray
    rms: float
    iterations: int
    converged: bool
    rms_history: tuple[float, ...] = ()

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation

    def to_dict(self) -> dict:
        return {
            "matrix": self.matrix.tolist(),
            "rms": self.rms,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def rigid_fit(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares rotation and translation mapping ``src`` onto ``dst``."""
    c_src = src.mean(axis=0)
    c_dst = dst.mean(axis=0)
    h = (src - c_src).T @ (dst - c_dst)
    u, _, vt = np.linalg.svd(h)
    correction = np.eye(3)
    if np.linalg.det(vt.T @ u.T) < 0:
        correction[2, 2] = -1.0
    rotation = vt.T @ correction @ u.T
    return rotation, c_dst - rotation @ c_src


def _check_cloud(pts: np.ndarray, name: str):
    if len(pts) < 3:
        raise DegenerateCloudError(f"{name} needs at least 3 points, got {len(pts)}")
    centered = pts - pts.mean(axis=0)
    scale = float(np.abs(centered).max())
    if scale == 0 or np.linalg.matrix_rank(centered, tol=1e-12 * scale * len(pts)) < 2:
        raise DegenerateCloudError(f"{name} points are collinear")


def icp_align(p, q, max_iters: int = 100, tol: float = 1e-10) -> IcpResult:
    """Point-to-point ICP moving ``p`` toward ``q``.

    Starts from centroid alignment; each iteration pairs every point of the
    moved ``p`` with its nearest neighbour in ``q`` and re-solves the rigid
    fit in closed form. Stops when the RMS changes by less than ``tol``.

    Raises:
        DegenerateCloudError: fewer than 3 points or all points collinear.
    """
    src = _points(p)
    dst = _points(q)
    _check_cloud(src, "source cloud")
    _check_cloud(dst, "target cloud")

    tree = cKDTree(dst)
    rotation = np.eye(3)
    translation = dst.mean(axis=0) - src.mean(axis=0)
    dist, _ = tree.query(src @ rotation.T + translation, k=1)
    prev = float(np.sqrt(np.mean(dist**2)))
    history = []
    converged = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        _, idx = tree.query(src @ rotation.T + translation, k=1)
        matched = dst[idx]
        rotation, translation = rigid_fit(src, matched)
        residual = src @ rotation.T + translation - matched
        rms = float(np.sqrt(np.mean(np.sum(residual**2, axis=1))))
        history.append(rms)
        if abs(prev - rms) < tol:
            converged = True
            break
        prev = rms
    print_debug(f"-> ICP: {iterations} iteration(s), rms {history[-1]:.3e}")
    return IcpResult(rotation, translation, history[-1], iterations, converged, tuple(history))


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------


@dataclass
class EvalReport:
    protocol: str
    method: str
    items: list[dict] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    columns: tuple[str, ...] = ()

    @property
    def aggregates(self) -> dict:
        """Mean of every metric column over the items."""
        out = {}
        for col in self.columns[1:]:
            values = [item[col] for item in self.items]
            out[col] = float(np.mean(values)) if values else float("nan")
        return out

    def to_json(self) -> dict:
        return {
            "protocol": self.protocol,
            "method": self.method,
            "chamfer_variant": CHAMFER_VARIANT,
            "units": UNITS,
            "items": self.items,
            "aggregates": self.aggregates,
            "provenance": self.provenance,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        agg = self.aggregates
        writer.writerow([self.method] + [repr(agg[c]) for c in self.columns[1:]])
        return buf.getvalue()

    def write(self, csv_path: str | os.PathLike, json_path: str | os.PathLike | None = None) -> None:
        atomic_write_text(os.fspath(csv_path), self.to_csv())
        if json_path is not None:
            atomic_write_json(os.fspath(json_path), self.to_json())


# --------------------------------------------------------------------------
# Navmesh CD protocol
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NavmeshCDResult:
    cd: float
    icp: IcpResult
    pred_transform: NormalizationTransform
    gt_transform: NormalizationTransform
    config: dict

    def __float__(self) -> float:
        return self.cd

    def to_dict(self) -> dict:
        return {
            "navmesh_cd": self.cd,
            "icp": self.icp.to_dict(),
            "pred_normalization": self.pred_transform.to_dict(),
            "gt_normalization": self.gt_transform.to_dict(),
            "config": self.config,
        }


def navmesh_cd_protocol(
    pred_scene: TriMesh,
    gt_navmesh: TriMesh,
    agent: AgentParams | None = None,
    n_samples: int = DEFAULT_SAMPLES,
    *,
    cell_size: float | None = None,
    cell_height: float = 0.2,
    min_region_fraction: float = 0.05,
    reference_scene: TriMesh | None = None,
    seed: int = 0,
    max_iters: int = 100,
    tol: float = 1e-10,
) -> NavmeshCDResult:
    """Navmesh Chamfer distance between a predicted scene and a ground-truth navmesh.

    The predicted navmesh is re-extracted in world units. Each navmesh is then
    normalized with its own scene: the prediction by ``pred_scene``, the
    ground truth by ``reference_scene`` (default ``pred_scene``) for scale.
    Both are sampled with the same seed, the prediction is aligned with ICP,
    and the Chamfer distance of the aligned clouds is returned.
    """
    agent = agent or AgentParams()
    lo, hi = pred_scene.bounds
    if cell_size is None:
        cell_size = float(max(hi[0] - lo[0], hi[1] - lo[1])) / 256.0
    print_debug("STEP 1: RE-EXTRACT NAVMESH")
    pred_nav = reextract_navmesh(
        pred_scene, agent, cell_size, cell_height, min_region_fraction=min_region_fraction
    ).to_trimesh()

    print_debug("STEP 2: NORMALIZE")
    _, pred_nav_n, pred_t = normalize_scene(pred_scene, pred_nav)
    reference = reference_scene if reference_scene is not None else pred_scene
    _, gt_nav_n, gt_t = normalize_scene(reference, gt_navmesh)

    print_debug("STEP 3: SAMPLE + ICP")
    p = sample_surface(pred_nav_n, n_samples, seed)
    q = sample_surface(gt_nav_n, n_samples, seed)
    icp = icp_align(p, q, max_iters=max_iters, tol=tol)
    cd = chamfer(icp.apply(p.points), q.points)
    config = {
        "agent": asdict(agent),
        "cell_size": cell_size,
        "cell_height": cell_height,
        "min_region_fraction": min_region_fraction,
        "n_samples": n_samples,
        "seed": seed,
        "icp": {"max_iters": max_iters, "tol": tol, "init": "centroid"},
        "normalized_cell_size": cell_size * pred_t.scale,
    }
    print_info(f"Navmesh CD {cd:.5f} (normalized units)")
    return NavmeshCDResult(cd, icp, pred_t, gt_t, config)


def _navmesh_item(args) -> dict:
    name, pred_scene, gt_navmesh, reference, agent, n_samples, seed = args
    result = navmesh_cd_protocol(pred_scene, gt_navmesh, agent, n_samples, reference_scene=reference, seed=seed)
    return {"name": name, "navmesh_cd": result.cd, **{k: v for k, v in result.to_dict().items() if k != "navmesh_cd"}}


def evaluate_navmesh_batch(
    pairs: Sequence[tuple],
    agent: AgentParams | None = None,
    n_samples: int = DEFAULT_SAMPLES,
    jobs: int = 1,
    method: str = "worldblock",
    seed: int = 0,
) -> EvalReport:
    """Navmesh CD over many ``(name, pred_scene, gt_navmesh[, reference_scene])`` tuples.

    ``reference_scene`` is the ground-truth scene the navmesh was baked from;
    without it the ground truth is normalized with the predicted scene.
    """
    if not pairs:
        raise EmptySetError("no scene/navmesh pairs to evaluate")
    agent = agent or AgentParams()
    tasks = []
    for entry in pairs:
        name, scene, nav = entry[:3]
        reference = entry[3] if len(entry) > 3 else None
        tasks.append((name, scene, nav, reference, agent, n_samples, seed))
    if jobs > 1 and len(tasks) > 1:
        with Pool(processes=min(jobs, len(tasks))) as pool:
            it = pool.imap(_navmesh_item, tasks)
            if TQDM_AVAILABLE:
                it = tqdm(it, total=len(tasks), desc="eval-navmesh", unit="scene")
            items = list(it)
    else:
        it = tasks
        if TQDM_AVAILABLE and len(tasks) > 1:
            it = tqdm(tasks, desc="eval-navmesh", unit="scene")
        items = [_navmesh_item(t) for t in it]
    return EvalReport(
        protocol="navmesh_cd",
        method=method,
        items=items,
        provenance={"agent": asdict(agent), "n_samples": n_samples, "seed": seed},
        columns=NAVMESH_COLUMNS,
    )


# --------------------------------------------------------------------------
# Part matching protocol
# --------------------------------------------------------------------------


def joint_normalization(gt_mesh: TriMesh, margin: float = 0.02) -> NormalizationTransform:
    """Centre the ground-truth bounding box and fit it into ``[-1+m, 1-m]``."""
    lo, hi = gt_mesh.bounds
    extent = float(np.max(hi - lo))
    if not extent > 0:
        raise DegenerateBoundsError("ground-truth parts have zero extent")
    scale = 2.0 * (1.0 - margin) / extent
    center = (lo + hi) / 2.0
    return NormalizationTransform(scale, tuple(float(v) for v in -scale * center), margin)


def part_sample(mesh: TriMesh, n_samples: int) -> PointCloud:
    """Sample a part with a seed derived from its geometry.

    Triangles are put in canonical order first, so identical geometry gives
    identical samples whatever its indexing or position in the part list.
    """
    canon = canonical_triangles(mesh)
    canonical = TriMesh(canon.reshape(-1, 3), np.arange(len(canon) * 3).reshape(-1, 3))
    seed = int(geometry_digest(mesh)[:8], 16)
    return sample_surface(canonical, n_samples, seed)


def part_match_eval(
    pred,
    gt,
    taus: Iterable[float] = FSCORE_TAUS,
    n_samples: int = 4096,
    method: str = "worldblock",
) -> EvalReport:
    """Nearest-prediction Chamfer distance and F-scores per ground-truth part.

    Both part sets are normalized with one transform fitted to the
    ground-truth bounds. Each ground-truth part is matched to the prediction
    with the smallest Chamfer distance (ties: earliest prediction).

    Raises:
        EmptySetError: either part set is empty.
    """
    taus = tuple(float(t) for t in taus)
    if not len(pred.parts) or not len(gt.parts):
        raise EmptySetError("part_match_eval needs non-empty prediction and ground-truth sets")
    gt_world = [p.world_mesh() for p in gt.parts]
    pred_world = [p.world_mesh() for p in pred.parts]
    transform = joint_normalization(concatenate(gt_world))
    gt_clouds = [part_sample(transform.apply_mesh(m), n_samples) for m in gt_world]
    pred_clouds = [part_sample(transform.apply_mesh(m), n_samples) for m in pred_world]

    columns = ("method", "CD") + tuple(f"F-score@{t:g}" for t in taus)
    items = []
    for g, (part, cloud) in enumerate(zip(gt.parts, gt_clouds)):
        cds = [chamfer(pc, cloud) for pc in pred_clouds]
        best = int(np.argmin(cds))
        item = {"gt_part": part.name, "matched_pred": pred.parts[best].name, "CD": cds[best]}
        for t, col in zip(taus, columns[2:]):
            item[col] = fscore(pred_clouds[best], cloud, t)
        items.append(item)
        print_debug(f"-> GT part {part.name}: matched {pred.parts[best].name}, CD {cds[best]:.5f}")
    return EvalReport(
        protocol="part_match",
        method=method,
        items=items,
        provenance={
            "n_samples": n_samples,
            "taus": list(taus),
            "normalization": transform.to_dict(),
            "sampling_seed": "md5 of canonical part geometry",
        },
        columns=columns,
    )


# --------------------------------------------------------------------------
# Masks
# --------------------------------------------------------------------------


def mask_iou(a, b) -> float:
    """|a & b| / |a | b|, with two empty masks counting as identical."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(a, b).sum()) / union


@dataclass(frozen=True)
class EnhancementVerdict:
    accepted_index: int | None
    ious: tuple[float, ...]

    @property
    def accepted(self) -> bool:
        return self.accepted_index is not None


def verify_enhancement(coarse_mask, candidates: Sequence, threshold: float = 0.8) -> EnhancementVerdict:
    """First candidate whose foreground IoU with the coarse render reaches ``threshold``.

    Candidates are tried in order and checking stops at the first accepted
    one, the way a regenerate-until-accepted loop consumes them.
    """
    ious = []
    for k, cand in enumerate(candidates):
        iou = mask_iou(coarse_mask, cand)
        ious.append(iou)
        if iou >= threshold:
            return EnhancementVerdict(k, tuple(ious))
    return EnhancementVerdict(None, tuple(ious))


def extract_by_mask(coarse_mask, enhanced_mask, threshold: float = 0.8):
    """The enhanced foreground if it passes the IoU gate, else ``None``."""
    if mask_iou(coarse_mask, enhanced_mask) >= threshold:
        return np.asarray(enhanced_mask, dtype=bool)
    return None

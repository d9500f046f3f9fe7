"""Hierarchical box placement (hero -> medium -> small) with navigability.

Free space is tracked on an occupancy grid over the extent. A cell is
blocked when its center lies within ``agent.radius + margin + cell`` of a
footprint. Generated scenes use a margin of two navmesh cells, so a free
4-connected chain of cells stays walkable after the navmesh voxelizes the
scene and erodes obstacles by the agent radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from _utils import print_debug, print_warning
from .errors import NavigabilityImpossibleError, TierOrderError
from .partition import RegionSet
from .scene_spec import TIERS, AgentParams, SceneSpec
from .terrain import HeightField, Rect, sample_height

MIN_FREE_FRACTION = 0.6
ATTEMPTS_PER_TARGET = 50
MEDIUM_ANNULUS = (2.0, 8.0)
REGULAR_YAW_STEP = math.radians(15.0)


def tier_height_band(tier: str, verticality: float) -> tuple[float, float]:
    if tier == "hero":
        scale = 0.5 + verticality
        return (4.0 * scale, 12.0 * scale)
    if tier == "medium":
        return (1.5, 4.0)
    return (0.3, 1.5)


@dataclass(frozen=True)
class Placement:
    id: int
    tier: str
    footprint: Rect
    height: float
    base_z: float = 0.0

    @property
    def yaw(self) -> float:
        return self.footprint.yaw

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "tier": self.tier,
            "footprint": self.footprint.to_list(),
            "height": self.height,
            "base_z": self.base_z,
        }


@dataclass(frozen=True)
class PlacementSet:
    placements: tuple[Placement, ...]
    occupancy: np.ndarray
    extent: float
    agent: AgentParams
    anchors: tuple[tuple[float, float], ...] = ()
    completed_tiers: tuple[str, ...] = ()
    requested: Mapping[str, int] = field(default_factory=dict)
    placed: Mapping[str, int] = field(default_factory=dict)
    margin: float = 0.0

    @property
    def resolution(self) -> int:
        return self.occupancy.shape[0]

    @property
    def cell_size(self) -> float:
        return self.extent / self.resolution

    @property
    def clearance(self) -> float:
        return self.agent.radius + self.margin

    def by_id(self, placement_id: int) -> Placement:
        for p in self.placements:
            if p.id == placement_id:
                return p
        raise KeyError(placement_id)

    def footprints(self) -> list[Rect]:
        return [p.footprint for p in self.placements]

    def counts(self) -> dict[str, int]:
        return {tier: sum(1 for p in self.placements if p.tier == tier) for tier in TIERS}


def _freeze(grid: np.ndarray) -> np.ndarray:
    grid.setflags(write=False)
    return grid


def block_cells(grid: np.ndarray, fp: Rect, extent: float, clearance: float) -> np.ndarray:
    """Mark cells whose centers lie within ``clearance + cell`` of ``fp``."""
    res = grid.shape[0]
    cs = extent / res
    reach = clearance + cs
    corners = fp.corners()
    j0 = max(int(math.floor((corners[:, 0].min() - reach) / cs)), 0)
    j1 = min(int(math.ceil((corners[:, 0].max() + reach) / cs)), res - 1)
    i0 = max(int(math.floor((corners[:, 1].min() - reach) / cs)), 0)
    i1 = min(int(math.ceil((corners[:, 1].max() + reach) / cs)), res - 1)
    if j0 > j1 or i0 > i1:
        return grid
    xs = (np.arange(j0, j1 + 1) + 0.5) * cs
    ys = (np.arange(i0, i1 + 1) + 0.5) * cs
    gx, gy = np.meshgrid(xs, ys)
    grid[i0:i1 + 1, j0:j1 + 1] |= fp.distance(gx, gy) <= reach
    return grid


def border_cells(resolution: int, extent: float, clearance: float) -> np.ndarray:
    """Cells whose centers lie within ``clearance`` of the extent boundary."""
    cs = extent / resolution
    centers = (np.arange(resolution) + 0.5) * cs
    near = np.minimum(centers, extent - centers) < clearance
    return near[:, None] | near[None, :]


def occupancy_grid(
    placements: Sequence[Placement], extent: float, resolution: int, agent: AgentParams, margin: float = 0.0
) -> np.ndarray:
    # The navmesh erodes the world border too, so the ring starts blocked.
    clearance = agent.radius + margin
    grid = border_cells(resolution, extent, clearance)
    for p in placements:
        block_cells(grid, p.footprint, extent, clearance)
    return grid


def _anchor_cells(anchors, extent, resolution, clearance=0.0):
    """Grid cells of region anchors; anchors in the blocked border ring are skipped."""
    cs = extent / resolution
    ring = border_cells(resolution, extent, clearance)
    cells = []
    for x, y in anchors:
        j = min(max(int(x / cs), 0), resolution - 1)
        i = min(max(int(y / cs), 0), resolution - 1)
        if not ring[i, j]:
            cells.append((i, j))
    return cells


def free_space_components(ps: PlacementSet) -> tuple[np.ndarray, int]:
    """Label 4-connected components of free occupancy cells."""
    labels, count = ndimage.label(~ps.occupancy)
    return labels, int(count)


def _navigable(occupancy: np.ndarray, anchor_cells, min_free_fraction: float = 0.0) -> bool:
    free = ~occupancy
    if free.mean() < min_free_fraction:
        return False
    if any(occupancy[i, j] for i, j in anchor_cells):
        return False
    _, count = ndimage.label(free)
    return count == 1


def empty_placement_set(rs: RegionSet, spec: SceneSpec) -> PlacementSet:
    res = spec.occupancy_resolution
    margin = 2.0 * spec.cell_size
    return PlacementSet(
        placements=(),
        occupancy=_freeze(occupancy_grid((), rs.extent, res, spec.agent, margin)),
        extent=rs.extent,
        agent=spec.agent,
        anchors=tuple(r.anchor() for r in rs.regions),
        margin=margin,
    )


def build_placement_set(
    placements: Sequence[Placement],
    extent: float,
    agent: AgentParams,
    resolution: int = 128,
    anchors: Sequence[tuple[float, float]] = (),
    margin: float = 0.0,
) -> PlacementSet:
    """Wrap an explicit placement list (tests, edits, imported layouts)."""
    placements = tuple(placements)
    return PlacementSet(
        placements=placements,
        occupancy=_freeze(occupancy_grid(placements, extent, resolution, agent, margin)),
        extent=extent,
        agent=agent,
        anchors=tuple(anchors),
        completed_tiers=TIERS,
        requested={t: sum(1 for p in placements if p.tier == t) for t in TIERS},
        placed={t: sum(1 for p in placements if p.tier == t) for t in TIERS},
        margin=margin,
    )


class _TierSampler:
    """Draws candidate footprint centers for one tier."""

    def __init__(self, rs: RegionSet, tier: str, spec: SceneSpec, existing: PlacementSet, rng):
        self.rs = rs
        self.tier = tier
        self.spec = spec
        self.rng = rng
        self.heroes = [p for p in existing.placements if p.tier == "hero"]
        if tier == "hero":
            pool = rs.by_role("cluster") or list(rs.regions)
            self.regions = pool
            areas = np.array([r.area for r in pool])
            self.weights = areas / areas.sum()
        elif tier == "small":
            free = np.argwhere(~existing.occupancy)
            n_clusters = max(1, math.ceil(spec.density.small / 6))
            cs = existing.cell_size
            if len(free):
                picks = free[rng.integers(0, len(free), size=n_clusters)]
                self.clusters = [((j + 0.5) * cs, (i + 0.5) * cs) for i, j in picks]
            else:
                self.clusters = [(rs.extent / 2.0, rs.extent / 2.0)]
            self.sigma = max(2.0, 0.04 * rs.extent)

    def center(self) -> tuple[float, float, object]:
        rng = self.rng
        extent = self.rs.extent
        if self.tier == "hero":
            region = self.regions[int(rng.choice(len(self.regions), p=self.weights))]
            x0, y0, x1, y1 = region.polygon.bounds
            return rng.uniform(x0, x1), rng.uniform(y0, y1), region
        if self.tier == "medium":
            if not self.heroes:
                return rng.uniform(0, extent), rng.uniform(0, extent), None
            hero = self.heroes[int(rng.integers(0, len(self.heroes)))]
            fp = hero.footprint
            circumradius = 0.5 * math.hypot(fp.sx, fp.sy)
            r = circumradius + rng.uniform(*MEDIUM_ANNULUS)
            theta = rng.uniform(0.0, 2.0 * math.pi)
            return fp.cx + r * math.cos(theta), fp.cy + r * math.sin(theta), None
        cx, cy = self.clusters[int(rng.integers(0, len(self.clusters)))]
        dx, dy = rng.normal(0.0, self.sigma, size=2)
        return cx + dx, cy + dy, None


def _yaw(spec: SceneSpec, rng) -> float:
    if spec.placement_regularity >= 0.5:
        return float(rng.integers(0, 12)) * REGULAR_YAW_STEP
    return float(rng.uniform(0.0, math.pi))


def place_tier(
    rs: RegionSet,
    hf: HeightField,
    tier: str,
    spec: SceneSpec,
    existing: PlacementSet,
    seed: int,
) -> PlacementSet:
    """Add one tier of placements to ``existing``.

    Hero candidates are drawn inside cluster regions, medium candidates in a
    2-8 m annulus around hero footprints and small candidates around seeded
    cluster centers in free cells. A candidate is kept only if its dilated
    footprint clears every earlier one and free space stays one component
    holding every region anchor. Sampling stops at the tier target or after
    50 attempts per requested placement.

    Raises:
        TierOrderError: tiers requested out of hero -> medium -> small order.
    """
    if tier not in TIERS:
        raise TierOrderError(f"unknown tier {tier!r}")
    index = TIERS.index(tier)
    if tuple(existing.completed_tiers) != TIERS[:index]:
        done = ", ".join(existing.completed_tiers) or "none"
        raise TierOrderError(
            f"cannot place tier '{tier}' after [{done}]; tiers run hero -> medium -> small"
        )

    target = spec.density.target(tier)
    requested = {**existing.requested, tier: target}
    if target == 0:
        return replace(
            existing,
            completed_tiers=existing.completed_tiers + (tier,),
            requested=requested,
            placed={**existing.placed, tier: 0},
        )

    rng = np.random.default_rng(seed)
    sampler = _TierSampler(rs, tier, spec, existing, rng)
    agent = existing.agent
    extent = existing.extent
    side_lo, side_hi = spec.footprints.band(tier)
    height_lo, height_hi = tier_height_band(tier, spec.verticality)
    anchor_cells = _anchor_cells(existing.anchors, extent, existing.resolution, existing.clearance)

    placements = list(existing.placements)
    dilated = [p.footprint.polygon().buffer(agent.radius) for p in placements]
    occupancy = np.array(existing.occupancy, copy=True)
    placed = 0

    for _ in range(ATTEMPTS_PER_TARGET * target):
        if placed >= target:
            break
        cx, cy, region = sampler.center()
        fp = Rect(
            float(cx), float(cy),
            float(rng.uniform(side_lo, side_hi)),
            float(rng.uniform(side_lo, side_hi)),
            _yaw(spec, rng),
        )
        height = float(rng.uniform(height_lo, height_hi))

        corners = fp.corners()
        if corners.min() < 0.0 or corners.max() > extent:
            continue
        poly = fp.polygon()
        if region is not None and not poly.within(region.polygon):
            continue
        grown = poly.buffer(agent.radius)
        gx0, gy0, gx1, gy1 = grown.bounds
        clash = False
        for other in dilated:
            ox0, oy0, ox1, oy1 = other.bounds
            if ox0 > gx1 or ox1 < gx0 or oy0 > gy1 or oy1 < gy0:
                continue
            if grown.intersects(other):
                clash = True
                break
        if clash:
            continue
        trial = block_cells(occupancy.copy(), fp, extent, existing.clearance)
        if not _navigable(trial, anchor_cells, MIN_FREE_FRACTION):
            continue

        occupancy = trial
        dilated.append(grown)
        placements.append(
            Placement(
                id=len(placements),
                tier=tier,
                footprint=fp,
                height=height,
                base_z=sample_height(hf, fp.cx, fp.cy),
            )
        )
        placed += 1

    if placed < target:
        print_warning(f"Placed {placed}/{target} {tier} assets; free space ran out.")
    print_debug(f"-> Tier '{tier}': placed {placed}/{target}")
    return replace(
        existing,
        placements=tuple(placements),
        occupancy=_freeze(occupancy),
        completed_tiers=existing.completed_tiers + (tier,),
        requested=requested,
        placed={**existing.placed, tier: placed},
    )


def enforce_navigability(ps: PlacementSet, agent: AgentParams) -> PlacementSet:
    """Remove small/medium placements until free space is one component.

    Greedy: each round drops the non-hero placement whose removal leaves the
    fewest free components, preferring the one blocking the most cells.

    Raises:
        NavigabilityImpossibleError: hero placements alone disconnect space.
    """
    res = ps.resolution
    clearance = agent.radius + ps.margin
    anchor_cells = _anchor_cells(ps.anchors, ps.extent, res, clearance)
    occupancy = occupancy_grid(ps.placements, ps.extent, res, agent, ps.margin)
    if _navigable(occupancy, anchor_cells):
        if agent == ps.agent:
            return ps
        return replace(ps, occupancy=_freeze(occupancy), agent=agent)

    heroes = [p for p in ps.placements if p.tier == "hero"]
    if not _navigable(occupancy_grid(heroes, ps.extent, res, agent, ps.margin), anchor_cells):
        raise NavigabilityImpossibleError(
            f"{len(heroes)} hero placement(s) alone disconnect free space; "
            "the scene spec is pathological (reduce hero count or footprint band)"
        )

    kept = list(ps.placements)
    removed = []
    while True:
        best = None
        for p in kept:
            if p.tier == "hero":
                continue
            rest = [q for q in kept if q.id != p.id]
            occ = occupancy_grid(rest, ps.extent, res, agent, ps.margin)
            blocked_free = sum(1 for i, j in anchor_cells if occ[i, j])
            _, components = ndimage.label(~occ)
            own = int(block_cells(np.zeros_like(occ), p.footprint, ps.extent, clearance).sum())
            key = (components + blocked_free, -own, p.id)
            if best is None or key < best[0]:
                best = (key, p, occ)
        _, victim, occupancy = best
        kept.remove(victim)
        removed.append(victim.id)
        if _navigable(occupancy, anchor_cells):
            break

    print_debug(f"-> Navigability restored by removing placements {removed}")
    placed = {t: sum(1 for p in kept if p.tier == t) for t in TIERS}
    return replace(
        ps,
        placements=tuple(kept),
        occupancy=_freeze(occupancy),
        agent=agent,
        placed=placed,
    )


def tier_seed(seed: int, tier: str) -> int:
    """Independent, reproducible stream per tier."""
    return int(np.random.SeedSequence([seed, TIERS.index(tier) + 1]).generate_state(1, np.uint64)[0])


def place_all(rs: RegionSet, hf: HeightField, spec: SceneSpec, seed: int) -> PlacementSet:
    ps = empty_placement_set(rs, spec)
    for tier in TIERS:
        ps = place_tier(rs, hf, tier, spec, ps, tier_seed(seed, tier))
    return enforce_navigability(ps, spec.agent)


def settle_on_terrain(ps: PlacementSet, hf: HeightField) -> PlacementSet:
    """Recompute every base_z from ``hf`` (after pad smoothing)."""
    settled = tuple(replace(p, base_z=sample_height(hf, p.footprint.cx, p.footprint.cy)) for p in ps.placements)
    return replace(ps, placements=settled)

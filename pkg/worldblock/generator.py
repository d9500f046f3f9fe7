"""Pipeline orchestration: one method per CLI command.

``build_scene`` and ``write_scene`` are the pure generate pipeline that the
benchmark builder reuses; :class:`WorldGenerator` wraps every command in a
rich progress display and writes the effective configuration next to the
outputs.
"""

import copy
import json
import math
import os
from contextlib import contextmanager
from dataclasses import dataclass, replace

import numpy as np
from rich.console import Console
from rich.live import Live
from rich.progress import (
    BarColumn,
    Progress,
    SpinnerColumn,
    TaskProgressColumn,
    TextColumn,
)

from _utils import (
    atomic_write_json,
    atomic_write_text,
    clear_rich_console,
    dumps_stable,
    print_confirm,
    print_debug,
    print_info,
    print_warning,
    set_rich_console,
)

from . import __version__
from .blockout import (
    GROUND_PART,
    apply_edits,
    assemble_blockout,
    blockout_parts,
    export_mesh,
    load_mesh,
    parse_edit_script,
    read_blockout,
    write_blockout,
)
from .decompose import (
    DecomposeConfig,
    connectivity_degree_order,
    decompose_scene,
    decomposition_report,
    export_parts,
    part_set_from_labeled_mesh,
    pivot_remainder_split,
    quality_filter,
)
from .depth_render import best_azimuth, perturb_depth, render_mesh_depth, write_depth_png
from .errors import WorldblockIOError
from .navmesh import bake_navmesh, connectivity_report, read_navmesh, write_navmesh
from .partition import assign_roles, partition
from .placement import place_all, settle_on_terrain
from .scene_spec import AgentParams, SceneSpec, layout_preset, parse_scene_spec, scene_spec_to_dict, serialize_scene_spec
from .terrain import generate_heightfield, smooth_under_footprints

STAGES = ("terrain", "partition", "roles", "placement", "depth")

SCENE_FILES = {
    "scene": "scene.obj",
    "blockout": "blockout.json",
    "navmesh_obj": "navmesh.obj",
    "navmesh_json": "navmesh.json",
    "depth": "depth.png",
    "depth_sidecar": "depth.json",
    "parts": "parts.gltf",
    "spec": "spec.json",
}
MANIFEST_NAME = "manifest.json"
CONFIG_NAME = "config.json"

# Logs go to stderr; stdout carries the JSON summary line.
console = Console(stderr=True)


def stage_seed(seed: int, stage: str) -> int:
    """Independent, reproducible seed for one pipeline stage."""
    return int(np.random.SeedSequence([int(seed), STAGES.index(stage) + 1]).generate_state(1, np.uint64)[0])


def _banner(n: int, title: str) -> None:
    print_debug("\n" + "=" * 100)
    print_debug(f"STEP {n}: {title}")
    print_debug("=" * 100)


@dataclass(frozen=True)
class SceneArtifacts:
    spec: SceneSpec
    seed: int
    heightfield: object
    regions: object
    placements: object
    blockout: object
    navmesh: object
    depth: object
    azimuth: float

    @property
    def stage_seeds(self) -> dict:
        return {stage: stage_seed(self.seed, stage) for stage in STAGES}


def build_scene(spec: SceneSpec, seed: int | None = None, on_step=None) -> SceneArtifacts:
    """Run the generate pipeline in memory.

    Args:
        spec: Validated scene spec.
        seed: Overrides ``spec.seed`` when given.
        on_step: Optional callable receiving a description after each step.
    """
    seed = spec.seed if seed is None else int(seed)
    spec = replace(spec, seed=seed)
    step = on_step or (lambda description: None)

    _banner(1, "TERRAIN")
    hf = generate_heightfield(spec, stage_seed(seed, "terrain"))
    step("Terrain generated")

    _banner(2, "PARTITION")
    rs = partition(
        spec.extent,
        spec.partition.strategy,
        spec.partition.params,
        stage_seed(seed, "partition"),
        spec.partition.region_count_hint,
    )
    rs = assign_roles(rs, spec, stage_seed(seed, "roles"))
    step("Regions assigned")

    _banner(3, "PLACEMENT")
    ps = place_all(rs, hf, spec, stage_seed(seed, "placement"))
    hf = smooth_under_footprints(hf, ps.footprints())
    ps = settle_on_terrain(ps, hf)
    print_debug(f"-> Placed {ps.counts()} of requested {dict(ps.requested)}")
    step("Structures placed")

    _banner(4, "BLOCKOUT + NAVMESH")
    b = assemble_blockout(hf, ps)
    mesh = b.to_trimesh()
    nm = bake_navmesh(
        mesh,
        spec.agent,
        spec.cell_size,
        spec.navmesh.cell_height,
        min_region_fraction=spec.navmesh.min_region_fraction,
        walkable_parts=(GROUND_PART,),
    )
    step("Navmesh baked")

    _banner(5, "DEPTH")
    if spec.render.azimuth_deg == "auto":
        azimuth = best_azimuth(mesh)
    else:
        azimuth = math.radians(float(spec.render.azimuth_deg))
    dm = render_mesh_depth(mesh, azimuth, spec.render.resolution)
    dm = perturb_depth(dm, spec.render.sigma_rel, stage_seed(seed, "depth"))
    step("Depth rendered")

    return SceneArtifacts(spec, seed, hf, rs, ps, b, nm, dm, azimuth)


def write_scene(art: SceneArtifacts, out_dir: str, config: dict | None = None) -> dict:
    """Write every scene file, then the manifest last."""
    os.makedirs(out_dir, exist_ok=True)
    path = {key: os.path.join(out_dir, name) for key, name in SCENE_FILES.items()}
    export_mesh(art.blockout.to_trimesh(), "obj", path["scene"])
    write_blockout(art.blockout, path["blockout"])
    write_navmesh(art.navmesh, path["navmesh_obj"], path["navmesh_json"])
    write_depth_png(art.depth, path["depth"], sigma_rel=art.spec.render.sigma_rel, seed=art.stage_seeds["depth"])
    export_parts(blockout_parts(art.blockout), path["parts"])
    atomic_write_text(path["spec"], serialize_scene_spec(art.spec))

    report = connectivity_report(art.navmesh)
    counts = art.placements.counts()
    manifest = {
        "worldblock_version": __version__,
        "seed": art.seed,
        "stage_seeds": art.stage_seeds,
        "spec": scene_spec_to_dict(art.spec),
        "requested": dict(art.placements.requested),
        "placed": counts,
        "object_count": int(sum(art.placements.requested.values())),
        "placed_count": int(sum(counts.values())),
        "azimuth_deg": math.degrees(art.azimuth),
        "navmesh": {
            "polygon_count": report["polygon_count"],
            "component_count": report["component_count"],
            "total_area": report["total_area"],
            "largest_fraction": report["largest_fraction"],
        },
        "files": dict(SCENE_FILES),
        "config": config or {},
    }
    atomic_write_json(os.path.join(out_dir, MANIFEST_NAME), manifest)
    return manifest


def _read_spec(path: str) -> SceneSpec:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return parse_scene_spec(f.read())
    except OSError as e:
        raise WorldblockIOError(f"could not read scene spec '{path}': {e}") from e


def _read_text(path: str, what: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return f.read()
    except OSError as e:
        raise WorldblockIOError(f"could not read {what} '{path}': {e}") from e


def _agent_from_args(args, base: AgentParams | None = None) -> AgentParams:
    base = base or AgentParams()
    return AgentParams(
        radius=base.radius if args.agent_radius is None else args.agent_radius,
        height=base.height if args.agent_height is None else args.agent_height,
        max_climb=base.max_climb if args.max_climb is None else args.max_climb,
        max_slope_deg=base.max_slope_deg if args.max_slope is None else args.max_slope,
    )


def _load_navmesh_mesh(path: str):
    if path.lower().endswith(".json"):
        return read_navmesh(path).to_trimesh()
    return load_mesh(path)


class WorldGenerator:
    """Runs one CLI command described by an argparse namespace."""

    def __init__(self, args):
        self.args = args

    @contextmanager
    def _pipeline(self, total: int, title: str):
        progress = Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            BarColumn(),
            TaskProgressColumn(),
            console=console,
        )
        task = progress.add_task(f"[cyan]{title}...", total=total)
        live = Live(progress, console=console, refresh_per_second=10)

        def advance(description: str) -> None:
            progress.update(task, advance=1, description=f"[cyan]{description}")

        set_rich_console(console)
        live.start()
        try:
            yield advance
            progress.update(task, description=f"[green]✓ {title} complete")
        except BaseException:
            progress.update(task, description=f"[red]✗ {title} failed")
            raise
        finally:
            live.stop()
            clear_rich_console()

    def run(self) -> dict:
        """Execute the command and return its JSON summary."""
        handler = getattr(self, "_" + self.args.command.replace("-", "_"))
        out_dir = self.args.out
        os.makedirs(out_dir, exist_ok=True)
        summary = handler(copy.deepcopy(self.args), out_dir)
        self.save_config(out_dir)
        summary = {"command": self.args.command, "out": out_dir, **summary}
        print_confirm(f"-> {self.args.command} finished, outputs in '{out_dir}'")
        return summary

    # -- commands ----------------------------------------------------------

    def _generate(self, args, out_dir):
        spec = _read_spec(args.spec)
        if args.layout:
            spec = replace(spec, partition=replace(spec.partition, strategy=layout_preset(args.layout)))
        if args.partition_params:
            params = {**spec.partition.params, **args.partition_params}
            spec = replace(spec, partition=replace(spec.partition, params=params))
        seed = spec.seed if args.seed is None else args.seed
        print_info(f"Generating scene (seed {seed}, {spec.partition.strategy} layout, {spec.terrain.kind} terrain)")
        with self._pipeline(6, "Generating scene") as advance:
            art = build_scene(spec, seed, on_step=advance)
            manifest = write_scene(art, out_dir, self.effective_config())
            advance("Outputs written")
        return {
            "seed": art.seed,
            "placed": manifest["placed"],
            "navmesh_components": manifest["navmesh"]["component_count"],
            "manifest": os.path.join(out_dir, MANIFEST_NAME),
        }

    def _edit(self, args, out_dir):
        spec = _read_spec(args.spec) if args.spec else SceneSpec()
        with self._pipeline(3, "Editing blockout") as advance:
            _banner(1, "APPLY EDITS")
            b = read_blockout(args.blockout)
            edits = parse_edit_script(_read_text(args.edits, "edit script"))
            edited = apply_edits(b, edits)
            print_info(f"Applied {len(edits)} edit(s); {len(edited.placements)} box(es) remain")
            advance("Edits applied")

            _banner(2, "RE-BAKE NAVMESH")
            mesh = edited.to_trimesh()
            agent = _agent_from_args(args, spec.agent)
            cell_size = args.cell_size or spec.cell_size
            nm = bake_navmesh(
                mesh, agent, cell_size, args.cell_height or spec.navmesh.cell_height,
                min_region_fraction=spec.navmesh.min_region_fraction,
                walkable_parts=(GROUND_PART,),
            )
            advance("Navmesh re-baked")

            _banner(3, "WRITE OUTPUTS")
            write_blockout(edited, os.path.join(out_dir, SCENE_FILES["blockout"]))
            export_mesh(mesh, "obj", os.path.join(out_dir, SCENE_FILES["scene"]))
            write_navmesh(nm, os.path.join(out_dir, SCENE_FILES["navmesh_obj"]), os.path.join(out_dir, SCENE_FILES["navmesh_json"]))
            report = connectivity_report(nm)
            self._manifest(out_dir, {"edits": len(edits), "boxes": len(edited.placements), "navmesh": report})
            advance("Outputs written")
        return {"edits": len(edits), "boxes": len(edited.placements), "navmesh_components": report["component_count"]}

    def _navmesh(self, args, out_dir):
        with self._pipeline(2, "Baking navmesh") as advance:
            _banner(1, "BAKE")
            mesh = load_mesh(args.mesh)
            agent = _agent_from_args(args)
            if args.cell_size is None:
                lo, hi = mesh.bounds
                cell_size = float(max(hi[0] - lo[0], hi[1] - lo[1])) / 256.0
            else:
                cell_size = args.cell_size
            nm = bake_navmesh(
                mesh, agent, cell_size, args.cell_height or 0.2,
                min_region_fraction=args.min_region_fraction,
                largest_only=args.largest_only,
            )
            advance("Navmesh baked")

            _banner(2, "WRITE OUTPUTS")
            write_navmesh(nm, os.path.join(out_dir, SCENE_FILES["navmesh_obj"]), os.path.join(out_dir, SCENE_FILES["navmesh_json"]))
            report = connectivity_report(nm)
            atomic_write_json(os.path.join(out_dir, "connectivity.json"), report)
            self._manifest(out_dir, {"cell_size": cell_size, "navmesh": report})
            advance("Outputs written")
        return {
            "polygons": report["polygon_count"],
            "components": report["component_count"],
            "total_area": report["total_area"],
        }

    def _render_depth(self, args, out_dir):
        with self._pipeline(2, "Rendering depth") as advance:
            _banner(1, "RENDER")
            if args.blockout.lower().endswith(".json"):
                mesh = read_blockout(args.blockout).to_trimesh()
            else:
                mesh = load_mesh(args.blockout)
            if args.azimuth == "auto":
                azimuth = best_azimuth(mesh)
            else:
                azimuth = math.radians(float(args.azimuth))
            dm = render_mesh_depth(mesh, azimuth, args.resolution)
            seed = 0 if args.seed is None else args.seed
            dm = perturb_depth(dm, args.sigma_rel, seed)
            advance("Depth rendered")

            _banner(2, "WRITE OUTPUTS")
            sidecar = write_depth_png(dm, os.path.join(out_dir, SCENE_FILES["depth"]), sigma_rel=args.sigma_rel, seed=seed)
            self._manifest(out_dir, {"azimuth_deg": math.degrees(azimuth), "depth_range": [sidecar["depth_min"], sidecar["depth_max"]]})
            advance("Outputs written")
        return {"azimuth_deg": math.degrees(azimuth), "resolution": args.resolution}

    def _decompose(self, args, out_dir):
        cfg = DecomposeConfig(weld_eps=args.weld_eps, small_part_vertex_threshold=args.small_threshold)
        with self._pipeline(3, "Decomposing scene") as advance:
            mesh = load_mesh(args.mesh)
            ps = decompose_scene(mesh, cfg)
            advance("Parts extracted")

            verdict = quality_filter(ps, cfg)
            order = connectivity_degree_order(ps)
            report = decomposition_report(ps, cfg, verdict, order)
            if args.pivots is not None:
                pivots, remainder = pivot_remainder_split(ps, args.pivots)
                report["pivots"] = [p.id for p in pivots]
                report["remainder_count"] = len(remainder)
            if not verdict.accepted:
                print_warning(f"Decomposition rejected: {', '.join(verdict.reasons)}")
            advance("Decomposition checked")

            export_parts(ps, os.path.join(out_dir, SCENE_FILES["parts"]))
            atomic_write_json(os.path.join(out_dir, "report.json"), report)
            self._manifest(out_dir, {"part_count": len(ps), "accepted": verdict.accepted})
            advance("Outputs written")
        return {"parts": len(ps), "accepted": verdict.accepted, "reasons": list(verdict.reasons)}

    def _eval_navmesh(self, args, out_dir):
        from .metrics import evaluate_navmesh_batch

        agent = _agent_from_args(args)
        with self._pipeline(2, "Evaluating navmesh CD") as advance:
            pairs = self._navmesh_pairs(args)
            advance(f"Loaded {len(pairs)} scene(s)")
            report = evaluate_navmesh_batch(
                pairs, agent, args.samples, jobs=args.jobs, method=args.method,
                seed=0 if args.seed is None else args.seed,
            )
            report.write(os.path.join(out_dir, "navmesh_cd.csv"), os.path.join(out_dir, "eval.json"))
            advance("Report written")
        return {"method": args.method, "scenes": len(pairs), **report.aggregates}

    def _navmesh_pairs(self, args):
        if args.dataset:
            index = os.path.join(args.dataset, "benchmark.json")
            try:
                with open(index, "r", encoding="utf-8") as f:
                    scenes = json.load(f)["scenes"]
            except OSError as e:
                raise WorldblockIOError(f"could not read dataset index '{index}': {e}") from e
            pairs = []
            for entry in scenes:
                scene_dir = os.path.join(args.dataset, entry["dir"])
                reference = load_mesh(os.path.join(scene_dir, SCENE_FILES["scene"]))
                pred = load_mesh(os.path.join(args.pred_dir, entry["dir"] + ".obj")) if args.pred_dir else reference
                gt = _load_navmesh_mesh(os.path.join(scene_dir, SCENE_FILES["navmesh_obj"]))
                pairs.append((entry["dir"], pred, gt, reference))
            return pairs
        if not args.pred or not args.gt:
            raise ValueError("eval-navmesh needs --pred and --gt, or --dataset")
        return [(os.path.basename(args.pred), load_mesh(args.pred), _load_navmesh_mesh(args.gt))]

    def _eval_parts(self, args, out_dir):
        from .metrics import part_match_eval

        with self._pipeline(2, "Evaluating parts") as advance:
            pred_mesh = load_mesh(args.pred)
            pred = decompose_scene(pred_mesh) if args.decompose else part_set_from_labeled_mesh(pred_mesh)
            gt = part_set_from_labeled_mesh(load_mesh(args.gt))
            advance(f"{len(pred)} predicted / {len(gt)} ground-truth part(s)")
            report = part_match_eval(pred, gt, taus=args.taus, n_samples=args.samples, method=args.method)
            report.write(os.path.join(out_dir, "part_match.csv"), os.path.join(out_dir, "eval.json"))
            advance("Report written")
        return {"method": args.method, "gt_parts": len(gt), **report.aggregates}

    def _synth(self, args, out_dir):
        from .synth_data import build_benchmark, build_grid_dataset

        seed = 0 if args.seed is None else args.seed
        if args.mode == "grid":
            with self._pipeline(1, "Composing grid scenes") as advance:
                index = build_grid_dataset(
                    args.scenes, args.grid, seed, out_dir,
                    spacing=args.spacing, degrade=args.degrade, jobs=args.jobs,
                )
                advance("Grid scenes written")
            return {"mode": "grid", "scenes": len(index["scenes"])}

        template = _read_spec(args.spec) if args.spec else SceneSpec()
        # Each scene runs its own pipeline; the pool owns progress reporting.
        index = build_benchmark(
            args.scenes, (args.objects_min, args.objects_max), template, seed, out_dir,
            jobs=args.jobs, config=self.effective_config(),
        )
        return {"mode": "benchmark", "scenes": len(index["scenes"])}

    # -- bookkeeping -------------------------------------------------------

    def effective_config(self) -> dict:
        config = {k: v for k, v in vars(self.args).items() if k != "config_file"}
        config["worldblock_version"] = __version__
        return config

    def _manifest(self, out_dir: str, payload: dict) -> None:
        manifest = {
            "worldblock_version": __version__,
            "command": self.args.command,
            "config": self.effective_config(),
            **payload,
        }
        atomic_write_json(os.path.join(out_dir, MANIFEST_NAME), manifest)

    def save_config(self, output_dir):
        """Save the effective arguments so the run can be repeated with -cf."""
        config_path = os.path.join(output_dir, CONFIG_NAME)
        try:
            atomic_write_text(config_path, dumps_stable(self.effective_config()))
            print_debug(f"-> Arguments saved to '{config_path}'")
        except OSError as e:
            print_warning(f"Could not save arguments to '{config_path}'. Error: {e}")


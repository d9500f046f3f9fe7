import json
from dataclasses import replace

import numpy as np
import pytest

from worldblock.errors import BadParamsError, EmptyMeshError, InsufficientAssetsError
from worldblock.mesh_ops import TriMesh, box_mesh, vertex_components
from worldblock.scene_spec import NavmeshSpec, PartitionSpec, RenderSpec, SceneSpec, TerrainSpec
from worldblock.synth_data import (
    DegradeParams,
    GridSceneSpec,
    benchmark_scene_spec,
    build_benchmark,
    build_grid_dataset,
    compose_grid_scene,
    degrade_mesh,
    extract_grid_objects,
    procedural_assets,
    restore_to_layout,
    tier_counts,
    unit_box_normalize,
)


def _cubes(count, size=2.0):
    return tuple(box_mesh((0.0, 0.0, 0.0), (size, size, size)) for _ in range(count))


def _sphere():
    import trimesh

    s = trimesh.creation.icosphere(subdivisions=3)
    return TriMesh(np.asarray(s.vertices), np.asarray(s.faces))


def test_unit_box_normalize():
    asset = box_mesh((3.0, -2.0, 5.0), (4.0, 2.0, 1.0))

    unit = unit_box_normalize(asset)

    np.testing.assert_allclose(unit.bounds, [[-0.5, -0.25, 0.0], [0.5, 0.25, 0.25]])


class TestGridScene:
    def test_two_by_two_cubes(self):
        gs = GridSceneSpec(grid="2x2", spacing=1.0, assets=_cubes(4))

        scene, parts = compose_grid_scene(gs)

        assert len(parts) == 5
        assert scene.part_names == ("ground", "object_0_0", "object_0_1", "object_1_0", "object_1_1")
        np.testing.assert_allclose(
            [p.translation for p in parts.objects],
            [[-1.0, -1.0, 0.5], [1.0, -1.0, 0.5], [-1.0, 1.0, 0.5], [1.0, 1.0, 0.5]],
        )
        np.testing.assert_allclose(scene.part("ground").bounds[:, :2], [[-2.0, -2.0], [2.0, 2.0]])
        assert parts.ground.name == "ground"

    def test_three_by_three(self):
        gs = GridSceneSpec(grid="3x3", spacing=0.5, assets=_cubes(9))

        _, parts = compose_grid_scene(gs)

        assert len(parts) == 10
        xs = sorted({round(float(p.translation[0]), 9) for p in parts.objects})
        assert xs == [-1.5, 0.0, 1.5]

    def test_objects_rest_on_the_ground(self):
        gs = GridSceneSpec(assets=tuple(procedural_assets(4, seed=2)), seed=5)

        scene, _ = compose_grid_scene(gs)

        for name in scene.part_names[1:]:
            lo, hi = scene.part(name).bounds
            assert lo[2] == pytest.approx(0.0, abs=1e-12)
            assert np.max(hi - lo) == pytest.approx(1.0)

    def test_needs_one_asset_per_cell_without_replacement(self):
        with pytest.raises(InsufficientAssetsError):
            compose_grid_scene(GridSceneSpec(grid="2x2", assets=_cubes(3)))

    def test_with_replacement_reuses_assets(self):
        _, parts = compose_grid_scene(GridSceneSpec(grid="3x3", assets=_cubes(1), with_replacement=True))

        assert len(parts.objects) == 9

    @pytest.mark.parametrize("kwargs", [{"grid": "4x4"}, {"spacing": -1.0}])
    def test_invalid_spec(self, kwargs):
        with pytest.raises(BadParamsError):
            GridSceneSpec(**kwargs)


class TestDegrade:
    def test_no_artifacts_is_identity(self):
        mesh = _sphere()

        assert degrade_mesh(mesh, 0, DegradeParams.none()) is mesh

    def test_masking_respects_the_removal_budget(self):
        mesh = _sphere()
        params = replace(DegradeParams.none(), mask_prob=1.0, mask_spheres=5, mask_radius=0.5, max_removal=0.3)

        out = degrade_mesh(mesh, 3, params)

        assert mesh.n_triangles * 0.7 <= out.n_triangles < mesh.n_triangles

    def test_floaters_are_detached(self):
        mesh = _sphere()
        params = replace(DegradeParams.none(), floater_prob=1.0, floater_count=3)

        out = degrade_mesh(mesh, 1, params)

        count, _ = vertex_components(out)
        assert count == 4
        assert out.part_names == ("object", "floater_0", "floater_1", "floater_2")

    def test_broken_surface_keeps_topology(self):
        mesh = _sphere()
        params = replace(DegradeParams.none(), break_prob=1.0, break_amp=0.05)

        out = degrade_mesh(mesh, 2, params)

        np.testing.assert_array_equal(out.triangles, mesh.triangles)
        assert np.abs(out.vertices - mesh.vertices).max() <= 0.05
        assert not np.array_equal(out.vertices, mesh.vertices)

    def test_degradation_is_seeded(self):
        mesh = _sphere()

        a = degrade_mesh(mesh, 9)
        b = degrade_mesh(mesh, 9)

        np.testing.assert_array_equal(a.vertices, b.vertices)
        np.testing.assert_array_equal(a.triangles, b.triangles)

    def test_invalid_inputs(self):
        with pytest.raises(EmptyMeshError):
            degrade_mesh(TriMesh.empty(), 0)
        with pytest.raises(BadParamsError):
            DegradeParams(mask_prob=1.5)


def test_extracted_objects_restore_to_their_layout():
    gs = GridSceneSpec(assets=tuple(procedural_assets(4, seed=8)), seed=1)
    scene, _ = compose_grid_scene(gs)

    objects = extract_grid_objects(scene, gs)

    assert [o.cell for o in objects] == [(0, 0), (0, 1), (1, 0), (1, 1)]
    for obj in objects:
        lo, hi = obj.mesh.bounds
        np.testing.assert_allclose(lo, -0.5)
        np.testing.assert_allclose(hi, 0.5)
        restored = restore_to_layout(obj.mesh, obj.normalization)
        original = scene.part(f"object_{obj.cell[0]}_{obj.cell[1]}")
        np.testing.assert_allclose(restored.vertices, original.vertices, atol=1e-12)


class TestBenchmark:
    @pytest.mark.parametrize("total, expected", [(1, (1, 0, 0)), (10, (1, 3, 6)), (30, (3, 9, 18))])
    def test_tier_split(self, total, expected):
        assert tier_counts(total) == expected
        assert sum(tier_counts(total)) == total

    def test_scene_specs_get_their_own_seed_and_count(self):
        template = SceneSpec()

        specs = [benchmark_scene_spec(template, 0, i, (10, 30)) for i in range(5)]

        assert len({s.seed for s in specs}) == 5
        for s in specs:
            total = sum(s.density.target(t) for t in ("hero", "medium", "small"))
            assert 10 <= total <= 30
        assert benchmark_scene_spec(template, 0, 3, (10, 30)) == specs[3]

    @pytest.mark.parametrize("kwargs", [{"n_scenes": 0}, {"objects_range": (5, 2)}, {"objects_range": (0, 4)}])
    def test_invalid_arguments(self, kwargs, tmp_path):
        with pytest.raises(BadParamsError):
            build_benchmark(out=tmp_path, **kwargs)

    @pytest.fixture(scope="class")
    def runs(self, tmp_path_factory):
        template = replace(
            SceneSpec(),
            terrain=TerrainSpec(kind="flat", resolution=33),
            partition=PartitionSpec(strategy="voronoi", region_count_hint=6),
            navmesh=NavmeshSpec(cell_size=0.5),
            render=RenderSpec(resolution=32),
            occupancy_resolution=96,
        )
        dirs = [tmp_path_factory.mktemp(f"benchmark_{k}") for k in range(2)]
        indexes = [build_benchmark(2, (10, 30), template, seed=7, out=d) for d in dirs]
        return dirs, indexes

    def test_reruns_are_byte_identical(self, runs):
        (first, second), _ = runs

        files = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file())
        assert files == sorted(p.relative_to(second) for p in second.rglob("*") if p.is_file())
        assert len(files) > 2
        for name in files:
            assert (first / name).read_bytes() == (second / name).read_bytes(), name

    def test_generated_navmesh_is_one_component(self, runs):
        (first, _), (index, _) = runs

        assert [s["dir"] for s in index["scenes"]] == ["scene_0000", "scene_0001"]
        for scene in index["scenes"]:
            manifest = json.loads((first / scene["dir"] / "manifest.json").read_text())
            assert 10 <= manifest["object_count"] <= 30
            assert manifest["navmesh"]["component_count"] == 1
            assert manifest["navmesh"]["largest_fraction"] >= 0.95


def test_grid_dataset_writes_scenes_and_index(tmp_path):
    index = build_grid_dataset(2, "2x2", seed=4, out=tmp_path, degrade=True)

    assert [s["dir"] for s in index["scenes"]] == ["grid_0000", "grid_0001"]
    assert json.loads((tmp_path / "grid.json").read_text()) == index
    scene_dir = tmp_path / "grid_0000"
    for name in ("scene.obj", "parts.gltf", "degraded.obj", "manifest.json"):
        assert (scene_dir / name).exists()
    manifest = json.loads((scene_dir / "manifest.json").read_text())
    assert manifest["parts"] == 5
    assert len(manifest["normalizations"]) == 4

import math

import numpy as np
import pytest

from worldblock.blockout import assemble_blockout
from worldblock.depth_render import (
    DepthMap,
    best_azimuth,
    frame_camera,
    occluded_parts,
    perturb_depth,
    rasterize,
    read_depth_png,
    render_depth,
    render_mesh_depth,
    write_depth_png,
)
from worldblock.errors import BadParamsError, EmptyMeshError
from worldblock.mesh_ops import TriMesh, box_mesh, concatenate
from worldblock.placement import Placement
from worldblock.terrain import HeightField, Rect


def _ground(size=10.0):
    v = np.array([[0, 0, 0], [size, 0, 0], [size, size, 0], [0, size, 0]], dtype=float)
    return TriMesh(v, [[0, 1, 2], [0, 2, 3]]).labeled("ground")


def _scene():
    return concatenate([_ground(), box_mesh((5.0, 5.0, 0.0), (2.0, 2.0, 3.0)).labeled("box_0")])


def _wall_blockout():
    hf = HeightField(np.zeros((11, 11)), 1.0)
    return assemble_blockout(hf, [
        Placement(0, "hero", Rect(5.0, 5.0, 1.0, 8.0), 6.0),
        Placement(1, "small", Rect(3.0, 5.0, 1.0, 1.0), 0.5),
    ])


class TestRender:
    def test_ground_pixels_form_the_terrain_mask(self):
        dm = render_mesh_depth(_ground(), 0.0, 32)

        assert dm.depth.shape == (32, 32)
        assert dm.finite.any()
        assert (~dm.finite).any()
        np.testing.assert_array_equal(dm.terrain_mask, dm.finite)

    def test_depth_grows_away_from_the_camera(self):
        # Azimuth 0 puts the camera on the +x side; image rows run toward it.
        dm = render_mesh_depth(_ground(), 0.0, 32)

        column = dm.depth[:, 16]
        hit = column[np.isfinite(column)]
        assert len(hit) > 10
        assert np.all(np.diff(hit) < 0)

    def test_camera_plane_sits_one_meter_before_the_bounding_sphere(self):
        mesh = _scene()
        camera = frame_camera(mesh, math.radians(30.0), 64)
        lo, hi = mesh.bounds

        assert camera.eye_distance == pytest.approx(0.5 * np.linalg.norm(hi - lo) + 1.0)
        assert camera.project(camera.center)[2] == pytest.approx(camera.eye_distance)
        assert camera.elevation == pytest.approx(math.radians(45.0))

    def test_frame_encloses_the_mesh(self):
        mesh = _scene()
        camera = frame_camera(mesh, 1.0, 64)

        proj = camera.project(mesh.vertices)

        assert proj[:, :2].min() > 0.0
        assert proj[:, :2].max() < 64.0

    def test_boxes_are_closer_than_the_ground_behind_them(self):
        scene = _scene()
        camera = frame_camera(scene, math.radians(45.0), 64)

        ground_depth, _ = rasterize(_ground(), camera)
        scene_depth, face = rasterize(scene, camera)

        on_box = face >= 2
        assert on_box.any()
        behind = on_box & np.isfinite(ground_depth)
        assert np.all(scene_depth[behind] < ground_depth[behind])
        elsewhere = ~on_box & np.isfinite(scene_depth)
        np.testing.assert_allclose(scene_depth[elsewhere], ground_depth[elsewhere])

    def test_box_pixels_are_not_terrain(self):
        dm = render_mesh_depth(_scene(), 0.5, 48)

        box = dm.face_index >= 2
        assert box.any()
        assert not dm.terrain_mask[box].any()

    def test_blockout_render_uses_the_ground_part(self):
        dm = render_depth(_wall_blockout(), 0.0, 32)

        assert dm.terrain_mask.any()

    def test_center_pixel_matches_the_analytic_ray_depth(self):
        box = box_mesh((0.0, 0.0, 0.0), (1.0, 1.0, 1.0)).labeled("box_0")
        dm = render_mesh_depth(box, 0.3, 64)

        origin, direction = dm.camera.pixel_ray(32, 32)
        lo, hi = box.bounds
        t0 = (lo - origin) / direction
        t1 = (hi - origin) / direction
        t_near = float(np.minimum(t0, t1).max())
        assert t_near < float(np.maximum(t0, t1).min())
        assert dm.depth[32, 32] == pytest.approx(t_near, abs=1e-6)

    def test_invalid_inputs(self):
        with pytest.raises(EmptyMeshError):
            render_mesh_depth(TriMesh.empty(), 0.0, 32)
        with pytest.raises(BadParamsError):
            render_mesh_depth(_ground(), 0.0, 0)


class TestPerturb:
    @pytest.fixture(scope="class")
    def depth_map(self):
        return render_mesh_depth(_scene(), 0.3, 48)

    def test_zero_sigma_returns_the_input(self, depth_map):
        assert perturb_depth(depth_map, 0.0, seed=1) is depth_map

    def test_only_object_pixels_change(self, depth_map):
        noisy = perturb_depth(depth_map, 0.05, seed=1)

        fixed = depth_map.terrain_mask | ~depth_map.finite
        np.testing.assert_array_equal(noisy.depth[fixed], depth_map.depth[fixed])
        changed = ~fixed
        ratio = noisy.depth[changed] / depth_map.depth[changed]
        assert np.all(ratio >= 0.5)
        assert np.any(ratio != 1.0)

    def test_relative_noise_matches_sigma(self):
        depth = np.full((400, 250), 7.0)
        dm = DepthMap(depth, np.zeros(depth.shape, dtype=bool))

        noisy = perturb_depth(dm, 0.02, seed=11)

        rel = (noisy.depth - 7.0) / 7.0
        assert 0.018 <= rel.std() <= 0.022
        assert abs(rel.mean()) < 1e-3

    def test_all_terrain_map_is_unchanged(self):
        depth = np.full((8, 8), 3.0)
        dm = DepthMap(depth, np.ones(depth.shape, dtype=bool))

        noisy = perturb_depth(dm, 0.05, seed=2)

        np.testing.assert_array_equal(noisy.depth, depth)

    def test_large_sigma_keeps_depth_positive(self):
        depth = np.full((50, 50), 2.0)
        dm = DepthMap(depth, np.zeros(depth.shape, dtype=bool))

        noisy = perturb_depth(dm, 2.0, seed=0)

        assert noisy.depth.min() >= 1.0
        assert noisy.depth.max() > 6.0

    def test_noise_is_seeded(self, depth_map):
        a = perturb_depth(depth_map, 0.02, seed=4)
        b = perturb_depth(depth_map, 0.02, seed=4)

        np.testing.assert_array_equal(a.depth, b.depth)

    def test_negative_sigma(self, depth_map):
        with pytest.raises(BadParamsError):
            perturb_depth(depth_map, -0.1, seed=0)


def test_depth_png_keeps_background_and_mask(tmp_path):
    dm = render_mesh_depth(_scene(), 0.7, 40)
    path = tmp_path / "depth.png"

    sidecar = write_depth_png(dm, path, sigma_rel=0.0, seed=3)
    restored = read_depth_png(path)

    assert sidecar["background_value"] == 0
    np.testing.assert_array_equal(restored.finite, dm.finite)
    np.testing.assert_array_equal(restored.terrain_mask, dm.terrain_mask)
    np.testing.assert_allclose(restored.depth[dm.finite], dm.depth[dm.finite], atol=sidecar["step"])
    assert restored.camera == dm.camera
    assert sidecar["seed"] == 3
    assert sidecar["eps_floor"] == -0.5


class TestAzimuth:
    def test_wall_hides_the_box_behind_it(self):
        mesh = _wall_blockout().to_trimesh()

        hidden = occluded_parts(mesh, render_mesh_depth(mesh, 0.0, 64))
        facing = occluded_parts(mesh, render_mesh_depth(mesh, math.pi, 64))

        assert hidden == ["box_1"]
        assert facing == []

    def test_best_azimuth_is_canonical_and_avoids_occlusion(self):
        azimuth = best_azimuth(_wall_blockout(), resolution=64)

        steps = azimuth / (math.pi / 4.0)
        assert steps == pytest.approx(round(steps))
        assert 0.0 <= azimuth < 2.0 * math.pi
        assert azimuth != 0.0

import json

import numpy as np
import pytest

from worldblock.blockout import (
    Blockout,
    OffsetTerrain,
    RemoveBox,
    SetBoxHeight,
    apply_edits,
    assemble_blockout,
    blockout_parts,
    edit_script_to_dict,
    export_mesh,
    ground_plane_anchor,
    load_mesh,
    normalize_scene,
    parse_edit_script,
    read_blockout,
    write_blockout,
)
from worldblock.errors import BadParamsError, EmptyMeshError, SchemaError, SpecSyntaxError, UnknownIdError
from worldblock.mesh_ops import TriMesh, concatenate
from worldblock.placement import Placement
from worldblock.terrain import HeightField, Rect


def _blockout():
    hf = HeightField(np.zeros((5, 5)), 2.5)
    placements = [
        Placement(0, "medium", Rect(3.0, 3.0, 2.0, 2.0), 2.0),
        Placement(1, "small", Rect(8.5, 8.5, 1.0, 1.0), 1.0),
    ]
    return assemble_blockout(hf, placements)


def _quad(x0, y0, x1, y1, z=0.0):
    v = np.array([[x0, y0, z], [x1, y0, z], [x1, y1, z], [x0, y1, z]], dtype=float)
    return TriMesh(v, [[0, 1, 2], [0, 2, 3]])


class TestAssembly:
    def test_parts_are_ground_then_boxes(self):
        mesh = _blockout().to_trimesh()

        assert mesh.part_names == ("ground", "box_0", "box_1")
        assert mesh.part("ground").n_triangles == 2 * 4 * 4
        assert mesh.part("box_0").n_triangles == 12

    def test_boxes_stand_on_their_base(self):
        b = _blockout()

        lo, hi = b.to_trimesh().part("box_0").bounds

        np.testing.assert_allclose(lo, [2.0, 2.0, 0.0])
        np.testing.assert_allclose(hi, [4.0, 4.0, 2.0])

    def test_ground_truth_parts(self):
        ps = blockout_parts(_blockout())

        assert [p.name for p in ps.parts] == ["ground", "box_0", "box_1"]
        assert ps.ground.id == 0
        assert ps.ground_confidence > 0.5


class TestEdits:
    def test_remove_box(self):
        edited = apply_edits(_blockout(), (RemoveBox(0),))

        assert [p.id for p in edited.placements] == [1]
        assert "box_0" not in edited.to_trimesh().part_names

    def test_set_box_height(self):
        edited = apply_edits(_blockout(), (SetBoxHeight(0, 5.0),))

        assert edited.placement(0).height == 5.0
        assert edited.to_trimesh().bounds[1][2] == pytest.approx(5.0)

    def test_offset_terrain_resettles_touching_boxes(self):
        edited = apply_edits(_blockout(), (OffsetTerrain((0.0, 0.0, 5.0, 5.0), 1.0),))

        heights = np.asarray(edited.heightfield.heights)
        assert heights[:3, :3].tolist() == [[1.0] * 3] * 3
        assert heights[3:, :].sum() == 0.0
        assert edited.placement(0).base_z == pytest.approx(1.0)
        assert edited.placement(1).base_z == 0.0

    def test_edits_apply_in_order(self):
        with pytest.raises(UnknownIdError):
            apply_edits(_blockout(), (RemoveBox(0), SetBoxHeight(0, 3.0)))

    def test_unknown_id(self):
        with pytest.raises(UnknownIdError):
            apply_edits(_blockout(), (RemoveBox(9),))

    def test_input_blockout_is_unchanged(self):
        b = _blockout()

        apply_edits(b, (RemoveBox(0), OffsetTerrain((0.0, 0.0, 10.0, 10.0), 2.0)))

        assert len(b.placements) == 2
        assert np.asarray(b.heightfield.heights).max() == 0.0


class TestEditScript:
    def test_parse_and_serialize(self):
        text = json.dumps({
            "edits": [
                {"op": "remove_box", "id": 3},
                {"op": "set_box_height", "id": 1, "height": 2.5},
                {"op": "offset_terrain", "rect": [0, 0, 4, 4], "dz": -0.5},
            ]
        })

        edits = parse_edit_script(text)

        assert edits == (RemoveBox(3), SetBoxHeight(1, 2.5), OffsetTerrain((0.0, 0.0, 4.0, 4.0), -0.5))
        assert edit_script_to_dict(edits) == json.loads(text)

    @pytest.mark.parametrize(
        "edit, path",
        [
            ({"op": "explode", "id": 1}, "edits[0].op"),
            ({"op": "remove_box", "id": "1"}, "edits[0].id"),
            ({"op": "remove_box", "id": 1, "height": 2}, "edits[0]"),
            ({"op": "set_box_height", "id": 1, "height": 0}, "edits[0].height"),
            ({"op": "offset_terrain", "rect": [0, 0, 1], "dz": 1}, "edits[0].rect"),
            ({"op": "offset_terrain", "rect": [2, 0, 1, 1], "dz": 1}, "edits[0].rect"),
        ],
    )
    def test_schema_errors_name_the_field(self, edit, path):
        with pytest.raises(SchemaError) as info:
            parse_edit_script(json.dumps({"edits": [edit]}))

        assert info.value.path == path

    def test_top_level_must_be_an_edits_object(self):
        with pytest.raises(SchemaError):
            parse_edit_script("[]")

    def test_malformed_json(self):
        with pytest.raises(SpecSyntaxError):
            parse_edit_script("{edits")


class TestNormalization:
    def test_scene_fits_the_unit_cube_with_ground_at_origin(self):
        scene = _blockout().to_trimesh()
        navmesh = _quad(1.0, 1.0, 9.0, 9.0)

        norm_scene, norm_nav, transform = normalize_scene(scene, navmesh)

        np.testing.assert_allclose(transform.ground_anchor, [5.0, 5.0, 0.0])
        np.testing.assert_allclose(transform.apply([5.0, 5.0, 0.0]), 0.0, atol=1e-12)
        assert transform.scale == pytest.approx(0.98 / 5.0)
        assert np.abs(norm_scene.vertices).max() == pytest.approx(0.98)
        np.testing.assert_allclose(norm_nav.vertices[:, 2], 0.0, atol=1e-12)

    def test_one_transform_for_both_meshes(self):
        scene = _blockout().to_trimesh()
        navmesh = _quad(1.0, 1.0, 9.0, 9.0)

        norm_scene, norm_nav, transform = normalize_scene(scene, navmesh)

        np.testing.assert_allclose(norm_scene.vertices, transform.apply(scene.vertices))
        np.testing.assert_allclose(norm_nav.vertices, transform.apply(navmesh.vertices))
        np.testing.assert_allclose(transform.invert().apply(norm_scene.vertices), scene.vertices, atol=1e-9)

    def test_scale_reference_overrides_the_scene(self):
        scene = _blockout().to_trimesh()
        reference = _quad(-10.0, -10.0, 20.0, 20.0)

        _, _, transform = normalize_scene(scene, _quad(1.0, 1.0, 9.0, 9.0), scale_reference=reference)

        assert transform.scale == pytest.approx(0.98 / 15.0)

    def test_ground_anchor_prefers_the_lowest_plane(self):
        navmesh = concatenate([_quad(0.0, 0.0, 4.0, 4.0), _quad(10.0, 0.0, 30.0, 20.0, z=3.0)])

        anchor = ground_plane_anchor(navmesh, tol=0.1)

        np.testing.assert_allclose(anchor, [2.0, 2.0, 0.0])

    def test_empty_inputs(self):
        with pytest.raises(EmptyMeshError):
            normalize_scene(TriMesh.empty(), _quad(0, 0, 1, 1))

    def test_identity(self):
        scene = _blockout().to_trimesh()
        _, _, transform = normalize_scene(scene, _quad(1.0, 1.0, 9.0, 9.0))

        assert not transform.is_identity()
        np.testing.assert_allclose(transform.matrix[:3, :3], np.eye(3) * transform.scale)


class TestMeshFiles:
    def test_obj_keeps_part_labels(self, tmp_path):
        mesh = _blockout().to_trimesh()
        path = tmp_path / "blockout.obj"

        export_mesh(mesh, "obj", path)
        loaded = load_mesh(path)

        assert loaded.part_names == mesh.part_names
        np.testing.assert_allclose(loaded.vertices, mesh.vertices, atol=1e-6)
        np.testing.assert_array_equal(loaded.triangles, mesh.triangles)

    def test_glb_keeps_one_node_per_part(self, tmp_path):
        mesh = _blockout().to_trimesh()
        path = tmp_path / "blockout.glb"

        export_mesh(mesh, "glb", path)
        loaded = load_mesh(path)

        assert sorted(loaded.part_names) == sorted(mesh.part_names)
        assert loaded.area == pytest.approx(mesh.area)

    def test_unknown_format(self, tmp_path):
        with pytest.raises(BadParamsError):
            export_mesh(_quad(0, 0, 1, 1), "fbx", tmp_path / "x.fbx")


def test_blockout_file_restores_the_layout(tmp_path):
    b = apply_edits(_blockout(), (OffsetTerrain((0.0, 0.0, 5.0, 5.0), 0.5),))
    path = tmp_path / "blockout.json"

    write_blockout(b, path)
    restored = read_blockout(path)

    assert isinstance(restored, Blockout)
    assert restored.to_dict() == b.to_dict()

import numpy as np
import pytest

from worldblock.blockout import load_mesh
from worldblock.decompose import (
    DecomposeConfig,
    FilterVerdict,
    connectivity_degree_order,
    contact_graph,
    decompose_scene,
    decomposition_report,
    detect_ground,
    export_parts,
    part_set_from_labeled_mesh,
    part_set_from_meshes,
    pivot_remainder_split,
    quality_filter,
)
from worldblock.errors import BadParamsError, EmptyMeshError
from worldblock.mesh_ops import TriMesh, box_mesh, concatenate


def _quad(x0, y0, x1, y1, z=0.0):
    v = np.array([[x0, y0, z], [x1, y0, z], [x1, y1, z], [x0, y1, z]], dtype=float)
    return TriMesh(v, [[0, 1, 2], [0, 2, 3]])


def _scattered():
    boxes = [box_mesh((c, c, 0.0), (1.0, 1.0, 1.0)) for c in (2.0, 5.0, 8.0)]
    return concatenate([_quad(0, 0, 10, 10)] + boxes)


def _stacked():
    return concatenate([
        _quad(0, 0, 10, 10),
        box_mesh((5.0, 5.0, 0.0), (2.0, 2.0, 2.0)),
        box_mesh((5.0, 5.0, 2.0), (1.0, 1.0, 1.0)),
        box_mesh((2.0, 2.0, 0.0), (1.0, 1.0, 1.0)),
    ])


class TestDecompose:
    def test_ground_and_one_part_per_box(self):
        ps = decompose_scene(_scattered())

        assert [p.name for p in ps.parts] == ["ground", "part_1", "part_2", "part_3"]
        assert ps.ground.id == 0
        assert ps.ground_confidence == pytest.approx(100.0 / 103.0)
        np.testing.assert_allclose([p.translation for p in ps.objects], [[2, 2, 0.5], [5, 5, 0.5], [8, 8, 0.5]])

    def test_parts_are_stored_centered(self):
        ps = decompose_scene(_scattered())

        for p in ps.parts:
            np.testing.assert_allclose(p.mesh.vertices.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(ps.world_mesh().bounds, _scattered().bounds)

    def test_flat_overlay_is_merged_into_the_ground(self):
        decal = _quad(3.0, 6.0, 4.0, 7.0, z=0.0005)

        ps = decompose_scene(concatenate([_scattered(), decal]))

        assert len(ps.objects) == 3
        assert "overlay-merged" in [role for _, role in ps.ground.members]
        assert ps.ground.stats.area == pytest.approx(101.0)

    def test_small_parts_merge_into_their_nearest_neighbour(self):
        cfg = DecomposeConfig(small_part_vertex_threshold=10)

        ps = decompose_scene(_scattered(), cfg)

        assert len(ps.objects) == 1
        roles = [role for _, role in ps.objects[0].members]
        assert roles.count("small-merged") == 2
        assert ps.objects[0].stats.vertex_count == 24

    def test_no_flat_component_means_no_ground(self):
        boxes = concatenate([box_mesh((c, 0.0, 0.0), (1.0, 1.0, 1.0)) for c in (0.0, 3.0)])

        ps = decompose_scene(boxes)

        assert ps.ground is None
        assert ps.ground_confidence == 0.0
        assert len(ps.parts) == 2

    def test_empty_mesh(self):
        with pytest.raises(EmptyMeshError):
            decompose_scene(TriMesh.empty())


def test_detect_ground_picks_the_largest_flat_component():
    components = [box_mesh((0.0, 0.0, 0.0), (3.0, 3.0, 3.0)), _quad(0, 0, 2, 2), _quad(0, 0, 4, 4)]

    index, confidence = detect_ground(components)

    assert index == 2
    assert confidence == pytest.approx(16.0 / (9.0 + 4.0 + 16.0))


class TestQualityFilter:
    def test_accepts_a_clean_decomposition(self):
        assert quality_filter(decompose_scene(_scattered())) == FilterVerdict(True)

    def test_part_count(self):
        verdict = quality_filter(decompose_scene(_scattered()), DecomposeConfig(max_parts=3))

        assert verdict == FilterVerdict(False, ("part_count",))

    def test_ground_confidence(self):
        boxes = concatenate([box_mesh((c, 0.0, 0.0), (1.0, 1.0, 1.0)) for c in (0.0, 3.0)])

        verdict = quality_filter(decompose_scene(boxes))

        assert verdict.reasons == ("ground_confidence",)

    def test_imbalance(self):
        ps = decompose_scene(_scattered())

        verdict = quality_filter(ps, DecomposeConfig(max_imbalance_ratio=0.5))

        assert "imbalance" in verdict.reasons

    @pytest.mark.parametrize(
        "kwargs",
        [{"weld_eps": 0.0}, {"min_parts": 0}, {"min_parts": 5, "max_parts": 4}, {"min_ground_confidence": 1.5}],
    )
    def test_invalid_config(self, kwargs):
        with pytest.raises(BadParamsError):
            DecomposeConfig(**kwargs)


class TestConnectivity:
    @pytest.fixture(scope="class")
    def parts(self):
        return decompose_scene(_stacked())

    def test_contact_graph(self, parts):
        graph = contact_graph(parts)

        assert graph == {0: {1, 3}, 1: {0, 2}, 2: {1}, 3: {0}}

    def test_degree_order_breaks_ties_by_area_then_id(self, parts):
        order = connectivity_degree_order(parts)

        assert [(d.part_id, d.degree) for d in order] == [(0, 2), (1, 2), (2, 1), (3, 1)]

    def test_pivots_and_remainder(self, parts):
        pivots, remainder = pivot_remainder_split(parts, pivot_count=2)

        assert [p.id for p in pivots] == [0, 1]
        assert [p.name for p in remainder] == ["remainder_0", "remainder_1"]
        assert sum(p.stats.vertex_count for p in remainder) == 16

    def test_all_pivots_leave_no_remainder(self, parts):
        pivots, remainder = pivot_remainder_split(parts, pivot_count=10)

        assert len(pivots) == 4
        assert remainder == ()

    def test_negative_pivot_count(self, parts):
        with pytest.raises(BadParamsError):
            pivot_remainder_split(parts, pivot_count=-1)

    def test_unwelded_parts_use_the_default_tolerance(self):
        # 1 mm gap between the stacked boxes, 2 m to the third one
        ps = part_set_from_meshes([
            box_mesh((0.0, 0.0, 0.0), (1.0, 1.0, 1.0)),
            box_mesh((0.0, 0.0, 1.001), (1.0, 1.0, 1.0)),
            box_mesh((3.0, 0.0, 0.0), (1.0, 1.0, 1.0)),
        ])

        assert ps.weld_eps == 0.0
        assert contact_graph(ps) == {0: {1}, 1: {0}, 2: set()}
        assert contact_graph(ps, contact_eps=1e-4) == {0: set(), 1: set(), 2: set()}


def test_report_and_export(tmp_path):
    ps = decompose_scene(_scattered())
    cfg = DecomposeConfig()
    order = connectivity_degree_order(ps)

    report = decomposition_report(ps, cfg, quality_filter(ps, cfg), order)
    export_parts(ps, tmp_path / "parts.obj")

    assert report["part_count"] == 4
    assert report["verdict"] == {"accepted": True, "reasons": []}
    assert report["connectivity_order"][0] == 0
    assert report["parts"][0]["degree"] == 3
    assert load_mesh(tmp_path / "parts.obj").part_names == ("ground", "part_1", "part_2", "part_3")


def test_labeled_mesh_keeps_its_parts():
    mesh = concatenate([_quad(0, 0, 10, 10), box_mesh((5.0, 5.0, 0.0), (1.0, 1.0, 1.0))], ["ground", "box_0"])

    ps = part_set_from_labeled_mesh(mesh)

    assert [p.name for p in ps.parts] == ["ground", "box_0"]
    assert ps.ground.name == "ground"
    assert ps.ground_confidence == pytest.approx(100.0 / 101.0)

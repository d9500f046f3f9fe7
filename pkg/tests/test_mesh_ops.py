import numpy as np
import pytest

from worldblock.mesh_ops import (
    TriMesh,
    box_mesh,
    canonical_triangles,
    concatenate,
    geometry_digest,
    remove_duplicate_faces,
    split_components,
    vertex_components,
    weld_vertices,
)


def _quad(z=0.0, size=1.0):
    v = np.array([[0, 0, z], [size, 0, z], [size, size, z], [0, size, z]], dtype=float)
    return TriMesh(v, [[0, 1, 2], [0, 2, 3]])


class TestTriMesh:
    def test_rejects_out_of_range_indices(self):
        with pytest.raises(ValueError, match="out of range"):
            TriMesh(np.zeros((3, 3)), [[0, 1, 3]])

    def test_rejects_non_finite_vertices(self):
        with pytest.raises(ValueError, match="finite"):
            TriMesh([[0, 0, np.nan], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])

    def test_face_parts_must_match_triangles(self):
        with pytest.raises(ValueError):
            TriMesh(_quad().vertices, _quad().triangles, [0], ("a",))

    def test_area_and_normals(self):
        quad = _quad(size=2.0)

        assert quad.area == pytest.approx(4.0)
        np.testing.assert_allclose(quad.face_normals(), [[0, 0, 1], [0, 0, 1]])

    def test_empty_mesh(self):
        empty = TriMesh.empty()

        assert empty.is_empty
        np.testing.assert_array_equal(empty.bounds, np.zeros((2, 3)))

    def test_submesh_drops_unused_vertices(self):
        sub = _quad().submesh(np.array([True, False]))

        assert sub.n_triangles == 1
        assert sub.n_vertices == 3

    def test_transformed(self):
        m = np.eye(4)
        m[:3, 3] = [1.0, 2.0, 3.0]

        moved = _quad().transformed(m)

        np.testing.assert_allclose(moved.bounds, [[1, 2, 3], [2, 3, 3]])


def test_box_mesh_is_closed_and_outward_facing():
    box = box_mesh((1.0, 2.0, 0.5), (2.0, 4.0, 3.0), yaw=0.3)
    tm = box.to_trimesh()

    assert box.n_triangles == 12
    assert tm.is_watertight
    assert tm.volume == pytest.approx(24.0)
    assert box.bounds[0][2] == pytest.approx(0.5)
    assert box.bounds[1][2] == pytest.approx(3.5)


class TestConcatenate:
    def test_names_label_each_input(self):
        scene = concatenate([_quad(), _quad(1.0)], ["ground", "roof"])

        assert scene.part_names == ("ground", "roof")
        assert scene.labels() == ["ground", "ground", "roof", "roof"]
        assert scene.part("roof").bounds[0][2] == 1.0

    def test_existing_labels_merge_by_name(self):
        a = _quad().labeled("x")
        b = _quad(2.0).labeled("x")
        c = _quad(3.0)

        merged = concatenate([a, b, c])

        assert merged.part_names == ("x", "mesh")
        assert merged.part("x").n_triangles == 4

    def test_iter_parts_skips_empty_names(self):
        scene = concatenate([_quad(), _quad(1.0)], ["a", "b"])

        assert [name for name, _ in scene.iter_parts()] == ["a", "b"]

    def test_unknown_part(self):
        with pytest.raises(KeyError):
            _quad().part("nope")


def test_weld_merges_close_vertices_and_drops_collapsed_faces():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1e-6, 0, 0], [1, 1, 0]], dtype=float)
    mesh = TriMesh(v, [[0, 1, 2], [3, 1, 4], [0, 3, 1]])

    welded, old_to_new = weld_vertices(mesh, 1e-4)

    assert welded.n_vertices == 4
    assert welded.n_triangles == 2
    assert old_to_new[0] == old_to_new[3]


def test_components_and_split():
    mesh = concatenate([_quad(), _quad(5.0)])

    count, _ = vertex_components(mesh)
    pieces = split_components(mesh)

    assert count == 2
    assert [p.bounds[0][2] for p in pieces] == [0.0, 5.0]


def test_remove_duplicate_faces():
    mesh = TriMesh(_quad().vertices, [[0, 1, 2], [1, 2, 0], [0, 2, 3]])

    assert remove_duplicate_faces(mesh).n_triangles == 2


def test_canonical_triangles_ignore_indexing():
    quad = _quad()
    shuffled = TriMesh(quad.vertices[[2, 3, 0, 1]], [[0, 1, 2], [2, 3, 0]])

    np.testing.assert_allclose(canonical_triangles(quad), canonical_triangles(shuffled))
    assert geometry_digest(quad) == geometry_digest(shuffled)
    assert geometry_digest(quad) != geometry_digest(_quad(size=2.0))

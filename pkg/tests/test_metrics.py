import math

import numpy as np
import pytest

from worldblock.decompose import part_set_from_meshes
from worldblock.errors import (
    BadParamsError,
    DegenerateCloudError,
    DimensionMismatchError,
    EmptyCloudError,
    EmptySetError,
)
from worldblock.mesh_ops import TriMesh, box_mesh, concatenate
from worldblock.metrics import (
    EvalReport,
    chamfer,
    evaluate_navmesh_batch,
    extract_by_mask,
    fscore,
    icp_align,
    joint_normalization,
    mask_iou,
    navmesh_cd_protocol,
    part_match_eval,
    part_sample,
    rigid_fit,
    verify_enhancement,
)
from worldblock.navmesh import reextract_navmesh
from worldblock.scene_spec import AgentParams


def _rot_z(deg):
    a = math.radians(deg)
    return np.array([[math.cos(a), -math.sin(a), 0.0], [math.sin(a), math.cos(a), 0.0], [0.0, 0.0, 1.0]])


def _cloud(n=300, seed=0):
    return np.random.default_rng(seed).uniform(0.0, 1.0, size=(n, 3)) * [4.0, 2.0, 0.5]


class TestChamfer:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        p, q = rng.normal(size=(50, 3)), rng.normal(size=(40, 3))

        d = np.linalg.norm(p[:, None, :] - q[None, :, :], axis=2)
        expected = 0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean())

        assert chamfer(p, q) == pytest.approx(expected)

    def test_identical_clouds(self):
        p = _cloud()

        assert chamfer(p, p) == 0.0

    def test_empty_cloud(self):
        with pytest.raises(EmptyCloudError):
            chamfer(np.zeros((0, 3)), _cloud())


class TestFScore:
    P = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [5.0, 0.0, 0.0]])
    Q = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [9.0, 0.0, 0.0]])

    def test_precision_and_recall(self):
        assert fscore(self.P, self.Q, 0.1) == pytest.approx(2.0 / 3.0)

    def test_nothing_within_tau(self):
        assert fscore(self.P, self.Q + 100.0, 0.1) == 0.0

    def test_tau_must_be_positive(self):
        with pytest.raises(BadParamsError):
            fscore(self.P, self.Q, 0.0)


class TestIcp:
    def test_rigid_fit_is_exact(self):
        q = _cloud()
        rotation = _rot_z(30.0)
        p = q @ rotation.T + [1.0, 2.0, 3.0]

        r, t = rigid_fit(p, q)

        np.testing.assert_allclose(p @ r.T + t, q, atol=1e-10)

    def test_recovers_a_small_misalignment(self):
        q = _cloud()
        p = (q - q.mean(axis=0)) @ _rot_z(4.0).T + q.mean(axis=0) + [0.3, -0.2, 0.1]

        result = icp_align(p, q)

        assert result.converged
        np.testing.assert_allclose(result.apply(p), q, atol=1e-6)
        assert result.rms < 1e-6

    def test_recovers_a_twenty_degree_turn(self):
        q = np.random.default_rng(5).uniform(0.0, 1.0, size=(400, 3)) * [6.0, 1.5, 0.5]
        center = q.mean(axis=0)
        p = (q - center) @ _rot_z(20.0).T + center

        result = icp_align(p, q)

        angle = math.atan2(result.rotation[1, 0], result.rotation[0, 0])
        assert angle == pytest.approx(math.radians(-20.0), abs=1e-4)
        np.testing.assert_allclose(result.apply(p), q, atol=1e-6)

    def test_rms_never_increases(self):
        q = _cloud(seed=1)
        p = q @ _rot_z(6.0).T + [0.5, 0.0, 0.0]

        history = np.array(icp_align(p, q).rms_history)

        assert np.all(np.diff(history) <= 1e-12)

    @pytest.mark.parametrize(
        "cloud",
        [np.zeros((2, 3)), np.stack([np.arange(5.0), np.zeros(5), np.zeros(5)], axis=1)],
    )
    def test_degenerate_clouds(self, cloud):
        with pytest.raises(DegenerateCloudError):
            icp_align(cloud, _cloud())


class TestMasks:
    def test_iou(self):
        assert mask_iou([1, 1, 0, 0], [0, 1, 1, 0]) == pytest.approx(1.0 / 3.0)

    def test_two_empty_masks_match(self):
        assert mask_iou(np.zeros((4, 4)), np.zeros((4, 4))) == 1.0

    def test_shapes_must_agree(self):
        with pytest.raises(DimensionMismatchError):
            mask_iou(np.zeros((4, 4)), np.zeros((4, 5)))

    def test_first_passing_candidate_is_accepted(self):
        coarse = np.zeros((10, 10), dtype=bool)
        coarse[2:8, 2:8] = True
        shifted = np.roll(coarse, 3, axis=1)
        close = np.roll(coarse, 0, axis=1)
        close[2, 2] = False

        verdict = verify_enhancement(coarse, [shifted, close, coarse])

        assert verdict.accepted
        assert verdict.accepted_index == 1
        assert len(verdict.ious) == 2
        assert verdict.ious[1] == pytest.approx(35.0 / 36.0)

    def test_no_candidate_passes(self):
        coarse = np.eye(6, dtype=bool)

        verdict = verify_enhancement(coarse, [~coarse, np.zeros((6, 6), dtype=bool)])

        assert not verdict.accepted
        assert verdict.ious == (0.0, 0.0)

    def test_extract_by_mask(self):
        coarse = np.eye(6, dtype=bool)

        assert extract_by_mask(coarse, coarse).tolist() == coarse.tolist()
        assert extract_by_mask(coarse, ~coarse) is None


class TestPartMatch:
    def _boxes(self):
        return [box_mesh((float(c), 0.0, 0.0), (1.0, 1.0, 1.0 + 0.5 * c)) for c in range(3)]

    def _parts(self, meshes, names=None):
        return part_set_from_meshes(meshes, names or [f"box_{k}" for k in range(len(meshes))])

    def test_identical_parts_score_perfectly(self):
        gt = self._parts(self._boxes())

        report = part_match_eval(gt, gt, n_samples=256)

        assert [item["matched_pred"] for item in report.items] == ["box_0", "box_1", "box_2"]
        assert report.aggregates["CD"] == 0.0
        assert report.aggregates["F-score@0.01"] == 1.0

    def test_prediction_order_does_not_matter(self):
        boxes = self._boxes()
        gt = self._parts(boxes)
        pred = self._parts(boxes[::-1], ["p2", "p1", "p0"])

        report = part_match_eval(pred, gt, n_samples=256)

        assert [item["matched_pred"] for item in report.items] == ["p0", "p1", "p2"]
        assert report.aggregates["CD"] == 0.0

    def test_missing_part_is_penalized(self):
        boxes = self._boxes()

        report = part_match_eval(self._parts(boxes[:2]), self._parts(boxes), n_samples=256)

        last = report.items[-1]
        assert last["gt_part"] == "box_2"
        assert last["CD"] > 0.0
        assert last["F-score@0.01"] < 1.0

    def test_empty_sets(self):
        gt = self._parts(self._boxes())

        with pytest.raises(EmptySetError):
            part_match_eval(part_set_from_meshes([]), gt)

    def test_sampling_depends_only_on_geometry(self):
        box = self._boxes()[1]
        reindexed = TriMesh(box.vertices, box.triangles[::-1])

        np.testing.assert_array_equal(part_sample(box, 64).points, part_sample(reindexed, 64).points)

    def test_joint_normalization_fits_the_ground_truth(self):
        mesh = concatenate(self._boxes())

        transform = joint_normalization(mesh)
        moved = transform.apply(mesh.vertices)

        assert np.abs(moved).max() == pytest.approx(0.98)
        np.testing.assert_allclose(moved.min(axis=0) + moved.max(axis=0), 0.0, atol=1e-12)


def test_report_csv_has_method_and_metric_columns(tmp_path):
    report = EvalReport(
        protocol="part_match",
        method="ours",
        items=[{"CD": 0.1, "F-score@0.01": 0.5}, {"CD": 0.3, "F-score@0.01": 1.0}],
        columns=("method", "CD", "F-score@0.01"),
    )

    report.write(tmp_path / "report.csv", tmp_path / "report.json")

    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert lines[0] == "method,CD,F-score@0.01"
    method, cd, f = lines[1].split(",")
    assert method == "ours"
    assert float(cd) == pytest.approx(0.2)
    assert float(f) == pytest.approx(0.75)
    assert "chamfer_variant" in (tmp_path / "report.json").read_text()


class TestNavmeshProtocol:
    def _scene(self):
        v = np.array([[0, 0, 0], [10, 0, 0], [10, 10, 0], [0, 10, 0]], dtype=float)
        ground = TriMesh(v, [[0, 1, 2], [0, 2, 3]])
        return concatenate([ground, box_mesh((3.0, 6.0, 0.0), (2.0, 3.0, 2.5))])

    def test_scene_against_its_own_navmesh(self):
        scene = self._scene()
        agent = AgentParams()
        gt = reextract_navmesh(scene, agent, 0.25).to_trimesh()

        result = navmesh_cd_protocol(scene, gt, agent, n_samples=500, cell_size=0.25)

        assert result.cd == pytest.approx(0.0, abs=1e-9)
        assert result.config["normalized_cell_size"] == pytest.approx(0.25 * result.pred_transform.scale)
        assert result.to_dict()["icp"]["converged"]

    def test_batch_report(self):
        scene = self._scene()
        gt = reextract_navmesh(scene, AgentParams(), 10.0 / 256.0).to_trimesh()

        report = evaluate_navmesh_batch([("scene_0", scene, gt)], n_samples=300)

        assert report.columns == ("method", "navmesh_cd")
        assert report.items[0]["name"] == "scene_0"
        assert report.aggregates["navmesh_cd"] == pytest.approx(0.0, abs=1e-9)

    def test_displaced_ground_truth_is_found_again(self):
        scene = self._scene()
        shift = np.array([3.0, -2.0, 0.5])
        gt = reextract_navmesh(scene, AgentParams(), 0.25).to_trimesh()
        moved_gt = TriMesh(gt.vertices + shift, gt.triangles)
        moved_scene = TriMesh(scene.vertices + shift, scene.triangles)

        result = navmesh_cd_protocol(
            scene, moved_gt, AgentParams(), n_samples=500, cell_size=0.25, reference_scene=moved_scene
        )

        assert result.cd < 2.0 * result.config["normalized_cell_size"]

    def test_unrelated_ground_truth_is_far(self):
        strip = TriMesh(
            np.array([[0, 0, 0], [10, 0, 0], [10, 0.5, 0], [0, 0.5, 0]], dtype=float), [[0, 1, 2], [0, 2, 3]]
        )

        result = navmesh_cd_protocol(self._scene(), strip, AgentParams(), n_samples=500, reference_scene=strip)

        assert 0.1 < result.cd < 2.0 * math.sqrt(3.0)

    def test_batch_normalizes_ground_truth_with_its_own_scene(self):
        scene = self._scene()
        gt = reextract_navmesh(scene, AgentParams(), 10.0 / 256.0).to_trimesh()
        scaled = TriMesh(scene.vertices * 2.0, scene.triangles)

        with_reference = evaluate_navmesh_batch([("s", scaled, gt, scene)], n_samples=500)
        without = evaluate_navmesh_batch([("s", scaled, gt)], n_samples=500)

        assert with_reference.items[0]["navmesh_cd"] < 0.03
        assert without.items[0]["navmesh_cd"] > 0.05

    def test_batch_needs_pairs(self):
        with pytest.raises(EmptySetError):
            evaluate_navmesh_batch([])

import json
import math
from dataclasses import replace

import numpy as np
import pytest
from PIL import Image

from worldblock.errors import OutOfBoundsError
from worldblock.scene_spec import SceneSpec, TerrainSpec
from worldblock.terrain import (
    HeightField,
    Rect,
    generate_heightfield,
    heightfield_to_png,
    sample_height,
    sample_heights,
    slope_deg,
    smooth_under_footprints,
)


def _spec(kind="perlin", resolution=33, elevation_range=(0.0, 4.0), extent=32.0):
    return replace(
        SceneSpec(),
        extent=extent,
        terrain=TerrainSpec(kind=kind, resolution=resolution, elevation_range=elevation_range),
    )


def test_flat_terrain_sits_at_the_low_elevation():
    hf = generate_heightfield(_spec("flat", elevation_range=(1.5, 4.0)), 0)

    assert hf.resolution == 33
    assert hf.cell_size == pytest.approx(1.0)
    assert hf.extent == pytest.approx(32.0)
    np.testing.assert_array_equal(hf.heights, 1.5)


def test_steep_terrain_is_a_ramp_along_x():
    hf = generate_heightfield(_spec("steep"), 0)

    np.testing.assert_allclose(hf.heights[:, 0], 0.0)
    np.testing.assert_allclose(hf.heights[:, -1], 4.0)
    np.testing.assert_allclose(slope_deg(hf), math.degrees(math.atan(4.0 / 32.0)))


@pytest.mark.parametrize("kind", ["perlin", "plateau"])
def test_noise_terrains_respect_the_elevation_range(kind):
    hf = generate_heightfield(_spec(kind), 42)

    assert hf.heights.min() >= 0.0
    assert hf.heights.max() <= 4.0
    assert np.ptp(hf.heights) > 0.0


def test_generation_is_deterministic_per_seed():
    a = generate_heightfield(_spec(), 7)
    b = generate_heightfield(_spec(), 7)
    c = generate_heightfield(_spec(), 8)

    np.testing.assert_array_equal(a.heights, b.heights)
    assert not np.array_equal(a.heights, c.heights)


def test_heights_are_read_only():
    hf = generate_heightfield(_spec("flat"), 0)

    with pytest.raises(ValueError):
        hf.heights[0, 0] = 1.0


def test_heightfield_rejects_non_square_grids():
    with pytest.raises(ValueError):
        HeightField(np.zeros((3, 4)), 1.0)


class TestSampling:
    def _field(self):
        heights = np.array([[0.0, 1.0], [2.0, 3.0]])
        return HeightField(heights, 2.0)

    def test_nodes_are_exact(self):
        hf = self._field()

        assert sample_height(hf, 0.0, 0.0) == 0.0
        assert sample_height(hf, 2.0, 0.0) == 1.0
        assert sample_height(hf, 0.0, 2.0) == 2.0
        assert sample_height(hf, 2.0, 2.0) == 3.0

    def test_bilinear_between_nodes(self):
        hf = self._field()

        assert sample_height(hf, 1.0, 1.0) == pytest.approx(1.5)
        np.testing.assert_allclose(sample_heights(hf, [1.0, 0.5], [0.0, 2.0]), [0.5, 2.25])

    def test_outside_raises(self):
        with pytest.raises(OutOfBoundsError):
            sample_height(self._field(), 2.5, 1.0)


class TestSmoothing:
    def test_no_footprints_returns_input(self):
        hf = generate_heightfield(_spec(), 1)

        assert smooth_under_footprints(hf, []) is hf

    def test_pad_is_flat_and_far_nodes_are_untouched(self):
        hf = generate_heightfield(_spec(), 3)
        fp = Rect(16.0, 16.0, 4.0, 4.0)

        smoothed = smooth_under_footprints(hf, [fp])

        xs, ys = hf.node_coordinates()
        dist = fp.distance(xs, ys)
        pad = dist <= hf.cell_size
        far = dist >= 3.0 * hf.cell_size
        assert np.ptp(smoothed.heights[pad]) == pytest.approx(0.0)
        assert smoothed.heights[pad][0] == pytest.approx(hf.heights[dist == 0.0].mean())
        np.testing.assert_array_equal(smoothed.heights[far], hf.heights[far])

    def test_pad_takes_the_mean_under_the_footprint(self):
        heights = np.full((11, 11), 10.0)
        heights[5, 5], heights[5, 6], heights[6, 5], heights[6, 6] = 1.0, 2.0, 3.0, 4.0
        hf = HeightField(heights, 1.0)

        smoothed = smooth_under_footprints(hf, [Rect(5.5, 5.5, 1.0, 1.0)])

        np.testing.assert_allclose(smoothed.heights[5:7, 5:7], 2.5)
        ring = smoothed.heights[5, 6:]
        assert np.all(np.diff(ring) >= 0.0)
        assert ring[2] == pytest.approx(6.25)
        assert ring[-1] == 10.0

    def test_small_footprint_uses_the_nearest_node(self):
        heights = np.full((11, 11), 10.0)
        heights[5, 5] = 4.0
        hf = HeightField(heights, 1.0)

        smoothed = smooth_under_footprints(hf, [Rect(5.4, 5.4, 0.2, 0.2)])

        assert smoothed.heights[5, 5] == pytest.approx(4.0)
        assert smoothed.heights[5, 6] == pytest.approx(4.0)

    def test_footprint_outside_raises(self):
        hf = generate_heightfield(_spec("flat"), 0)

        with pytest.raises(OutOfBoundsError):
            smooth_under_footprints(hf, [Rect(31.5, 16.0, 4.0, 4.0)])


def test_heightfield_png_is_north_up_16_bit(tmp_path):
    hf = generate_heightfield(_spec("steep", resolution=9), 0)
    heights = np.array(hf.heights)
    heights[-1, 0] = 4.0  # mark the north-west node
    hf = hf.with_heights(heights)
    path = tmp_path / "heightfield.png"

    mapping = heightfield_to_png(hf, path, (0.0, 4.0))

    with Image.open(path) as img:
        pixels = np.asarray(img).astype(np.int64)
    assert pixels.shape == (9, 9)
    assert pixels[0, 0] == 65535
    assert pixels[-1, 0] == 0
    assert pixels[-1, -1] == 65535
    sidecar = json.loads((tmp_path / "heightfield.json").read_text())
    assert sidecar == mapping
    assert sidecar["row_order"] == "north_up"
    assert sidecar["scale"] == pytest.approx(4.0 / 65535)

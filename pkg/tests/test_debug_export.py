"""
Tests for the debug image export tool.
"""
import json
import sys

import pytest
from PIL import Image

from worldblock.tools import debug_export
from worldblock.tools.debug_export import export_debug_images

SPEC = {
    "seed": 5,
    "extent": 20.0,
    "terrain": {"kind": "perlin", "resolution": 33},
    "partition": {"strategy": "bsp", "region_count_hint": 4},
    "density": {"tier": "low", "hero": 1, "medium": 1, "small": 2},
    "occupancy_resolution": 64,
}


@pytest.fixture
def spec_path(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(SPEC))
    return path


def test_writes_every_layout_image(spec_path, tmp_path):
    out = tmp_path / "debug"

    written = export_debug_images(str(spec_path), str(out))

    assert set(written) == {"heightfield", "slope", "regions", "occupancy"}
    with Image.open(written["heightfield"]) as img:
        assert img.size == (33, 33)
    with Image.open(written["slope"]) as img:
        assert img.mode == "L"
        assert img.size == (33, 33)
    with Image.open(written["occupancy"]) as img:
        assert img.size == (64, 64)
    assert (out / "regions.svg").read_text().lstrip().startswith("<")


def test_seed_override_changes_the_terrain(spec_path, tmp_path):
    a = export_debug_images(str(spec_path), str(tmp_path / "a"))
    b = export_debug_images(str(spec_path), str(tmp_path / "b"), seed=6)

    with Image.open(a["heightfield"]) as ia, Image.open(b["heightfield"]) as ib:
        assert ia.tobytes() != ib.tobytes()


def test_main_exits_on_bad_spec(tmp_path, monkeypatch):
    bad = tmp_path / "bad.json"
    bad.write_text('{"extent": "wide"}')
    monkeypatch.setattr(sys, "argv", ["worldblock-debug-export", str(bad), "-o", str(tmp_path / "x")])

    with pytest.raises(SystemExit) as info:
        debug_export.main()

    assert info.value.code == 1

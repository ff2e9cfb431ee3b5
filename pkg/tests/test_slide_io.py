import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiager.detection import Detection
from tiager.errors import ManifestError, ParseError, TileIOError
from tiager.io import load_detections, load_mask, save_detections, save_mask
from tiager.raster import DET_LEVEL, SEG_LEVEL, Raster, Resolution, read_window
from tiager.slide import load_slide, read_manifest, write_slide


def test_single_tile_and_outside_reads(tmp_path):
    img = np.arange(64, dtype=np.uint8).reshape(8, 8)
    slide = load_slide(write_slide(tmp_path, "s", {0: (img, 0.5)}, tile_size=8))
    full = slide.read_window(0, 0, 0, 8, 8)
    np.testing.assert_array_equal(full.pixels, img / 255.0)
    assert not slide.read_window(0, 100, 100, 4, 4).pixels.any()


def test_window_across_tiles_matches_dense_array(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (70, 90), dtype=np.uint8)
    slide = load_slide(write_slide(tmp_path, "s", {0: (img, 0.5)}, tile_size=32))
    reader = slide.level(0)
    for _ in range(50):
        x, y = rng.integers(-40, 100, 2)
        w, h = rng.integers(1, 80, 2)
        np.testing.assert_array_equal(reader.read_uint8(x, y, w, h), read_window(img, x, y, w, h))


def test_downscaled_reader(tmp_path):
    img = np.full((8, 8), 100, np.uint8)
    slide = load_slide(write_slide(tmp_path, "s", {0: (img, 0.5)}, tile_size=4))
    src = slide.source_at(SEG_LEVEL)
    assert (src.width, src.height) == (4, 4)
    np.testing.assert_allclose(src.read(0, 0, 4, 4).pixels, 100 / 255)
    with pytest.raises(ManifestError):
        slide.source_at(Resolution(0.3))


def test_missing_tile_and_bad_size(tmp_path):
    img = np.zeros((16, 16), np.uint8)
    path = write_slide(tmp_path, "s", {0: (img, 0.5)}, tile_size=8)
    (tmp_path / "tiles" / "L0_X1_Y1.png").unlink()
    with pytest.raises(TileIOError, match="L0_X1_Y1"):
        load_slide(path).read_window(0, 8, 8, 4, 4)
    from PIL import Image
    Image.fromarray(np.zeros((3, 3), np.uint8)).save(tmp_path / "tiles" / "L0_X0_Y0.png")
    with pytest.raises(ManifestError):
        load_slide(path).read_window(0, 0, 0, 4, 4)


def test_manifest_validation(tmp_path):
    path = write_slide(tmp_path, "s", {0: (np.zeros((4, 4), np.uint8), 0.5)}, tile_size=4)
    data = json.loads(path.read_text())
    data["bogus"] = 1
    path.write_text(json.dumps(data))
    with pytest.raises(ManifestError, match="bogus"):
        read_manifest(path)
    path.write_text("{\n  \"slide_id\": ,\n}")
    with pytest.raises(ParseError, match=":2:"):
        read_manifest(path)


def test_detections_round_trip(tmp_path):
    p = tmp_path / "d.json"
    save_detections([], p)
    assert json.loads(p.read_text()) == {"points": []}
    rng = np.random.default_rng(1)
    dets = [Detection(float(x), float(y), float(c)) for (x, y), c in zip(rng.random((1000, 2)) * 1e5, rng.random(1000))]
    save_detections(dets, p)
    assert load_detections(p) == dets


@settings(max_examples=30, deadline=None)
@given(x=st.floats(0, 1e6), y=st.floats(0, 1e6), c=st.floats(0, 1))
def test_detection_round_trip_property(tmp_path_factory, x, y, c):
    p = tmp_path_factory.mktemp("d") / "d.json"
    save_detections([Detection(x, y, c)], p)
    assert load_detections(p) == [Detection(x, y, c)]


def test_malformed_detections(tmp_path):
    p = tmp_path / "d.json"
    p.write_text('{"points": [\n  {"x_um": 1, "y_um": 2,}\n]}')
    with pytest.raises(ParseError, match=r"d.json:2:.*y_um"):
        load_detections(p)
    p.write_text('{"points": [{"x_um": 1}]}')
    with pytest.raises(ParseError):
        load_detections(p)


def test_mask_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    m = Raster(rng.random((13, 17)) < 0.5, SEG_LEVEL, (3.0, 4.0))
    save_mask(m, tmp_path / "m.png")
    back = load_mask(tmp_path / "m.png")
    assert np.array_equal(back.pixels, m.pixels)
    assert back.mpp == 1.0 and back.origin == (3.0, 4.0)
    save_mask(Raster(m.pixels, DET_LEVEL), tmp_path / "m2.png")
    assert load_mask(tmp_path / "m2.png").mpp == 0.5

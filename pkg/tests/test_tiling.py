import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiager.errors import CoverageError, InvalidInputError
from tiager.raster import DET_LEVEL, Raster
from tiager.tiling import axis_positions, extract_patch, plan_tiles, stitch


def test_positions_examples():
    assert axis_positions(1000 + 256, 512, 256) == [0, 256, 512, 744]
    assert axis_positions(600 + 256, 512, 256) == [0, 256, 344]
    assert axis_positions(1024, 128, 100)[-2:] == [800, 896]
    assert axis_positions(100, 128, 100) == [0]


def test_plan_is_row_major_and_rejects_gaps():
    plan = plan_tiles(300, 200, 128, 100)
    keys = [(c.y, c.x) for c in plan.coords]
    assert keys == sorted(keys)
    with pytest.raises(CoverageError):
        plan_tiles(300, 200, 100, 128)
    with pytest.raises(InvalidInputError):
        plan_tiles(300, 200, 0, 0)


def _round_trip(arr, patch, stride, pad, mode="average"):
    r = Raster(arr, DET_LEVEL, (4.0, 9.0))
    plan = plan_tiles(r.width, r.height, patch, stride, pad)
    parts = [(c, extract_patch(r, c, pad)) for c in plan.coords]
    return plan, parts, stitch(parts, plan, mode, r.origin)


@settings(max_examples=60, deadline=None)
@given(w=st.integers(1, 70), h=st.integers(1, 70), patch=st.integers(1, 40),
       data=st.data(), mode=st.sampled_from(["average", "max"]))
def test_round_trip_bit_exact(w, h, patch, data, mode):
    stride = data.draw(st.integers(1, patch))
    pad = data.draw(st.integers(0, 10))
    arr = np.random.default_rng(w * 131 + h).random((h, w))
    _, _, out = _round_trip(arr, patch, stride, pad, mode)
    assert np.array_equal(out.pixels, arr)
    assert out.origin == (4.0, 9.0)


@settings(max_examples=40, deadline=None)
@given(w=st.integers(1, 60), h=st.integers(1, 60), patch=st.integers(2, 30), data=st.data())
def test_stitch_matches_dense_accumulator_and_ignores_order(w, h, patch, data):
    stride = data.draw(st.integers(1, patch))
    pad = data.draw(st.integers(0, 6))
    rng = np.random.default_rng(w + 97 * h)
    plan = plan_tiles(w, h, patch, stride, pad)
    parts = [(c, Raster(rng.random((patch, patch)), DET_LEVEL, (c.x - pad, c.y - pad))) for c in plan.coords]
    # margin for patches overhanging a canvas smaller than one patch
    acc = np.zeros((plan.canvas_h + patch, plan.canvas_w + patch))
    cnt = np.zeros_like(acc)
    for c, p in parts:
        acc[c.y:c.y + patch, c.x:c.x + patch] += p.pixels
        cnt[c.y:c.y + patch, c.x:c.x + patch] += 1
    with np.errstate(invalid="ignore"):
        expect = (acc / cnt)[pad:pad + h, pad:pad + w]
    out = stitch(parts, plan)
    assert np.max(np.abs(out.pixels - expect)) <= 1e-9
    shuffled = data.draw(st.permutations(parts))
    assert np.array_equal(stitch(shuffled, plan).pixels, out.pixels)


def test_stitch_missing_and_duplicate_tiles():
    arr = np.ones((10, 10))
    plan, parts, _ = _round_trip(arr, 4, 3, 0)
    with pytest.raises(CoverageError):
        stitch(parts[1:], plan)
    with pytest.raises(InvalidInputError):
        stitch(parts + parts[:1], plan)
    with pytest.raises(InvalidInputError):
        stitch(parts, plan, mode="median")


def test_stitch_places_cropped_patches_by_origin():
    arr = np.arange(36, dtype=float).reshape(6, 6)
    r = Raster(arr, DET_LEVEL)
    plan = plan_tiles(6, 6, 4, 2, pad=1)
    parts = []
    for c in plan.coords:
        p = extract_patch(r, c, 1)
        # keep the central 2x2 only
        parts.append((c, Raster(p.pixels[1:3, 1:3], DET_LEVEL, (p.origin[0] + 1, p.origin[1] + 1))))
    np.testing.assert_array_equal(stitch(parts, plan).pixels, arr)

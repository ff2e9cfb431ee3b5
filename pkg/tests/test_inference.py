import io
import sys
import threading
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiager.config import DetConfig, PipelineConfig, SegConfig
from tiager.detection import detect
from tiager.errors import BackendError, InvalidInputError
from tiager.inference import (
    DETECTION,
    SEGMENTATION,
    Ensemble,
    ExternalBackend,
    LuminanceBackend,
    PassthroughDetection,
    PassthroughSegmentation,
    SegClass,
    ensemble_average,
    run_detection,
    run_segmentation,
    threshold,
)
from tiager.inference.external import read_frame, write_frame
from tiager.inference.worker import serve
from tiager.raster import DET_LEVEL, SEG_LEVEL, ArraySource, Raster, morph, probability_map


def prob(arr):
    return probability_map(arr)


class Counting:
    """Detection stub returning a constant and counting calls."""

    flavor = DETECTION
    resolution = DET_LEVEL
    thread_safe = True

    def __init__(self, value=0.25, patch_size=128):
        self.value = value
        self.patch_size = patch_size
        self.calls = 0
        self._lock = threading.Lock()

    def predict(self, patch):
        with self._lock:
            self.calls += 1
        return patch.with_pixels(np.full(patch.shape, self.value))


class Bumps:
    """Gaussian bump per planted point, in microns."""

    flavor = DETECTION
    resolution = DET_LEVEL
    patch_size = 128
    thread_safe = True

    def __init__(self, points_um, sigma_px=2.0):
        self.points = points_um
        self.sigma = sigma_px

    def predict(self, patch):
        yy, xx = np.mgrid[:patch.height, :patch.width]
        out = np.zeros(patch.shape)
        for x, y in self.points:
            cx = x / patch.mpp - patch.origin[0] - 0.5
            cy = y / patch.mpp - patch.origin[1] - 0.5
            out = np.maximum(out, np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * self.sigma ** 2)))
        return patch.with_pixels(out)


def test_ensemble_average_examples():
    rng = np.random.default_rng(0)
    a = prob(rng.random((5, 5)))
    assert np.array_equal(ensemble_average([a]).pixels, a.pixels)
    two = ensemble_average([prob(np.full((2, 2), 0.2)), prob(np.full((2, 2), 0.6))])
    np.testing.assert_allclose(two.pixels, 0.4, atol=1e-15)
    maps = [rng.random((16, 16)) for _ in range(3)]
    got = ensemble_average([prob(m) for m in maps]).pixels
    expect = np.array([[sum(m[i, j] for m in maps) / 3 for j in range(16)] for i in range(16)])
    assert np.max(np.abs(got - expect)) <= 1e-12
    with pytest.raises(InvalidInputError):
        ensemble_average([prob(np.zeros((2, 2))), prob(np.zeros((3, 2)))])
    with pytest.raises(InvalidInputError):
        ensemble_average([])


@settings(max_examples=50, deadline=None)
@given(k=st.integers(1, 6), seed=st.integers(0, 2**32 - 1), data=st.data())
def test_ensemble_average_order_free_and_duplication_stable(k, seed, data):
    rng = np.random.default_rng(seed)
    maps = [prob(rng.random((8, 8))) for _ in range(k)]
    base = ensemble_average(maps).pixels
    perm = data.draw(st.permutations(maps))
    assert np.array_equal(ensemble_average(perm).pixels, base)
    assert np.array_equal(ensemble_average(maps + maps).pixels, base)


def test_threshold_examples():
    rng = np.random.default_rng(1)
    p = prob(rng.random((10, 10)) * 0.999)
    assert threshold(p, 0.0).pixels.all()
    assert not threshold(p, 1.0).pixels.any()
    np.testing.assert_array_equal(threshold(p, 0.5).pixels, p.pixels >= 0.5)
    with pytest.raises(InvalidInputError):
        threshold(p, 1.1)


def seg_cfg(workers=1, **seg):
    return PipelineConfig(workers=workers, seg=SegConfig(**seg))


def passthrough_seg(tumour, stroma):
    src = {SegClass.TUMOUR: ArraySource(Raster(tumour, SEG_LEVEL)),
           SegClass.STROMA: ArraySource(Raster(stroma, SEG_LEVEL))}
    return Ensemble([PassthroughSegmentation(src)])


def test_segmentation_recovers_disk_minus_speckle():
    h, w = 600, 700
    yy, xx = np.mgrid[:h, :w]
    tumour = (xx - 350) ** 2 + (yy - 300) ** 2 <= 120 ** 2
    tumour[20, 20] = True
    tumour[590:592, 690:692] = True
    stroma = np.zeros((h, w), bool)
    stroma[:, :100] = True
    src = ArraySource(Raster(np.zeros((h, w)), SEG_LEVEL))
    t, s = run_segmentation(src, passthrough_seg(tumour, stroma), seg_cfg())
    expect = morph(Raster(tumour, SEG_LEVEL), "open", 5).pixels
    assert np.array_equal(t.pixels, expect)
    assert not t.pixels[20, 20] and t.pixels[300, 350]
    # the stub gives raw tumour pixels priority over stroma, speckle included
    assert np.array_equal(s.pixels, stroma & ~tumour)


def test_segmentation_all_zero_stub():
    z = np.zeros((300, 300), bool)
    src = ArraySource(Raster(np.zeros((300, 300)), SEG_LEVEL))
    t, s = run_segmentation(src, passthrough_seg(z, z), seg_cfg())
    assert not t.pixels.any() and not s.pixels.any()


def test_segmentation_two_region_fixture_with_luminance_stub():
    h, w = 520, 600
    img = np.full((h, w), 230 / 255)
    img[100:420, 100:500] = 180 / 255
    img[180:340, 200:400] = 70 / 255
    src = ArraySource(Raster(img, SEG_LEVEL))
    ens = Ensemble([LuminanceBackend(SEGMENTATION)] * 2)
    t, s = run_segmentation(src, ens, seg_cfg())
    tumour = np.zeros((h, w), bool)
    tumour[180:340, 200:400] = True
    stroma = np.zeros((h, w), bool)
    stroma[100:420, 100:500] = True
    # opening rounds the corners; those pixels never had stroma probability
    assert np.array_equal(t.pixels, morph(Raster(tumour, SEG_LEVEL), "open", 5).pixels)
    assert np.array_equal(s.pixels, stroma & ~tumour)


def test_segmentation_serial_equals_parallel():
    rng = np.random.default_rng(2)
    img = np.clip(rng.normal(0.6, 0.25, (700, 650)), 0.01, 1)
    src = ArraySource(Raster(img, SEG_LEVEL))
    ens = Ensemble([LuminanceBackend(SEGMENTATION, dark=0.5), LuminanceBackend(SEGMENTATION, dark=0.4)])
    serial = run_segmentation(src, ens, seg_cfg(1))
    for workers in (3, 8):
        par = run_segmentation(src, ens, seg_cfg(workers))
        assert all(np.array_equal(a.pixels, b.pixels) for a, b in zip(serial, par))


def test_detection_bumps_at_planted_points():
    pts = [(30.25, 40.75), (300.0, 123.0), (511.0, 20.0), (250.0, 450.0)]
    src = ArraySource(Raster(np.zeros((1100, 1100)), DET_LEVEL))
    p = run_detection(src, Ensemble([Bumps(pts)]), PipelineConfig(workers=2))
    dets = detect(p, 0.5)
    assert len(dets) == len(pts)
    for (x, y), d in zip(sorted(pts), sorted((d.x, d.y) for d in dets)):
        assert abs(x - d[0]) <= 0.5 * DET_LEVEL.mpp + 1e-9 and abs(y - d[1]) <= 0.5 * DET_LEVEL.mpp + 1e-9


def test_detection_empty_roi_skips_backend():
    stub = Counting()
    src = ArraySource(Raster(np.zeros((300, 500)), DET_LEVEL))
    roi = Raster(np.zeros((300, 500), bool), DET_LEVEL)
    p = run_detection(src, Ensemble([stub]), PipelineConfig(workers=1), roi=roi)
    assert stub.calls == 0 and not p.pixels.any()


def test_detection_roi_limits_calls():
    stub = Counting()
    src = ArraySource(Raster(np.zeros((300, 500)), DET_LEVEL))
    roi = np.zeros((300, 500), bool)
    roi[10, 10] = True
    run_detection(src, Ensemble([stub]), PipelineConfig(workers=1), roi=Raster(roi, DET_LEVEL))
    assert stub.calls == 1


def test_single_patch_slide_is_backend_output():
    rng = np.random.default_rng(4)
    img = rng.random((128, 128))
    src = ArraySource(Raster(img, DET_LEVEL))
    p = run_detection(src, Ensemble([LuminanceBackend(DETECTION)]), PipelineConfig(workers=1))
    direct = LuminanceBackend(DETECTION).predict(Raster(img, DET_LEVEL))
    assert np.array_equal(p.pixels, direct.pixels)


def test_detection_serial_equals_parallel():
    rng = np.random.default_rng(5)
    img = rng.random((1300, 1100))
    src = ArraySource(Raster(img, DET_LEVEL))
    ens = Ensemble([LuminanceBackend(DETECTION), LuminanceBackend(DETECTION, dark=0.3)])
    for mode in ("average", "max"):
        cfg = PipelineConfig(workers=1, det=DetConfig(stitch_mode=mode))
        a = run_detection(src, ens, cfg).pixels
        b = run_detection(src, ens, replace(cfg, workers=6)).pixels
        assert np.array_equal(a, b)


def test_passthrough_detection_disks():
    b = PassthroughDetection([(10.25, 10.25)], radius_px=3)
    out = b.predict(Raster(np.zeros((128, 128)), DET_LEVEL))
    assert out.pixels.sum() == 29 and out.pixels[20, 20] == 1.0


class NotThreadSafe:
    flavor = DETECTION
    resolution = DET_LEVEL
    patch_size = 128
    thread_safe = False
    clones = []

    def __init__(self):
        self.owner = None

    def clone(self):
        c = NotThreadSafe()
        NotThreadSafe.clones.append(c)
        return c

    def predict(self, patch):
        me = threading.get_ident()
        if self.owner is None:
            self.owner = me
        assert self.owner == me, "instance shared across threads"
        return patch.with_pixels(np.zeros(patch.shape))


def test_non_thread_safe_members_are_cloned_per_thread():
    NotThreadSafe.clones = []
    src = ArraySource(Raster(np.zeros((1000, 1000)), DET_LEVEL))
    run_detection(src, Ensemble([NotThreadSafe()]), PipelineConfig(workers=4))
    assert 1 <= len(NotThreadSafe.clones) <= 4


def test_backend_failure_names_tile():
    class Boom(Counting):
        def predict(self, patch):
            raise RuntimeError("model exploded")

    src = ArraySource(Raster(np.zeros((200, 200)), DET_LEVEL))
    with pytest.raises(BackendError, match=r"x=0 y=0.*model exploded"):
        run_detection(src, Ensemble([Boom()]), PipelineConfig(workers=1))


def test_geometry_mismatch_rejected():
    src = ArraySource(Raster(np.zeros((200, 200)), SEG_LEVEL))
    with pytest.raises(InvalidInputError):
        run_detection(src, Ensemble([Counting()]), PipelineConfig(workers=1))
    with pytest.raises(InvalidInputError):
        Ensemble([Counting(), LuminanceBackend(SEGMENTATION)])


def test_frame_round_trip():
    buf = io.BytesIO()
    a = np.arange(6, dtype=np.float64).reshape(2, 3) / 7
    write_frame(buf, a)
    buf.seek(0)
    np.testing.assert_array_equal(read_frame(buf), a.astype(np.float32).ravel())
    assert read_frame(buf) is None
    with pytest.raises(BackendError):
        read_frame(io.BytesIO(b"\x08\x00\x00\x00abc"))


def test_worker_serve_in_process():
    rng = np.random.default_rng(6)
    patch = rng.random((16, 16)).astype(np.float32)
    req = io.BytesIO()
    write_frame(req, patch)
    write_frame(req, patch)
    req.seek(0)
    out = io.BytesIO()
    assert serve(SEGMENTATION, 16, req, out) == 2
    out.seek(0)
    assert read_frame(out).size == 3 * 256


@pytest.mark.parametrize("flavor,size", [(DETECTION, 128), (SEGMENTATION, 512)])
def test_external_backend_matches_in_process(flavor, size):
    rng = np.random.default_rng(7)
    img = rng.random((size, size)).astype(np.float32).astype(np.float64)
    res = DET_LEVEL if flavor == DETECTION else SEG_LEVEL
    patch = Raster(img, res)
    cmd = [sys.executable, "-m", "tiager.inference.worker", "--flavor", flavor, "--patch-size", str(size)]
    with ExternalBackend(cmd, flavor) as ext:
        got = ext.predict(patch)
        again = ext.predict(patch)
    ref = LuminanceBackend(flavor).predict(patch)
    if flavor == DETECTION:
        got, again, ref = {0: got}, {0: again}, {0: ref}
    for k in ref:
        np.testing.assert_allclose(got[k].pixels, ref[k].pixels, atol=1e-6)
        assert np.array_equal(got[k].pixels, again[k].pixels)


def test_external_backend_bad_command():
    ext = ExternalBackend(["/nonexistent/worker"], DETECTION)
    with pytest.raises(BackendError):
        ext.predict(Raster(np.zeros((128, 128)), DET_LEVEL))

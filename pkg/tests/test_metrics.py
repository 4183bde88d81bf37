import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from liftdepth.metrics import MetricReport, aggregate, compute_metrics, error_map


def naive_metrics(pred, gt, mask):
    """Per-pixel loop over valid pixels, accumulating each metric separately."""
    n = 0
    sq = ab = sqr = lg = l10 = 0.0
    z = [0, 0, 0]
    for d, t, m in zip(pred.ravel(), gt.ravel(), mask.ravel()):
        if not m:
            continue
        n += 1
        sq += (d - t) ** 2
        ab += abs(d - t) / t
        sqr += (d - t) ** 2 / t
        lg += (math.log(d) - math.log(t)) ** 2
        l10 += abs(math.log10(d) - math.log10(t))
        r = max(d / t, t / d)
        for i in range(3):
            z[i] += r < 1.25 ** (i + 1)
    return dict(rmse=math.sqrt(sq / n), abs_rel=ab / n, sq_rel=sqr / n, rmse_log=math.sqrt(lg / n),
                log10=l10 / n, zeta1=z[0] / n, zeta2=z[1] / n, zeta3=z[2] / n, count=n)


class TestComputeMetrics:
    def test_perfect_prediction(self):
        gt = np.random.default_rng(0).uniform(1, 10, size=(4, 4))
        r = compute_metrics(gt.copy(), gt)
        assert r.rmse == r.abs_rel == r.sq_rel == r.rmse_log == r.log10 == 0.0
        assert r.zeta1 == r.zeta2 == r.zeta3 == 1.0

    def test_hand_values(self):
        r = compute_metrics(np.array([1.0, 4.0]), np.array([2.0, 4.0]))
        assert r.rmse == pytest.approx(math.sqrt(0.5), abs=1e-15)
        assert r.abs_rel == pytest.approx(0.25, abs=1e-15)
        assert r.sq_rel == pytest.approx(0.25, abs=1e-15)
        assert r.zeta1 == 0.5
        assert r.count == 2

    def test_threshold_is_strict(self):
        gt = np.array([1.0, 2.0, 4.0])  # powers of two keep 1.25 * gt exact
        r = compute_metrics(1.25 * gt, gt)
        assert r.zeta1 == 0.0
        assert r.zeta2 == 1.0

    def test_matches_naive_loop_on_random_maps(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            shape = tuple(int(v) for v in rng.integers(1, 12, size=2))
            gt = rng.uniform(0.5, 80, size=shape)
            pred = gt * np.exp(rng.normal(0, 0.4, size=shape))
            mask = rng.random(shape) < 0.7
            mask.flat[0] = True
            ref = naive_metrics(pred, gt, mask)
            got = compute_metrics(pred, gt, mask)
            for key, val in ref.items():
                assert abs(getattr(got, key) - val) < 1e-9, key

    def test_cap_inactive_when_above_max(self):
        gt = np.random.default_rng(1).uniform(1, 10, size=(6, 6))
        pred = gt * 1.1
        assert compute_metrics(pred, gt, cap=50.0) == compute_metrics(pred, gt)

    def test_cap_excludes_far_pixels(self):
        gt = np.array([10.0, 60.0])
        r = compute_metrics(np.array([11.0, 1.0]), gt, cap=50.0)
        assert r.count == 1
        assert r.rmse == pytest.approx(1.0)

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError):
            compute_metrics(np.ones(3), np.ones(3), np.zeros(3, dtype=bool))

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            compute_metrics(np.array([0.0, 1.0]), np.ones(2))

    @settings(max_examples=300, deadline=None)
    @given(hnp.arrays(np.float64, st.integers(1, 30), elements=st.floats(0.01, 1000)),
           hnp.arrays(np.float64, st.integers(1, 30), elements=st.floats(0.01, 1000)))
    def test_zeta_monotone(self, a, b):
        n = min(a.size, b.size)
        r = compute_metrics(a[:n], b[:n])
        assert 0 <= r.zeta1 <= r.zeta2 <= r.zeta3 <= 1
        assert all(math.isfinite(v) for v in (r.rmse, r.abs_rel, r.sq_rel, r.rmse_log, r.log10))


class TestReportFormats:
    def test_text_lines(self):
        r = compute_metrics(np.array([1.0, 4.0]), np.array([2.0, 4.0]))
        lines = r.to_text().splitlines()
        assert lines[0] == "rmse 0.707106781"
        assert lines[-1] == "count 2"

    def test_csv_row_matches_header(self):
        r = compute_metrics(np.array([1.0]), np.array([1.0]))
        assert len(r.to_csv_row().split(",")) == len(MetricReport.csv_header().split(","))

    def test_aggregate_is_per_image_mean(self):
        a = compute_metrics(np.array([1.0]), np.array([2.0]))
        b = compute_metrics(np.array([3.0, 3.0]), np.array([3.0, 3.0]))
        m = aggregate([a, b])
        assert m.rmse == pytest.approx(0.5)
        assert m.count == 3

    def test_aggregate_empty(self):
        with pytest.raises(ValueError):
            aggregate([])


class TestErrorMap:
    def test_zero_error_black(self):
        gt = np.full((3, 3), 4.0)
        np.testing.assert_array_equal(error_map(gt, gt), 0.0)

    def test_single_differing_pixel_white(self):
        gt = np.full((3, 3), 4.0)
        pred = gt.copy()
        pred[1, 2] = 6.0
        m = error_map(pred, gt)
        assert m[1, 2] == 1.0
        assert np.count_nonzero(m) == 1

    def test_two_level_field_bytes(self, tmp_path):
        from liftdepth.scenes import write_ppm
        gt = np.full((1, 2), 5.0)
        m = error_map(gt + np.array([[1.0, 3.0]]), gt)
        write_ppm(tmp_path / "e.ppm", m)
        payload = (tmp_path / "e.ppm").read_bytes()[-6:]
        assert payload == bytes([0, 0, 0, 255, 255, 255])

    def test_constant_nonzero_error_mid_gray(self):
        gt = np.full((2, 2), 3.0)
        np.testing.assert_array_equal(error_map(gt + 1.0, gt), 0.5)

    def test_invalid_pixels_black(self):
        gt = np.full((2, 2), 3.0)
        pred = gt + np.array([[1.0, 2.0], [3.0, 9.0]])
        mask = np.array([[True, True], [True, False]])
        assert error_map(pred, gt, mask)[1, 1] == 0.0

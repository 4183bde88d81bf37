import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import oracles
from liftdepth import numcore as nc
from liftdepth.binhead import (PQI, BinWidthPredictor, LossParams, bin_centres, depth_from_probs,
                               pqi_global_feature, predict_bin_widths, silog_loss)
from liftdepth.errors import ConfigError
from liftdepth.numcore import ParamStore, Tensor

SILOG_SINGLE = 10 * math.log(2) * math.sqrt(0.15)


def jitter(store, rng, scale=0.3):
    for _, p in store.items():
        p.data = p.data + scale * rng.standard_normal(p.shape)


class TestPQI:
    def test_constant_input_constant_output(self):
        store = ParamStore()
        mod = PQI(store, "pqi", 4, 3, rng=np.random.default_rng(0))
        jitter(store, np.random.default_rng(1))
        out = pqi_global_feature(np.full((1, 4, 7, 7), 0.8), mod).data
        for ch in range(3):
            np.testing.assert_allclose(out[0, ch], out[0, ch, 0, 0], atol=1e-13)

    def test_shape_contract(self):
        mod = PQI(ParamStore(), "pqi", 5, 3, rng=np.random.default_rng(0))
        assert pqi_global_feature(np.zeros((2, 5, 4, 6)), mod).shape == (2, 3, 4, 6)

    def test_small_input_clamps_grids(self):
        mod = PQI(ParamStore(), "pqi", 4, 2, rng=np.random.default_rng(0))
        out = pqi_global_feature(np.random.default_rng(2).normal(size=(1, 4, 2, 2)), mod)
        assert out.shape == (1, 2, 2, 2)
        assert np.all(np.isfinite(out.data))

    def test_matches_straight_line_oracle(self):
        for seed in range(20):
            rng = np.random.default_rng(300 + seed)
            c_in, c_out = int(rng.integers(1, 9)), int(rng.integers(1, 5))
            h, w = (8, 8) if seed < 10 else tuple(int(v) for v in rng.integers(1, 9, size=2))
            store = ParamStore()
            mod = PQI(store, "pqi", c_in, c_out, rng=rng)
            jitter(store, rng)
            x = rng.normal(size=(1, c_in, h, w))
            np.testing.assert_allclose(pqi_global_feature(x, mod).data[0], oracles.pqi(x[0], mod),
                                       atol=1e-10, rtol=0)


class TestBinWidths:
    def test_zero_head_is_uniform(self):
        mod = BinWidthPredictor(ParamStore(), "bcp", 4, 8, rng=np.random.default_rng(0))
        mod.mlp.zero_last()
        b = predict_bin_widths(np.random.default_rng(1).normal(size=(2, 4, 3, 3)), mod).data
        np.testing.assert_allclose(b, 1 / 8, atol=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31))
    def test_valid_distribution(self, seed):
        rng = np.random.default_rng(seed)
        store = ParamStore()
        mod = BinWidthPredictor(store, "bcp", 3, 5, rng=rng)
        jitter(store, rng, 2.0)
        b = predict_bin_widths(10 * rng.normal(size=(2, 3, 2, 2)), mod).data
        assert np.all(b >= 0)
        np.testing.assert_allclose(b.sum(axis=-1), 1.0, atol=1e-12)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(42)
        store = ParamStore()
        mod = BinWidthPredictor(store, "bcp", 6, 4, rng=rng)
        jitter(store, rng)
        x = rng.normal(size=(1, 6, 2, 2))
        np.testing.assert_allclose(predict_bin_widths(x, mod).data[0], oracles.bin_widths(x[0], mod),
                                   atol=1e-14)


class TestBinCentres:
    def test_single_bin_midpoint(self):
        np.testing.assert_allclose(bin_centres([1.0], 0, 10).data, [5.0])

    def test_uniform_four(self):
        np.testing.assert_allclose(bin_centres([0.25] * 4, 0, 80).data, [10, 30, 50, 70], atol=1e-12)

    def test_two_halves(self):
        np.testing.assert_allclose(bin_centres([0.5, 0.5], 2, 4).data, [2.5, 3.5], atol=1e-15)

    def test_negative_width_rejected(self):
        with pytest.raises(ValueError):
            bin_centres([1.2, -0.2], 0, 1)

    def test_unnormalized_rejected(self):
        with pytest.raises(ValueError):
            bin_centres([0.3, 0.3], 0, 1)

    def test_batched_rows(self):
        b = np.array([[0.25] * 4, [0.1, 0.2, 0.3, 0.4]])
        got = bin_centres(b, 1.0, 3.0).data
        for row, ref in zip(got, b):
            np.testing.assert_allclose(row, oracles.centres(ref, 1.0, 3.0), atol=1e-14)

    def test_random_widths_monotone_inside_range(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            k = int(rng.integers(1, 65))
            b = rng.dirichlet(np.ones(k))
            b = b / b.sum()
            d_min, d_max = sorted(rng.uniform(0.1, 100, size=2))
            c = bin_centres(b, d_min, d_max).data
            assert np.all(np.diff(c) > 0)
            assert np.all((c > d_min) & (c < d_max))

    def test_telescoping_identities(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            k = int(rng.integers(2, 32))
            b = rng.dirichlet(np.ones(k))
            b = b / b.sum()
            c = bin_centres(b, 0.5, 11.0).data
            np.testing.assert_allclose(np.diff(c), (b[:-1] + b[1:]) * 10.5 / 2, atol=1e-10)
            assert abs(c[-1] - (11.0 - 10.5 * b[-1] / 2)) < 1e-10


class TestDepthFromProbs:
    def test_one_hot(self):
        centres = np.array([1.0, 2.0, 4.0])
        for k in range(3):
            p = np.eye(3)[k]
            assert depth_from_probs(p, centres).data.item() == centres[k]

    def test_uniform_pair(self):
        assert depth_from_probs([0.5, 0.5], [10.0, 30.0]).data.item() == 20.0

    def test_hand_value(self):
        assert depth_from_probs([0.2, 0.3, 0.5], [1.0, 2.0, 4.0]).data.item() == pytest.approx(2.8, abs=1e-15)

    def test_unnormalized_rejected(self):
        with pytest.raises(ValueError):
            depth_from_probs([0.2, 0.3, 0.6], [1.0, 2.0, 4.0])

    def test_spatial_layout(self):
        rng = np.random.default_rng(3)
        p = rng.dirichlet(np.ones(4), size=(2, 3, 5))  # (N, H, W, K)
        p = np.moveaxis(p, -1, 1)
        centres = np.sort(rng.uniform(1, 9, size=(2, 4)), axis=1)
        d = depth_from_probs(p, centres).data
        assert d.shape == (2, 3, 5)
        np.testing.assert_allclose(d[1, 2, 4], p[1, :, 2, 4] @ centres[1], rtol=1e-14)

    @settings(max_examples=200, deadline=None)
    @given(hnp.arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 6)),
                      elements=st.floats(-30, 30)),
           st.integers(0, 2**31))
    def test_bounded_by_centre_extremes(self, logits, seed):
        p = nc.softmax(Tensor(logits), axis=0).data  # bins on axis 0, pixels on axis 1
        centres = np.sort(np.random.default_rng(seed).uniform(0.5, 11, size=logits.shape[0]))
        d = depth_from_probs(p, centres).data
        assert np.all(d >= centres.min() - 1e-12)
        assert np.all(d <= centres.max() + 1e-12)


class TestSilog:
    def test_identical_maps(self):
        gt = np.random.default_rng(0).uniform(1, 10, size=(2, 4, 4))
        assert silog_loss(gt.copy(), gt).item() == 0.0

    def test_single_pixel_double(self):
        assert silog_loss(np.array([4.0]), np.array([2.0])).item() == pytest.approx(SILOG_SINGLE, abs=1e-12)
        assert SILOG_SINGLE == pytest.approx(2.684547, abs=1e-6)

    def test_scale_invariance_only_at_lambda_one(self):
        rng = np.random.default_rng(1)
        gt = rng.uniform(1, 10, size=(3, 5))
        pred = gt * rng.uniform(0.8, 1.2, size=gt.shape)
        one = LossParams(lam=1.0)
        base = silog_loss(pred, gt, lp=one).item()
        for c in (0.5, 2.0, 7.3):
            assert abs(silog_loss(c * pred, gt, lp=one).item() - base) < 1e-9
            assert silog_loss(c * gt, gt, lp=one).item() < 1e-6
        default = silog_loss(pred, gt).item()
        assert abs(silog_loss(2.0 * pred, gt).item() - default) > 1e-3

    def test_mask_selects_pixels(self):
        gt = np.array([[2.0, 3.0], [4.0, 5.0]])
        pred = gt.copy()
        pred[1, 1] = 100.0
        mask = np.array([[True, True], [True, False]])
        assert silog_loss(pred, gt, mask).item() == 0.0

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError):
            silog_loss(np.ones(3), np.ones(3), np.zeros(3, dtype=bool))

    def test_nonpositive_depth_rejected(self):
        with pytest.raises(ValueError):
            silog_loss(np.array([1.0, -1.0]), np.ones(2))
        with pytest.raises(ValueError):
            silog_loss(np.ones(2), np.array([1.0, 0.0]))

    def test_invalid_params(self):
        with pytest.raises(ConfigError):
            LossParams(alpha=0.0)
        with pytest.raises(ConfigError):
            LossParams(lam=1.5)

    def test_gradient_wrt_prediction(self):
        rng = np.random.default_rng(5)
        for seed in range(20):
            store = ParamStore()
            pred = store.add("pred", rng.uniform(1, 10, size=(2, 3, 3)))
            gt = rng.uniform(1, 10, size=(2, 3, 3))
            mask = rng.random(gt.shape) < 0.8
            mask[0, 0, 0] = True
            report = nc.finite_diff_check(lambda: silog_loss(pred, gt, mask), store, tol=1e-4)
            assert report.passed, (seed, report.max_rel_error)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from liftdepth import numcore as nc
from liftdepth.er import ERCoefficients, ERLift, ERSubspace, alpha_from_logits, er_coefficients, er_transform
from liftdepth.errors import ConfigError
from liftdepth.numcore import ParamStore, ShapeError, Tensor, ops


def coeffs(alpha1):
    a = Tensor(alpha1)
    return ERCoefficients(a, 1.0 - a)


def make_lift(rng, channels, jitter=0.3):
    store = ParamStore()
    lift = ERLift(store, "er", channels, rng=rng)
    for _, p in store.items():
        p.data = p.data + jitter * rng.standard_normal(p.shape)
    return store, lift


class TestCoefficients:
    def test_constant_logits_split_evenly(self):
        c = alpha_from_logits(np.full((1, 6, 2, 3), 1.7))
        np.testing.assert_allclose(c.alpha1.data, 0.5, atol=1e-15)
        np.testing.assert_allclose(c.alpha2.data, 0.5, atol=1e-15)

    def test_dominant_first_channel_saturates(self):
        logits = np.zeros((1, 4, 1, 1))
        logits[0, 0] = 800.0
        c = alpha_from_logits(logits)
        assert c.alpha1.data.item() == pytest.approx(1.0, abs=1e-15)
        assert c.alpha2.data.item() == pytest.approx(0.0, abs=1e-15)

    def test_rounding_never_exceeds_one(self):
        # near-saturated softmax whose first-half probabilities round to a sum above one
        rng = np.random.default_rng(6)
        logits = rng.normal(0, 40, size=(64, 6, 4, 4))
        a1 = alpha_from_logits(logits).alpha1.data
        assert a1.max() <= 1.0 and a1.min() >= 0.0

    def test_brute_force_softmax(self):
        logits = np.array([math.log(2.0), 0, 0, 0]).reshape(1, 4, 1, 1)
        # probabilities [2/5, 1/5, 1/5, 1/5]
        assert alpha_from_logits(logits).alpha1.data.item() == pytest.approx(3 / 5, abs=1e-15)

    def test_odd_channel_count(self):
        with pytest.raises(ConfigError):
            alpha_from_logits(np.zeros((1, 3, 2, 2)))
        with pytest.raises(ConfigError):
            ERLift(ParamStore(), "er", 5, rng=np.random.default_rng(0))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 10_000), st.floats(-30, 30))
    def test_bounded_complementary_and_shift_invariant(self, seed, shift):
        rng = np.random.default_rng(seed)
        logits = 5 * rng.normal(size=(2, 6, 3, 3))
        c = alpha_from_logits(logits)
        a1, a2 = c.alpha1.data, c.alpha2.data
        assert np.all((a1 >= 0) & (a1 <= 1))
        np.testing.assert_array_equal(a1 + a2, 1.0)
        per_pixel = rng.normal(size=(2, 1, 3, 3)) + shift
        np.testing.assert_allclose(alpha_from_logits(logits + per_pixel).alpha1.data, a1, atol=1e-9)


class TestTransform:
    def test_identical_endpoints(self):
        v = np.array([0.3, -1.0, 2.0])
        ers = ERSubspace(Tensor(v), Tensor(v))
        rng = np.random.default_rng(0)
        out = er_transform(np.zeros((1, 3, 2, 2)), ers, coeffs(rng.uniform(size=(1, 1, 2, 2)))).data
        np.testing.assert_allclose(out, np.broadcast_to(v[None, :, None, None], out.shape), atol=1e-15)

    def test_vertex(self):
        e1, e2 = np.array([1.0, 2.0]), np.array([-3.0, 5.0])
        out = er_transform(np.zeros((1, 2, 2, 1)), ERSubspace(Tensor(e1), Tensor(e2)), coeffs(np.ones((1, 1, 2, 1)))).data
        np.testing.assert_array_equal(out[0, :, 1, 0], e1)

    def test_hand_value(self):
        ers = ERSubspace(Tensor([4.0, 0.0]), Tensor([0.0, 4.0]))
        out = er_transform(np.zeros((1, 2, 1, 1)), ers, coeffs(np.full((1, 1, 1, 1), 0.25))).data
        np.testing.assert_allclose(out.ravel(), [1.0, 3.0])

    def test_additive_fusion(self):
        rng = np.random.default_rng(3)
        f = rng.normal(size=(1, 2, 2, 2))
        ers = ERSubspace(Tensor([0.0, 0.0]), Tensor([0.0, 0.0]))
        np.testing.assert_array_equal(er_transform(f, ers, coeffs(np.full((1, 1, 2, 2), 0.3))).data, f)

    def test_dimension_mismatch(self):
        ers = ERSubspace(Tensor(np.ones(3)), Tensor(np.ones(3)))
        with pytest.raises(ShapeError):
            er_transform(np.zeros((1, 4, 2, 2)), ers, coeffs(np.ones((1, 1, 2, 2))))

    def test_feature_on_segment(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            store, lift = make_lift(rng, 4)
            f = rng.normal(size=(2, 4, 3, 3))
            fused, c = lift(Tensor(f))
            fe = fused.data - f
            e1, e2 = lift.subspace.e1.data, lift.subspace.e2.data
            expect = e2[None, :, None, None] + c.alpha1.data * (e1 - e2)[None, :, None, None]
            np.testing.assert_allclose(fe, expect, atol=1e-12, rtol=0)


class TestERLift:
    def test_independent_instance_per_level(self):
        store = ParamStore()
        rng = np.random.default_rng(0)
        a = ERLift(store, "er1", 4, rng=rng)
        b = ERLift(store, "er2", 4, rng=rng)
        assert a.subspace.e1 is not b.subspace.e1
        assert not np.array_equal(a.subspace.e1.data, b.subspace.e1.data)

    def test_matches_straight_line_oracle(self):
        for seed in range(20):
            rng = np.random.default_rng(200 + seed)
            ch = 2 * int(rng.integers(1, 3))
            h, w = (int(v) for v in rng.integers(1, 4, size=2))
            _, lift = make_lift(rng, ch)
            f = rng.normal(size=(1, ch, h, w))
            fused, c = lift(Tensor(f))
            ref_fused, ref_alpha = oracles.er_lift(f[0], lift)
            np.testing.assert_allclose(fused.data[0], ref_fused, atol=1e-10, rtol=0)
            np.testing.assert_allclose(c.alpha1.data[0, 0], ref_alpha, atol=1e-10, rtol=0)
            np.testing.assert_allclose(er_coefficients(f, lift).alpha1.data, c.alpha1.data, atol=0)

    def test_gradients(self):
        rng = np.random.default_rng(21)
        store, lift = make_lift(rng, 4)
        f = Tensor(rng.normal(size=(1, 4, 3, 3)))
        w = rng.normal(size=(1, 4, 3, 3))
        report = nc.finite_diff_check(lambda: ops.sum(lift(f)[0] * w), store, tol=1e-4)
        assert report.passed, report.worst(3)
        assert {"er.e_edge", "er.e_nonedge", "er.ecn0.weight"} <= {e.name for e in report.entries}

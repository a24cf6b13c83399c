"""Path-integral attributions: IG, EG, WG, completeness and serialisation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import linear_model, smooth_model
from wig.attribution import (AttributionMap, BaselineSet, PathQuadrature, combine_maps,
                             completeness_gap, expected_gradients, generalized_completeness_gap,
                             integrated_gradients, load_attribution, normalized_positive_profile,
                             per_baseline_ig, save_attribution, sidecar_path, uniform_average,
                             weighted_integrated_gradients)
from wig.errors import DegenerateError, ShapeError, WigError
from wig.model import Activation, Dense, Flatten, Model


def random_weights(rng, n):
    w = rng.random(n) + 0.05
    w = w / w.sum()
    w[-1] = 1.0 - w[:-1].sum()
    return w


def ig_oracle(model, x, baseline, steps=2000):
    """Midpoint rule on a fine grid, summed over channels: independent of the quadrature code."""
    alphas = (np.arange(steps) + 0.5) / steps
    grads = [model.score_and_grad_batch((baseline + a * (x - baseline))[None])[1][0] for a in alphas]
    vals = (x - baseline) * np.mean(grads, axis=0)
    return vals.sum(axis=0) if vals.ndim == 3 else vals


class TestQuadrature:
    def test_trapezoid_nodes(self):
        a, w = PathQuadrature(4).nodes()
        np.testing.assert_array_equal(a, [0, .25, .5, .75, 1])
        np.testing.assert_array_equal(w, [.125, .25, .25, .25, .125])

    def test_left_riemann_nodes(self):
        a, w = PathQuadrature(4, "left-riemann").nodes()
        np.testing.assert_array_equal(a, [0, .25, .5, .75])
        assert w.sum() == 1.0

    @pytest.mark.parametrize("steps,rule", [(0, "trapezoid"), (2.5, "trapezoid"), (4, "simpson")])
    def test_invalid(self, steps, rule):
        with pytest.raises(ValueError):
            PathQuadrature(steps, rule)


class TestIntegratedGradients:
    @pytest.mark.parametrize("steps", [1, 3, 64])
    @pytest.mark.parametrize("rule", ["trapezoid", "left-riemann"])
    def test_linear_exact(self, rng, steps, rule):
        w = rng.normal(size=(2, 3, 4))
        x, b = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 3, 4))
        attr = integrated_gradients(linear_model(w), x, b, PathQuadrature(steps, rule))
        np.testing.assert_allclose(attr.values, (w * (x - b)).sum(axis=0), atol=1e-12, rtol=0)

    def test_baseline_equal_input_gives_zero(self, rng):
        m = smooth_model(rng)
        x = rng.normal(size=m.input_shape)
        attr = integrated_gradients(m, x, x.copy())
        assert np.all(attr.values == 0.0)
        assert completeness_gap(m, x, x, attr) == 0.0

    def test_per_pixel_channel_sum(self, rng):
        m = smooth_model(rng, kind="conv")
        x, b = rng.normal(size=m.input_shape), rng.normal(size=m.input_shape)
        attr = integrated_gradients(m, x, b)
        assert attr.values.shape == m.input_shape[1:]

    def test_metadata(self, rng):
        m = smooth_model(rng)
        x = rng.normal(size=m.input_shape)
        attr = integrated_gradients(m, x, np.zeros_like(x), PathQuadrature(16, "left-riemann"), "zero")
        assert attr.method == "IG"
        assert attr.metadata == {"steps": 16, "rule": "left-riemann", "baseline_ids": ["zero"]}

    def test_shape_mismatch(self, rng):
        m = smooth_model(rng, kind="mlp")
        x = rng.normal(size=m.input_shape)
        with pytest.raises(ShapeError):
            integrated_gradients(m, x, np.zeros(x.size))

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_fine_grid_oracle(self, seed):
        rng = np.random.default_rng(seed)
        m = smooth_model(rng)
        x, b = rng.normal(size=m.input_shape), rng.normal(size=m.input_shape)
        attr = integrated_gradients(m, x, b, PathQuadrature(512))
        np.testing.assert_allclose(attr.values, ig_oracle(m, x, b), atol=2e-6, rtol=0)

    @pytest.mark.parametrize("seed", range(10))
    def test_completeness_smooth(self, seed):
        rng = np.random.default_rng(100 + seed)
        m = smooth_model(rng)
        x, b = rng.normal(size=m.input_shape), rng.normal(size=m.input_shape)
        attr = integrated_gradients(m, x, b, PathQuadrature(512))
        assert completeness_gap(m, x, b, attr) <= 1e-4

    def test_completeness_converges_with_steps(self):
        violations = 0
        for seed in range(60):
            rng = np.random.default_rng(500 + seed)
            m = smooth_model(rng)
            x, b = rng.normal(size=m.input_shape), rng.normal(size=m.input_shape)
            gaps = [completeness_gap(m, x, b, integrated_gradients(m, x, b, PathQuadrature(s)))
                    for s in (8, 16)]
            violations += gaps[1] > gaps[0] + 1e-9
        assert violations <= 3

    def test_implementation_invariance(self, rng):
        """Permuting a hidden layer's units (and the next layer's columns) is the same function."""
        d, h = 12, 7
        w1, b1, w2, b2 = rng.normal(size=(h, d)), rng.normal(size=h), rng.normal(size=(3, h)), rng.normal(size=3)
        perm = rng.permutation(h)
        a = Model((d,), [Flatten(), Dense(w1, b1), Activation("softplus"), Dense(w2, b2)], class_index=1)
        b = Model((d,), [Flatten(), Dense(w1[perm], b1[perm]), Activation("softplus"),
                         Dense(w2[:, perm], b2)], class_index=1)
        x, base = rng.normal(size=d), rng.normal(size=d)
        np.testing.assert_allclose(integrated_gradients(a, x, base).values,
                                   integrated_gradients(b, x, base).values, atol=1e-9, rtol=0)


class TestExpectedAndWeighted:
    def test_single_baseline_eg_is_ig(self, rng):
        m = smooth_model(rng)
        x, b = rng.normal(size=m.input_shape), rng.normal(size=m.input_shape)
        eg = expected_gradients(m, x, BaselineSet([b]))
        assert np.array_equal(eg.values, integrated_gradients(m, x, b).values)
        assert eg.method == "EG"

    def test_two_maps_average(self):
        a = AttributionMap(np.array([1.0, 2.0]), "IG")
        b = AttributionMap(np.array([3.0, -2.0]), "IG")
        np.testing.assert_array_equal(uniform_average([a, b]).values, [2.0, 0.0])

    def test_eg_linear_closed_form(self, rng):
        w = rng.normal(size=(3, 5))
        x = rng.normal(size=(3, 5))
        bases = [rng.normal(size=(3, 5)) for _ in range(5)]
        eg = expected_gradients(linear_model(w), x, BaselineSet(bases))
        expected = w * (x - np.mean(bases, axis=0))
        np.testing.assert_allclose(eg.values, expected, atol=1e-12, rtol=0)

    def test_wg_linear_closed_form(self, rng):
        w = rng.normal(size=(3, 5))
        x = rng.normal(size=(3, 5))
        bases = [rng.normal(size=(3, 5)) for _ in range(4)]
        wt = random_weights(rng, 4)
        wg = weighted_integrated_gradients(linear_model(w), x, BaselineSet(bases, wt))
        expected = w * (x - np.tensordot(wt, bases, axes=1))
        np.testing.assert_allclose(wg.values, expected, atol=1e-12, rtol=0)

    def test_one_hot_weights_give_first_ig(self, rng):
        m = smooth_model(rng)
        x = rng.normal(size=m.input_shape)
        bases = [rng.normal(size=m.input_shape) for _ in range(3)]
        wg = weighted_integrated_gradients(m, x, BaselineSet(bases, [1.0, 0.0, 0.0]))
        np.testing.assert_array_equal(wg.values, integrated_gradients(m, x, bases[0]).values)

    def test_explicit_combination(self, rng):
        maps = [AttributionMap(rng.normal(size=(4, 4)), "IG") for _ in range(3)]
        out = combine_maps(maps, [0.5, 0.25, 0.25], "WG")
        expected = 0.5 * maps[0].values + 0.25 * maps[1].values + 0.25 * maps[2].values
        np.testing.assert_allclose(out.values, expected, atol=1e-15, rtol=0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 6))
    def test_uniform_wg_equals_eg(self, seed, n):
        rng = np.random.default_rng(seed)
        m = smooth_model(rng)
        x = rng.normal(size=m.input_shape)
        bs = BaselineSet([rng.normal(size=m.input_shape) for _ in range(n)])
        quad = PathQuadrature(8)
        eg = expected_gradients(m, x, bs, quad)
        wg = weighted_integrated_gradients(m, x, bs.with_weights(np.full(n, 1.0 / n)), quad)
        np.testing.assert_allclose(wg.values, eg.values, atol=1e-12, rtol=0)

    def test_wg_requires_valid_weights(self, rng):
        m = smooth_model(rng)
        x = rng.normal(size=m.input_shape)
        bs = BaselineSet([x, x])
        with pytest.raises(WigError):
            weighted_integrated_gradients(m, x, bs)
        with pytest.raises(WigError):
            bs.with_weights([0.7, 0.7])
        with pytest.raises(WigError):
            bs.with_weights([1.5, -0.5])

    def test_empty_baselines(self):
        with pytest.raises(WigError):
            BaselineSet([])
        with pytest.raises(WigError):
            uniform_average([])


class TestGeneralizedCompleteness:
    def test_single_baseline_matches_completeness(self, rng):
        m = smooth_model(rng)
        x, b = rng.normal(size=m.input_shape), rng.normal(size=m.input_shape)
        bs = BaselineSet([b], [1.0])
        attr = weighted_integrated_gradients(m, x, bs)
        assert generalized_completeness_gap(m, x, bs, attr) == pytest.approx(
            completeness_gap(m, x, b, integrated_gradients(m, x, b)), abs=1e-15)

    def test_linear_any_weights(self, rng):
        w = rng.normal(size=6)
        m = linear_model(w, 0.3)
        x = rng.normal(size=6)
        bs = BaselineSet([rng.normal(size=6) for _ in range(4)], random_weights(rng, 4))
        attr = weighted_integrated_gradients(m, x, bs, PathQuadrature(1))
        assert generalized_completeness_gap(m, x, bs, attr) <= 1e-12

    def test_smooth_five_baselines(self, rng):
        for _ in range(5):
            m = smooth_model(rng)
            x = rng.normal(size=m.input_shape)
            bs = BaselineSet([rng.normal(size=m.input_shape) for _ in range(5)], random_weights(rng, 5))
            attr = weighted_integrated_gradients(m, x, bs, PathQuadrature(512))
            assert generalized_completeness_gap(m, x, bs, attr) <= 5e-4

    def test_needs_weights(self, rng):
        m = smooth_model(rng)
        x = rng.normal(size=m.input_shape)
        with pytest.raises(WigError):
            generalized_completeness_gap(m, x, BaselineSet([x]), AttributionMap(np.zeros(1), "WG"))


class TestProfile:
    def test_example(self):
        np.testing.assert_array_equal(normalized_positive_profile(np.array([2.0, -1.0, 2.0])), [.5, 0, .5])

    def test_one_hot(self):
        np.testing.assert_array_equal(normalized_positive_profile(np.array([-1.0, 3.0, 0.0])), [0, 1, 0])

    def test_degenerate(self):
        with pytest.raises(DegenerateError, match="degenerate profile"):
            normalized_positive_profile(np.array([-1.0, 0.0]))

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=40).filter(lambda v: max(v) > 1e-3))
    def test_probability_vector(self, values):
        p = normalized_positive_profile(np.array(values))
        assert np.all(p >= 0)
        assert abs(p.sum() - 1.0) <= 1e-12
        pos = np.maximum(values, 0.0)
        np.testing.assert_allclose(p, pos / sum(pos), rtol=1e-12, atol=1e-15)


class TestSerialisation:
    def test_round_trip(self, tmp_path, rng):
        m = smooth_model(rng)
        x = rng.normal(size=m.input_shape)
        bs = BaselineSet([rng.normal(size=m.input_shape) for _ in range(3)], [0.5, 0.25, 0.25])
        attr = weighted_integrated_gradients(m, x, bs)
        save_attribution(tmp_path / "a.ntf", attr)
        assert sidecar_path(tmp_path / "a.ntf").name == "a.json"
        back = load_attribution(tmp_path / "a.ntf")
        assert np.array_equal(back.values, attr.values)
        assert back.method == "WG"
        assert back.metadata["weights"] == [0.5, 0.25, 0.25]
        assert back.metadata["baseline_ids"] == ["b0", "b1", "b2"]
        assert back.metadata["steps"] == 64 and back.metadata["rule"] == "trapezoid"

    def test_per_baseline_ids(self, rng):
        m = smooth_model(rng)
        x = rng.normal(size=m.input_shape)
        bs = BaselineSet([x, x], ids=["p", "q"])
        assert [a.metadata["baseline_ids"] for a in per_baseline_ig(m, x, bs)] == [["p"], ["q"]]

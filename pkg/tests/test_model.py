"""Scoring models: forward values, analytic gradients, training and checkpoints."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import deep_conv_model, linear_model, smooth_model
from wig.errors import FormatError, ShapeError, TrainingDivergedError
from wig.model import (Dense, Model, attach_regression, build_architecture,
                       finite_diff_gradient, forward, gradient, load_model, model_from_dict,
                       model_to_dict, save_model, train_model)


def assert_grad_close(model, x, rtol=1e-4, floor=1e-8):
    g = gradient(model, x)
    fd = finite_diff_gradient(model, x, 1e-5)
    assert g.shape == x.shape
    err = np.abs(g - fd) / np.maximum(np.abs(fd), floor)
    # entries with both values at the noise floor count as agreeing
    ok = (err <= rtol) | (np.abs(g - fd) <= floor)
    assert ok.all(), f"max rel err {err[~ok].max():.3g}"


class QuadraticHead:
    """f(x) = x_0^2: duck-typed model used only by the finite-difference test."""
    input_shape = (2,)

    def score_batch(self, xs):
        return xs[:, 0] ** 2


class TestForward:
    def test_linear_logit(self):
        assert forward(linear_model([1.0, 2.0]), np.array([1.0, 1.0])) == 3.0

    def test_sigmoid_at_zero_logit(self):
        m = linear_model([1.0, -1.0], output_mode="sigmoid")
        assert forward(m, np.array([2.0, 2.0])) == 0.5

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            forward(linear_model([1.0, 2.0]), np.zeros(3))

    def test_layer_shapes_must_compose(self):
        with pytest.raises(ShapeError, match="layers\\[1\\]"):
            Model((4,), [Dense(np.zeros((3, 4)), np.zeros(3)), Dense(np.zeros((2, 5)), np.zeros(2))])

    def test_class_index_range(self):
        with pytest.raises(ShapeError):
            Model((2,), [Dense(np.zeros((2, 2)), np.zeros(2))], class_index=2)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from(["sigmoid", "softmax-prob"]))
    def test_probability_modes_in_unit_interval(self, seed, mode):
        rng = np.random.default_rng(seed)
        m = smooth_model(rng, output_mode=mode)
        xs = rng.normal(0, 5, (8,) + m.input_shape)
        s = m.score_batch(xs)
        assert np.all((s > 0) & (s < 1))

    def test_deterministic(self, rng):
        m = smooth_model(rng)
        x = rng.normal(size=m.input_shape)
        assert forward(m, x) == forward(m, x)


class TestGradient:
    def test_linear_gradient_is_weight(self, rng):
        w = rng.normal(size=(2, 3))
        m = linear_model(w)
        x = rng.normal(size=(2, 3))
        np.testing.assert_array_equal(gradient(m, x), w)
        np.testing.assert_allclose(finite_diff_gradient(m, x, 1e-5), w, atol=1e-8, rtol=0)

    def test_constant_model_has_zero_gradient(self, rng):
        layers = build_architecture("mlp", (6,), 2, rng)
        layers[-1] = Dense(np.zeros((2, 16)), np.array([0.3, -0.2]))
        m = Model((6,), layers, output_mode="softmax-prob")
        assert np.all(gradient(m, rng.normal(size=6)) == 0.0)

    def test_quadratic_central_difference(self):
        fd = finite_diff_gradient(QuadraticHead(), np.array([3.0, 1.0]), 1e-4)
        assert abs(fd[0] - 6.0) <= 1e-6

    def test_step_must_be_positive(self, rng):
        with pytest.raises(ValueError):
            finite_diff_gradient(linear_model([1.0]), np.ones(1), 0.0)

    @pytest.mark.parametrize("seed", range(50))
    def test_softplus_mlp_matches_finite_differences(self, seed):
        rng = np.random.default_rng(1000 + seed)
        m = smooth_model(rng, kind="mlp")
        assert_grad_close(m, rng.normal(size=m.input_shape))

    @pytest.mark.parametrize("seed", range(10))
    def test_every_layer_kind(self, seed):
        rng = np.random.default_rng(seed)
        m = deep_conv_model(rng)
        assert_grad_close(m, rng.normal(size=m.input_shape))

    def test_relu_away_from_kinks(self):
        checked = 0
        for seed in range(200):
            rng = np.random.default_rng(seed)
            layers = build_architecture("mlp", (5,), 2, rng, activation="relu", hidden=6)
            m = Model((5,), layers, class_index=1)
            x = rng.normal(size=5)
            pre = layers[1].forward(x[None])[0]
            if np.min(np.abs(pre)) < 1e-3:
                continue
            assert_grad_close(m, x)
            checked += 1
        assert checked >= 100


def blobs(rng, n=200):
    y = rng.integers(0, 2, n)
    x = rng.normal(0, 0.5, (n, 2)) + np.where(y[:, None] == 1, 2.0, -2.0)
    return x, y


class TestTraining:
    def test_separable_blobs(self):
        rng = np.random.default_rng(0)
        x, y = blobs(rng)
        layers = build_architecture("linear", (2,), 1, rng)
        model, acc = train_model(layers, x, y, 20, 0.5, rng, output_mode="sigmoid")
        assert acc >= 0.95
        assert model.output_mode == "sigmoid"

    def test_zero_epochs_returns_initial_parameters(self):
        rng = np.random.default_rng(1)
        x, y = blobs(rng, 20)
        layers = build_architecture("mlp", (2,), 2, rng)
        model, _ = train_model(layers, x, y, 0, 0.1, rng)
        for a, b in zip(layers, model.layers):
            for name, value in a.params().items():
                assert np.array_equal(value, b.params()[name])

    def test_does_not_mutate_input_layers(self):
        rng = np.random.default_rng(2)
        x, y = blobs(rng, 40)
        layers = build_architecture("mlp", (2,), 2, rng)
        before = layers[1].weight.copy()
        train_model(layers, x, y, 3, 0.1, rng)
        assert np.array_equal(layers[1].weight, before)

    def test_same_seed_bit_identical_checkpoints(self, tmp_path):
        x, y = blobs(np.random.default_rng(3), 60)
        paths = []
        for run in range(2):
            rng = np.random.default_rng(7)
            layers = build_architecture("mlp", (2,), 2, rng)
            model, _ = train_model(layers, x, y, 5, 0.2, rng)
            paths.append(tmp_path / f"m{run}.json")
            save_model(model, paths[-1])
        assert paths[0].read_bytes() == paths[1].read_bytes()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_reports_epoch(self):
        rng = np.random.default_rng(4)
        x, y = blobs(rng, 40)
        layers = build_architecture("linear", (2,), 2, rng)
        with pytest.raises(TrainingDivergedError) as info:
            train_model(layers, x * 1e150, 1 - y, 5, 1e200, rng)
        assert info.value.epoch >= 0
        assert "epoch" in str(info.value)

    def test_conv_learns_bar_patterns(self):
        from wig.data import generate_samples
        samples = generate_samples(200, 8, 8, 1, 4, 0.2, 2, seed=5)
        x = np.stack([s.image for s in samples])
        y = np.array([s.label for s in samples])
        rng = np.random.default_rng(5)
        _, acc = train_model(build_architecture("conv", x.shape[1:], 2, rng), x, y, 40, 2.0, rng)
        assert acc >= 0.95


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        for kind in ("mlp", "conv"):
            m = smooth_model(rng, kind=kind)
            save_model(m, tmp_path / "m.json")
            back = load_model(tmp_path / "m.json")
            xs = rng.normal(size=(100,) + m.input_shape)
            assert np.array_equal(m.score_batch(xs), back.score_batch(xs))
            assert back.output_mode == m.output_mode and back.class_index == m.class_index

    def test_regression_pair_checked(self, tmp_path, rng):
        m = smooth_model(rng, kind="mlp")
        x = rng.normal(size=m.input_shape)
        m = attach_regression(m, x)
        doc = model_to_dict(m)
        back = model_from_dict(doc)
        assert abs(forward(back, back.regression[0]) - back.regression[1]) <= 1e-12
        doc["regression"]["score"] += 1e-6
        with pytest.raises(FormatError, match="regression"):
            model_from_dict(doc)

    def test_class_override(self, tmp_path, rng):
        m = smooth_model(rng, kind="conv", output_mode="softmax-prob")
        save_model(m, tmp_path / "m.json")
        other = (m.class_index + 1) % m.n_outputs
        back = load_model(tmp_path / "m.json", class_index=other)
        x = rng.normal(size=m.input_shape)
        assert forward(back, x) == forward(m.with_class(other), x)

    def test_truncated_file(self, tmp_path, rng):
        save_model(smooth_model(rng), tmp_path / "m.json")
        text = (tmp_path / "m.json").read_text()
        (tmp_path / "t.json").write_text(text[: len(text) // 2])
        with pytest.raises(FormatError, match="checkpoint"):
            load_model(tmp_path / "t.json")

    def test_declared_shape_mismatch_names_field(self, rng):
        doc = model_to_dict(smooth_model(rng, kind="mlp"))
        doc["layers"][1]["weight"]["shape"][0] += 1
        with pytest.raises(FormatError, match=r"layers\[1\]\.weight\.data"):
            model_from_dict(doc)

    @pytest.mark.parametrize("mutate,field", [
        (lambda d: d.pop("layers"), "layers"),
        (lambda d: d.update(output_mode="probit"), "output_mode"),
        (lambda d: d["layers"][0].update(kind="pool"), r"layers\[0\]\.kind"),
        (lambda d: d.update(format="other"), "format"),
        (lambda d: d["layers"][2].update(activation="gelu"), r"layers\[2\]"),
    ])
    def test_malformed_fields(self, rng, mutate, field):
        doc = model_to_dict(smooth_model(np.random.default_rng(0), kind="mlp"))
        mutate(doc)
        with pytest.raises(FormatError, match=field):
            model_from_dict(doc)

    def test_json_is_plain(self, tmp_path, rng):
        save_model(linear_model([1.0, 2.0]), tmp_path / "m.json")
        doc = json.loads((tmp_path / "m.json").read_text())
        assert doc["layers"][1]["weight"]["shape"] == [1, 2]
        assert doc["regression"]["score"] == 0.0

    def test_bundled_tiny_model_loads(self):
        from conftest import ASSETS
        m = load_model(ASSETS / "tiny_model.json")
        assert m.input_shape == (1, 6, 6)

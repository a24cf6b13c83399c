"""Shared model and data factories for the test suite."""

from pathlib import Path

import numpy as np
import pytest

from wig.model import Activation, Conv2d, Dense, Flatten, GlobalAvgPool, Model, build_architecture

ASSETS = Path(__file__).resolve().parents[1] / "src" / "wig" / "assets"
GOLDEN = Path(__file__).resolve().parent / "golden"


def linear_model(w, b=0.0, input_shape=None, output_mode="logit") -> Model:
    """f(x) = w . x + b as a flatten + single-output dense layer."""
    w = np.asarray(w, dtype=np.float64)
    shape = input_shape or w.shape
    return Model(shape, [Flatten(), Dense(w.reshape(1, -1), np.array([float(b)]))],
                 output_mode=output_mode)


def smooth_model(rng, kind: str | None = None, output_mode: str | None = None) -> Model:
    """Random small softplus/tanh model with a random output head."""
    kind = kind or rng.choice(["mlp", "conv"])
    act = str(rng.choice(["softplus", "tanh"]))
    output_mode = output_mode or str(rng.choice(["logit", "sigmoid", "softmax-prob"]))
    n_out = 1 if output_mode == "sigmoid" else int(rng.integers(2, 4))
    if kind == "mlp":
        shape = (int(rng.integers(2, 4)), int(rng.integers(3, 6)), int(rng.integers(3, 6)))
        layers = build_architecture("mlp", shape, n_out, rng, activation=act, hidden=8)
    else:
        shape = (int(rng.integers(1, 3)), 5, 5)
        layers = build_architecture("conv", shape, n_out, rng, activation=act, conv_channels=3)
    cls = int(rng.integers(n_out))
    return Model(shape, layers, class_index=cls, output_mode=output_mode)


def deep_conv_model(rng) -> Model:
    """Conv -> tanh -> conv -> softplus -> pool -> dense, exercising every layer kind."""
    layers = [Conv2d(rng.normal(0, 0.5, (3, 2, 3, 3)), rng.normal(0, 0.1, 3)), Activation("tanh"),
              Conv2d(rng.normal(0, 0.5, (2, 3, 2, 2)), rng.normal(0, 0.1, 2)), Activation("softplus"),
              GlobalAvgPool(), Dense(rng.normal(0, 1.0, (3, 2)), rng.normal(0, 0.1, 3))]
    return Model((2, 6, 6), layers, class_index=int(rng.integers(3)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# acceptance criteria append "criterion N [PASS|FAIL] ..." lines here
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])

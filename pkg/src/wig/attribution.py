"""Path attributions: Integrated Gradients and its multi-baseline averages.

All maps are per pixel: scalar attributions are summed over channels before
they are returned, so rankings and metrics downstream see one value per
spatial site. Negative attributions are kept.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateError, ShapeError, WigError
from .model import Model, forward
from .tensor import (as_tensor, atomic_write, channel_sum, compensated_sum,
                     read_ntf, stable_sum, write_ntf)

RULES = ("left-riemann", "trapezoid")


@dataclass(frozen=True)
class PathQuadrature:
    """Discretisation of the straight-line path integral over [0, 1].

    ``steps`` is the number of subintervals. Left-Riemann evaluates the
    gradient at ``steps`` points ``0, 1/steps, ...``; the trapezoid rule at
    ``steps + 1`` points including both endpoints.
    """

    steps: int = 64
    rule: str = "trapezoid"

    def __post_init__(self):
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError("steps must be an integer >= 1")
        if self.rule not in RULES:
            raise ValueError(f"rule must be one of {RULES}")

    def nodes(self):
        s = self.steps
        if self.rule == "left-riemann":
            return np.arange(s) / s, np.full(s, 1.0 / s)
        alphas = np.arange(s + 1) / s
        weights = np.full(s + 1, 1.0 / s)
        weights[0] = weights[-1] = 0.5 / s
        return alphas, weights


@dataclass
class AttributionMap:
    values: np.ndarray
    method: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = as_tensor(self.values)


@dataclass
class BaselineSet:
    """Baselines for one input, optionally with normalised weights."""

    baselines: list
    weights: np.ndarray | None = None
    ids: list | None = None

    def __post_init__(self):
        if len(self.baselines) == 0:
            raise WigError("empty baseline set")
        self.baselines = [as_tensor(b) for b in self.baselines]
        shape = self.baselines[0].shape
        if any(b.shape != shape for b in self.baselines):
            raise ShapeError("all baselines must share one shape")
        if self.ids is None:
            self.ids = [f"b{k}" for k in range(len(self.baselines))]
        if len(self.ids) != len(self.baselines):
            raise WigError("one id per baseline required")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=np.float64)
            check_weights(self.weights, len(self.baselines))

    def __len__(self):
        return len(self.baselines)

    def with_weights(self, weights) -> "BaselineSet":
        return BaselineSet(self.baselines, weights, list(self.ids))

    def subset(self, keep: Sequence[int], weights=None) -> "BaselineSet":
        return BaselineSet([self.baselines[k] for k in keep], weights,
                           [self.ids[k] for k in keep])


def check_weights(weights, n: int) -> None:
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise WigError(f"expected {n} weights, got shape {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise WigError("weights must be finite and non-negative")
    if abs(stable_sum(w) - 1.0) > 1e-12:
        raise WigError(f"weights must sum to 1 (sum={stable_sum(w)!r})")


def _check_pair(model: Model, x, baseline):
    x = as_tensor(x)
    baseline = as_tensor(baseline)
    if x.shape != baseline.shape:
        raise ShapeError(f"baseline shape {baseline.shape} does not match input {x.shape}")
    if x.shape != model.input_shape:
        raise ShapeError(f"input shape {x.shape} does not match model input {model.input_shape}")
    return x, baseline


def path_integral(model: Model, x, baseline, quad: PathQuadrature) -> np.ndarray:
    """Per-scalar IG: ``(x - x') * mean gradient along the straight path``."""
    x, baseline = _check_pair(model, x, baseline)
    alphas, weights = quad.nodes()
    diff = x - baseline
    points = baseline[None] + alphas.reshape((-1,) + (1,) * x.ndim) * diff[None]
    _, grads = model.score_and_grad_batch(points)
    avg = np.tensordot(weights, grads, axes=1)
    return diff * avg


def integrated_gradients(model: Model, x, baseline, quad: PathQuadrature = PathQuadrature(),
                         baseline_id: str = "b0") -> AttributionMap:
    values = channel_sum(path_integral(model, x, baseline, quad))
    return AttributionMap(values, "IG", {"steps": quad.steps, "rule": quad.rule,
                                         "baseline_ids": [baseline_id]})


def per_baseline_ig(model: Model, x, baselines: BaselineSet,
                    quad: PathQuadrature = PathQuadrature()) -> list:
    return [integrated_gradients(model, x, b, quad, bid)
            for b, bid in zip(baselines.baselines, baselines.ids)]


def combine_maps(maps: Sequence[AttributionMap], weights, method: str) -> AttributionMap:
    """Weighted elementwise sum of maps, accumulated in list order."""
    if len(maps) == 0:
        raise WigError("empty baseline set")
    weights = np.asarray(weights, dtype=np.float64)
    values = compensated_sum([w * m.values for w, m in zip(weights, maps)])
    meta = dict(maps[0].metadata)
    meta["baseline_ids"] = [bid for m in maps for bid in m.metadata.get("baseline_ids", [])]
    meta["weights"] = weights.tolist()
    return AttributionMap(values, method, meta)


def expected_gradients(model: Model, x, baselines: BaselineSet,
                       quad: PathQuadrature = PathQuadrature()) -> AttributionMap:
    """Uniform average of IG over the baseline set (weights are ignored)."""
    maps = per_baseline_ig(model, x, baselines, quad)
    return uniform_average(maps)


def uniform_average(maps: Sequence[AttributionMap]) -> AttributionMap:
    if len(maps) == 0:
        raise WigError("empty baseline set")
    n = len(maps)
    values = compensated_sum([m.values for m in maps]) / n
    meta = dict(maps[0].metadata)
    meta["baseline_ids"] = [bid for m in maps for bid in m.metadata.get("baseline_ids", [])]
    meta["weights"] = [1.0 / n] * n
    return AttributionMap(values, "EG", meta)


def weighted_integrated_gradients(model: Model, x, baselines: BaselineSet,
                                  quad: PathQuadrature = PathQuadrature()) -> AttributionMap:
    """``sum_k w_k IG(x, x_k)`` using the weights stored on ``baselines``."""
    if baselines.weights is None:
        raise WigError("baseline weights are required for WG")
    check_weights(baselines.weights, len(baselines))
    maps = per_baseline_ig(model, x, baselines, quad)
    return combine_maps(maps, baselines.weights, "WG")


def completeness_gap(model: Model, x, baseline, attr: AttributionMap) -> float:
    """``|sum(attr) - (f(x) - f(x'))|``."""
    x, baseline = _check_pair(model, x, baseline)
    return abs(stable_sum(attr.values) - (forward(model, x) - forward(model, baseline)))


def generalized_completeness_gap(model: Model, x, baselines: BaselineSet,
                                 wg_attr: AttributionMap) -> float:
    """``|sum(attr) - (f(x) - sum_k w_k f(x_k))|`` for a weighted baseline set."""
    if baselines.weights is None:
        raise WigError("baseline weights are required")
    check_weights(baselines.weights, len(baselines))
    fx = forward(model, x)
    expected_baseline = stable_sum([w * forward(model, b)
                                    for w, b in zip(baselines.weights, baselines.baselines)])
    return abs(stable_sum(wg_attr.values) - (fx - expected_baseline))


def normalized_positive_profile(attr) -> np.ndarray:
    """Positive parts renormalised to a probability vector over pixels (flattened)."""
    values = attr.values if isinstance(attr, AttributionMap) else as_tensor(attr)
    pos = np.maximum(values.ravel(), 0.0)
    total = stable_sum(pos)
    if total <= 0.0:
        raise DegenerateError("degenerate profile: no positive attribution")
    return pos / total


# -- serialisation ------------------------------------------------------------

def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(".json") if path.suffix == ".ntf" else Path(str(path) + ".json")


def save_attribution(path, attr: AttributionMap) -> None:
    """Write the map as NTF plus a JSON sidecar with its provenance."""
    write_ntf(path, attr.values)
    meta = {"method": attr.method, **attr.metadata}
    atomic_write(sidecar_path(path), json.dumps(meta, indent=1, sort_keys=True) + "\n")


def load_attribution(path) -> AttributionMap:
    values = read_ntf(path)
    side = sidecar_path(path)
    meta = json.loads(side.read_text()) if side.exists() else {"method": "unknown"}
    method = meta.pop("method", "unknown")
    return AttributionMap(values, method, meta)

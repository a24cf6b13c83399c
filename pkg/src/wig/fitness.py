"""Baseline fitness: how few top-ranked pixels must be masked to halve the score.

For a baseline ``x_k`` the pixels of ``x`` are ranked by ``IG(x, x_k)`` and
the smallest prefix whose masking drives ``f`` down to ``alpha * f(x)``
(within ``epsilon``) is located by binary search. Baselines whose rankings
collapse the score quickly get large weights ``w_k ~ 1 / D_alpha``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .attribution import (AttributionMap, BaselineSet, PathQuadrature, combine_maps,
                          per_baseline_ig)
from .errors import DegenerateError, ShapeError, WigError
from .model import Model, forward
from .tensor import argsort_desc, as_tensor, atomic_write, spatial_shape, stable_sum


@dataclass(frozen=True)
class FitnessConfig:
    """Parameters of the fitness search.

    ``neutral`` is the replacement value for masked pixels: a scalar, or one
    value per channel (e.g. the dataset mean). ``early_exit`` returns on the
    first probe inside the epsilon band instead of continuing to the
    smallest such prefix. ``strict`` gives non-converged baselines zero weight.
    """

    alpha: float = 0.5
    neutral: float | tuple = 0.0
    epsilon: float = 0.01
    max_iterations: int = 100
    early_exit: bool = False
    strict: bool = False

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not self.epsilon > 0.0:
            raise ValueError("epsilon must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class FitnessResult:
    d_alpha: int
    converged: bool
    final_score: float
    iterations_used: int
    base_score: float = float("nan")


def _attr_values(attr) -> np.ndarray:
    return attr.values if isinstance(attr, AttributionMap) else as_tensor(attr)


def find_mask(attr, k: int) -> np.ndarray:
    """Boolean pixel mask selecting the ``k`` highest-attributed pixels."""
    values = _attr_values(attr)
    d = values.size
    if not 0 <= k <= d:
        raise ValueError(f"k={k} outside [0, {d}]")
    mask = np.zeros(d, dtype=bool)
    mask[argsort_desc(values)[:k]] = True
    return mask.reshape(values.shape)


def _neutral_fill(x: np.ndarray, neutral) -> np.ndarray:
    neutral = np.asarray(neutral, dtype=np.float64)
    if neutral.ndim == 0:
        return np.full_like(x, float(neutral))
    if x.ndim != 3 or neutral.shape != (x.shape[0],):
        raise ShapeError(f"per-channel neutral of shape {neutral.shape} does not fit input {x.shape}")
    return np.broadcast_to(neutral[:, None, None], x.shape).copy()


def apply_mask(x, mask, neutral=0.0) -> np.ndarray:
    """Copy of ``x`` with every channel of the selected pixels set to ``neutral``."""
    x = as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != spatial_shape(x.shape):
        raise ShapeError(f"mask shape {mask.shape} does not match pixel grid {spatial_shape(x.shape)}")
    fill = _neutral_fill(x, neutral)
    sel = np.broadcast_to(mask, x.shape)
    return np.where(sel, fill, x)


class _PrefixMasker:
    """Masks top-k prefixes of a fixed pixel ranking and caches the scores."""

    def __init__(self, model, x, attr, neutral):
        self.model = model
        self.x = as_tensor(x, model.input_shape)
        values = _attr_values(attr)
        if values.shape != spatial_shape(self.x.shape):
            raise ShapeError(f"attribution shape {values.shape} does not match "
                             f"pixel grid {spatial_shape(self.x.shape)}")
        self.order = argsort_desc(values)
        self.grid = values.shape
        self.fill = _neutral_fill(self.x, neutral)
        self.d = values.size

    def masked(self, k: int) -> np.ndarray:
        mask = np.zeros(self.d, dtype=bool)
        mask[self.order[:k]] = True
        sel = np.broadcast_to(mask.reshape(self.grid), self.x.shape)
        return np.where(sel, self.fill, self.x)

    def score(self, k: int) -> float:
        return forward(self.model, self.masked(k))


def _base_score(model, x) -> float:
    base = forward(model, x)
    if not base > 0.0:
        raise DegenerateError(f"non-positive base score f(x)={base!r}")
    return base


def compute_d_alpha(model: Model, x, attr, cfg: FitnessConfig = FitnessConfig()) -> FitnessResult:
    """Binary search for the smallest top-k mask that brings f to ``alpha * f(x)``.

    A probe at ``mid`` is accepted when ``|f - target| < epsilon``. Scores
    below the target move the search left, scores above it move right. Unless
    ``cfg.early_exit`` is set, an accepted probe also moves left so the search
    ends on the smallest accepted prefix; for a non-increasing score curve
    this is exactly what a linear scan returns. Uses at most
    ``floor(log2(d + 1)) + 1`` masked evaluations plus one for ``f(x)``.
    """
    base = _base_score(model, x)
    target = cfg.alpha * base
    pm = _PrefixMasker(model, x, attr, cfg.neutral)
    scores: dict[int, float] = {}
    low, high = 0, pm.d
    mid = 0
    iterations = 0
    while low <= high and iterations < cfg.max_iterations:
        mid = (low + high) // 2
        s = scores[mid] = pm.score(mid)
        iterations += 1
        if abs(s - target) < cfg.epsilon:
            if cfg.early_exit:
                return FitnessResult(mid, True, s, iterations, base)
            high = mid - 1
        elif s < target:
            high = mid - 1
        else:
            low = mid + 1
    if low <= high:
        # iteration cap reached before the interval closed
        return FitnessResult(mid, False, scores[mid], iterations, base)
    if cfg.early_exit:
        return FitnessResult(mid, False, scores[mid], iterations, base)
    k = min(low, pm.d)
    s = scores[k]
    return FitnessResult(k, bool(abs(s - target) < cfg.epsilon), s, iterations, base)


def compute_d_alpha_oracle(model: Model, x, attr, cfg: FitnessConfig = FitnessConfig()) -> FitnessResult:
    """Linear scan over k = 0..d; the reference for :func:`compute_d_alpha`.

    Returns the first k inside the epsilon band; failing that the first k
    scoring below the target; failing that d with ``converged=False``.
    """
    base = _base_score(model, x)
    target = cfg.alpha * base
    pm = _PrefixMasker(model, x, attr, cfg.neutral)
    scores = [pm.score(k) for k in range(pm.d + 1)]
    for k, s in enumerate(scores):
        if abs(s - target) < cfg.epsilon:
            return FitnessResult(k, True, s, pm.d + 1, base)
    for k, s in enumerate(scores):
        if s < target:
            return FitnessResult(k, False, s, pm.d + 1, base)
    return FitnessResult(pm.d, False, scores[-1], pm.d + 1, base)


def fitness_weights(results) -> np.ndarray:
    """Normalised inverse-D_alpha weights. D_alpha of 0 is treated as 1.

    Accepts FitnessResults or raw integer D_alpha values.
    """
    ds = [r.d_alpha if isinstance(r, FitnessResult) else r for r in results]
    if len(ds) == 0:
        raise WigError("empty fitness list")
    if any(d < 0 for d in ds):
        raise WigError("d_alpha must be non-negative")
    inv = np.array([1.0 / max(d, 1) for d in ds])
    return inv / stable_sum(inv)


def strict_weights(results: Sequence[FitnessResult]) -> np.ndarray:
    """Like :func:`fitness_weights` but non-converged baselines get weight 0.

    Falls back to the lenient weights if nothing converged.
    """
    ok = [r.converged for r in results]
    if not any(ok):
        return fitness_weights(results)
    inv = np.array([1.0 / max(r.d_alpha, 1) if c else 0.0 for r, c in zip(results, ok)])
    return inv / stable_sum(inv)


def filter_baselines(baselines: BaselineSet, results: Sequence[FitnessResult],
                     remove_count: int, strict: bool = False):
    """Drop the ``remove_count`` least fit baselines and reweight the rest.

    Largest D_alpha goes first; among equal D_alpha the later baseline is
    dropped. Returns ``(kept_set, kept_results, kept_indices)``.
    """
    n = len(baselines)
    if len(results) != n:
        raise WigError("one fitness result per baseline required")
    if not 0 <= remove_count < n:
        raise WigError(f"remove_count must lie in [0, {n}), got {remove_count}")
    worst_first = sorted(range(n), key=lambda k: (-results[k].d_alpha, -k))
    dropped = set(worst_first[:remove_count])
    keep = [k for k in range(n) if k not in dropped]
    kept_results = [results[k] for k in keep]
    weights = strict_weights(kept_results) if strict else fitness_weights(kept_results)
    return baselines.subset(keep, weights), kept_results, keep


@dataclass
class WeightedAttribution:
    attribution: AttributionMap
    baselines: BaselineSet
    results: list
    ig_maps: list = field(repr=False)
    kept: list = field(default_factory=list)


def score_baselines(model: Model, x, ig_maps: Sequence[AttributionMap],
                    cfg: FitnessConfig = FitnessConfig()) -> list:
    """D_alpha of each baseline, ranking pixels by that baseline's own IG map."""
    return [compute_d_alpha(model, x, m, cfg) for m in ig_maps]


def weighted_attribution(model: Model, x, baselines: BaselineSet,
                         quad: PathQuadrature = PathQuadrature(),
                         cfg: FitnessConfig = FitnessConfig(), remove_count: int = 0,
                         ig_maps=None, results=None) -> WeightedAttribution:
    """Full WG pipeline: per-baseline IG, fitness, optional filtering, aggregation.

    Precomputed ``ig_maps``/``results`` may be passed to share work between
    variants (e.g. WG and filtered WG on the same input).
    """
    if ig_maps is None:
        ig_maps = per_baseline_ig(model, x, baselines, quad)
    if results is None:
        results = score_baselines(model, x, ig_maps, cfg)
    kept_set, _, keep = filter_baselines(baselines, results, remove_count, strict=cfg.strict)
    method = "WG" if remove_count == 0 else f"WG-filtered-{remove_count}"
    attr = combine_maps([ig_maps[k] for k in keep], kept_set.weights, method)
    attr.metadata["removed"] = remove_count
    attr.metadata["alpha"] = cfg.alpha
    attr.metadata["epsilon"] = cfg.epsilon
    return WeightedAttribution(attr, kept_set, list(results), list(ig_maps), keep)


FITNESS_COLUMNS = ("baseline_id", "d_alpha", "converged", "final_score", "iterations", "weight")


def fitness_csv(ids: Sequence[str], results: Sequence[FitnessResult], weights) -> str:
    """``baseline_id,d_alpha,converged,final_score,iterations,weight``; dropped baselines get weight 0."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(FITNESS_COLUMNS)
    for bid, r, w in zip(ids, results, weights):
        writer.writerow([bid, r.d_alpha, str(r.converged).lower(), repr(float(r.final_score)),
                         r.iterations_used, repr(float(w))])
    return buf.getvalue()


def write_fitness_csv(path, ids, results, weights) -> None:
    atomic_write(path, fitness_csv(ids, results, weights))


def read_fitness_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        out.append({"baseline_id": row["baseline_id"], "d_alpha": int(row["d_alpha"]),
                    "converged": row["converged"] == "true",
                    "final_score": float(row["final_score"]),
                    "iterations": int(row["iterations"]), "weight": float(row["weight"])})
    return out

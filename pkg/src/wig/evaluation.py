"""Deletion and overlap curves, their AUCs, and paired significance tests."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .attribution import AttributionMap
from .errors import DegenerateError, ShapeError
from .fitness import _neutral_fill
from .model import Model
from .tensor import argsort_desc, as_tensor, spatial_shape, stable_sum


@dataclass
class MetricCurve:
    fractions: np.ndarray
    values: np.ndarray
    auc: float


def curve_mean(values) -> float:
    """Riemann-sum AUC: mean of the sampled values.

    Computed as first value plus the correctly rounded mean deviation, so a
    constant curve returns its constant exactly.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("empty curve")
    return float(v[0] + stable_sum(v - v[0]) / v.size)


def _values(attr) -> np.ndarray:
    return attr.values if isinstance(attr, AttributionMap) else as_tensor(attr)


def deletion_counts(d: int, n_points: int) -> np.ndarray:
    """Pixels removed at p_i = i/N: round-half-up of p_i * d."""
    i = np.arange(1, n_points + 1)
    return (2 * i * d + n_points) // (2 * n_points)


def overlap_counts(size: int, n_points: int) -> np.ndarray:
    """Top-ranked pixels compared at p_i = i/N: ceil(p_i * |S|)."""
    i = np.arange(1, n_points + 1)
    return (i * size + n_points - 1) // n_points


def deletion_curve(model: Model, x, attr, N: int = 100, neutral=0.0) -> MetricCurve:
    """Score after masking the top round(p_i d) pixels, p_i = i/N. Lower AUC is better."""
    if N < 1:
        raise ValueError("N must be >= 1")
    x = as_tensor(x, model.input_shape)
    values = _values(attr)
    grid = spatial_shape(x.shape)
    if values.shape != grid:
        raise ShapeError(f"attribution shape {values.shape} does not match pixel grid {grid}")
    d = values.size
    order = argsort_desc(values)
    counts = deletion_counts(d, N)
    fill = _neutral_fill(x, neutral)
    batch = np.empty((N,) + x.shape)
    for j, k in enumerate(counts):
        mask = np.zeros(d, dtype=bool)
        mask[order[:k]] = True
        batch[j] = np.where(np.broadcast_to(mask.reshape(grid), x.shape), fill, x)
    scores = model.score_batch(batch)
    return MetricCurve(np.arange(1, N + 1) / N, scores, curve_mean(scores))


def deletion_auc(model: Model, x, attr, N: int = 100, neutral=0.0) -> float:
    return deletion_curve(model, x, attr, N, neutral).auc


def overlap_curve(attr, gt, N: int = 100) -> MetricCurve:
    """Precision of the top ceil(p_i |S|) pixels against the ground-truth set S."""
    if N < 1:
        raise ValueError("N must be >= 1")
    values = _values(attr)
    gt = np.asarray(gt, dtype=bool)
    if gt.shape != values.shape:
        raise ShapeError(f"ground-truth mask shape {gt.shape} does not match attribution {values.shape}")
    size = int(gt.sum())
    if size < 1:
        raise ShapeError("ground-truth mask is empty")
    hits = np.cumsum(gt.ravel()[argsort_desc(values)])
    counts = overlap_counts(size, N)
    vals = hits[counts - 1] / counts
    return MetricCurve(np.arange(1, N + 1) / N, vals.astype(np.float64), curve_mean(vals))


def overlap_auc(attr, gt, N: int = 100) -> float:
    return overlap_curve(attr, gt, N).auc


# -- Student t ----------------------------------------------------------------

def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, 10000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def regularized_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and 0 <= x <= 1."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, dof: float) -> float:
    """P(|T| >= |t|) for Student's t with ``dof`` degrees of freedom."""
    if math.isinf(t):
        return 0.0
    return regularized_beta(dof / 2.0, 0.5, dof / (dof + t * t))


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Two-sided paired t-test on ``a - b``. Returns ``(t, p)``.

    Zero-variance differences give ``p = 0`` when their mean is nonzero and
    raise DegenerateError when it is zero.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError("paired samples must be equal-length vectors")
    n = a.size
    if n < 2:
        raise ValueError("need at least two pairs")
    diff = a - b
    if np.all(diff == diff[0]):
        if diff[0] == 0.0:
            raise DegenerateError("degenerate: all paired differences are zero")
        return math.copysign(math.inf, diff[0]), 0.0
    mean = stable_sum(diff) / n
    var = stable_sum((diff - mean) ** 2) / (n - 1)
    t = mean / math.sqrt(var / n)
    return t, student_t_two_sided_p(t, n - 1)


def relative_improvement(reference: float, value: float, lower_is_better: bool) -> float:
    """Percent improvement of ``value`` over ``reference``."""
    if reference == 0.0:
        return math.nan
    gain = reference - value if lower_is_better else value - reference
    return 100.0 * gain / abs(reference)

"""Monte Carlo checks of the relevance guarantees of fitness weighting.

A *world* is a set of ``n`` baseline profiles (probability vectors over ``d``
features), a relevant feature set ``R``, and fitness values ``D_alpha``.
``Q_k`` is the mass profile ``k`` puts on ``R``. Worlds from
:func:`generate_world` order ``Q`` against ``D_alpha`` (lower D_alpha, higher
Q) exactly, so any failed inequality there is a bug, not sampling noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .attribution import normalized_positive_profile
from .errors import ConfigError, WigError
from .fitness import fitness_weights
from .tensor import compensated_sum, derived_rng, stable_sum

TOL = 1e-12
MARGIN_TOL = 1e-12  # margins at roundoff level count as ties and are skipped


@dataclass
class RelevanceWorld:
    profiles: np.ndarray   # (n, d), rows sum to 1
    relevant: np.ndarray   # (d,) bool
    d_alphas: np.ndarray   # (n,) positive ints, ascending
    q_values: np.ndarray   # (n,)

    @property
    def n(self) -> int:
        return self.profiles.shape[0]

    @property
    def d(self) -> int:
        return self.profiles.shape[1]

    def validate(self) -> None:
        if np.any(self.profiles < 0):
            raise WigError("profiles must be non-negative")
        for k, row in enumerate(self.profiles):
            if abs(stable_sum(row) - 1.0) > TOL:
                raise WigError(f"profile {k} does not sum to 1")
            if abs(stable_sum(row[self.relevant]) - self.q_values[k]) > TOL:
                raise WigError(f"profile {k} relevant mass differs from Q_{k}")


def assumption_holds(d_alphas, q_values) -> bool:
    """Lower-or-equal D_alpha must never come with strictly lower Q."""
    d = np.asarray(d_alphas)
    q = np.asarray(q_values)
    lower_d = d[:, None] <= d[None, :]
    return not np.any(lower_d & (q[:, None] < q[None, :]))


def _fill_profile(q: float, relevant: np.ndarray, rng) -> np.ndarray:
    d = relevant.size
    p = np.zeros(d)
    r_idx = np.flatnonzero(relevant)
    c_idx = np.flatnonzero(~relevant)
    p[r_idx] = q * rng.dirichlet(np.ones(r_idx.size))
    p[c_idx] = (1.0 - q) * rng.dirichlet(np.ones(c_idx.size))
    return p


def _relevant_set(d: int, relevant_fraction: float, rng) -> np.ndarray:
    r = int(round(relevant_fraction * d))
    if not 1 <= r < d:
        raise ConfigError(f"relevant_fraction {relevant_fraction} leaves no relevant or no irrelevant feature at d={d}")
    relevant = np.zeros(d, dtype=bool)
    relevant[rng.choice(d, r, replace=False)] = True
    return relevant


def _ascending_d_alphas(n: int, d: int, rng) -> np.ndarray:
    pool = max(4 * n, d)
    return np.sort(rng.choice(np.arange(1, pool + 1), n, replace=False)).astype(np.int64)


def _build(q: np.ndarray, d_alphas, relevant, rng) -> RelevanceWorld:
    profiles = np.stack([_fill_profile(qk, relevant, rng) for qk in q])
    world = RelevanceWorld(profiles, relevant, np.asarray(d_alphas), q.copy())
    world.validate()
    return world


def generate_world(n: int, d: int, relevant_fraction: float, spread: float,
                   rng: np.random.Generator) -> RelevanceWorld:
    """Random world satisfying fitness-relevance monotonicity by construction.

    ``spread`` in [0, 1] is the width of the interval Q values are drawn
    from; ``spread=0`` makes every Q equal.
    """
    if n < 2 or d < 2:
        raise ConfigError("need n >= 2 baselines and d >= 2 features")
    if not 0.0 < relevant_fraction < 1.0:
        raise ConfigError("relevant_fraction must lie in (0, 1)")
    if not 0.0 <= spread <= 1.0:
        raise ConfigError("spread must lie in [0, 1]")
    relevant = _relevant_set(d, relevant_fraction, rng)
    center = rng.uniform(spread / 2.0, 1.0 - spread / 2.0)
    q = np.sort(center + spread * (rng.random(n) - 0.5))[::-1].copy()
    q = np.clip(q, 0.0, 1.0)
    world = _build(q, _ascending_d_alphas(n, d, rng), relevant, rng)
    if not assumption_holds(world.d_alphas, world.q_values):
        raise WigError("generated world violates fitness-relevance monotonicity")
    return world


def generate_adversarial_world(n: int, d: int, relevant_fraction: float, spread: float,
                               rng: np.random.Generator) -> RelevanceWorld:
    """Same construction with Q *increasing* in D_alpha (assumption inverted)."""
    if spread <= 0.0:
        raise ConfigError("an adversarial world needs spread > 0")
    world = generate_world(n, d, relevant_fraction, spread, rng)
    order = np.arange(world.n)[::-1]
    return RelevanceWorld(world.profiles[order], world.relevant, world.d_alphas,
                          world.q_values[order])


def world_with_margin(n: int, d: int, margin: float, relevant_fraction: float,
                      rng: np.random.Generator, max_tries: int = 1000) -> RelevanceWorld:
    """Monotone world whose weighted and uniform relevance differ by ``margin``."""
    if not 0.0 < margin < 1.0:
        raise ConfigError("margin must lie in (0, 1)")
    relevant = _relevant_set(d, relevant_fraction, rng)
    for _ in range(max_tries):
        d_alphas = _ascending_d_alphas(n, d, rng)
        w = fitness_weights(d_alphas)
        z = np.sort(rng.random(n))[::-1]
        z = (z - z[-1]) / (z[0] - z[-1])
        lift = stable_sum((w - 1.0 / n) * z)
        if lift <= 0.0:
            continue
        gap = margin / lift
        if gap > 1.0:
            continue
        lo = rng.uniform(0.0, 1.0 - gap)
        q = np.clip(lo + gap * z, 0.0, 1.0)
        return _build(q, d_alphas, relevant, rng)
    raise ConfigError(f"could not reach margin {margin} with n={n}")


@dataclass(frozen=True)
class SamplingPlan:
    m: int
    trials: int = 10_000
    delta: float = 0.05

    def __post_init__(self):
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError("delta must lie in (0, 1)")


def expected_relevance(weights, q_values) -> float:
    """``sum_k w_k Q_k``: relevance of a baseline drawn with probabilities ``w``."""
    w = np.asarray(weights, dtype=np.float64)
    q = np.asarray(q_values, dtype=np.float64)
    if w.shape != q.shape:
        raise WigError(f"length mismatch: {w.shape} weights vs {q.shape} Q values")
    if abs(stable_sum(w) - 1.0) > TOL:
        raise WigError("weights must sum to 1")
    return stable_sum(w * q)


def check_proposition1(world: RelevanceWorld) -> dict:
    w = fitness_weights(world.d_alphas)
    u = np.full(world.n, 1.0 / world.n)
    wg = expected_relevance(w, world.q_values)
    eg = expected_relevance(u, world.q_values)
    all_equal = bool(np.all(world.q_values == world.q_values[0]))
    violated = not assumption_holds(world.d_alphas, world.q_values)
    holds = wg >= eg - TOL
    strict = wg > eg + TOL
    return {"wg_value": wg, "eg_value": eg, "holds": bool(holds), "strict": bool(strict),
            "all_q_equal": all_equal, "assumption_violated": violated,
            "passed": bool(violated or (holds and (strict or all_equal)))}


def proposition1_sweep(worlds: int, seed: int, n_range=(2, 10), d: int = 50,
                       relevant_fraction: float = 0.2, adversarial: int = 0) -> dict:
    """Check the weighted-vs-uniform relevance inequality over many random worlds.

    Every 50th world uses ``spread=0`` to exercise the equality case.
    ``adversarial`` extra worlds with the assumption inverted measure how
    often the inequality then fails.
    """
    counts = {"worlds": 0, "holds": 0, "strict": 0, "expected_strict": 0, "failures": 0}
    first_failures = []
    for i in range(worlds):
        rng = derived_rng(seed, 1, i)
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        spread = 0.0 if i % 50 == 0 else float(rng.uniform(0.05, 1.0))
        rep = check_proposition1(generate_world(n, d, relevant_fraction, spread, rng))
        counts["worlds"] += 1
        counts["holds"] += rep["holds"]
        counts["strict"] += rep["strict"]
        counts["expected_strict"] += not rep["all_q_equal"]
        if not rep["passed"]:
            counts["failures"] += 1
            if len(first_failures) < 5:
                first_failures.append({"world": i, **rep})
    adv = {"worlds": adversarial, "violations": 0, "assumption_violated": 0}
    for i in range(adversarial):
        rng = derived_rng(seed, 2, i)
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        rep = check_proposition1(generate_adversarial_world(
            n, d, relevant_fraction, float(rng.uniform(0.05, 1.0)), rng))
        adv["assumption_violated"] += rep["assumption_violated"]
        adv["violations"] += not rep["holds"]
    return {"check": "proposition1", **counts,
            "passed": counts["failures"] == 0 and counts["holds"] == counts["worlds"],
            "first_failures": first_failures, "adversarial": adv}


def mixture_profile(profiles: np.ndarray, weights) -> np.ndarray:
    return compensated_sum([w * p for w, p in zip(weights, profiles)])


def empirical_relevance_fraction(profile, relevant, plan: SamplingPlan, seed: int) -> np.ndarray:
    """Per trial, the fraction of ``m`` features drawn from ``profile`` that fall in R.

    Trial ``t`` uses its own stream derived from ``(seed, t)``.
    """
    profile = np.asarray(profile, dtype=np.float64)
    relevant = np.asarray(relevant, dtype=bool)
    if abs(stable_sum(profile) - 1.0) > 1e-9 or np.any(profile < 0):
        raise WigError("profile must be a probability vector")
    cdf = np.cumsum(profile)
    cdf[-1] = 1.0
    out = np.empty(plan.trials)
    for t in range(plan.trials):
        u = derived_rng(seed, 3, t).random(plan.m)
        idx = np.minimum(np.searchsorted(cdf, u, side="right"), profile.size - 1)
        out[t] = np.count_nonzero(relevant[idx]) / plan.m
    return out


def sample_size(margin: float, delta: float) -> int:
    """Smallest m with ``exp(-2 m margin^2) <= delta``."""
    return int(math.ceil(math.log(1.0 / delta) / (2.0 * margin * margin)))


def aggregate_relevance(world: RelevanceWorld) -> tuple[float, float]:
    """``(q_WG, q_EG)`` of the fitness-weighted and uniform profile mixtures."""
    w = fitness_weights(world.d_alphas)
    u = np.full(world.n, 1.0 / world.n)
    q_wg = stable_sum(mixture_profile(world.profiles, w)[world.relevant])
    q_eg = stable_sum(mixture_profile(world.profiles, u)[world.relevant])
    return q_wg, q_eg


def check_theorem1(world: RelevanceWorld, plan: SamplingPlan, seed: int) -> dict:
    """Compare the empirical rate of ``q_hat_WG <= q_EG`` with ``exp(-2 m margin^2)``."""
    q_wg, q_eg = aggregate_relevance(world)
    margin = q_wg - q_eg
    report = {"q_wg": q_wg, "q_eg": q_eg, "delta_x": margin, "m": plan.m,
              "trials": plan.trials, "delta": plan.delta}
    if not margin > MARGIN_TOL:
        return {**report, "skipped": True, "holds": True}
    w = fitness_weights(world.d_alphas)
    q_hat = empirical_relevance_fraction(mixture_profile(world.profiles, w), world.relevant, plan, seed)
    rate = float(np.mean(q_hat <= q_eg))
    bound = math.exp(-2.0 * plan.m * margin * margin)
    slack = 3.0 * math.sqrt(bound * (1.0 - bound) / plan.trials)
    return {**report, "skipped": False, "empirical_failure_rate": rate,
            "hoeffding_bound": bound, "slack": slack,
            "holds": bool(rate <= bound + slack + 1e-6),
            "m_star": sample_size(margin, plan.delta)}


def check_sample_size(world: RelevanceWorld, delta: float, trials: int, seed: int) -> dict:
    """At ``m = m_star(delta)`` the success rate must reach ``1 - delta`` (3 SE slack)."""
    q_wg, q_eg = aggregate_relevance(world)
    margin = q_wg - q_eg
    if not margin > MARGIN_TOL:
        return {"delta": delta, "delta_x": margin, "skipped": True, "holds": True}
    m = sample_size(margin, delta)
    q_hat = empirical_relevance_fraction(
        mixture_profile(world.profiles, fitness_weights(world.d_alphas)), world.relevant,
        SamplingPlan(m, trials, delta), seed)
    success = float(np.mean(q_hat > q_eg))
    slack = 3.0 * math.sqrt(delta * (1.0 - delta) / trials)
    return {"delta": delta, "delta_x": margin, "m_star": m, "trials": trials,
            "success_rate": success, "required": 1.0 - delta - slack, "skipped": False,
            "holds": bool(success >= 1.0 - delta - slack)}


def theorem1_grid(m_values: Sequence[int], margins: Sequence[float], trials: int, seed: int,
                  n: int = 5, d: int = 50, relevant_fraction: float = 0.2) -> list[dict]:
    rows = []
    for j, margin in enumerate(margins):
        world = world_with_margin(n, d, margin, relevant_fraction, derived_rng(seed, 4, j))
        for i, m in enumerate(m_values):
            rep = check_theorem1(world, SamplingPlan(int(m), trials), seed * 1000 + 17 * j + i)
            rows.append({"target_margin": margin, **rep})
    return rows


def relevance_from_attributions(maps: Sequence, weights, relevant) -> dict:
    """Relevance of real attribution maps under both aggregation orders.

    ``mixture``: weighted mixture of per-baseline normalised profiles.
    ``normalized_aggregate``: normalised profile of the weighted sum of maps.
    The two differ when the positive mass varies across baselines. Maps with
    one more axis than ``relevant`` (C x H x W against H x W) are summed over
    channels first.
    """
    relevant = np.asarray(relevant, dtype=bool)
    values = [m.values if hasattr(m, "values") else np.asarray(m, dtype=np.float64) for m in maps]
    values = [v.sum(axis=0) if v.ndim == relevant.ndim + 1 else v for v in values]
    relevant = relevant.ravel()
    profiles = np.stack([normalized_positive_profile(v) for v in values])
    weights = np.asarray(weights, dtype=np.float64)
    mixture = mixture_profile(profiles, weights)
    aggregate = compensated_sum([w * v for w, v in zip(weights, values)])
    return {"per_baseline": [stable_sum(p[relevant]) for p in profiles],
            "mixture": stable_sum(mixture[relevant]),
            "normalized_aggregate": stable_sum(normalized_positive_profile(aggregate)[relevant])}

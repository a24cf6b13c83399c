"""Command line interface: ``wig <subcommand> [options]``.

Every option can also come from a JSON file given with ``--config``; flags
given on the command line win. Exit codes: 0 success, 1 usage or
configuration error, 2 data/model error, 3 a theory check failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .attribution import (BaselineSet, PathQuadrature, integrated_gradients, per_baseline_ig,
                          save_attribution, uniform_average)
from .data import generate_samples, load_dataset, write_dataset
from .errors import ConfigError, DegenerateError, WigError
from .evaluation import (deletion_curve, overlap_curve, paired_t_test, relative_improvement)
from .fitness import FitnessConfig, weighted_attribution, write_fitness_csv
from .model import attach_regression, build_architecture, load_model, save_model, train_model
from .tensor import atomic_write, derived_rng, make_rng, read_ntf

log = logging.getLogger("wig")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3
SEED_ENV = "WIG_SEED"


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV}={raw!r} is not an integer") from None


DEFAULTS = {
    "gen-data": {"out": None, "count": 200, "height": 10, "width": 10, "channels": 1,
                 "signal_size": 4, "noise_sigma": 0.2, "classes": 2, "seed": None},
    "train": {"data": None, "out": None, "arch": "conv", "activation": "softplus",
              "epochs": 60, "lr": 2.0, "batch_size": 32, "output_mode": "softmax-prob",
              "train_count": None, "seed": None},
    "attribute": {"model": None, "input": None, "out": None, "baselines": None,
                  "baseline_data": None, "baseline_count": None, "n": 8, "method": "wg", "remove": 0,
                  "steps": 64, "rule": "trapezoid", "alpha": 0.5, "epsilon": 0.01,
                  "max_iterations": 100, "neutral": 0.0, "strict": False,
                  "class_index": None, "seed": None},
    "evaluate": {"model": None, "data": None, "out": None, "baseline_data": None,
                 "baseline_count": None, "offset": 0, "count": None, "methods": "eg,wg", "n": 8, "points": 100,
                 "steps": 64, "rule": "trapezoid", "alpha": 0.5, "epsilon": 0.01,
                 "max_iterations": 100, "neutral": 0.0, "strict": False, "seed": None,
                 "no_figures": False},
    "simulate": {"out": None, "seed": None, "worlds": 10000, "trials": 10000,
                 "m_grid": "10,50,100,500", "margin_grid": "0.05,0.1,0.2,0.4",
                 "deltas": "0.1,0.05,0.01", "sample_size_margin": 0.1, "n": 5, "d": 50,
                 "relevant_fraction": 0.2, "adversarial": False, "adversarial_worlds": 1000,
                 "no_figures": False},
    "render": {"input": None, "out": None, "png": None},
}
REQUIRED = {"gen-data": ["out"], "train": ["data", "out"], "attribute": ["model", "input", "out"],
            "evaluate": ["model", "data", "out"], "simulate": ["out"], "render": ["input", "out"]}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _flag(parser, sub, name, help, **kw):
    dest = name.replace("-", "_")
    default = DEFAULTS[sub][dest]
    suffix = "" if default is None or kw.get("action") == "store_true" else f" (default: {default})"
    parser.add_argument(f"--{name}", dest=dest, help=help + suffix, **kw)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wig", description="Fitness-weighted integrated gradients toolkit.")
    p.add_argument("--version", action="version", version=f"wig {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    subs = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def sub(name, help):
        sp = subs.add_parser(name, help=help, description=help, argument_default=argparse.SUPPRESS)
        sp.add_argument("--config", help="JSON file with option values (keys use underscores)")
        return sp

    s = sub("gen-data", "Write a synthetic image dataset with ground-truth masks.")
    _flag(s, "gen-data", "out", "output directory", metavar="DIR")
    _flag(s, "gen-data", "count", "number of images", type=int)
    _flag(s, "gen-data", "height", "image height", type=int)
    _flag(s, "gen-data", "width", "image width", type=int)
    _flag(s, "gen-data", "channels", "channels per pixel", type=int)
    _flag(s, "gen-data", "signal-size", "side of the square signal patch", type=int)
    _flag(s, "gen-data", "noise-sigma", "std of the Gaussian background", type=float)
    _flag(s, "gen-data", "classes", "number of classes (2-4)", type=int)
    _flag(s, "gen-data", "seed", f"random seed (default: ${SEED_ENV} or 0)", type=int)

    s = sub("train", "Train a small built-in model on a dataset directory.")
    _flag(s, "train", "data", "dataset directory", metavar="DIR")
    _flag(s, "train", "out", "checkpoint path (.json)")
    _flag(s, "train", "arch", "architecture", choices=["linear", "mlp", "conv"])
    _flag(s, "train", "activation", "hidden activation", choices=["softplus", "tanh", "relu"])
    _flag(s, "train", "epochs", "training epochs", type=int)
    _flag(s, "train", "lr", "SGD learning rate", type=float)
    _flag(s, "train", "batch-size", "minibatch size", type=int)
    _flag(s, "train", "output-mode", "score head", choices=["logit", "sigmoid", "softmax-prob"])
    _flag(s, "train", "train-count", "use only the first N manifest rows", type=int)
    _flag(s, "train", "seed", f"random seed (default: ${SEED_ENV} or 0)", type=int)

    def attribution_flags(s, name):
        _flag(s, name, "n", "baselines sampled per input", type=int)
        _flag(s, name, "steps", "path quadrature subintervals", type=int)
        _flag(s, name, "rule", "path quadrature rule", choices=["trapezoid", "left-riemann"])
        _flag(s, name, "alpha", "fitness score-reduction ratio", type=float)
        _flag(s, name, "epsilon", "fitness convergence threshold", type=float)
        _flag(s, name, "max-iterations", "fitness search iteration cap", type=int)
        _flag(s, name, "neutral", "replacement value for masked pixels", type=float)
        _flag(s, name, "strict", "give non-converged baselines zero weight", action="store_true")
        _flag(s, name, "seed", f"random seed (default: ${SEED_ENV} or 0)", type=int)

    s = sub("attribute", "Attribute one input with IG, EG, WG or filtered WG.")
    _flag(s, "attribute", "model", "checkpoint path")
    _flag(s, "attribute", "input", "input tensor (.ntf)")
    _flag(s, "attribute", "out", "output attribution path (.ntf); sidecar and fitness CSV are written next to it")
    _flag(s, "attribute", "baselines", "explicit baseline tensors", nargs="+")
    _flag(s, "attribute", "baseline-data", "dataset directory to sample baselines from")
    _flag(s, "attribute", "baseline-count", "sample baselines from the first N manifest rows only", type=int)
    _flag(s, "attribute", "method", "attribution method", choices=["ig", "eg", "wg", "wg-filtered"])
    _flag(s, "attribute", "remove", "baselines dropped by wg-filtered", type=int)
    _flag(s, "attribute", "class-index", "class to explain (default: predicted class)", type=int)
    attribution_flags(s, "attribute")

    s = sub("evaluate", "Deletion/overlap AUCs per sample plus a significance summary.")
    _flag(s, "evaluate", "model", "checkpoint path")
    _flag(s, "evaluate", "data", "dataset directory to explain")
    _flag(s, "evaluate", "out", "output directory", metavar="DIR")
    _flag(s, "evaluate", "baseline-data", "dataset directory baselines are drawn from (default: --data)")
    _flag(s, "evaluate", "baseline-count", "sample baselines from the first N rows of the pool only (e.g. the training split)", type=int)
    _flag(s, "evaluate", "offset", "first manifest row to evaluate", type=int)
    _flag(s, "evaluate", "count", "number of manifest rows to evaluate", type=int)
    _flag(s, "evaluate", "methods", "comma list of ig, eg, wg, wg-filtered:R; 'label=method' renames")
    _flag(s, "evaluate", "points", "curve resolution N", type=int)
    _flag(s, "evaluate", "no-figures", "skip figure rendering", action="store_true")
    attribution_flags(s, "evaluate")

    s = sub("simulate", "Monte Carlo checks of the relevance inequality and the sampling bound.")
    _flag(s, "simulate", "out", "output directory", metavar="DIR")
    _flag(s, "simulate", "seed", f"random seed (default: ${SEED_ENV} or 0)", type=int)
    _flag(s, "simulate", "worlds", "random worlds for the expected-relevance check", type=int)
    _flag(s, "simulate", "trials", "Monte Carlo trials per bound check", type=int)
    _flag(s, "simulate", "m-grid", "comma list of sample sizes m")
    _flag(s, "simulate", "margin-grid", "comma list of relevance margins")
    _flag(s, "simulate", "deltas", "comma list of confidence levels for the sample-size check")
    _flag(s, "simulate", "sample-size-margin", "margin of the world used for the sample-size check", type=float)
    _flag(s, "simulate", "n", "baselines per world", type=int)
    _flag(s, "simulate", "d", "features per world", type=int)
    _flag(s, "simulate", "relevant-fraction", "fraction of relevant features", type=float)
    _flag(s, "simulate", "adversarial", "also run worlds violating the monotonicity assumption",
          action="store_true")
    _flag(s, "simulate", "adversarial-worlds", "number of adversarial worlds", type=int)
    _flag(s, "simulate", "no-figures", "skip figure rendering", action="store_true")

    s = sub("render", "Render an attribution map as an 8-bit grayscale PGM.")
    _flag(s, "render", "input", "attribution tensor (.ntf)")
    _flag(s, "render", "out", "output image (.pgm)")
    _flag(s, "render", "png", "also write a colour-mapped PNG figure here")
    return p


def resolve_options(command: str, ns: argparse.Namespace) -> dict:
    given = {k: v for k, v in vars(ns).items() if k not in ("command", "verbose", "config")}
    opts = dict(DEFAULTS[command])
    if getattr(ns, "config", None):
        try:
            cfg = json.loads(Path(ns.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {ns.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = sorted(set(cfg) - set(opts))
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
        opts.update(cfg)
    opts.update(given)
    missing = [k for k in REQUIRED[command] if opts.get(k) in (None, "")]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join('--' + m.replace('_', '-') for m in missing)}")
    if "seed" in opts and opts["seed"] is None:
        opts["seed"] = default_seed()
    return opts


def _need(cond: bool, message: str):
    if not cond:
        raise ConfigError(message)


def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma separated list of numbers, got {text!r}") from None


def _quad(o) -> PathQuadrature:
    _need(o["steps"] >= 1, "steps must be >= 1")
    return PathQuadrature(int(o["steps"]), o["rule"])


def _fitness_cfg(o) -> FitnessConfig:
    _need(0 < o["alpha"] < 1, "alpha must lie in (0, 1)")
    _need(o["epsilon"] > 0, "epsilon must be positive")
    _need(o["max_iterations"] >= 1, "max-iterations must be >= 1")
    return FitnessConfig(alpha=float(o["alpha"]), neutral=float(o["neutral"]),
                         epsilon=float(o["epsilon"]), max_iterations=int(o["max_iterations"]),
                         strict=bool(o["strict"]))


# -- subcommands ---------------------------------------------------------------

def cmd_gen_data(o) -> int:
    _need(o["count"] >= 1, "count must be >= 1")
    _need(0 <= o["seed"] < 2**64, "seed must be a non-negative 64-bit integer")
    try:
        samples = generate_samples(o["count"], o["height"], o["width"], o["channels"],
                                   o["signal_size"], o["noise_sigma"], o["classes"], o["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    manifest = write_dataset(o["out"], samples)
    print(f"wrote {len(samples)} samples to {manifest}")
    return EXIT_OK


def cmd_train(o) -> int:
    _need(o["epochs"] >= 0, "epochs must be >= 0")
    _need(o["lr"] > 0, "lr must be positive")
    _need(o["batch_size"] >= 1, "batch-size must be >= 1")
    ds = load_dataset(o["data"], limit=o["train_count"])
    n_classes = int(ds.labels.max()) + 1
    if o["output_mode"] == "sigmoid" and n_classes == 2:
        n_outputs = 1
    else:
        n_outputs = max(n_classes, 2)
    rng = make_rng(o["seed"])
    layers = build_architecture(o["arch"], ds.images.shape[1:], n_outputs, rng,
                                activation=o["activation"])
    model, acc = train_model(layers, ds.images, ds.labels, o["epochs"], o["lr"], rng,
                             batch_size=o["batch_size"], output_mode=o["output_mode"])
    model = attach_regression(model, ds.images[0])
    save_model(model, o["out"])
    print(json.dumps({"checkpoint": str(o["out"]), "train_accuracy": acc,
                      "samples": len(ds), "arch": o["arch"]}))
    return EXIT_OK


def _predicted_class(model, x) -> int:
    return int(model.predict_batch(x[None])[0])


def _sample_indices(pool_size: int, n: int, rng, exclude: int | None = None) -> list[int]:
    candidates = np.array([i for i in range(pool_size) if i != exclude])
    if candidates.size < n:
        raise ConfigError(f"baseline pool has {candidates.size} candidates, need {n}")
    return sorted(int(i) for i in rng.choice(candidates, n, replace=False))


def cmd_attribute(o) -> int:
    model = load_model(o["model"])
    x = read_ntf(o["input"])
    out = Path(o["out"])
    c = o["class_index"] if o["class_index"] is not None else _predicted_class(model, x)
    model = model.with_class(c)
    if o["baselines"]:
        paths = list(o["baselines"])
        baselines = BaselineSet([read_ntf(p) for p in paths], ids=[Path(p).name for p in paths])
    elif o["baseline_data"]:
        _need(o["n"] >= 1, "n must be >= 1")
        ds = load_dataset(o["baseline_data"], limit=o["baseline_count"])
        idx = _sample_indices(len(ds), o["n"], make_rng(o["seed"]))
        baselines = BaselineSet([ds.images[i] for i in idx], ids=[ds.paths[i] for i in idx])
    else:
        raise UsageError("give --baselines or --baseline-data")
    quad = _quad(o)
    method = o["method"]
    if method == "ig":
        attr = integrated_gradients(model, x, baselines.baselines[0], quad, baselines.ids[0])
    elif method == "eg":
        attr = uniform_average(per_baseline_ig(model, x, baselines, quad))
    else:
        remove = o["remove"] if method == "wg-filtered" else 0
        _need(0 <= remove < len(baselines), f"remove must lie in [0, {len(baselines)})")
        wa = weighted_attribution(model, x, baselines, quad, _fitness_cfg(o), remove)
        attr = wa.attribution
        weights = np.zeros(len(baselines))
        weights[wa.kept] = wa.baselines.weights
        write_fitness_csv(out.with_name(out.stem + "_fitness.csv"), baselines.ids, wa.results, weights)
    attr.metadata["class_index"] = c
    save_attribution(out, attr)
    print(f"wrote {attr.method} attribution to {out}")
    return EXIT_OK


def parse_methods(text) -> list[tuple[str, str, int]]:
    """``"eg,wg,best=wg-filtered:2"`` -> [(label, kind, remove), ...]."""
    items = text if isinstance(text, list) else [t.strip() for t in str(text).split(",") if t.strip()]
    methods = []
    for item in items:
        label, _, spec = item.partition("=") if "=" in item else (item, "", item)
        kind, _, r = spec.partition(":")
        if kind not in ("ig", "eg", "wg", "wg-filtered"):
            raise ConfigError(f"unknown method {spec!r}")
        remove = 0
        if kind == "wg-filtered":
            try:
                remove = int(r)
            except ValueError:
                raise ConfigError(f"wg-filtered needs a removal count, e.g. wg-filtered:2 (got {spec!r})") from None
        elif r:
            raise ConfigError(f"method {kind} takes no argument")
        methods.append((label, kind, remove))
    labels = [m[0] for m in methods]
    _need(len(methods) >= 1, "at least one method is required")
    _need(len(set(labels)) == len(labels), "method labels must be unique")
    return methods


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(r.get(h)) for h in header])
    return buf.getvalue()


def summarize(per_method: dict, metric: str, lower_is_better: bool) -> list[dict]:
    """Mean, std and (vs the first method) relative improvement and paired t-test."""
    labels = list(per_method)
    ref = labels[0]
    rows = []
    for label in labels:
        vals = np.asarray(per_method[label])
        row = {"metric": metric, "method": label, "n": vals.size, "mean": float(vals.mean()),
               "std": float(vals.std(ddof=1)) if vals.size > 1 else 0.0}
        if len(labels) > 1:
            row["reference"] = ref
            if label != ref:
                ref_vals = np.asarray(per_method[ref])
                row["rel_improvement_pct"] = relative_improvement(float(ref_vals.mean()), row["mean"],
                                                                  lower_is_better)
                try:
                    t, p = paired_t_test(vals, ref_vals)
                    row.update(t_statistic=t, p_value=p, note="")
                except DegenerateError:
                    row.update(t_statistic=None, p_value=None, note="degenerate")
                except ValueError as exc:
                    row.update(t_statistic=None, p_value=None, note=str(exc))
        rows.append(row)
    return rows


RELEVANCE_COLUMNS = ("sample_id", "method", "q_eg", "q_wg_mixture", "q_wg_normalized_aggregate")


def _relevance_row(sample_id, label, maps, wa, mask) -> list:
    """Ground-truth relevance of EG and of a WG variant under both aggregation orders.

    Empty when some kept map has no positive attribution (profile undefined).
    """
    from .theory import relevance_from_attributions

    try:
        eg = relevance_from_attributions(maps, np.full(len(maps), 1.0 / len(maps)), mask)
        wg = relevance_from_attributions([maps[k] for k in wa.kept], wa.baselines.weights, mask)
    except DegenerateError:
        return []
    return [{"sample_id": sample_id, "method": label, "q_eg": eg["mixture"],
             "q_wg_mixture": wg["mixture"], "q_wg_normalized_aggregate": wg["normalized_aggregate"]}]


def cmd_evaluate(o) -> int:
    from . import plotting

    methods = parse_methods(o["methods"])
    _need(o["n"] >= 1, "n must be >= 1")
    _need(o["points"] >= 1, "points must be >= 1")
    quad, cfg = _quad(o), _fitness_cfg(o)
    for _, kind, remove in methods:
        _need(kind != "wg-filtered" or 0 <= remove < o["n"], f"wg-filtered removal must lie in [0, {o['n']})")
    model = load_model(o["model"])
    ds = load_dataset(o["data"], limit=o["count"], offset=o["offset"])
    same_pool = o["baseline_data"] in (None, o["data"])
    pool = load_dataset(o["baseline_data"] or o["data"], limit=o["baseline_count"])
    has_masks = ds.masks is not None
    per_sample, curves = [], {label: {"deletion": [], "overlap": []} for label, _, _ in methods}
    relevance = []
    skipped = 0
    for i in range(len(ds)):
        sample_id = o["offset"] + i
        x = ds.images[i]
        pred = _predicted_class(model, x)
        if pred != ds.labels[i]:
            skipped += 1
            continue
        m = model.with_class(pred)
        rng = derived_rng(o["seed"], sample_id)
        exclude = sample_id if same_pool and sample_id < len(pool) else None
        idx = _sample_indices(len(pool), o["n"], rng, exclude)
        bs = BaselineSet([pool.images[j] for j in idx], ids=[pool.paths[j] for j in idx])
        maps = per_baseline_ig(m, x, bs, quad)
        results = None
        for label, kind, remove in methods:
            if kind == "ig":
                attr = maps[0]
            elif kind == "eg":
                attr = uniform_average(maps)
            else:
                wa = weighted_attribution(m, x, bs, quad, cfg, remove, ig_maps=maps, results=results)
                results = wa.results
                attr = wa.attribution
                if has_masks:
                    relevance.extend(_relevance_row(sample_id, label, maps, wa, ds.masks[i]))
            dc = deletion_curve(m, x, attr, o["points"], cfg.neutral)
            row = {"sample_id": sample_id, "method": label, "deletion_auc": dc.auc}
            curves[label]["deletion"].append(dc.values)
            if has_masks:
                oc = overlap_curve(attr, ds.masks[i], o["points"])
                row["overlap_auc"] = oc.auc
                curves[label]["overlap"].append(oc.values)
            per_sample.append(row)
        log.info("sample %d done", sample_id)
    if not per_sample:
        raise WigError("no correctly classified samples to evaluate")
    if skipped:
        log.warning("skipped %d misclassified samples", skipped)
    out = Path(o["out"])
    header = ["sample_id", "method", "deletion_auc"] + (["overlap_auc"] if has_masks else [])
    atomic_write(out / "per_sample.csv", _csv(per_sample, header))
    labels = [label for label, _, _ in methods]
    summary = summarize({lab: [r["deletion_auc"] for r in per_sample if r["method"] == lab] for lab in labels},
                        "deletion", True)
    if has_masks:
        summary += summarize({lab: [r["overlap_auc"] for r in per_sample if r["method"] == lab]
                              for lab in labels}, "overlap", False)
    if relevance:
        atomic_write(out / "relevance.csv", _csv(relevance, list(RELEVANCE_COLUMNS)))
    cols = ["metric", "method", "n", "mean", "std"]
    if len(labels) > 1:
        cols += ["reference", "rel_improvement_pct", "t_statistic", "p_value", "note"]
    atomic_write(out / "summary.csv", _csv(summary, cols))
    fractions = np.arange(1, o["points"] + 1) / o["points"]
    curve_rows = []
    for label in labels:
        for metric, vals in curves[label].items():
            if vals:
                mean = np.mean(vals, axis=0)
                curve_rows += [{"method": label, "metric": metric, "fraction": float(f), "mean_value": float(v)}
                               for f, v in zip(fractions, mean)]
    atomic_write(out / "mean_curves.csv", _csv(curve_rows, ["method", "metric", "fraction", "mean_value"]))
    if not o["no_figures"]:
        plotting.plot_mean_curves({lab: (fractions, curves[lab]["deletion"]) for lab in labels},
                                  out / "figures" / "deletion_curves.png", "retained score")
        plotting.plot_auc_comparison({lab: [r["deletion_auc"] for r in per_sample if r["method"] == lab]
                                      for lab in labels}, out / "figures" / "deletion_auc.png", "deletion")
        if has_masks:
            plotting.plot_mean_curves({lab: (fractions, curves[lab]["overlap"]) for lab in labels},
                                      out / "figures" / "overlap_curves.png", "overlap")
            plotting.plot_auc_comparison({lab: [r["overlap_auc"] for r in per_sample if r["method"] == lab]
                                          for lab in labels}, out / "figures" / "overlap_auc.png", "overlap")
    n_eval = len(per_sample) // len(labels)
    print(f"evaluated {n_eval} samples ({skipped} misclassified skipped); summary in {out / 'summary.csv'}")
    return EXIT_OK


def cmd_simulate(o) -> int:
    from . import plotting
    from .theory import (check_sample_size, generate_world, proposition1_sweep, theorem1_grid,
                         world_with_margin)

    _need(o["worlds"] >= 1, "worlds must be >= 1")
    _need(o["trials"] >= 1, "trials must be >= 1")
    _need(o["n"] >= 2 and o["d"] >= 2, "n and d must be >= 2")
    _need(0 < o["relevant_fraction"] < 1, "relevant-fraction must lie in (0, 1)")
    m_grid = [int(v) for v in _floats(o["m_grid"])]
    margins = _floats(o["margin_grid"])
    deltas = _floats(o["deltas"])
    _need(all(m >= 1 for m in m_grid), "m values must be >= 1")
    _need(all(0 < v < 1 for v in margins + deltas), "margins and deltas must lie in (0, 1)")
    _need(0 < o["sample_size_margin"] < 1, "sample-size-margin must lie in (0, 1)")
    seed = o["seed"]
    out = Path(o["out"])

    prop1 = proposition1_sweep(o["worlds"], seed, (2, max(2, o["n"] * 2)), o["d"],
                               o["relevant_fraction"],
                               adversarial=o["adversarial_worlds"] if o["adversarial"] else 0)
    grid = theorem1_grid(m_grid, margins, o["trials"], seed, o["n"], o["d"], o["relevant_fraction"])
    ss_world = world_with_margin(o["n"], o["d"], o["sample_size_margin"], o["relevant_fraction"],
                                 derived_rng(seed, 5))
    sizes = [check_sample_size(ss_world, dlt, o["trials"], seed + 7919 * (k + 1))
             for k, dlt in enumerate(deltas)]
    degenerate = generate_world(o["n"], o["d"], o["relevant_fraction"], 0.0, derived_rng(seed, 6))
    from .theory import SamplingPlan, check_theorem1
    degenerate_rep = check_theorem1(degenerate, SamplingPlan(max(m_grid), min(o["trials"], 100)), seed)

    theorem = {"check": "theorem1", "grid": grid, "sample_size": sizes,
               "degenerate_world": degenerate_rep,
               "passed": all(r["holds"] for r in grid + sizes)}
    atomic_write(out / "proposition1.json", json.dumps(prop1, indent=1) + "\n")
    atomic_write(out / "theorem1.json", json.dumps(theorem, indent=1) + "\n")
    grid_cols = ["target_margin", "delta_x", "m", "trials", "q_wg", "q_eg", "empirical_failure_rate",
                 "hoeffding_bound", "slack", "holds", "skipped", "m_star"]
    atomic_write(out / "theorem1_grid.csv", _csv(grid, grid_cols))
    if not o["no_figures"]:
        plotting.plot_theorem1_grid(grid, out / "figures" / "theorem1_grid.png")
    ok = prop1["passed"] and theorem["passed"]
    adv = prop1["adversarial"]
    print(f"proposition1: {'pass' if prop1['passed'] else 'FAIL'} "
          f"({prop1['holds']}/{prop1['worlds']} hold, {prop1['strict']} strict)")
    if o["adversarial"]:
        print(f"adversarial worlds: {adv['assumption_violated']} assumption_violated, "
              f"{adv['violations']} inequality violations (expected)")
    print(f"theorem1: {'pass' if theorem['passed'] else 'FAIL'} "
          f"({sum(r['holds'] for r in grid)}/{len(grid)} grid cells, "
          f"{sum(r['holds'] for r in sizes)}/{len(sizes)} sample-size checks)")
    return EXIT_OK if ok else EXIT_CHECK


def pgm_bytes(values) -> bytes:
    """Min-max normalised 8-bit binary PGM; a constant map renders mid-gray."""
    v = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if v.ndim != 2:
        raise WigError(f"can only render 1-D or 2-D maps, got shape {v.shape}")
    lo, hi = float(v.min()), float(v.max())
    if hi > lo:
        pix = np.floor((v - lo) / (hi - lo) * 255.0 + 0.5).astype(np.uint8)
    else:
        pix = np.full(v.shape, 128, dtype=np.uint8)
    h, w = v.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes()


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    parts = blob.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5" or parts[2] != b"255":
        raise WigError(f"{path}: not an 8-bit binary PGM written by this tool")
    w, h = (int(t) for t in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def cmd_render(o) -> int:
    values = read_ntf(o["input"])
    atomic_write(o["out"], pgm_bytes(values))
    if o["png"]:
        from . import plotting
        plotting.plot_saliency(values, o["png"])
    print(f"wrote {o['out']}")
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "attribute": cmd_attribute,
            "evaluate": cmd_evaluate, "simulate": cmd_simulate, "render": cmd_render}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        opts = resolve_options(ns.command, ns)
        return COMMANDS[ns.command](opts)
    except UsageError as exc:
        print(f"wig: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"wig: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (WigError, OSError) as exc:
        print(f"wig: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

"""Experiment runner.

    python -m robust2dsvd {classify,cluster,reconstruct,decompose} --config run.json [--sweep] [--out DIR]

The config is one JSON object; unknown keys are rejected.  Trial ``t`` uses
seed ``seed + t``.  Results go to ``DIR`` (default: the config's
``output`` entry, else the current directory) as ``results.csv`` plus
``summary.json``; ``--sweep`` adds ``sweep.csv`` in long format.  Outputs
contain no timings, so the same config reproduces them byte for byte;
wall-clock is logged to stderr.

Exit status: 0 ok, 2 bad config, 3 bad data.
"""
from __future__ import annotations

import argparse
import csv
import io as _io
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import data as dio
from .decomp2d import MeanUpdate, SampleSet, SolverConfig, gkrsl_svd2d_fit, r1_svd2d_fit, svd2d_fit
from .evaluation import FeatureSet, density_peaks_init, kmeans, knn1_predict, reconstruction_error
from .io import save_model
from .loss import GkrslParams
from .tensor import ho_gkrsl_fit

log = logging.getLogger("robust2dsvd")

EXPERIMENTS = ("classify", "cluster", "reconstruct", "decompose")
METHODS = ("svd2d", "r1svd2d", "gkrsl2dsvd", "ho_gkrsl")


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------- config


def _section(raw, allowed, where):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    out = dict(allowed)
    out.update(raw)
    return out


DATA_KEYS = {"source": "idx", "images": None, "labels": None, "labels_from_subdirs": False}
GKRSL_KEYS = {"lam": 8.0, "p": 8.0, "sigma": None}
SOLVER_KEYS = {
    "max_iterations": 100, "tolerance": 1e-5, "mean_update": MeanUpdate.NORMALIZED.value,
    "sigma_rule": "peak", "safeguard": True,
}
OUTLIER_KEYS = {"mode": "none", "fraction": 0.05, "magnitude": 50.0, "count": 0, "low": 0.0, "high": 255.0}
SWEEP_KEYS = {"lam": [], "p": []}
BASELINE_KEYS = {"method": None, "path": None}
TOP_KEYS = {
    "experiment": None, "method": "gkrsl2dsvd", "data": None, "test_data": None, "ranks": None,
    "rank_grid": None, "gkrsl": {}, "solver": {}, "outliers": {}, "normalize": True, "trials": 1,
    "seed": 0, "train_per_class": None, "test_per_class": None, "clusters": None, "sweep": {},
    "baselines": [], "output": None,
}


@dataclass
class ExperimentConfig:
    experiment: str
    method: str
    data: dict
    test_data: dict | None
    ranks: tuple | None
    rank_grid: list
    params: GkrslParams
    solver: SolverConfig
    outliers: dict
    normalize: bool
    trials: int
    seed: int
    train_per_class: int | None
    test_per_class: int | None
    clusters: int | None
    sweep: dict
    baselines: list
    output: str | None
    raw: dict = field(default_factory=dict)


def _data_section(raw, where):
    d = _section(raw, DATA_KEYS, where)
    if d["source"] not in ("idx", "dir", "npy", "mnist_sample"):
        raise ConfigError(f"{where}.source must be idx, dir, npy or mnist_sample")
    if d["source"] != "mnist_sample" and not d["images"]:
        raise ConfigError(f"{where}.images is required")
    return d


def _ranks(value, where):
    if isinstance(value, int):
        value = [value, value]
    if not isinstance(value, list) or not value or not all(isinstance(k, int) and k >= 1 for k in value):
        raise ConfigError(f"{where} must be a positive integer or a list of them")
    return tuple(value)


def parse_config(raw: dict, experiment: str) -> ExperimentConfig:
    top = _section(raw, TOP_KEYS, "config")
    if top["experiment"] is not None and top["experiment"] != experiment:
        raise ConfigError(f"config is for {top['experiment']!r}, command is {experiment!r}")
    if top["method"] not in METHODS:
        raise ConfigError(f"method must be one of {', '.join(METHODS)}")
    if top["data"] is None:
        raise ConfigError("config.data is required")
    data = _data_section(top["data"], "data")
    test_data = None if top["test_data"] is None else _data_section(top["test_data"], "test_data")
    if not isinstance(top["trials"], int) or top["trials"] < 1:
        raise ConfigError("trials must be a positive integer")
    if not isinstance(top["seed"], int) or top["seed"] < 0:
        raise ConfigError("seed must be a nonnegative integer")
    g = _section(top["gkrsl"], GKRSL_KEYS, "gkrsl")
    s = _section(top["solver"], SOLVER_KEYS, "solver")
    o = _section(top["outliers"], OUTLIER_KEYS, "outliers")
    sw = _section(top["sweep"], SWEEP_KEYS, "sweep")
    baselines = []
    if not isinstance(top["baselines"], list):
        raise ConfigError("baselines must be a list")
    for i, b in enumerate(top["baselines"]):
        b = _section(b, BASELINE_KEYS, f"baselines[{i}]")
        if not b["method"] or not b["path"]:
            raise ConfigError(f"baselines[{i}] needs method and path")
        baselines.append(b)
    try:
        params = GkrslParams(float(g["lam"]), float(g["p"]), None if g["sigma"] is None else float(g["sigma"]))
        solver = SolverConfig(
            max_iterations=int(s["max_iterations"]), tolerance=float(s["tolerance"]),
            mean_update=s["mean_update"], sigma_rule=s["sigma_rule"], safeguard=bool(s["safeguard"]),
        )
        if s["sigma_rule"] not in ("peak", "median", "mean"):
            raise ValueError(f"unknown sigma_rule {s['sigma_rule']!r}")
        dio.OutlierConfig(mode=o["mode"], fraction=float(o["fraction"]), magnitude=float(o["magnitude"]),
                          count=int(o["count"]), low=float(o["low"]), high=float(o["high"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    ranks = None if top["ranks"] is None else _ranks(top["ranks"], "ranks")
    grid = []
    if experiment == "reconstruct":
        if top["rank_grid"] is None:
            raise ConfigError("reconstruct needs a rank_grid")
        if not isinstance(top["rank_grid"], list) or not top["rank_grid"]:
            raise ConfigError("rank grid is empty")
        grid = [_ranks(k, "rank_grid entry") for k in top["rank_grid"]]
    elif ranks is None:
        raise ConfigError("ranks is required")
    if experiment == "classify" and test_data is None and top["train_per_class"] is None:
        raise ConfigError("classify needs test_data or train_per_class")
    for key in ("train_per_class", "test_per_class", "clusters"):
        v = top[key]
        if v is not None and (not isinstance(v, int) or v < 1):
            raise ConfigError(f"{key} must be a positive integer")
    for key in ("lam", "p"):
        if not isinstance(sw[key], list) or not all(isinstance(v, (int, float)) and v > 0 for v in sw[key]):
            raise ConfigError(f"sweep.{key} must be a list of positive numbers")

    return ExperimentConfig(
        experiment=experiment, method=top["method"], data=data, test_data=test_data, ranks=ranks,
        rank_grid=grid, params=params, solver=solver, outliers=o, normalize=bool(top["normalize"]),
        trials=top["trials"], seed=top["seed"], train_per_class=top["train_per_class"],
        test_per_class=top["test_per_class"], clusters=top["clusters"], sweep=sw, baselines=baselines,
        output=top["output"], raw=raw,
    )


def load_config(path, experiment) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(raw, experiment)


# ----------------------------------------------------------------- data


def load_samples(source) -> np.ndarray | SampleSet:
    src = source["source"]
    try:
        if src == "mnist_sample":
            return dio.load_mnist_sample()
        for key in ("images", "labels"):
            if source[key] is not None and not os.path.exists(source[key]):
                raise dio.DataError(f"{source[key]}: no such file or directory")
        if src == "idx":
            return dio.load_idx(source["images"], source["labels"])
        if src == "dir":
            return dio.load_image_dir(source["images"], source["labels_from_subdirs"])
        arr = np.load(source["images"], allow_pickle=False).astype(np.float64)
        labels = None if source["labels"] is None else np.load(source["labels"], allow_pickle=False)
        if arr.ndim == 3:
            return SampleSet(arr, labels)
        if labels is not None and len(labels) != len(arr):
            raise dio.DataError("label count does not match sample count")
        return arr
    except dio.DataError:
        raise
    except (OSError, ValueError) as exc:
        raise dio.DataError(f"{source.get('images')}: {exc}") from exc


def _stack(data):
    return data.samples if isinstance(data, SampleSet) else np.asarray(data)


def _normalize(X):
    norms = np.sqrt(np.sum(X.reshape(len(X), -1) ** 2, axis=1))
    norms[norms == 0] = 1.0
    return X / norms.reshape((-1,) + (1,) * (X.ndim - 1))


def _contaminate(X, labels, cfg: ExperimentConfig, seed):
    """Scaled outliers are applied after normalization, dummy images before it."""
    o = cfg.outliers
    oc = dio.OutlierConfig(mode=o["mode"], fraction=o["fraction"], magnitude=o["magnitude"],
                           count=o["count"], low=o["low"], high=o["high"], seed=seed)
    normalize_first = oc.mode == "scaled"
    if normalize_first and cfg.normalize:
        X = _normalize(X)
    if X.ndim != 3:
        if oc.mode == "scaled":
            rng = dio.make_rng(seed)
            idx = np.sort(rng.choice(len(X), int(np.floor(oc.fraction * len(X))), replace=False))
            X = X.copy()
            X[idx] *= oc.magnitude
            return X, labels, idx
        if oc.mode == "dummy":
            rng = dio.make_rng(seed)
            dummies = rng.uniform(oc.low, oc.high, size=(oc.count,) + X.shape[1:])
            idx = np.arange(len(X), len(X) + oc.count)
            X = np.concatenate([X, dummies])
        else:
            idx = np.zeros(0, dtype=np.int64)
    else:
        c = dio.inject_outliers(SampleSet(X, labels), oc)
        X, labels, idx = c.data.samples, c.data.labels, c.outlier_indices
    if not normalize_first and cfg.normalize:
        X = _normalize(X)
    return X, labels, np.asarray(idx, dtype=np.int64)


# -------------------------------------------------------------- fitting


def fit_method(method, X, ranks, params, solver):
    X = np.asarray(X, dtype=np.float64)
    if method != "ho_gkrsl" and X.ndim != 3:
        raise ConfigError(f"method {method} needs matrix samples; use ho_gkrsl for higher-order data")
    if len(ranks) != X.ndim - 1:
        raise ConfigError(f"ranks {list(ranks)} do not match sample order {X.ndim - 1}")
    try:
        if method == "svd2d":
            return svd2d_fit(X, ranks, solver)
        if method == "r1svd2d":
            return r1_svd2d_fit(X, ranks, solver)
        if method == "gkrsl2dsvd":
            return gkrsl_svd2d_fit(X, ranks, params, solver)
        return ho_gkrsl_fit(X, ranks, params, solver)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def features(model, X):
    X = np.asarray(X, dtype=np.float64)
    cores = model.transform(X) if hasattr(model, "transform") else model.project(X)
    return cores.reshape(len(X), -1)


def reconstructions(model, X):
    if hasattr(model, "transform"):
        return model.inverse_transform(model.transform(X))
    return model.reconstruct(X)


def _trace_summary(model):
    t = model.objective_trace
    return {"initial": t[0], "final": t[-1], "iterations": model.n_iter, "converged": bool(model.converged)}


# ------------------------------------------------------------ pipelines


def _split(labels, rng, n_train, n_test):
    tr, te = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        if len(idx) < n_train + (n_test or 0) or (n_test is None and len(idx) <= n_train):
            raise dio.DataError(f"class {c} has only {len(idx)} samples")
        tr.append(idx[:n_train])
        te.append(idx[n_train:] if n_test is None else idx[n_train : n_train + n_test])
    return np.concatenate(tr), np.concatenate(te)


def classify_trial(cfg, params, data, test, t):
    seed = cfg.seed + t
    X, y = _stack(data), getattr(data, "labels", None)
    if y is None:
        raise dio.DataError("classification needs labeled data")
    if test is None:
        tr, te = _split(y, dio.make_rng(seed), cfg.train_per_class, cfg.test_per_class)
        Xtr, ytr, Xte, yte = X[tr], y[tr], X[te], y[te]
    else:
        Xte, yte = _stack(test), getattr(test, "labels", None)
        if yte is None:
            raise dio.DataError("classification needs labeled test data")
        Xtr, ytr = X, y
        if cfg.train_per_class is not None:
            tr, _ = _split(y, dio.make_rng(seed), cfg.train_per_class, 0)
            Xtr, ytr = X[tr], y[tr]
    Xtr, ytr, idx = _contaminate(Xtr, ytr, cfg, seed)
    if cfg.normalize:
        Xte = _normalize(Xte)
    model = fit_method(cfg.method, Xtr, cfg.ranks, params, cfg.solver)
    pred = knn1_predict(FeatureSet(features(model, Xtr), ytr), features(model, Xte))
    return [{"accuracy": float(np.mean(pred == yte))}], idx, model


def cluster_trial(cfg, params, data, test, t):
    seed = cfg.seed + t
    X, y = _stack(data), getattr(data, "labels", None)
    if y is None:
        raise dio.DataError("clustering needs labeled data for scoring")
    N = len(X)
    k = cfg.clusters or len(np.unique(y))
    if k > N:
        raise ConfigError(f"{k} clusters exceed the {N} samples")
    Xc, _, idx = _contaminate(X, y, cfg, seed)
    model = fit_method(cfg.method, Xc, cfg.ranks, params, cfg.solver)
    clean = np.setdiff1d(np.arange(N), idx)
    if k > len(clean):
        raise ConfigError(f"{k} clusters exceed the {len(clean)} clean samples")
    F = FeatureSet(features(model, Xc[clean]), y[clean])
    res = kmeans(F, k, density_peaks_init(F.vectors, k))
    return [{"ac": res.ac, "nmi": res.nmi}], idx, model


def reconstruct_trial(cfg, params, data, test, t):
    seed = cfg.seed + t
    X = _stack(data)
    N = len(X)
    Xc, _, idx = _contaminate(X, None, cfg, seed)
    keep = np.setdiff1d(np.arange(N), idx)
    originals = _normalize(X) if cfg.normalize else X
    rows, model = [], None
    for ranks in cfg.rank_grid:
        model = fit_method(cfg.method, Xc, ranks, params, cfg.solver)
        err = reconstruction_error(originals[keep], reconstructions(model, originals[keep]))
        rows.append({"k1": ranks[0], "k2": ranks[1] if len(ranks) > 1 else "", "reconstruction_error": err})
    return rows, idx, model


PIPELINES = {"classify": classify_trial, "cluster": cluster_trial, "reconstruct": reconstruct_trial}
METRICS = {"classify": ("accuracy",), "cluster": ("ac", "nmi"), "reconstruct": ("reconstruction_error",)}


def _mean_std(values):
    v = np.asarray(values, dtype=float)
    return float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0


def _read_baseline(path, metrics):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise dio.DataError(f"{path}: {exc}") from exc
    out = {}
    for m in metrics:
        try:
            vals = [float(r[m]) for r in rows if r.get(m, "") != ""]
        except ValueError as exc:
            raise dio.DataError(f"{path}: {exc}") from exc
        if vals:
            out[m] = vals
    if not out:
        raise dio.DataError(f"{path}: no column among {', '.join(metrics)}")
    return out


def run_experiment(cfg: ExperimentConfig, params: GkrslParams | None = None):
    """Run every trial of a classify / cluster / reconstruct config.

    Returns ``(rows, summary)``: one CSV row per trial (and per rank for
    reconstruction) and the JSON summary.
    """
    params = params or cfg.params
    data = load_samples(cfg.data)
    test = None if cfg.test_data is None else load_samples(cfg.test_data)
    trial_fn = PIPELINES[cfg.experiment]
    metrics = METRICS[cfg.experiment]
    rows, trials = [], []
    for t in range(cfg.trials):
        start = time.perf_counter()
        trial_rows, idx, model = trial_fn(cfg, params, data, test, t)
        log.info("%s trial %d finished in %.2fs", cfg.experiment, t, time.perf_counter() - start)
        for r in trial_rows:
            rows.append({"trial": t, "seed": cfg.seed + t, "method": cfg.method, **r})
        trials.append({"trial": t, "seed": cfg.seed + t, "outlier_indices": [int(i) for i in idx],
                       "objective": _trace_summary(model)})

    summary = {"experiment": cfg.experiment, "method": cfg.method, "config": cfg.raw,
               "lam": params.lam, "p": params.p, "trials": trials, "metrics": {}}
    if cfg.experiment == "reconstruct":
        curve = []
        for ranks in cfg.rank_grid:
            k2 = ranks[1] if len(ranks) > 1 else ""
            vals = [r["reconstruction_error"] for r in rows if r["k1"] == ranks[0] and r["k2"] == k2]
            mean, std = _mean_std(vals)
            curve.append({"k1": ranks[0], "k2": k2, "values": vals, "mean": mean, "std": std})
        summary["metrics"]["reconstruction_error"] = curve
    else:
        for m in metrics:
            vals = [r[m] for r in rows]
            mean, std = _mean_std(vals)
            summary["metrics"][m] = {"values": vals, "mean": mean, "std": std}
        table = [{"method": cfg.method, **{m: summary["metrics"][m]["mean"] for m in metrics},
                  **{f"{m}_std": summary["metrics"][m]["std"] for m in metrics}}]
        for b in cfg.baselines:
            vals = _read_baseline(b["path"], metrics)
            entry = {"method": b["method"]}
            for m, v in vals.items():
                entry[m], entry[f"{m}_std"] = _mean_std(v)
            table.append(entry)
        summary["table"] = table
    return rows, summary


def run_sweep(cfg: ExperimentConfig):
    lams = cfg.sweep["lam"] or [cfg.params.lam]
    ps = cfg.sweep["p"] or [cfg.params.p]
    out = []
    for lam in lams:
        for p in ps:
            rows, _ = run_experiment(cfg, GkrslParams(float(lam), float(p), cfg.params.sigma))
            for r in rows:
                for m in METRICS[cfg.experiment]:
                    out.append({"lambda": float(lam), "p": float(p), "trial": r["trial"],
                                "k1": r.get("k1", ""), "k2": r.get("k2", ""), "metric": m, "value": r[m]})
    return out


def run_decompose(cfg: ExperimentConfig, out_dir):
    data = load_samples(cfg.data)
    X = _stack(data)
    labels = getattr(data, "labels", None)
    Xc, _, idx = _contaminate(X, labels, cfg, cfg.seed)
    model = fit_method(cfg.method, Xc, cfg.ranks, cfg.params, cfg.solver)
    path = os.path.join(out_dir, "model.npz")
    try:
        save_model(path, model)
    except OSError as exc:
        raise dio.DataError(f"{path}: {exc}") from exc
    w = model.state.eigen_weights
    sidecar = {
        "experiment": "decompose", "method": cfg.method, "config": cfg.raw, "model": "model.npz",
        "objective_trace": list(model.objective_trace), "iterations": model.n_iter,
        "converged": bool(model.converged), "sigma": model.sigma, "outlier_indices": [int(i) for i in idx],
        "weights": {"min": float(w.min()), "mean": float(w.mean()), "max": float(w.max()),
                    "outlier_mean": float(w[idx].mean()) if len(idx) else None},
    }
    return model, sidecar


# ------------------------------------------------------------------ I/O


def _write_csv(path, rows):
    cols = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    buf = _io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    _write_text(path, buf.getvalue())


def _write_text(path, text):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise dio.DataError(f"{path}: {exc}") from exc


def _write_json(path, obj):
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="robust2dsvd", description=__doc__.split("\n\n")[0])
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--sweep", action="store_true", help="also run the lambda x p grid from config.sweep")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config, args.experiment)
        out_dir = args.out or cfg.output or "."
        try:
            os.makedirs(out_dir, exist_ok=True)
        except OSError as exc:
            raise dio.DataError(f"{out_dir}: {exc}") from exc
        start = time.perf_counter()
        if cfg.experiment == "decompose":
            _, sidecar = run_decompose(cfg, out_dir)
            _write_json(os.path.join(out_dir, "model.json"), sidecar)
        else:
            rows, summary = run_experiment(cfg)
            _write_csv(os.path.join(out_dir, "results.csv"), rows)
            _write_json(os.path.join(out_dir, "summary.json"), summary)
            if args.sweep:
                _write_csv(os.path.join(out_dir, "sweep.csv"), run_sweep(cfg))
        log.info("done in %.2fs", time.perf_counter() - start)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except dio.DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

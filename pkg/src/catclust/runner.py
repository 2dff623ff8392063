"""Config-driven experiment: forest tuning, three point representations,
K sweeps, per-metric K selection, accuracy at the class count and the
forest-score vs clustering-score correlations.

Config file (INI)::

    [experiment]
    representations = euclidean, mmc, rfphate
    k_min = 3
    k_max = 100
    seed = 0
    ...

    [dataset iris]
    path = ../data/toy/iris.csv
    schema = ../data/toy/iris.schema.json

Relative paths resolve against the config file's directory.
"""
from __future__ import annotations

import configparser
import csv
import json
import logging
import math
import traceback
from dataclasses import dataclass, field, fields
from itertools import product
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from scipy.spatial.distance import pdist, squareform

from . import __version__
from .dataset import (Dataset, infer_schema, load_csv, load_schema, preprocess,
                      stratified_kfold)
from .embed import Embedding, rf_phate_embed, write_embedding, write_stress
from .forest import Forest, fit_forest, grid_search_cv
from .kmeans import ClusteringResult, kmeans, sweep_k
from .metrics import (EXTERNAL, INTERNAL, METRICS, ScoreTable, classification_scores,
                      clustering_accuracy, external_scores, gap_statistic, internal_scores,
                      optimal_k, pearson)
from .mmc import MetricMatrix, build_pairs, learn_metric, transform_points

log = logging.getLogger(__name__)

REPRESENTATIONS = ("euclidean", "mmc", "rfphate")
DEFAULT_GRID = tuple(product((100, 200, 500), (None, 5, 10)))


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------ config

@dataclass(frozen=True)
class DatasetEntry:
    name: str
    path: Path
    schema: Path | None = None     # None: infer from the CSV
    label: str | None = None       # label column when inferring


@dataclass(frozen=True)
class ExperimentConfig:
    datasets: tuple[DatasetEntry, ...]
    representations: tuple[str, ...] = REPRESENTATIONS
    k_min: int = 3
    k_max: int = 100
    restarts: int = 10             # K-means at the class count
    sweep_restarts: int = 10       # K-means at every K of the sweep
    seed: int = 0
    cv_folds: int = 5
    rf_grid: tuple = DEFAULT_GRID
    dims: tuple[int, ...] = tuple(range(2, 11))
    t_max: int = 64
    eps: float = 1e-7
    subsample_cap: int = 4000
    smacof_max_iter: int = 100
    gap_references: int = 10
    mmc_max_pairs: int = 5000
    mmc_max_iter: int = 500
    out: Path | None = None

    def __post_init__(self):
        if not self.datasets:
            raise ConfigError("no datasets configured")
        names = [d.name for d in self.datasets]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate dataset names: {names}")
        if not self.representations:
            raise ConfigError("no representations configured")
        bad = [r for r in self.representations if r not in REPRESENTATIONS]
        if bad:
            raise ConfigError(f"unknown representation(s) {bad}; choose from {list(REPRESENTATIONS)}")
        if not 2 <= self.k_min <= self.k_max <= 100:
            raise ConfigError(f"k range must satisfy 2 <= k_min <= k_max <= 100, got "
                              f"{self.k_min}..{self.k_max}")
        for name in ("restarts", "sweep_restarts", "t_max", "subsample_cap",
                     "smacof_max_iter", "gap_references", "mmc_max_pairs", "mmc_max_iter"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.cv_folds < 2:
            raise ConfigError("cv_folds must be >= 2")
        if not self.rf_grid:
            raise ConfigError("empty rf grid")
        if not self.dims or min(self.dims) < 1:
            raise ConfigError(f"bad embedding dimension range {self.dims}")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"no such config file: {path}")
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        cp.read(path)
        return cls.from_parser(cp, path.parent, **overrides)

    @classmethod
    def from_parser(cls, cp: configparser.ConfigParser, base=".", **overrides):
        base = Path(base)
        kw = {}
        if cp.has_section("experiment"):
            sec = cp["experiment"]
            known = {f.name for f in fields(cls)} - {"datasets"}
            for key, raw in sec.items():
                if key not in known:
                    raise ConfigError(f"[experiment]: unknown key {key!r}")
                kw[key] = _parse_value(key, raw, base)
        datasets = []
        for section in cp.sections():
            if section == "experiment":
                continue
            kind, _, name = section.partition(" ")
            if kind != "dataset" or not name.strip():
                raise ConfigError(f"unexpected section [{section}]")
            sec = cp[section]
            unknown = set(sec) - {"path", "schema", "label"}
            if unknown:
                raise ConfigError(f"[{section}]: unknown keys {sorted(unknown)}")
            if "path" not in sec:
                raise ConfigError(f"[{section}]: missing 'path'")
            schema = sec.get("schema")
            datasets.append(DatasetEntry(
                name.strip(),
                _resolve(base, sec["path"]),
                _resolve(base, schema) if schema else None,
                sec.get("label") or None,
            ))
        kw["datasets"] = tuple(datasets)
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)

    def resolved(self) -> dict:
        """JSON-ready echo of every parameter."""
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "datasets":
                v = [{"name": d.name, "path": str(d.path),
                      "schema": None if d.schema is None else str(d.schema),
                      "label": d.label} for d in v]
            elif f.name == "rf_grid":
                v = [[n, d] for n, d in v]
            elif isinstance(v, tuple):
                v = list(v)
            elif isinstance(v, Path):
                v = str(v)
            out[f.name] = v
        return out


def _resolve(base: Path, p: str) -> Path:
    q = Path(p.strip())
    return q if q.is_absolute() else base / q


def _ints(raw):
    out = []
    for tok in raw.replace(",", " ").split():
        if "-" in tok:
            a, b = tok.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(tok))
    return tuple(out)


def _depth(tok):
    tok = tok.strip().lower()
    return None if tok in ("none", "unbounded", "") else int(tok)


def _parse_value(key, raw, base):
    raw = raw.strip()
    try:
        if key == "representations":
            return tuple(t.strip() for t in raw.split(",") if t.strip())
        if key == "dims":
            return _ints(raw)
        if key == "rf_grid":
            # "n_estimators x depth" products: "100,200,500 x none,5,10"
            sizes, _, depths = raw.partition("x")
            return tuple(product(_ints(sizes), tuple(_depth(d) for d in depths.split(","))))
        if key == "eps":
            return float(raw)
        if key == "out":
            return _resolve(base, raw)
        return int(raw)
    except ValueError as e:
        raise ConfigError(f"[experiment] {key} = {raw!r}: {e}") from None


# ------------------------------------------------------------------ results

@dataclass
class CellResult:
    """One (dataset, representation) cell."""

    dataset: str
    representation: str
    status: str = "ok"                         # "ok" or "failed"
    reason: str = ""
    n_classes: int = 0
    scores: ScoreTable = field(default_factory=ScoreTable)
    kc: dict = field(default_factory=dict)     # metric -> K_C
    inertia_argmin: int | None = None          # raw argmin before the elbow rule
    accuracy: float = math.nan                 # at K = class count
    at_class_count: dict = field(default_factory=dict)
    at_kc: dict = field(default_factory=dict)  # metric -> its value at its own K_C
    assignments: dict = field(default_factory=dict, repr=False)   # K -> labels (sweep)
    class_count_assignments: np.ndarray | None = field(default=None, repr=False)
    scatter: np.ndarray | None = field(default=None, repr=False)
    embedding: Embedding | None = field(default=None, repr=False)
    pipeline: dict = field(default_factory=dict)


@dataclass
class DatasetResult:
    name: str
    status: str = "ok"
    reason: str = ""
    n: int = 0
    p: int = 0
    n_classes: int = 0
    labels: np.ndarray | None = field(default=None, repr=False)
    class_names: tuple = ()
    rf: dict = field(default_factory=dict)
    cells: dict = field(default_factory=dict)  # representation -> CellResult


@dataclass
class RunReport:
    config: ExperimentConfig
    datasets: list[DatasetResult]
    correlations: dict = field(default_factory=dict)   # (rep, metric) -> dict

    def cell(self, dataset: str, representation: str) -> CellResult:
        for d in self.datasets:
            if d.name == dataset:
                return d.cells[representation]
        raise KeyError(dataset)

    def accuracy_table(self) -> dict:
        """``{dataset: {representation: accuracy or None}}``."""
        return {d.name: {r: (c.accuracy if c.status == "ok" else None)
                         for r, c in d.cells.items()} for d in self.datasets}

    @property
    def failures(self) -> list[tuple[str, str, str]]:
        out = []
        for d in self.datasets:
            for r, c in d.cells.items():
                if c.status != "ok":
                    out.append((d.name, r, c.reason))
        return out


# ------------------------------------------------------------------ stages

def load_dataset(entry: DatasetEntry) -> Dataset:
    schema = load_schema(entry.schema) if entry.schema is not None else \
        infer_schema(entry.path, entry.label)
    return load_csv(entry.path, schema, name=entry.name)


def preprocessing_for(rep: str) -> dict:
    """Standardization only on the Euclidean path; one-hot and zero
    imputation everywhere."""
    return {"scale_numeric": rep == "euclidean", "one_hot": True, "impute_zero": True}


def tune_forest(ds: Dataset, cfg: ExperimentConfig, n_jobs: int = 1) -> tuple[Forest, dict]:
    """Grid search with stratified CV, out-of-fold scores of the winning grid
    point (percent), then a refit on all rows."""
    folds = stratified_kfold(ds, cfg.cv_folds, cfg.seed)
    gs = grid_search_cv(ds, cfg.rf_grid, folds, seed=cfg.seed, n_jobs=n_jobs)
    n_est, depth = gs.best_params
    acc, f1 = classification_scores(ds.y, gs.oof_predictions[gs.best_params])
    forest = fit_forest(ds, n_est, depth, seed=cfg.seed, n_jobs=n_jobs)
    info = {
        "n_estimators": n_est,
        "max_depth": depth,
        "cv_weighted_f1": 100.0 * gs.cv_scores[gs.best_params],
        "accuracy": 100.0 * acc,
        "weighted_f1": 100.0 * f1,
    }
    return forest, info


def represent(rep: str, raw: Dataset, cfg: ExperimentConfig, forest: Forest | None = None):
    """Points for one representation: ``(Z, extras)``."""
    ds = preprocess(raw, **preprocessing_for(rep))
    if rep == "euclidean":
        return ds.X, {}
    if rep == "mmc":
        pairs = build_pairs(ds.y, cfg.mmc_max_pairs, cfg.seed)
        mm: MetricMatrix = learn_metric(ds.X, pairs, max_iter=cfg.mmc_max_iter)
        return transform_points(mm, ds.X), {
            "metric": mm, "iterations": len(mm.objective_trace) - 1,
            "n_similar": len(pairs.S), "n_dissimilar": len(pairs.D)}
    if rep == "rfphate":
        if forest is None:
            raise ValueError("rfphate needs a fitted forest")
        emb = rf_phate_embed(forest, ds, cfg.dims, cfg.t_max, cfg.eps, cfg.subsample_cap,
                             cfg.seed, max_iter=cfg.smacof_max_iter)
        return emb.full(), {"embedding": emb, "t": emb.t, "m": emb.m, "stress": emb.stress,
                            "embedded_rows": len(emb.Y)}
    raise ValueError(f"unknown representation {rep!r}")


def pca2(Z) -> np.ndarray:
    """First two principal coordinates (classical MDS of Euclidean distances);
    signs fixed so each axis' largest-magnitude entry is positive."""
    Z = np.asarray(Z, dtype=float)
    C = Z - Z.mean(0)
    U, s, _ = np.linalg.svd(C, full_matrices=False)
    k = min(2, U.shape[1])
    Y = U[:, :k] * s[:k]
    pivot = np.argmax(np.abs(Y), axis=0)
    Y = Y * np.where(Y[pivot, np.arange(k)] < 0, -1.0, 1.0)
    if k < 2:
        Y = np.column_stack([Y, np.zeros(len(Y))])
    return Y


def _all_scores(Z, y, res: ClusteringResult, D, cfg: ExperimentConfig) -> dict:
    gap = gap_statistic(Z, res.K, cfg.gap_references, seed=cfg.seed,
                        log_wk=math.log(max(res.inertia, 1e-300)))
    out = internal_scores(Z, res.assignments, D=D, inertia_value=res.inertia, gap=gap)
    out.update(external_scores(y, res.assignments))
    return out


def evaluate_representation(Z, y, n_classes: int, cfg: ExperimentConfig,
                            dataset: str = "", rep: str = "") -> CellResult:
    """K sweep, scores at every K, K_C per metric and the class-count clustering."""
    Z = np.asarray(Z, dtype=float)
    n = len(y)
    D = squareform(pdist(Z))
    k_max = min(cfg.k_max, n - 1)
    sweep = sweep_k(Z, cfg.k_min, k_max, cfg.sweep_restarts, cfg.seed)
    table = ScoreTable()
    assignments = {}
    for res in sweep:
        table[res.K] = _all_scores(Z, y, res, D, cfg)
        assignments[res.K] = res.assignments
    kc = {m: optimal_k(table, m) for m in METRICS}
    ks = table.ks
    inertia_argmin = ks[int(np.argmin(table.curve("inertia")))]
    at_kc = {m: table[kc[m]][m] for m in METRICS}
    best = kmeans(Z, n_classes, cfg.restarts, cfg.seed)
    at_cc = _all_scores(Z, y, best, D, cfg)
    return CellResult(
        dataset, rep, "ok", "", n_classes, table, kc, inertia_argmin,
        clustering_accuracy(y, best.assignments), at_cc, at_kc, assignments,
        best.assignments,
    )


def run_dataset(entry: DatasetEntry, cfg: ExperimentConfig) -> DatasetResult:
    """All cells of one dataset; stage failures are recorded, not raised."""
    out = DatasetResult(entry.name)

    def fail_all(reason):
        out.status, out.reason = "failed", reason
        out.cells = {r: CellResult(entry.name, r, "failed", reason) for r in cfg.representations}
        return out

    try:
        raw = load_dataset(entry)
    except Exception as e:   # noqa: BLE001 - recorded per cell
        return fail_all(f"load: {type(e).__name__}: {e}")
    out.n, out.n_classes = raw.n, raw.n_classes
    out.labels, out.class_names = raw.y, raw.class_names
    if raw.n_classes < 2:
        return fail_all("load: fewer than two classes")
    try:
        ds_rf = preprocess(raw, **preprocessing_for("rfphate"))
        out.p = ds_rf.p
        forest, out.rf = tune_forest(ds_rf, cfg)
    except Exception as e:   # noqa: BLE001
        log.debug(traceback.format_exc())
        return fail_all(f"forest: {type(e).__name__}: {e}")
    log.info("%s: forest %s", entry.name, out.rf)

    for rep in cfg.representations:
        try:
            Z, extra = represent(rep, raw, cfg, forest)
        except Exception as e:   # noqa: BLE001
            log.debug(traceback.format_exc())
            out.cells[rep] = CellResult(entry.name, rep, "failed",
                                        f"represent: {type(e).__name__}: {e}")
            continue
        try:
            cell = evaluate_representation(Z, raw.y, raw.n_classes, cfg, entry.name, rep)
        except Exception as e:   # noqa: BLE001
            log.debug(traceback.format_exc())
            out.cells[rep] = CellResult(entry.name, rep, "failed",
                                        f"evaluate: {type(e).__name__}: {e}")
            continue
        emb = extra.pop("embedding", None)
        extra.pop("metric", None)
        cell.embedding = emb
        cell.scatter = emb.full()[:, :2] if emb is not None and emb.m >= 2 else pca2(Z)
        cell.pipeline = {**preprocessing_for(rep), **extra}
        out.cells[rep] = cell
        log.info("%s/%s: accuracy at K=%d is %.4f", entry.name, rep, raw.n_classes, cell.accuracy)
    return out


def correlations(datasets: list[DatasetResult], representations) -> dict:
    """Pearson r of forest weighted F1 against each metric across datasets.

    Primary: metric value at K = class count. Secondary: value at the
    metric's own K_C. NaN when fewer than two datasets or a constant column.
    """
    out = {}
    for rep in representations:
        ok = [d for d in datasets if d.status == "ok" and d.cells[rep].status == "ok"]
        f1 = np.array([d.rf["weighted_f1"] for d in ok])
        for m in METRICS:
            cc = np.array([d.cells[rep].at_class_count[m] for d in ok], dtype=float)
            kc = np.array([d.cells[rep].at_kc[m] for d in ok], dtype=float)
            out[(rep, m)] = {
                "r": _safe_pearson(f1, cc),
                "std": float(np.std(cc)) if len(cc) else math.nan,
                "r_at_kc": _safe_pearson(f1, kc),
                "n_datasets": len(ok),
            }
    return out


def _safe_pearson(x, y) -> float:
    if len(x) < 2 or not np.all(np.isfinite(y)):
        return math.nan
    try:
        return pearson(x, y)
    except ValueError:
        return math.nan


def run_experiment(cfg: ExperimentConfig, n_jobs: int = 1) -> RunReport:
    """Every configured dataset (in parallel over ``n_jobs``), then the
    cross-dataset correlations."""
    if n_jobs == 1:
        results = [run_dataset(e, cfg) for e in cfg.datasets]
    else:
        results = list(Parallel(n_jobs=n_jobs)(delayed(run_dataset)(e, cfg) for e in cfg.datasets))
    return RunReport(cfg, results, correlations(results, cfg.representations))


# ------------------------------------------------------------------ export

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(v)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        wr.writerows([_fmt(v) for v in r] for r in rows)


def export_report(r: RunReport, out_dir) -> list[Path]:
    """Write every artifact family under ``out_dir``; returns the paths written.

    Layout::

        rf_scores.csv             dataset, n, p, n_classes, best grid point, scores (%)
        kc_by_metric.csv          dataset, representation, metric, k_c, n_classes, abs_diff
        clustering_accuracy.csv   dataset x representation accuracy at K = class count
        correlations.csv          metric x representation: r, std, r_at_kc, n_datasets
        scores.csv                long format: dataset, representation, K, metric, value
        class_count_scores.csv    every metric at K = class count
        failures.csv              dataset, representation, reason
        scatter/<d>__<r>.csv      id, x, y, label
        assignments/<d>__<r>.csv  id, K, cluster (whole sweep)
        embedding/<d>.csv         id, dim_1..dim_m, label
        embedding/<d>_stress.csv  dim, stress
        manifest.json             resolved config, seeds, per-cell pipeline
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for sub in ("scatter", "assignments", "embedding"):
            (out / sub).mkdir(exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {out}: {e}") from e
    reps = r.config.representations
    written = []

    def w(name, header, rows):
        p = out / name
        _write_csv(p, header, rows)
        written.append(p)

    w("rf_scores.csv",
      ["dataset", "n", "p", "n_classes", "n_estimators", "max_depth", "cv_weighted_f1",
       "accuracy", "weighted_f1", "status"],
      [[d.name, d.n, d.p, d.n_classes, d.rf.get("n_estimators"),
        "none" if d.rf and d.rf.get("max_depth") is None else d.rf.get("max_depth"),
        d.rf.get("cv_weighted_f1"), d.rf.get("accuracy"), d.rf.get("weighted_f1"),
        "ok" if d.rf else "failed"] for d in r.datasets])

    rows = []
    for d in r.datasets:
        for rep in reps:
            c = d.cells[rep]
            if c.status != "ok":
                continue
            for m in METRICS:
                rows.append([d.name, rep, m, c.kc[m], c.n_classes, abs(c.kc[m] - c.n_classes)])
            rows.append([d.name, rep, "inertia_argmin", c.inertia_argmin, c.n_classes,
                         abs(c.inertia_argmin - c.n_classes)])
    w("kc_by_metric.csv", ["dataset", "representation", "metric", "k_c", "n_classes",
                           "abs_diff"], rows)

    acc = r.accuracy_table()
    w("clustering_accuracy.csv", ["dataset", *reps],
      [[name, *[acc[name][rep] for rep in reps]] for name in acc])

    header = ["metric"]
    for rep in reps:
        header += [f"{rep}_r", f"{rep}_std", f"{rep}_r_at_kc"]
    header.append("n_datasets")
    rows = []
    for m in METRICS:
        row = [m]
        for rep in reps:
            c = r.correlations.get((rep, m), {})
            row += [c.get("r"), c.get("std"), c.get("r_at_kc")]
        row.append(max((r.correlations.get((rep, m), {}).get("n_datasets", 0) for rep in reps),
                       default=0))
        rows.append(row)
    w("correlations.csv", header, rows)

    rows, cc_rows = [], []
    for d in r.datasets:
        for rep in reps:
            c = d.cells[rep]
            if c.status != "ok":
                continue
            for K in c.scores.ks:
                for m in METRICS:
                    rows.append([d.name, rep, K, m, c.scores[K][m]])
            for m in METRICS:
                cc_rows.append([d.name, rep, c.n_classes, m, c.at_class_count[m]])
    w("scores.csv", ["dataset", "representation", "K", "metric", "value"], rows)
    w("class_count_scores.csv", ["dataset", "representation", "K", "metric", "value"], cc_rows)
    w("failures.csv", ["dataset", "representation", "reason"], r.failures)

    for d in r.datasets:
        names = d.class_names
        for rep in reps:
            c = d.cells[rep]
            if c.status != "ok":
                continue
            tag = f"{d.name}__{rep}"
            w(f"scatter/{tag}.csv", ["id", "x", "y", "label"],
              [[i, c.scatter[i, 0], c.scatter[i, 1], names[d.labels[i]]]
               for i in range(len(c.scatter))])
            w(f"assignments/{tag}.csv", ["id", "K", "cluster"],
              [[i, K, int(a[i])] for K in sorted(c.assignments)
               for a in (c.assignments[K],) for i in range(len(a))])
            if c.embedding is not None:
                p = out / "embedding" / f"{d.name}.csv"
                write_embedding(c.embedding, p, d.labels, names)
                q = out / "embedding" / f"{d.name}_stress.csv"
                write_stress(c.embedding, q)
                written += [p, q]

    manifest = {
        "package": "catclust",
        "version": __version__,
        "config": r.config.resolved(),
        "seeds": {
            "master": r.config.seed,
            "cv_folds": "seed (stratified dealing)",
            "forest_grid_fold_k": "seed + k",
            "forest_refit": "seed",
            "mmc_pairs": "seed",
            "embedding_subsample": "seed",
            "kmeans_class_count": "seed",
            "kmeans_sweep_K": "SeedSequence([seed, K])",
            "gap_references_K": "SeedSequence([seed, K])",
        },
        "datasets": [
            {"name": d.name, "status": d.status, "reason": d.reason, "n": d.n, "p": d.p,
             "n_classes": d.n_classes, "forest": d.rf,
             "cells": {rep: {"status": c.status, "reason": c.reason,
                             "pipeline": _jsonable(c.pipeline)}
                       for rep, c in d.cells.items()}}
            for d in r.datasets
        ],
    }
    p = out / "manifest.json"
    with open(p, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(p)
    return written


def _jsonable(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, (np.integer,)):
            v = int(v)
        elif isinstance(v, (np.floating,)):
            v = float(v)
        out[k] = v
    return out


# ------------------------------------------------------------------ summary

def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        lines = [r for r in csv.reader(fh) if r]
    return lines[0], lines[1:]


def summarize(run_dir) -> str:
    """Plain-text digest of an exported run directory."""
    d = Path(run_dir)
    need = ["rf_scores.csv", "clustering_accuracy.csv", "kc_by_metric.csv", "correlations.csv"]
    missing = [n for n in need if not (d / n).exists()]
    if missing:
        raise FileNotFoundError(f"{d}: not a run directory (missing {missing})")
    lines = []

    head, rows = _read_csv(d / "rf_scores.csv")
    lines.append("Forest scores (out-of-fold, %)")
    lines.append(f"  {'dataset':<24}{'accuracy':>10}{'weighted F1':>13}  best grid point")
    for row in rows:
        rec = dict(zip(head, row))
        if rec["status"] != "ok":
            lines.append(f"  {rec['dataset']:<24}{'failed':>10}")
            continue
        lines.append(f"  {rec['dataset']:<24}{float(rec['accuracy']):>10.1f}"
                     f"{float(rec['weighted_f1']):>13.1f}  "
                     f"{rec['n_estimators']} trees, depth {rec['max_depth']}")

    head, rows = _read_csv(d / "clustering_accuracy.csv")
    reps = head[1:]
    lines.append("")
    lines.append("Clustering accuracy at K = class count")
    lines.append("  " + f"{'dataset':<24}" + "".join(f"{r:>12}" for r in reps))
    for row in rows:
        cells = [f"{float(v):>12.3f}" if v else f"{'failed':>12}" for v in row[1:]]
        lines.append(f"  {row[0]:<24}" + "".join(cells))

    head, rows = _read_csv(d / "kc_by_metric.csv")
    lines.append("")
    lines.append("K_C vs class count (exact match / within 2, over datasets)")
    tally = {}
    for row in rows:
        rec = dict(zip(head, row))
        key = (rec["metric"], rec["representation"])
        t = tally.setdefault(key, [0, 0, 0])
        diff = int(rec["abs_diff"])
        t[0] += diff == 0
        t[1] += diff <= 2
        t[2] += 1
    lines.append("  " + f"{'metric':<24}" + "".join(f"{r:>14}" for r in reps))
    for m in (*METRICS, "inertia_argmin"):
        cells = []
        for rep in reps:
            t = tally.get((m, rep))
            cells.append(f"{f'{t[0]}/{t[1]}/{t[2]}':>14}" if t else f"{'-':>14}")
        lines.append(f"  {m:<24}" + "".join(cells))

    head, rows = _read_csv(d / "correlations.csv")
    lines.append("")
    lines.append("Pearson r of forest weighted F1 vs metric at K = class count (metric std)")
    lines.append("  " + f"{'metric':<24}" + "".join(f"{r:>20}" for r in reps))
    for row in rows:
        rec = dict(zip(head, row))
        cells = []
        for rep in reps:
            rv, sv = float(rec[f"{rep}_r"]), float(rec[f"{rep}_std"])
            cells.append(f"{f'{rv:.2f} ({sv:.3g})':>20}")
        lines.append(f"  {rec['metric']:<24}" + "".join(cells))

    if (d / "failures.csv").exists():
        head, rows = _read_csv(d / "failures.csv")
        if rows:
            lines.append("")
            lines.append(f"{len(rows)} failed cells:")
            for row in rows:
                lines.append(f"  {row[0]} / {row[1]}: {row[2]}")
    return "\n".join(lines)


__all__ = [
    "REPRESENTATIONS", "ConfigError", "DatasetEntry", "ExperimentConfig", "CellResult",
    "DatasetResult", "RunReport", "load_dataset", "preprocessing_for", "tune_forest",
    "represent", "evaluate_representation", "run_dataset", "run_experiment", "correlations",
    "export_report", "summarize", "pca2", "INTERNAL", "EXTERNAL",
]

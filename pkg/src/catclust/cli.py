"""Command-line entry point.

Exit codes: 0 success, 1 invalid input (bad flags, config, data or schema),
2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .dataset import SchemaError, preprocess
from .embed import write_embedding, write_stress
from .kmeans import kmeans
from .metrics import METRICS, clustering_accuracy, external_scores, gap_statistic, internal_scores
from .runner import (REPRESENTATIONS, ConfigError, DatasetEntry, ExperimentConfig, export_report,
                     load_dataset, preprocessing_for, represent, run_experiment, summarize,
                     tune_forest)

log = logging.getLogger("catclust")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p):
    p.add_argument("--seed", type=int, default=None, help="master seed (default: 0 or config)")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def _data_args(p):
    p.add_argument("data", type=Path, help="CSV file with a header row")
    p.add_argument("--schema", type=Path, default=None,
                   help="schema JSON (default: <data>.schema.json next to the CSV, else inferred)")
    p.add_argument("--label", default=None, help="label column when inferring the schema")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="catclust", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run a configured experiment and export the report")
    p.add_argument("config", type=Path)
    _common(p)

    p = sub.add_parser("cluster", help="K-means on one representation of a dataset")
    _data_args(p)
    p.add_argument("--rep", choices=REPRESENTATIONS, default="euclidean")
    p.add_argument("--k", type=int, default=None, help="clusters (default: class count)")
    p.add_argument("--restarts", type=int, default=10)
    _common(p)

    p = sub.add_parser("embed", help="forest diffusion embedding of a dataset")
    _data_args(p)
    _common(p)

    p = sub.add_parser("evaluate", help="score an assignments file against a dataset")
    _data_args(p)
    p.add_argument("assignments", type=Path, help="CSV with columns id,cluster")
    p.add_argument("--rep", choices=REPRESENTATIONS, default="euclidean",
                   help="points used for the internal metrics")
    p.add_argument("--gap-references", type=int, default=10)
    _common(p)

    p = sub.add_parser("report", help="summarize an exported run directory")
    p.add_argument("run_dir", type=Path)
    _common(p)
    return ap


def _entry(args) -> DatasetEntry:
    schema = args.schema
    if schema is None:
        guess = args.data.with_suffix(".schema.json")
        schema = guess if guess.exists() else None
    return DatasetEntry(args.data.stem, args.data, schema, args.label)


def _single_config(args, entry) -> ExperimentConfig:
    return ExperimentConfig(datasets=(entry,), seed=args.seed or 0)


def _points(args, rep):
    entry = _entry(args)
    raw = load_dataset(entry)
    cfg = _single_config(args, entry)
    forest = None
    if rep == "rfphate":
        forest, _ = tune_forest(preprocess(raw, **preprocessing_for(rep)), cfg, args.jobs)
    Z, extra = represent(rep, raw, cfg, forest)
    return raw, cfg, Z, extra


def _read_assignments(path: Path, n: int) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "cluster" not in rows[0]:
        raise ValueError(f"{path}: expected a header with a 'cluster' column")
    if "id" in rows[0]:
        ids = np.array([int(r["id"]) for r in rows])
        if sorted(ids.tolist()) != list(range(n)):
            raise ValueError(f"{path}: ids must cover 0..{n - 1} exactly once")
    else:
        ids = np.arange(len(rows))
    if len(rows) != n:
        raise ValueError(f"{path}: {len(rows)} assignments for {n} rows")
    out = np.empty(n, dtype=np.int64)
    out[ids] = [int(r["cluster"]) for r in rows]
    return out


def cmd_run(args) -> int:
    cfg = ExperimentConfig.from_file(args.config, seed=args.seed, out=args.out)
    out = cfg.out if cfg.out is not None else Path("runs") / args.config.stem
    report = run_experiment(cfg, n_jobs=args.jobs)
    export_report(report, out)
    print(summarize(out))
    print(f"\nartifacts written to {out}")
    failed = report.failures
    total = sum(len(d.cells) for d in report.datasets)
    if failed and len(failed) == total:
        print("every cell failed", file=sys.stderr)
        return 2
    return 0


def cmd_cluster(args) -> int:
    raw, cfg, Z, _ = _points(args, args.rep)
    K = raw.n_classes if args.k is None else args.k
    res = kmeans(Z, K, args.restarts, cfg.seed)
    out = args.out if args.out is not None else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{raw.name}_{args.rep}_k{K}.csv"
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["id", "cluster"])
        wr.writerows([i, int(c)] for i, c in enumerate(res.assignments))
    acc = clustering_accuracy(raw.y, res.assignments)
    print(f"{raw.name} {args.rep} K={K}: clustering accuracy {acc:.4f}, inertia {res.inertia:.6g}")
    print(f"assignments written to {path}")
    return 0


def cmd_embed(args) -> int:
    raw, _, _, extra = _points(args, "rfphate")
    emb = extra["embedding"]
    out = args.out if args.out is not None else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    p, q = out / f"{raw.name}_embedding.csv", out / f"{raw.name}_stress.csv"
    write_embedding(emb, p, raw.y, raw.class_names)
    write_stress(emb, q)
    print(f"{raw.name}: t={emb.t}, m*={emb.m}, stress={emb.stress:.6g}")
    print(f"embedding written to {p}, stress curve to {q}")
    return 0


def cmd_evaluate(args) -> int:
    raw, cfg, Z, _ = _points(args, args.rep)
    assign = _read_assignments(args.assignments, raw.n)
    K = len(np.unique(assign))
    scores = {}
    if K >= 2:
        gap = gap_statistic(Z, K, args.gap_references, seed=cfg.seed)
        scores.update(internal_scores(Z, assign, gap=gap))
    scores.update(external_scores(raw.y, assign))
    print(f"{raw.name}: {raw.n} rows, {raw.n_classes} classes, {K} clusters, "
          f"internal metrics on the {args.rep} representation")
    for m in METRICS:
        if m in scores:
            print(f"  {m:<22}{scores[m]:.6g}")
    return 0


def cmd_report(args) -> int:
    print(summarize(args.run_dir))
    return 0


COMMANDS = {"run": cmd_run, "cluster": cmd_cluster, "embed": cmd_embed,
            "evaluate": cmd_evaluate, "report": cmd_report}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.cmd](args)
    except (ConfigError, SchemaError, FileNotFoundError, ValueError) as e:
        print(f"catclust {args.cmd}: {e}", file=sys.stderr)
        return 1
    except Exception as e:   # noqa: BLE001 - any other failure is a runtime error
        print(f"catclust {args.cmd}: runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        if args.verbose:
            raise
        return 2


if __name__ == "__main__":
    sys.exit(main())

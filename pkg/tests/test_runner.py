import configparser
import csv
import json
import math
from dataclasses import replace

import numpy as np
import pytest

from catclust.metrics import METRICS
from catclust.runner import (ConfigError, DatasetEntry, ExperimentConfig, correlations,
                             evaluate_representation, export_report, pca2, preprocessing_for,
                             run_experiment, summarize)

from .conftest import CONFIGS, TOY

METRIC_FILES = ("rf_scores.csv", "kc_by_metric.csv", "clustering_accuracy.csv",
                "correlations.csv", "scores.csv", "class_count_scores.csv", "failures.csv")

SMALL = """
[experiment]
representations = euclidean, mmc, rfphate
k_min = 2
k_max = 6
restarts = 3
sweep_restarts = 2
seed = 3
cv_folds = 3
rf_grid = 20, 40 x none, 3
dims = 2-4
t_max = 16
gap_references = 2
mmc_max_pairs = 500
mmc_max_iter = 40

[dataset iris]
path = {toy}/iris.csv
schema = {toy}/iris.schema.json

[dataset wine]
path = {toy}/wine.csv
schema = {toy}/wine.schema.json
"""


def small_config(tmp_path, extra="", **over):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL.format(toy=TOY) + extra)
    return ExperimentConfig.from_file(p, **over)


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    cfg = small_config(tmp)
    report = run_experiment(cfg)
    out = tmp / "out"
    export_report(report, out)
    return cfg, report, out


def read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- config

def test_parse_all_value_kinds(tmp_path):
    cfg = small_config(tmp_path)
    assert cfg.representations == ("euclidean", "mmc", "rfphate")
    assert cfg.rf_grid == ((20, None), (20, 3), (40, None), (40, 3))
    assert cfg.dims == (2, 3, 4)
    assert [d.name for d in cfg.datasets] == ["iris", "wine"]
    assert cfg.datasets[0].path == TOY / "iris.csv"
    assert cfg.eps == 1e-7 and cfg.seed == 3


def test_relative_paths_and_overrides(tmp_path):
    (tmp_path / "c.cfg").write_text("[dataset a]\npath = data/a.csv\n")
    cfg = ExperimentConfig.from_file(tmp_path / "c.cfg", seed=9, out=tmp_path / "o")
    assert cfg.datasets[0].path == tmp_path / "data" / "a.csv"
    assert cfg.datasets[0].schema is None
    assert cfg.seed == 9 and cfg.out == tmp_path / "o"


def test_shipped_toy_config_parses():
    cfg = ExperimentConfig.from_file(CONFIGS / "toy.cfg")
    assert len(cfg.datasets) == 10
    assert cfg.k_min == 3 and cfg.k_max == 100


@pytest.mark.parametrize("text, match", [
    ("[experiment]\nrepresentations = euclidean, cosine\n[dataset a]\npath = a.csv\n",
     "unknown representation"),
    ("[experiment]\nk_min = 1\n[dataset a]\npath = a.csv\n", "k range"),
    ("[experiment]\nk_max = 101\n[dataset a]\npath = a.csv\n", "k range"),
    ("[experiment]\nk_min = 9\nk_max = 5\n[dataset a]\npath = a.csv\n", "k range"),
    ("[experiment]\nbogus = 1\n[dataset a]\npath = a.csv\n", "unknown key"),
    ("[experiment]\nseed = x\n[dataset a]\npath = a.csv\n", "seed"),
    ("[experiment]\n", "no datasets"),
    ("[dataset a]\nschema = s.json\n", "missing 'path'"),
    ("[other]\nx = 1\n", "unexpected section"),
    ("[dataset a]\npath = a.csv\n[dataset a ]\npath = b.csv\n", "duplicate"),
])
def test_config_errors(tmp_path, text, match):
    p = tmp_path / "bad.cfg"
    p.write_text(text)
    with pytest.raises(ConfigError, match=match):
        ExperimentConfig.from_file(p)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(tmp_path / "nope.cfg")


def test_unknown_representation_fails_before_work():
    with pytest.raises(ConfigError):
        ExperimentConfig((DatasetEntry("x", TOY / "missing.csv"),), representations=("pca",))


def test_resolved_is_json_ready(tmp_path):
    cfg = small_config(tmp_path)
    echo = json.loads(json.dumps(cfg.resolved()))
    assert echo["rf_grid"][0] == [20, None]
    assert echo["datasets"][1]["name"] == "wine"


def test_preprocessing_contract():
    assert preprocessing_for("euclidean")["scale_numeric"] is True
    for rep in ("mmc", "rfphate"):
        assert preprocessing_for(rep)["scale_numeric"] is False
        assert preprocessing_for(rep)["one_hot"] is True


# ---------------------------------------------------------------- run + export

def test_every_cell_present(small_run):
    cfg, report, _ = small_run
    for d in report.datasets:
        assert d.status == "ok"
        assert set(d.cells) == set(cfg.representations)
        for c in d.cells.values():
            assert c.status == "ok"
            assert set(c.kc) == set(METRICS)
            assert c.scores.ks == list(range(2, 7))
            assert 0 <= c.accuracy <= 1
    assert report.failures == []


def test_artifact_families(small_run):
    _, report, out = small_run
    for name in METRIC_FILES + ("manifest.json",):
        assert (out / name).exists(), name
    for d in report.datasets:
        for rep in ("euclidean", "mmc", "rfphate"):
            rows = read(out / "scatter" / f"{d.name}__{rep}.csv")
            assert len(rows) == d.n
            assert set(rows[0]) == {"id", "x", "y", "label"}
        assert (out / "embedding" / f"{d.name}.csv").exists()


def test_kc_file_has_distance_to_class_count(small_run):
    _, _, out = small_run
    rows = read(out / "kc_by_metric.csv")
    assert {r["metric"] for r in rows} == set(METRICS) | {"inertia_argmin"}
    for r in rows:
        assert int(r["abs_diff"]) == abs(int(r["k_c"]) - int(r["n_classes"]))


def test_accuracy_file_matches_report(small_run):
    _, report, out = small_run
    rows = {r["dataset"]: r for r in read(out / "clustering_accuracy.csv")}
    for d in report.datasets:
        for rep, c in d.cells.items():
            assert float(rows[d.name][rep]) == c.accuracy


def test_manifest_records_pipeline(small_run):
    cfg, _, out = small_run
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["seed"] == cfg.seed
    for d in man["datasets"]:
        cells = d["cells"]
        assert cells["euclidean"]["pipeline"]["scale_numeric"] is True
        assert cells["mmc"]["pipeline"]["scale_numeric"] is False
        assert cells["rfphate"]["pipeline"]["scale_numeric"] is False
        assert all(c["pipeline"]["one_hot"] for c in cells.values())


def test_correlations_with_two_datasets(small_run):
    _, report, out = small_run
    rows = read(out / "correlations.csv")
    assert [r["metric"] for r in rows] == list(METRICS)
    for r in rows:
        assert r["n_datasets"] == "2"
        # two points always correlate perfectly unless a column is constant
        for rep in ("euclidean", "mmc", "rfphate"):
            v = float(r[f"{rep}_r"])
            assert math.isnan(v) or abs(abs(v) - 1.0) < 1e-12


def test_rerun_is_byte_identical(small_run, tmp_path):
    cfg, _, out = small_run
    other = tmp_path / "again"
    export_report(run_experiment(cfg), other)
    for name in METRIC_FILES + ("manifest.json",):
        assert (out / name).read_bytes() == (other / name).read_bytes(), name


def test_summarize(small_run, tmp_path):
    _, _, out = small_run
    text = summarize(out)
    assert "iris" in text and "Clustering accuracy" in text
    with pytest.raises(FileNotFoundError):
        summarize(tmp_path)


def test_failure_isolation(tmp_path):
    extra = f"\n[dataset ghost]\npath = {tmp_path}/ghost.csv\n"
    cfg = small_config(tmp_path, extra, representations=("euclidean",))
    cfg = replace(cfg, datasets=cfg.datasets[:1] + cfg.datasets[2:])
    report = run_experiment(cfg)
    assert report.cell("iris", "euclidean").status == "ok"
    ghost = report.cell("ghost", "euclidean")
    assert ghost.status == "failed" and ghost.reason.startswith("load:")
    out = tmp_path / "out"
    export_report(report, out)
    assert read(out / "failures.csv")[0]["dataset"] == "ghost"
    assert read(out / "rf_scores.csv")[1]["status"] == "failed"


def test_stage_failure_is_per_cell(monkeypatch, tmp_path):
    import catclust.runner as runner

    real = runner.represent

    def flaky(rep, *a, **k):
        if rep == "mmc":
            raise RuntimeError("solver exploded")
        return real(rep, *a, **k)

    monkeypatch.setattr(runner, "represent", flaky)
    cfg = small_config(tmp_path)
    cfg = replace(cfg, datasets=cfg.datasets[:1])
    report = run_experiment(cfg)
    assert report.cell("iris", "mmc").status == "failed"
    assert "solver exploded" in report.cell("iris", "mmc").reason
    assert report.cell("iris", "rfphate").status == "ok"


# ---------------------------------------------------------------- helpers

def test_evaluate_representation_on_blobs(tmp_path):
    rng = np.random.default_rng(0)
    Z = np.concatenate([rng.normal(c, 0.1, (20, 2)) for c in ((0, 0), (5, 0), (0, 5))])
    y = np.repeat([0, 1, 2], 20)
    cfg = small_config(tmp_path)
    cell = evaluate_representation(Z, y, 3, cfg)
    assert cell.accuracy == 1.0
    assert cell.kc["fowlkes_mallows"] == 3 and cell.kc["silhouette"] == 3
    assert cell.inertia_argmin == 6


def test_pca2():
    rng = np.random.default_rng(1)
    Z = rng.normal(size=(30, 5)) * [5, 3, 1, 1, 1]
    Y = pca2(Z)
    assert Y.shape == (30, 2)
    assert abs(Y.mean(0)).max() < 1e-12
    assert Y[:, 0].var() >= Y[:, 1].var()
    assert pca2(Z[:, :1]).shape == (30, 2)
    assert correlations([], ("euclidean",))[("euclidean", "rand")]["n_datasets"] == 0


def test_config_parser_entry_point():
    cp = configparser.ConfigParser()
    cp.read_string("[dataset a]\npath = /x/a.csv\nlabel = y\n")
    cfg = ExperimentConfig.from_parser(cp)
    assert cfg.datasets[0].label == "y"

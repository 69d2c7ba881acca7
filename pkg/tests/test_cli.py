"""End-to-end CLI pipeline on a miniature configuration, plus exit codes."""

import json

import numpy as np
import pytest

from sevcon.cli import EXIT_CONFIG, EXIT_MISSING, EXIT_OK, main

SMALL_INI = """\
[experiment]
seed = 5

[data]
n_healthy = 24
n_unlabeled = 40
n_labeled_train = 20
n_test_per_biomarker = 8
n_multilabel_test = 16

[gradcon]
epochs = 1
heldout_count = 4

[labeling]
n_bins = 8
report_bins = 4,8,10
extreme_report_k = 2

[contrastive]
epochs = 1

[probe]
epochs = 5

[baselines]
classifier_epochs = 1
odin_temperature = 1.0
odin_epsilon = 0.0
"""


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "small.ini"
    cfg_path.write_text(SMALL_INI)
    run = root / "run"

    def cli(*args):
        return main(["--run-dir", str(run), *args])

    assert cli("--config", str(cfg_path), "gen-data") == EXIT_OK
    assert cli("train-gradcon") == EXIT_OK
    for scorer in ("severity", "msp", "odin", "mahalanobis"):
        assert cli("score", "--scorer", scorer) == EXIT_OK
    for bins in (4, 8, 10):
        assert cli("make-labels", "--bins", str(bins)) == EXIT_OK
        assert cli("pretrain", "--mode", "severity", "--bins", str(bins)) == EXIT_OK
    assert cli("pretrain", "--mode", "simclr") == EXIT_OK
    assert cli("pretrain", "--mode", "random") == EXIT_OK
    for tag in ("severity_b8", "simclr", "random"):
        assert cli("probe", "--task", "bio_a", "--tag", tag) == EXIT_OK
        assert cli("probe", "--task", "multilabel", "--tag", tag) == EXIT_OK
        assert cli("evaluate", "--tag", tag) == EXIT_OK
    for tag in ("severity_b4", "severity_b10"):
        assert cli("probe", "--task", "multilabel", "--tag", tag) == EXIT_OK
        assert cli("evaluate", "--tag", tag) == EXIT_OK
    assert cli("ablate", "--bins", "8") == EXIT_OK
    assert cli("report") == EXIT_OK
    return run, cli


def test_artifacts_exist(small_run):
    run, _ = small_run
    for rel in ["config.ini", "data/healthy/manifest.json",
                "gradcon/autoencoder.npz", "gradcon/reference.npz",
                "gradcon/training_log.csv", "scores/severity.csv",
                "labels/severity_bins8.csv", "pretrain/backbone_severity_b8.npz",
                "pretrain/backbone_simclr.npz", "pretrain/backbone_random.npz",
                "probe/head_severity_b8_multilabel.npz",
                "probe/result_severity_b8.json", "report/ablation.csv",
                "report/table1.csv", "report/report.json",
                "report/extreme_bins.pgm", "report/extremes.json"]:
        assert (run / rel).exists(), rel


def test_result_json_structure(small_run):
    run, _ = small_run
    result = json.loads((run / "probe" / "result_severity_b8.json").read_text())
    assert "bio_a" in result["per_biomarker"]
    assert set(result["per_biomarker"]["bio_a"]) == {"accuracy", "f1"}
    assert len(result["per_label_auc"]) == 5
    assert np.isfinite(result["mean_auc"])


def test_score_csvs_have_provenance_and_odin_matches_msp(small_run):
    run, _ = small_run
    msp = (run / "scores" / "msp.csv").read_text().splitlines()
    odin = (run / "scores" / "odin.csv").read_text().splitlines()
    assert msp[0].startswith("# config_hash=")
    # at T=1, eps=0 the two scorers are the same function
    assert [l.split(",")[-1] for l in msp[2:]] == [l.split(",")[-1] for l in odin[2:]]


def test_ablation_has_one_row_per_scorer(small_run):
    run, _ = small_run
    lines = [l for l in (run / "report" / "ablation.csv").read_text().splitlines()
             if l and not l.startswith("#")]
    rows = [l.split(",") for l in lines[1:]]
    assert [r[0] for r in rows] == ["severity", "msp", "odin", "mahalanobis"]
    by_scorer = {r[0]: r[2] for r in rows}
    assert by_scorer["odin"] == by_scorer["msp"]  # identical scores -> identical row


def test_report_covers_three_bin_counts(small_run):
    run, _ = small_run
    table = (run / "report" / "table1.csv").read_text()
    methods = [l.split(",")[0] for l in table.splitlines()
               if l and not l.startswith(("#", "method"))]
    assert {"severity_b4", "severity_b8", "severity_b10"} <= set(methods)
    assert {"simclr", "random"} <= set(methods)


def test_rerun_stage_is_deterministic(small_run):
    run, cli = small_run
    before = (run / "scores" / "severity.csv").read_bytes()
    assert cli("score", "--scorer", "severity") == EXIT_OK
    assert (run / "scores" / "severity.csv").read_bytes() == before


def test_exit_codes(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[gradcon]\nepochs = many\n")
    fresh = tmp_path / "fresh"
    assert main(["--run-dir", str(fresh), "--config", str(bad), "gen-data"]) == EXIT_CONFIG

    empty = tmp_path / "empty"
    cfg = tmp_path / "small.ini"
    cfg.write_text(SMALL_INI)
    # upstream artifacts missing
    assert main(["--run-dir", str(empty), "--config", str(cfg),
                 "train-gradcon"]) == EXIT_MISSING
    assert main(["--run-dir", str(empty), "score"]) == EXIT_MISSING
    assert main(["--run-dir", str(empty), "probe", "--task", "bio_a",
                 "--tag", "simclr"]) == EXIT_MISSING
    assert main(["--run-dir", str(empty), "report"]) == EXIT_MISSING


def test_config_hash_mismatch_is_config_error(small_run, tmp_path):
    run, _ = small_run
    changed = tmp_path / "changed.ini"
    changed.write_text(SMALL_INI.replace("seed = 5", "seed = 6"))
    assert main(["--run-dir", str(run), "--config", str(changed),
                 "score"]) == EXIT_CONFIG


def test_make_labels_bad_bins_is_config_error(small_run):
    _, cli = small_run
    assert cli("make-labels", "--bins", "0") == EXIT_CONFIG
    assert cli("make-labels", "--bins", "100000") == EXIT_CONFIG


def test_bootstraps_default_config(tmp_path, capsys):
    run = tmp_path / "boot"
    # a fresh run dir with no --config gets the default config written
    rc = main(["--run-dir", str(run), "probe", "--task", "bio_a", "--tag", "x"])
    assert rc == EXIT_MISSING
    assert (run / "config.ini").exists()

"""Config parsing, experiment reports, comparisons, CLI commands."""

import json
import math

import numpy as np
import pytest

from asymreplay.cli import EXIT_CONFIG, EXIT_OK, main
from asymreplay.report import (ComparisonError, ConfigError, ExperimentConfig,
                               compare, load_report, parse_config,
                               run_experiment)
from asymreplay.stream import load_dataset

SMALL = {
    "input_dim": 4, "num_classes": 4, "samples_per_class": 20,
    "noise_sigma": 0.3, "classes_per_task": 2, "batch_size": 5,
    "rehearsal_batch_size": 5, "eval_every": 4, "buffer_capacity": 8,
    "hidden_sizes": [8, 4], "seeds": [0, 1],
}


def small_cfg(**kw):
    d = dict(SMALL)
    d.update(kw)
    return parse_config(overrides=d)


# config parsing -------------------------------------------------------

def test_parse_config_file_round_trip(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"method": "er-aml", "gamma": 2.0,
                                "hidden_sizes": [16, 8], "seeds": [3, 4]}))
    cfg = parse_config(str(path))
    assert cfg.method == "er-aml" and cfg.gamma == 2.0
    assert cfg.hidden_sizes == (16, 8) and cfg.seeds == (3, 4)
    # untouched keys keep their defaults
    assert cfg.lr == 0.05 and cfg.buffer_capacity == 20


def test_overrides_win_over_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"lr": 0.5, "method": "er"}))
    cfg = parse_config(str(path), {"lr": 0.01})
    assert cfg.lr == 0.01 and cfg.method == "er"


def test_unknown_key_rejected_by_name():
    with pytest.raises(ConfigError, match="learning_rate"):
        parse_config(overrides={"learning_rate": 0.1})


def test_type_mismatch_rejected_by_name():
    with pytest.raises(ConfigError, match="buffer_capacity"):
        parse_config(overrides={"buffer_capacity": "big"})
    with pytest.raises(ConfigError, match="hidden_sizes"):
        parse_config(overrides={"hidden_sizes": [8, 0]})
    with pytest.raises(ConfigError, match="seeds"):
        parse_config(overrides={"seeds": [1, True]})


def test_invalid_enum_values_rejected():
    with pytest.raises((ConfigError, ValueError)):
        parse_config(overrides={"method": "sgd"})
    with pytest.raises((ConfigError, ValueError)):
        parse_config(overrides={"stream_mode": "fuzzy"})


def test_missing_config_file_rejected(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(str(tmp_path / "nope.json"))


def test_malformed_json_rejected(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        parse_config(str(path))


def test_empty_seeds_rejected():
    with pytest.raises(ConfigError):
        parse_config(overrides={"seeds": []})


def test_config_to_trainer_and_stream():
    cfg = small_cfg(method="er-aml", gamma=1.5)
    tcfg = cfg.trainer_config(seed=7)
    assert tcfg.seed == 7 and tcfg.loss.gamma == 1.5
    scfg = cfg.stream_config(seed=7)
    assert scfg.num_classes == 4 and scfg.seed == 7


# experiments ----------------------------------------------------------

@pytest.fixture(scope="module")
def small_report(tmp_path_factory):
    out = tmp_path_factory.mktemp("rep")
    report = run_experiment(small_cfg(), out_dir=str(out), now="T0")
    return report, out


def test_report_schema_and_aggregates(small_report):
    report, _ = small_report
    assert report["schema_version"] == 1
    assert report["timestamp"] == "T0"
    assert len(report["seeds"]) == 2
    for key in ("final_accuracy", "aaa", "forgetting", "train_flops"):
        assert set(report["aggregates"][key]) == {"mean", "stderr"}


def test_aggregates_recomputable_from_per_seed(small_report):
    """Means and standard errors in the report reproduce from the stored
    per-seed values to within 1e-10."""
    report, _ = small_report
    for key in ("final_accuracy", "aaa", "train_flops"):
        vals = [e[key] for e in report["seeds"] if e["error"] is None]
        agg = report["aggregates"][key]
        assert agg["mean"] == pytest.approx(np.mean(vals), abs=1e-10)
        want_se = (np.std(vals, ddof=1) / math.sqrt(len(vals))
                   if len(vals) > 1 else 0.0)
        assert agg["stderr"] == pytest.approx(want_se, abs=1e-10)


def test_report_files_written(small_report):
    report, out = small_report
    assert (out / "report.json").exists()
    loaded = load_report(str(out / "report.json"))
    assert loaded == json.loads(json.dumps(report))  # JSON round trip
    aa = (out / "aa_trace.tsv").read_text().splitlines()
    assert aa[0] == "step\tseed0\tseed1"
    assert len(aa) - 1 == len(report["seeds"][0]["eval_steps"])
    assert (out / "drift_trace.tsv").exists()
    matrix = (out / "accuracy_matrix.tsv").read_text().splitlines()
    assert matrix[0] == "seed\tstep\ttask0\ttask1"
    meta = json.loads((out / "stream_metadata.json").read_text())
    assert meta["mode"] == "split"


def test_report_byte_identical_with_fixed_timestamp(tmp_path):
    a = run_experiment(small_cfg(), out_dir=str(tmp_path / "a"), now="T0")
    b = run_experiment(small_cfg(), out_dir=str(tmp_path / "b"), now="T0")
    assert ((tmp_path / "a" / "report.json").read_bytes()
            == (tmp_path / "b" / "report.json").read_bytes())
    assert a == b


def test_load_report_rejects_wrong_schema(tmp_path):
    path = tmp_path / "r.json"
    path.write_text(json.dumps({"schema_version": 99}))
    with pytest.raises(ValueError):
        load_report(str(path))


def test_experiment_from_dataset_file(tmp_path):
    ds_path = tmp_path / "ds.bin"
    assert main(["gen-dataset", "--input-dim", "4", "--num-classes", "4",
                 "--samples-per-class", "20", "--noise-sigma", "0.3",
                 "--out", str(ds_path)]) == EXIT_OK
    ds = load_dataset(str(ds_path))
    assert ds.num_classes == 4
    cfg = small_cfg(dataset_path=str(ds_path))
    report = run_experiment(cfg, now="T0")
    assert report["seeds"][0]["error"] is None


# compare --------------------------------------------------------------

def test_compare_stars_and_rows(small_report):
    report, _ = small_report
    other = run_experiment(small_cfg(method="er"), now="T0")
    table, rows = compare([report, other])
    assert {r["method"] for r in rows} == {"er-ace", "er"}
    assert any(r["aaa_best"] for r in rows)
    assert "er-ace" in table and "*" in table


def test_compare_refuses_different_streams(small_report):
    report, _ = small_report
    other = run_experiment(small_cfg(num_classes=2), now="T0")
    with pytest.raises(ComparisonError, match="num_classes"):
        compare([report, other])


def test_compare_needs_two_reports(small_report):
    report, _ = small_report
    with pytest.raises(ComparisonError):
        compare([report])


# CLI ------------------------------------------------------------------

def cli_small_args():
    return ["--input-dim", "4", "--num-classes", "4",
            "--samples-per-class", "20", "--noise-sigma", "0.3",
            "--classes-per-task", "2", "--batch-size", "5",
            "--rehearsal-batch-size", "5", "--eval-every", "4",
            "--buffer-capacity", "8", "--hidden-sizes", "8,4",
            "--seeds", "0", "--timestamp", "T0"]


def test_cli_run_writes_report(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["run", *cli_small_args(), "--out", str(out)])
    assert code == EXIT_OK
    printed = capsys.readouterr().out
    assert "final_acc=" in printed
    assert (out / "report.json").exists()


def test_cli_run_config_file_plus_flag_override(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    payload = dict(SMALL)
    payload["seeds"] = [0]
    cfg_path.write_text(json.dumps(payload))
    out = tmp_path / "o"
    code = main(["run", "--config", str(cfg_path), "--method", "er",
                 "--timestamp", "T0", "--out", str(out)])
    assert code == EXIT_OK
    report = load_report(str(out / "report.json"))
    assert report["config"]["method"] == "er"
    assert report["config"]["eval_every"] == 4


def test_cli_exit_code_on_bad_config(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.json")]) \
        == EXIT_CONFIG
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"nonsense_key": 1}))
    assert main(["run", "--config", str(cfg)]) == EXIT_CONFIG
    assert "nonsense_key" in capsys.readouterr().err


def test_cli_sweep_and_compare(tmp_path, capsys):
    out = tmp_path / "sweep"
    code = main(["sweep", *cli_small_args(), "--methods", "er,er-ace",
                 "--buffer-capacities", "8", "--workers", "2",
                 "--out", str(out)])
    assert code == EXIT_OK
    summary = json.loads((out / "sweep_summary.json").read_text())
    assert [r["method"] for r in summary] == ["er", "er-ace"]
    capsys.readouterr()
    cmp_out = tmp_path / "cmp.json"
    code = main(["compare", str(out / "er-M8" / "report.json"),
                 str(out / "er-ace-M8" / "report.json"),
                 "--out", str(cmp_out)])
    assert code == EXIT_OK
    table = capsys.readouterr().out
    assert "er-ace" in table
    rows = json.loads(cmp_out.read_text())
    assert len(rows) == 2


def test_cli_compare_rejects_mismatched_streams(tmp_path, capsys):
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert main(["run", *cli_small_args(), "--out", str(a)]) == EXIT_OK
    args_b = cli_small_args()
    args_b[args_b.index("--input-dim") + 1] = "6"
    assert main(["run", *args_b, "--out", str(b)]) == EXIT_OK
    code = main(["compare", str(a / "report.json"), str(b / "report.json")])
    assert code == EXIT_CONFIG
    assert "different streams" in capsys.readouterr().err

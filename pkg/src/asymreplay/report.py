"""Experiment configs, multi-seed experiment reports, and comparisons.

A config is a flat key/value mapping (JSON on disk) that covers the
dataset, the stream, and the trainer; flags or override dicts win over
file values, and unknown keys are rejected by name.  Reports are JSON
with a versioned schema plus plain delimited plot-data files, so any
external plotter can redraw the figures.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import metrics as M
from .losses import LossConfig, Method, NegativePolicy
from .stream import (Dataset, StreamConfig, StreamMode, SyntheticDatasetSpec,
                     load_dataset, make_stream, make_synthetic)
from .trainer import RunAbort, TrainerConfig, run

REPORT_SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Raised for unknown keys, type mismatches, or missing fields."""


class ComparisonError(ValueError):
    """Raised when reports are not comparable (different streams)."""


@dataclass(frozen=True)
class ExperimentConfig:
    # dataset: either a file path or a synthetic spec
    dataset_path: Optional[str] = None
    input_dim: int = 16
    num_classes: int = 10
    samples_per_class: int = 1000
    noise_sigma: float = 0.5
    mean_radius: float = 1.0
    val_fraction: float = 0.05
    test_fraction: float = 0.25
    dataset_seed: int = 0
    # stream
    classes_per_task: int = 2
    batch_size: int = 10
    stream_mode: str = "split"
    target_unique_labels: Optional[float] = 2.0
    variance_scale: Optional[float] = None
    # method / loss
    method: str = "er-ace"
    gamma: float = 1.0
    tau: float = 0.1
    negative_policy: str = "incoming-only"
    triplet_margin: float = 0.2
    # trainer
    lr: float = 0.05
    rehearsal_batch_size: int = 10
    eval_every: int = 10
    buffer_capacity: int = 20
    hidden_sizes: tuple = (128, 128, 64)
    head_tau: Optional[float] = None
    # seeds
    seeds: tuple = (0,)

    def __post_init__(self):
        Method(self.method)
        NegativePolicy(self.negative_policy)
        StreamMode(self.stream_mode)
        if not self.seeds:
            raise ConfigError("seeds must not be empty")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        d["seeds"] = list(self.seeds)
        return d

    def dataset(self) -> Dataset:
        if self.dataset_path is not None:
            return load_dataset(self.dataset_path)
        spec = SyntheticDatasetSpec(
            input_dim=self.input_dim, num_classes=self.num_classes,
            samples_per_class=self.samples_per_class,
            noise_sigma=self.noise_sigma, mean_radius=self.mean_radius,
            val_fraction=self.val_fraction, test_fraction=self.test_fraction)
        return make_synthetic(spec, self.dataset_seed)

    def stream_config(self, seed: int) -> StreamConfig:
        return StreamConfig(
            num_classes=self.num_classes,
            classes_per_task=self.classes_per_task,
            samples_per_class=self.samples_per_class,
            batch_size=self.batch_size,
            mode=StreamMode(self.stream_mode), seed=seed,
            target_unique_labels=self.target_unique_labels,
            variance_scale=self.variance_scale)

    def trainer_config(self, seed: int) -> TrainerConfig:
        loss = LossConfig(method=Method(self.method), gamma=self.gamma,
                          tau=self.tau,
                          negative_policy=NegativePolicy(self.negative_policy),
                          triplet_margin=self.triplet_margin)
        return TrainerConfig(loss=loss, lr=self.lr,
                             rehearsal_batch_size=self.rehearsal_batch_size,
                             eval_every=self.eval_every,
                             buffer_capacity=self.buffer_capacity,
                             hidden_sizes=tuple(self.hidden_sizes),
                             head_tau=self.head_tau, seed=seed)


_FIELD_TYPES = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_INT_FIELDS = {"input_dim", "num_classes", "samples_per_class", "dataset_seed",
               "classes_per_task", "batch_size", "rehearsal_batch_size",
               "eval_every", "buffer_capacity"}
_FLOAT_FIELDS = {"noise_sigma", "mean_radius", "val_fraction", "test_fraction",
                 "gamma", "tau", "triplet_margin", "lr"}
_OPT_FLOAT_FIELDS = {"target_unique_labels", "variance_scale", "head_tau"}
_STR_FIELDS = {"dataset_path", "stream_mode", "method", "negative_policy"}


def _coerce(key, value):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key: {key!r}")
    if key in _INT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {key!r} must be an integer, "
                              f"got {value!r}")
        return value
    if key in _FLOAT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {key!r} must be a number, "
                              f"got {value!r}")
        return float(value)
    if key in _OPT_FLOAT_FIELDS:
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {key!r} must be a number or null, "
                              f"got {value!r}")
        return float(value)
    if key in _STR_FIELDS:
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"config key {key!r} must be a string, "
                              f"got {value!r}")
        return value
    if key == "hidden_sizes":
        if (not isinstance(value, (list, tuple)) or not value
                or not all(isinstance(v, int) and v >= 1 for v in value)):
            raise ConfigError("config key 'hidden_sizes' must be a nonempty "
                              "list of positive integers")
        return tuple(value)
    if key == "seeds":
        if (not isinstance(value, (list, tuple))
                or not all(isinstance(v, int) and not isinstance(v, bool)
                           for v in value)):
            raise ConfigError("config key 'seeds' must be a list of integers")
        return tuple(value)
    raise ConfigError(f"unknown config key: {key!r}")


def parse_config(path: Optional[str] = None,
                 overrides: Optional[dict] = None) -> ExperimentConfig:
    """Build a config from an optional JSON file plus overrides.

    Override values win over file values.  Unknown keys and type
    mismatches are rejected with the offending key named.
    """
    merged: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        merged.update(raw)
    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})
    kwargs = {k: _coerce(k, v) for k, v in merged.items()}
    try:
        return ExperimentConfig(**kwargs)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _stderr(values) -> float:
    values = [v for v in values if v is not None and math.isfinite(v)]
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1) / math.sqrt(len(values)))


def _mean(values) -> float:
    values = [v for v in values if v is not None and math.isfinite(v)]
    return float(np.mean(values)) if values else float("nan")


_AGGREGATE_KEYS = ("final_accuracy", "aaa", "forgetting", "train_flops",
                   "eval_flops", "mean_memory_bytes")


def run_experiment(cfg: ExperimentConfig, out_dir: Optional[str] = None,
                   now: Optional[str] = None) -> dict:
    """Run every seed, aggregate, and (optionally) write report files.

    ``now`` injects the report timestamp; leaving it None stamps wall-clock
    time, which breaks byte-identical reproduction of the report file.
    An aborted seed is recorded with its diagnostic and the rest continue.
    """
    if now is None:
        import datetime
        now = datetime.datetime.now(datetime.timezone.utc).isoformat()
    dataset = cfg.dataset()
    per_seed = []
    stream_meta = None
    for seed in cfg.seeds:
        entry: dict = {"seed": seed, "error": None}
        try:
            result = run(dataset, cfg.stream_config(seed), cfg.trainer_config(seed))
        except RunAbort as exc:
            entry["error"] = str(exc)
            per_seed.append(entry)
            continue
        if stream_meta is None:
            stream = make_stream(dataset, dataclasses.replace(
                cfg.stream_config(seed), seed=seed))
            stream_meta = stream.metadata()
        log = result.log
        mat, tasks = log.accuracy_matrix()
        entry.update({
            "final_accuracy": result.final_accuracy,
            "aaa": result.aaa,
            "forgetting": _none_if_nan(result.forgetting),
            "eval_steps": list(log.eval_steps),
            "aa_trace": [float(v) for v in log.aa_trace],
            "current_task_accuracy": _nan_to_none(log.current_task_accuracy),
            "final_task_accuracy": {str(t): v for t, v in
                                    sorted(result.final_task_accuracy.items())},
            "accuracy_matrix": [_nan_to_none(row) for row in mat.tolist()],
            "tasks": [int(t) for t in tasks],
            "drift_trace": _nan_to_none(log.drift_trace),
            "grad_norm_trace": list(log.grad_norm_trace),
            "skipped_anchors_total": int(sum(log.skipped_anchor_trace)),
            "extra_forwards_total": int(sum(log.extra_forward_trace)),
            "train_flops": result.ledger.train_flops,
            "eval_flops": result.ledger.eval_flops,
            "mean_memory_bytes": result.ledger.mean_memory_bytes,
        })
        per_seed.append(entry)
    aggregates = {}
    for key in _AGGREGATE_KEYS:
        vals = [e.get(key) for e in per_seed if e["error"] is None]
        aggregates[key] = {"mean": _mean(vals), "stderr": _stderr(vals)}
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "library_version": __version__,
        "timestamp": now,
        "config": cfg.to_dict(),
        "stream_metadata": stream_meta,
        "seeds": per_seed,
        "aggregates": aggregates,
    }
    if out_dir is not None:
        write_report_files(report, out_dir)
    return report


def _nan_to_none(values):
    return [None if (v is None or not math.isfinite(v)) else float(v)
            for v in values]


def _none_if_nan(v):
    return None if v is None or not math.isfinite(v) else float(v)


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=1) + "\n"


def write_report_files(report: dict, out_dir: str):
    """report.json plus delimited plot data: anytime-accuracy trace, drift
    trace, and the per-task accuracy matrix, one seed per column block."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        fh.write(report_json(report))
    ok = [e for e in report["seeds"] if e["error"] is None]

    def tsv(name, header, rows):
        with open(os.path.join(out_dir, name), "w") as fh:
            fh.write("\t".join(header) + "\n")
            for row in rows:
                fh.write("\t".join("" if v is None else repr(v) for v in row)
                         + "\n")

    if ok:
        steps = ok[0]["eval_steps"]
        tsv("aa_trace.tsv",
            ["step"] + [f"seed{e['seed']}" for e in ok],
            [[steps[i]] + [e["aa_trace"][i] for e in ok]
             for i in range(len(steps))])
        n_steps = len(ok[0]["drift_trace"])
        tsv("drift_trace.tsv",
            ["step"] + [f"seed{e['seed']}" for e in ok],
            [[i] + [e["drift_trace"][i] for e in ok] for i in range(n_steps)])
        tasks = ok[0]["tasks"]
        rows = []
        for e in ok:
            for i, step in enumerate(e["eval_steps"]):
                rows.append([e["seed"], step] + e["accuracy_matrix"][i])
        tsv("accuracy_matrix.tsv",
            ["seed", "step"] + [f"task{t}" for t in tasks], rows)
    if report.get("stream_metadata") is not None:
        with open(os.path.join(out_dir, "stream_metadata.json"), "w") as fh:
            fh.write(json.dumps(report["stream_metadata"], sort_keys=True,
                                indent=1) + "\n")


def load_report(path: str) -> dict:
    with open(path) as fh:
        report = json.load(fh)
    version = report.get("schema_version")
    if version != REPORT_SCHEMA_VERSION:
        raise ValueError(f"unsupported report schema version {version}")
    return report


_STREAM_KEYS = ("dataset_path", "input_dim", "num_classes", "samples_per_class",
                "noise_sigma", "mean_radius", "dataset_seed",
                "classes_per_task", "batch_size", "stream_mode")


def compare(reports: Sequence[dict]):
    """Method-by-metric comparison of ≥2 reports over one stream.

    Returns (text_table, machine_rows).  Accuracy cells within one
    standard error of the best are starred; FLOPs and memory are
    informational.  Reports whose stream configs differ are refused.
    """
    if len(reports) < 2:
        raise ComparisonError("need at least two reports to compare")
    base = reports[0]["config"]
    for rep in reports[1:]:
        diffs = [k for k in _STREAM_KEYS if rep["config"][k] != base[k]]
        if diffs:
            raise ComparisonError(
                "reports use different streams (keys differ: "
                + ", ".join(diffs) + ")")
    rows = []
    for rep in reports:
        agg = rep["aggregates"]
        rows.append({
            "method": rep["config"]["method"],
            "buffer_capacity": rep["config"]["buffer_capacity"],
            "aaa": agg["aaa"]["mean"], "aaa_stderr": agg["aaa"]["stderr"],
            "final_accuracy": agg["final_accuracy"]["mean"],
            "final_accuracy_stderr": agg["final_accuracy"]["stderr"],
            "train_flops": agg["train_flops"]["mean"],
            "mean_memory_bytes": agg["mean_memory_bytes"]["mean"],
        })
    for key in ("aaa", "final_accuracy"):
        best = max(r[key] for r in rows)
        best_err = max(r[f"{key}_stderr"] for r in rows if r[key] == best)
        for r in rows:
            r[f"{key}_best"] = bool(r[key] + r[f"{key}_stderr"] >= best - best_err)
    header = f"{'method':<16} {'M':>5} {'AAA':>12} {'final acc':>12} " \
             f"{'train FLOPs':>14} {'mem bytes':>12}"
    lines = [header, "-" * len(header)]
    for r in rows:
        aaa = f"{r['aaa']:.4f}" + ("*" if r["aaa_best"] else " ")
        fin = f"{r['final_accuracy']:.4f}" + ("*" if r["final_accuracy_best"] else " ")
        lines.append(f"{r['method']:<16} {r['buffer_capacity']:>5} {aaa:>12} "
                     f"{fin:>12} {r['train_flops']:>14.3e} "
                     f"{r['mean_memory_bytes']:>12.1f}")
    return "\n".join(lines) + "\n", rows

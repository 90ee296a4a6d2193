"""Command-line front door: run experiments, sweep method/buffer grids,
compare reports, and generate dataset files.

Exit codes: 0 success, 1 configuration error, 2 run failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys

from .report import (ComparisonError, ConfigError, compare, load_report,
                     parse_config, run_experiment)
from .stream import SyntheticDatasetSpec, make_synthetic, save_dataset

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUN = 2


def _int_list(text: str):
    try:
        return [int(v) for v in text.split(",") if v != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, "
                                         f"got {text!r}")


def _add_config_flags(parser: argparse.ArgumentParser):
    """One flag per config key; unset flags defer to the config file."""
    g = parser.add_argument_group("config overrides")
    g.add_argument("--config", help="JSON config file")
    g.add_argument("--dataset-path")
    for name in ("input-dim", "num-classes", "samples-per-class",
                 "dataset-seed", "classes-per-task", "batch-size",
                 "rehearsal-batch-size", "eval-every", "buffer-capacity"):
        g.add_argument(f"--{name}", type=int)
    for name in ("noise-sigma", "mean-radius", "val-fraction", "test-fraction",
                 "gamma", "tau", "triplet-margin", "lr",
                 "target-unique-labels", "variance-scale", "head-tau"):
        g.add_argument(f"--{name}", type=float)
    g.add_argument("--stream-mode", choices=["split", "blurry"])
    g.add_argument("--method", choices=["er", "er-ace", "er-aml",
                                        "er-aml-triplet", "ssil-nodistill"])
    g.add_argument("--negative-policy", choices=["incoming-only", "all-classes"])
    g.add_argument("--hidden-sizes", type=_int_list,
                   help="comma-separated layer widths")
    g.add_argument("--seeds", type=_int_list, help="comma-separated seeds")


def _overrides(args) -> dict:
    keys = ("dataset_path", "input_dim", "num_classes", "samples_per_class",
            "dataset_seed", "classes_per_task", "batch_size",
            "rehearsal_batch_size", "eval_every", "buffer_capacity",
            "noise_sigma", "mean_radius", "val_fraction", "test_fraction",
            "gamma", "tau", "triplet_margin", "lr", "target_unique_labels",
            "variance_scale", "head_tau", "stream_mode", "method",
            "negative_policy", "hidden_sizes", "seeds")
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


def _cmd_run(args) -> int:
    cfg = parse_config(args.config, _overrides(args))
    try:
        report = run_experiment(cfg, out_dir=args.out, now=args.timestamp)
    except OSError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN
    failed = [e for e in report["seeds"] if e["error"] is not None]
    for e in failed:
        print(f"seed {e['seed']} aborted: {e['error']}", file=sys.stderr)
    if len(failed) == len(report["seeds"]):
        print("all seeds failed", file=sys.stderr)
        return EXIT_RUN
    agg = report["aggregates"]
    print(f"method={cfg.method} M={cfg.buffer_capacity} "
          f"seeds={len(cfg.seeds)} "
          f"final_acc={agg['final_accuracy']['mean']:.4f}"
          f"±{agg['final_accuracy']['stderr']:.4f} "
          f"AAA={agg['aaa']['mean']:.4f}±{agg['aaa']['stderr']:.4f}")
    if args.out:
        print(f"report written to {os.path.join(args.out, 'report.json')}")
    return EXIT_OK


def _sweep_worker(payload):
    cfg_dict, out_dir, timestamp = payload
    cfg = parse_config(overrides=cfg_dict)
    report = run_experiment(cfg, out_dir=out_dir, now=timestamp)
    return cfg.method, cfg.buffer_capacity, out_dir, report["aggregates"]


def _cmd_sweep(args) -> int:
    base = parse_config(args.config, _overrides(args))
    methods = args.methods or [base.method]
    capacities = args.buffer_capacities or [base.buffer_capacity]
    jobs = []
    for method in methods:
        for cap in capacities:
            d = base.to_dict()
            d["method"] = method
            d["buffer_capacity"] = cap
            parse_config(overrides=d)  # validate before scheduling
            out_dir = os.path.join(args.out, f"{method}-M{cap}")
            jobs.append((d, out_dir, args.timestamp))
    failures = 0
    rows = []
    with concurrent.futures.ProcessPoolExecutor(max_workers=args.workers) as ex:
        futures = {ex.submit(_sweep_worker, job): job for job in jobs}
        for fut in concurrent.futures.as_completed(futures):
            d, out_dir, _ = futures[fut]
            try:
                method, cap, out_dir, agg = fut.result()
            except Exception as exc:
                print(f"sweep job {out_dir} failed: {exc}", file=sys.stderr)
                failures += 1
                continue
            rows.append({"method": method, "buffer_capacity": cap,
                         "report_dir": out_dir,
                         "final_accuracy": agg["final_accuracy"]["mean"],
                         "final_accuracy_stderr": agg["final_accuracy"]["stderr"],
                         "aaa": agg["aaa"]["mean"]})
    rows.sort(key=lambda r: (r["method"], r["buffer_capacity"]))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "sweep_summary.json"), "w") as fh:
        fh.write(json.dumps(rows, sort_keys=True, indent=1) + "\n")
    for r in rows:
        print(f"{r['method']:<16} M={r['buffer_capacity']:<5} "
              f"final_acc={r['final_accuracy']:.4f}"
              f"±{r['final_accuracy_stderr']:.4f} AAA={r['aaa']:.4f}")
    return EXIT_RUN if failures else EXIT_OK


def _cmd_compare(args) -> int:
    reports = [load_report(p) for p in args.reports]
    table, rows = compare(reports)
    print(table, end="")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(json.dumps(rows, sort_keys=True, indent=1) + "\n")
    return EXIT_OK


def _cmd_gen_dataset(args) -> int:
    spec = SyntheticDatasetSpec(
        input_dim=args.input_dim, num_classes=args.num_classes,
        samples_per_class=args.samples_per_class,
        noise_sigma=args.noise_sigma, mean_radius=args.mean_radius,
        val_fraction=args.val_fraction, test_fraction=args.test_fraction)
    dataset = make_synthetic(spec, args.dataset_seed)
    try:
        save_dataset(dataset, args.out)
    except OSError as exc:
        print(f"cannot write dataset: {exc}", file=sys.stderr)
        return EXIT_RUN
    print(f"wrote {args.out}: {len(dataset.train_y)} train / "
          f"{len(dataset.val_y)} val / {len(dataset.test_y)} test samples, "
          f"dim {dataset.input_dim}, {dataset.num_classes} classes")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asymreplay",
        description="Online continual learning with asymmetric replay losses")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment over its seeds")
    _add_config_flags(p_run)
    p_run.add_argument("--out", help="directory for report and plot data")
    p_run.add_argument("--timestamp",
                       help="fix the report timestamp (reproducible output)")
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep",
                             help="grid of (method x buffer size), parallel")
    _add_config_flags(p_sweep)
    p_sweep.add_argument("--methods", type=lambda s: s.split(","),
                         help="comma-separated method names")
    p_sweep.add_argument("--buffer-capacities", type=_int_list,
                         help="comma-separated buffer sizes")
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--workers", type=int, default=None,
                         help="worker pool size (default: cpu count)")
    p_sweep.add_argument("--timestamp")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_cmp = sub.add_parser("compare", help="tabulate reports side by side")
    p_cmp.add_argument("reports", nargs="+", help="report.json paths")
    p_cmp.add_argument("--out", help="write machine-readable rows (JSON)")
    p_cmp.set_defaults(func=_cmd_compare)

    p_gen = sub.add_parser("gen-dataset", help="write a synthetic dataset file")
    p_gen.add_argument("--input-dim", type=int, default=16)
    p_gen.add_argument("--num-classes", type=int, default=10)
    p_gen.add_argument("--samples-per-class", type=int, default=1000)
    p_gen.add_argument("--noise-sigma", type=float, default=0.5)
    p_gen.add_argument("--mean-radius", type=float, default=1.0)
    p_gen.add_argument("--val-fraction", type=float, default=0.05)
    p_gen.add_argument("--test-fraction", type=float, default=0.25)
    p_gen.add_argument("--dataset-seed", type=int, default=0)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=_cmd_gen_dataset)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ComparisonError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: simulate, featurize, evaluate, inspect.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 usage error or
statistical precondition (e.g. fewer examples than folds).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .chirplet import analytic_signal, decompose, reconstruct, reconstruction_snr_db
from .classifier import (CvError, kfold_cv, render_class_table, render_feature_table, stage1_labels,
                         train_pipeline)
from .config import ConfigError, load_config
from .dataset import CLASSES, DataError, DatasetRequest, generate_dataset, idle_energy_thresholds, load_event
from .features import (C60_CHANNELS, FeatureError, featurize_dataset, read_feature_csv, rho_max_signals,
                       truth_table_inference, truth_table_pattern, write_feature_csv)
from .svm import SvmError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_USAGE = 0, 2, 3, 4
FEATURE_MODES = ("e8", "e8+rho", "c60")
EVAL_MODES = FEATURE_MODES + ("pipeline", "table")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_globals(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(0), help="random seed (default 0)")
    p.add_argument("--jobs", type=int, default=d(os.cpu_count() or 1),
                   help="worker processes (default: number of cores); results do not depend on it")
    p.add_argument("--config", default=d(None), help="tower configuration YAML (default: packaged config)")
    p.add_argument("--out", default=d(None), help="output path (meaning depends on the subcommand)")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pirtower", description="Simulate, featurize and classify PIR sensor tower events.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _add_globals(p, suppress=False)
    sub = p.add_subparsers(dest="command", metavar="{simulate,featurize,evaluate,inspect}", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("simulate", help="render a labelled event dataset",
                       description="Render events into --out (default ./dataset) with manifest.json.")
    _add_globals(s, suppress=True)
    for cls in CLASSES:
        s.add_argument(f"--{cls}", type=int, default=0, metavar="N", help=f"number of {cls} events")

    f = sub.add_parser("featurize", help="extract the 71-column feature file from a dataset",
                       description="Write E8, rho_max and C60 features to --out (default DATASET/features.csv).")
    _add_globals(f, suppress=True)
    f.add_argument("dataset", help="dataset directory")

    e = sub.add_parser("evaluate", help="cross-validate classifiers on a feature file",
                       description="Cross-validated accuracy tables; reports go to --out (default ./reports).")
    _add_globals(e, suppress=True)
    e.add_argument("features", help="feature CSV written by featurize")
    e.add_argument("--mode", choices=EVAL_MODES, default="pipeline",
                   help="feature set for intruder vs clutter, the two-stage pipeline, or 'table' for all "
                        "three feature sets side by side (default pipeline)")
    e.add_argument("--folds", type=int, default=5, help="number of folds (default 5)")

    i = sub.add_parser("inspect", help="diagnostics for one event file",
                       description="Channel statistics, chirplet decompositions, rho_max and row pattern; "
                                   "JSON and plot-ready CSV go to --out (default ./inspect_<event>).")
    _add_globals(i, suppress=True)
    i.add_argument("event", help="event CSV")
    i.add_argument("--chirplets", type=int, default=3, help="chirplets per channel (default 3)")
    return p


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from exc


# --------------------------------------------------------------------------- subcommands


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    counts = {c: getattr(args, c) for c in CLASSES}
    if any(n < 0 for n in counts.values()):
        raise UsageError("event counts must be non-negative")
    out = Path(args.out or "dataset")
    manifest = generate_dataset(out, DatasetRequest(counts, args.seed), cfg, jobs=max(1, args.jobs))
    digest = hashlib.sha256((out / "manifest.json").read_bytes()).hexdigest()
    print(f"wrote {len(manifest['events'])} events to {out}")
    print("class counts: " + ", ".join(f"{c}={n}" for c, n in manifest["class_counts"].items()))
    flags = manifest["flag_counts"]
    print("flags: " + (", ".join(f"{k}={v}" for k, v in flags.items()) if flags else "none"))
    print(f"seed {manifest['seed']}  config_hash {manifest['config_hash']}  manifest sha256 {digest}")
    return EXIT_OK


def cmd_featurize(args) -> int:
    dataset = Path(args.dataset)
    vectors, manifest = featurize_dataset(dataset, jobs=max(1, args.jobs))
    out = Path(args.out) if args.out else dataset / "features.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_feature_csv(out, vectors, manifest["config_hash"], manifest["seed"])
    flagged = sum(1 for v in vectors if v.flags)
    print(f"wrote {len(vectors)} feature rows to {out} ({flagged} with flags)")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    table = read_feature_csv(args.features)
    if len(table) == 0:
        raise CvError("feature file has no rows")
    out = Path(args.out or "reports")
    meta = {"config_hash": table.meta.get("config_hash"), "dataset_seed": table.meta.get("seed")}
    jobs = max(1, args.jobs)
    if args.mode == "pipeline":
        model, report = train_pipeline(table, seed=args.seed, k=args.folds, jobs=jobs)
        text = render_class_table(report, f"Two-stage classifier, {args.folds}-fold cross-validation "
                                          f"(seed {args.seed})")
        _write(out / "pipeline_model.json", json.dumps(model.to_dict(), sort_keys=True, indent=1) + "\n")
        payload = dict(report.to_dict(), **meta)
    else:
        modes = FEATURE_MODES if args.mode == "table" else (args.mode,)
        y = stage1_labels(table.labels)
        reports = [kfold_cv(table.matrix(m), y, args.folds, seed=args.seed, positive="intruder",
                            strata=table.labels, feature_set=m, jobs=jobs) for m in modes]
        for r in reports:
            r.config_hash = meta["config_hash"]
        text = render_feature_table(reports, f"Intruder versus clutter, {args.folds}-fold cross-validation "
                                             f"(seed {args.seed})")
        payload = dict(meta, reports={r.feature_set: r.to_dict() for r in reports})
    stem = f"report_{args.mode.replace('+', '_')}"
    _write(out / f"{stem}.json", json.dumps(payload, sort_keys=True, indent=1) + "\n")
    _write(out / f"{stem}.txt", text)
    print(text, end="")
    print(f"reports written to {out}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    path = Path(args.event)
    cfg = load_config(args.config)
    event = load_event(path, cfg.tower.samples_per_event)
    v = event.samples
    centered = v - v.mean(axis=1, keepdims=True)
    energy = (centered ** 2).sum(axis=1)
    stats = {name: {"mean": float(v[i].mean()), "std": float(v[i].std()), "min": float(v[i].min()),
                    "max": float(v[i].max()), "energy": float(energy[i])}
             for i, name in enumerate(event.channel_names)}
    try:
        rho, lag = rho_max_signals([event.channel("L1"), event.channel("L2")],
                                   [event.channel("R1"), event.channel("R2")])
    except FeatureError:
        rho, lag = 0.0, 0
    thresholds = idle_energy_thresholds(cfg, n_events=20, seed=args.seed)
    pattern = truth_table_pattern(energy, thresholds)
    verdict = truth_table_inference(energy, thresholds)

    n = v.shape[1]
    columns = {"sample": np.arange(n)}
    decomps, snr = {}, {}
    for name in C60_CHANNELS:
        x = centered[event.channel_names.index(name)]
        columns[f"{name}_signal"] = x
        try:
            s_a = analytic_signal(x)
            dec = decompose(s_a, q=args.chirplets, channel=name)
        except ValueError as exc:
            if "empty signal" not in str(exc):
                raise
            decomps[name], snr[name] = [], None
            columns[f"{name}_reconstruction"] = np.zeros(n)
            continue
        decomps[name] = json.loads(dec.to_json())
        value = reconstruction_snr_db(s_a, dec)
        snr[name] = float(value) if np.isfinite(value) else None
        columns[f"{name}_reconstruction"] = reconstruct(dec, n).real

    out = Path(args.out or f"inspect_{path.stem}")
    summary = {"event": str(path), "label": event.label, "channels": stats, "rho_max": rho, "rho_lag": lag,
               "row_pattern": pattern, "row_verdict": verdict, "thresholds": thresholds.tolist(),
               "chirplets": decomps, "reconstruction_snr_db": snr,
               "config_hash": cfg.hash, "seed": args.seed}
    _write(out / "inspect.json", json.dumps(summary, sort_keys=True, indent=1) + "\n")
    header = ",".join(columns)
    rows = np.column_stack(list(columns.values()))
    body = "\n".join(",".join([str(int(r[0]))] + ["%.9g" % x for x in r[1:]]) for r in rows)
    _write(out / "signals.csv", header + "\n" + body + "\n")

    print(f"event {path} (label {event.label})")
    print(f"{'channel':<8}{'mean':>10}{'std':>10}{'energy':>12}")
    for name, st in stats.items():
        print(f"{name:<8}{st['mean']:10.4f}{st['std']:10.4f}{st['energy']:12.4g}")
    print(f"rho_max {rho:.4f} at lag {lag}")
    print(f"rows A-D pattern {pattern}: {verdict}")
    for name in C60_CHANNELS:
        s = snr[name]
        print(f"{name}: {len(decomps[name])} chirplets, reconstruction SNR "
              + ("n/a" if s is None else f"{s:.2f} dB"))
    print(f"details written to {out}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "featurize": cmd_featurize, "evaluate": cmd_evaluate,
            "inspect": cmd_inspect}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FeatureError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (CvError, SvmError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

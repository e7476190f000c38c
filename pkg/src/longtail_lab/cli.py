"""Command-line workflows: dataset construction, training, evaluation, analyses.

Exit codes: 0 ok, 1 run failure, 2 invalid config/arguments.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import jsonio
from .distribution import default_boundaries, group_split, pareto_targets
from .harness import ConfigError, parse_config, run_experiment, run_sweep, sweep_csv
from .losses import posthoc_adjust
from .manifest import load_manifest, save_manifest, subsample_longtail, synth_gaussian
from .metrics import gaps_from_series, mean_average_precision
from .model import ModelState, decision_scores, load_checkpoint, save_checkpoint, weight_norms
from .training import apply_stage2, evaluate_split


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed its message
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except (ConfigError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="longtail-lab",
                                     description="Desk-scale long-tailed classification laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic long-tailed manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--n0", type=int, default=1000)
    p.add_argument("--imbalance", type=float, default=100.0)
    p.add_argument("--separation", type=float, default=3.0)
    p.add_argument("--val-per-class", type=int, default=100)
    p.add_argument("--test-per-class", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=_cmd_synth)

    p = sub.add_parser("make-longtail", help="Pareto-subsample a manifest's train split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--n0", type=int, required=True)
    p.add_argument("--imbalance", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_make_longtail)

    p = sub.add_parser("train", help="run a configured experiment end to end")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="report path (overrides config report_path)")
    p.add_argument("--checkpoint", default=None, help="where to save the final classifier")
    p.add_argument("--stage1-checkpoint", default=None, help="where to save the stage-1 model")
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("stage2", help="apply a stage-2 scheme to a stage-1 checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_stage2)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--boundaries", default=None, help="group boundaries as H,M")
    p.add_argument("--posthoc-tau", type=float, default=None,
                   help="apply post-hoc logit adjustment before argmax")
    p.add_argument("--out", default=None)
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("sweep", help="run several configs and emit a summary CSV")
    p.add_argument("--configs", nargs="+", required=True)
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=_cmd_sweep)

    p = sub.add_parser("norms", help="per-class classifier weight norms of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=_cmd_norms)

    p = sub.add_parser("gaps", help="checkpoint-gap statistics from a run report")
    p.add_argument("--report", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=_cmd_gaps)
    return parser


def _emit(payload: dict, out_path) -> None:
    text = jsonio.dumps(payload) + "\n"
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _cmd_synth(args) -> int:
    manifest = synth_gaussian(
        args.classes, args.dim, args.n0, args.imbalance,
        class_separation=args.separation, seed=args.seed,
        val_per_class=args.val_per_class, test_per_class=args.test_per_class,
    )
    save_manifest(manifest, args.out)
    print(f"wrote {len(manifest)} records to {args.out}")
    return 0


def _cmd_make_longtail(args) -> int:
    manifest = load_manifest(args.manifest)
    targets = pareto_targets(args.n0, manifest.num_classes, args.imbalance)
    subset = subsample_longtail(manifest, targets, args.seed)
    save_manifest(subset, args.out)
    print(f"wrote {len(subset)} records to {args.out}")
    return 0


def _load_config(path, seed_override):
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if seed_override is not None:
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        raw["seed"] = seed_override
    return parse_config(raw)


def _cmd_train(args) -> int:
    config = _load_config(args.config, args.seed)
    out = args.out or config.report_path
    if out is None:
        raise ConfigError("no report path: give --out or set report_path in the config")
    result = run_experiment(config, out_path=out)
    if args.stage1_checkpoint:
        save_checkpoint(result.stage1_model, args.stage1_checkpoint)
    if args.checkpoint:
        save_checkpoint(result.final_classifier, args.checkpoint)
    print(f"wrote report to {out}")
    return 0


def _cmd_stage2(args) -> int:
    config = _load_config(args.config, args.seed)
    model = load_checkpoint(args.checkpoint)
    if not isinstance(model, ModelState):
        raise ConfigError("stage2 needs a stage-1 model checkpoint")
    manifest = load_manifest(args.manifest)
    if config.train.stage2.kind == "none":
        raise ConfigError("config has stage2.kind 'none'; nothing to do")
    rng = np.random.default_rng(config.seed)
    final = apply_stage2(model, manifest, config.train, rng=rng)
    save_checkpoint(final, args.out)
    print(f"wrote stage-2 checkpoint to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    classifier = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    if args.boundaries is not None:
        try:
            h, m = (int(v) for v in args.boundaries.split(","))
        except ValueError as exc:
            raise ConfigError(f"bad --boundaries {args.boundaries!r}: expected H,M") from exc
        boundaries = (h, m)
    else:
        boundaries = default_boundaries(manifest.num_classes)
    groups = group_split(manifest.train_distribution(), boundaries)

    idx = manifest.split_indices(args.split)
    if idx.size == 0:
        raise ConfigError(f"{args.split} split is empty")
    payload: dict = {"split": args.split}
    if args.posthoc_tau is not None:
        if manifest.task_kind != "single":
            raise ConfigError("post-hoc adjustment applies to single-label tasks")
        scores = decision_scores(classifier, manifest.features[idx])
        adjusted = posthoc_adjust(scores, manifest.train_distribution(), args.posthoc_tau)
        from .metrics import group_report

        report = group_report(np.argmax(adjusted, axis=1), manifest.labels[idx], groups)
        payload["posthoc_tau"] = args.posthoc_tau
    else:
        report = evaluate_split(classifier, manifest, args.split, groups)
    payload["group_report"] = report.to_dict()
    if manifest.task_kind == "multi":
        scores = decision_scores(classifier, manifest.features[idx])
        payload["map"] = mean_average_precision(scores, manifest.labels[idx])
    _emit(payload, args.out)
    return 0


def _cmd_sweep(args) -> int:
    entries = []
    for path in args.configs:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        name = raw.get("name") or _stem(path)
        entries.append((name, raw))
    rows = run_sweep(entries, parallelism=args.parallelism)
    csv_text = sweep_csv(rows)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(csv_text)
    sys.stdout.write(csv_text)
    return 1 if any(row["error"] for row in rows) else 0


def _stem(path: str) -> str:
    import os

    return os.path.splitext(os.path.basename(path))[0]


def _cmd_norms(args) -> int:
    classifier = load_checkpoint(args.checkpoint)
    if not isinstance(classifier, ModelState):
        raise ConfigError("norms needs a weight-based model checkpoint")
    norms = weight_norms(classifier)
    _emit({"weight_norms": [float(v) for v in norms]}, args.out)
    return 0


def _cmd_gaps(args) -> int:
    with open(args.report, "r", encoding="utf-8") as fh:
        report = json.load(fh)
    history = report.get("history") or []
    if not history:
        raise ConfigError("report has an empty history")
    stats = gaps_from_series(
        [entry["val"]["average"] for entry in history],
        [entry["test"]["average"] for entry in history],
        [entry["epoch"] for entry in history],
    )
    _emit(stats.to_dict(), args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line experiment runner.

Subcommands: ``gen`` (write a dataset file), ``train`` (multi-seed run),
``eval`` (re-evaluate a checkpoint on a dataset), ``ablate`` (sweep label
subsets over shared seeds) and ``report`` (aggregate run summaries). Exit
status is 0 on success, 2 for configuration problems, 1 for mid-run numeric
failures (a FAILED marker is left next to the partial artifacts).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigurationError, MtalError, TrainingAbortError
from .experiment import (
    collect_reports,
    build_world,
    evaluate_checkpoint,
    resolve_config,
    run_ablation,
    run_experiment,
)
from .synthgen import generate


def _load_config(path):
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigurationError(f"config file does not exist: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {p} line {exc.lineno}: {exc.msg}") from None


def _apply_overrides(cfg: dict, args) -> dict:
    cfg = dict(cfg)
    if getattr(args, "subset", None):
        cfg["subset"] = args.subset
    if getattr(args, "seed", None):
        cfg["seeds"] = args.seed
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtal", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic dataset file")
    gen.add_argument("--config", help="experiment config (world + dataset sections used)")
    gen.add_argument("--out", required=True, help="output dataset path")

    tr = sub.add_parser("train", help="train and evaluate over the configured seeds")
    tr.add_argument("--config", help="experiment config JSON")
    tr.add_argument("--out", required=True, help="output run directory")
    tr.add_argument("--seed", type=int, action="append", help="seed (repeatable)")
    tr.add_argument("--subset", help="label subset override")

    ev = sub.add_parser("eval", help="evaluate a recognizer checkpoint on a dataset")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True, help="dataset file")
    ev.add_argument("--config", help="grid / normalizer overrides")
    ev.add_argument("--out", help="metrics JSON path (default: stdout)")

    ab = sub.add_parser("ablate", help="sweep label subsets over shared seeds")
    ab.add_argument("--config", help="experiment config JSON")
    ab.add_argument("--out", required=True, help="output directory")
    ab.add_argument("--seed", type=int, action="append", help="seed (repeatable)")
    ab.add_argument("--subset", action="append", dest="subsets",
                    help="subset to include (repeatable; default: the full family)")

    rp = sub.add_parser("report", help="aggregate summaries from run directories")
    rp.add_argument("runs", nargs="+", help="run directories to scan")
    rp.add_argument("--out", help="write combined JSON here (default: stdout)")

    return parser


def _cmd_gen(args) -> int:
    cfg = resolve_config(_load_config(args.config))
    world = build_world(cfg)
    ds = generate(world, int(cfg["dataset"]["n_samples"]), int(cfg["dataset"]["gen_seed"]))
    ds.save(args.out)
    print(f"wrote {len(ds)} samples to {args.out} (spec {ds.spec_hash})")
    return 0


def _cmd_train(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    summary = run_experiment(cfg, args.out)
    print(json.dumps(summary["metrics"], sort_keys=True, indent=2))
    return 0


def _cmd_eval(args) -> int:
    report = evaluate_checkpoint(args.checkpoint, args.data, _load_config(args.config))
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text, encoding="ascii")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_ablate(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    comparison = run_ablation(cfg, args.out, subsets=args.subsets)
    print(json.dumps(comparison["subsets"], sort_keys=True, indent=2))
    return 0


def _cmd_report(args) -> int:
    combined = collect_reports(args.runs)
    text = json.dumps(combined, sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="ascii")
    else:
        sys.stdout.write(text)
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except TrainingAbortError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MtalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())

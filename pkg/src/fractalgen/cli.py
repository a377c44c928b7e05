"""Command line entry point: ``fractalgen generate | run | report``."""

from __future__ import annotations

import argparse
import logging
import sys
from collections import Counter
from pathlib import Path

from .generator import SearchSpace, enumerate_specs, load_space, read_manifest, write_manifest
from .report import export_epoch_distribution, export_loss_curves, load_results, summarize_results
from .runner import TrainConfig, run_campaign


def _cmd_generate(args: argparse.Namespace) -> int:
    space = load_space(args.space) if args.space else SearchSpace()
    entries = enumerate_specs(space)
    write_manifest(args.out, entries)
    feasible = sum(e.feasible for e in entries)
    print(f"wrote {len(entries)} specs ({feasible} feasible, raw grid {space.raw_size}) to {args.out}")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    entries = read_manifest(args.manifest)
    if args.limit is not None:
        entries = entries[: args.limit]
    config = TrainConfig.load(args.config) if args.config else TrainConfig()
    results = run_campaign(entries, config, args.out, args.parallel, args.resume)
    counts = Counter(r.status for r in results)
    for status, n in sorted(counts.items()):
        print(f"{status}: {n}")
    ok = counts["ok"] + counts["degenerate"]
    print(f"success rate: {ok}/{len(results)}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    results, skipped = load_results(args.in_dir)
    summary = summarize_results(results, skipped) if results else None
    if summary is None:
        print(f"no result records under {args.in_dir}", file=sys.stderr)
        return 1
    text = summary.to_json()
    if args.summary:
        Path(args.summary).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    epochs = [int(e) for e in args.epochs.split(",")]
    if args.epoch_dist:
        export_epoch_distribution(results, args.epoch_dist, epochs)
    if args.loss_curves:
        ids = args.models.split(",") if args.models else None
        export_loss_curves(results, args.loss_curves, ids)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fractalgen", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="enumerate the variant grid into a manifest")
    g.add_argument("--out", required=True, help="manifest path (JSON lines)")
    g.add_argument("--space", help="JSON search-space file overriding the default grid")
    g.set_defaults(func=_cmd_generate)

    r = sub.add_parser("run", help="train every manifest entry")
    r.add_argument("--manifest", required=True)
    r.add_argument("--config", help="JSON TrainConfig file (defaults: lr 0.01, batch 16, momentum 0.9, 5 epochs)")
    r.add_argument("--out", required=True, help="results directory")
    r.add_argument("--parallel", type=int, default=1, help="worker processes")
    r.add_argument("--resume", action="store_true", help="skip finished models, continue partial ones")
    r.add_argument("--limit", type=int, help="only the first N manifest entries")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("report", help="aggregate a results directory")
    s.add_argument("--in", dest="in_dir", required=True)
    s.add_argument("--summary", help="summary JSON path (stdout if omitted)")
    s.add_argument("--epoch-dist", help="CSV of accuracy at selected epochs")
    s.add_argument("--epochs", default="1,5", help="comma-separated epochs for --epoch-dist")
    s.add_argument("--loss-curves", help="CSV of per-epoch train loss")
    s.add_argument("--models", help="comma-separated model ids for --loss-curves (default: all)")
    s.set_defaults(func=_cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())

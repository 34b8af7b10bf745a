"""Command-line entry points for the toolchain.

Subcommands mirror the pipeline stages (ingest, ground, retrieve, sabotage,
split, score) plus three utilities: loss-check (random-instance oracle sweep
for the chunked loss), prompt (emit the audit prompt for a record), and
pipeline (run a full config).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import FinledgerError
from .pipeline import (
    PipelineConfig,
    STAGE_RUNNERS,
    load_records,
    loss_spec_from_config,
    run_loss_check,
    run_pipeline,
)
from .sentinel_math import build_prompt


def _stage_command(stage: str):
    def handler(args: argparse.Namespace) -> int:
        cfg = PipelineConfig.parse(args.config)
        workdir = cfg.workdir()
        entry = STAGE_RUNNERS[stage](cfg, workdir)
        print(json.dumps(entry, sort_keys=True, ensure_ascii=False, indent=2))
        return 0

    return handler


def _cmd_pipeline(args: argparse.Namespace) -> int:
    manifest = run_pipeline(args.config)
    print(json.dumps(manifest, sort_keys=True, ensure_ascii=False, indent=2))
    return 0


def _cmd_loss_check(args: argparse.Namespace) -> int:
    base_spec = None
    if args.config:
        base_spec = loss_spec_from_config(PipelineConfig.parse(args.config))
    report = run_loss_check(
        instances=args.instances, seed=args.seed, base_spec=base_spec
    )
    print(json.dumps(report, sort_keys=True))
    return 0 if report["max_relative_error"] <= args.tolerance else 1


def _cmd_prompt(args: argparse.Namespace) -> int:
    records = load_records(Path(args.records))
    matches = [r for r in records if r.record_id == args.record_id]
    if not matches:
        print(f"record '{args.record_id}' not found in {args.records}", file=sys.stderr)
        return 1
    rec = matches[0]
    prompt = build_prompt(
        query=rec.query,
        trace=rec.trace or "N/A",
        statement=rec.sentence,
        context_chunks=list(rec.context) or ["(no context)"],
        token_budget=args.token_budget,
    )
    sys.stdout.write(prompt)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="finledger",
        description="Grounded financial fact-ledger toolchain.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for stage in STAGE_RUNNERS:
        p = sub.add_parser(stage, help=f"run the {stage} stage from a config file")
        p.add_argument("config", help="path to a key = value config file")
        p.set_defaults(handler=_stage_command(stage))

    p = sub.add_parser("pipeline", help="run every configured stage in order")
    p.add_argument("config", help="path to a key = value config file")
    p.set_defaults(handler=_cmd_pipeline)

    p = sub.add_parser(
        "loss-check",
        help="random-instance equivalence sweep: chunked loss vs reference",
    )
    p.add_argument("--instances", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-9)
    p.add_argument("--config", help="hold weights/clamp/chunk_size from this config")
    p.set_defaults(handler=_cmd_loss_check)

    p = sub.add_parser("prompt", help="emit the audit prompt for one record")
    p.add_argument("--records", required=True, help="records JSONL file")
    p.add_argument("--record-id", required=True)
    p.add_argument("--token-budget", type=int, default=4096)
    p.set_defaults(handler=_cmd_prompt)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except FinledgerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``qvote run|sweep|verify|demo``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import transcript as tx
from .adversaries import AdversaryKind
from .election import Election, ElectionConfig
from .errors import ConfigError
from .harness import (TRANSCRIPT_FILE, Scenario, emit_outputs, load_scenario, run_scenario,
                      scenario_from_dict, verify_transcript)

EXIT_OK, EXIT_CONFIG, EXIT_VIOLATION = 0, 1, 2

log = logging.getLogger("qvote")


def _scenario(args) -> Scenario:
    data = {}
    if args.config:
        sc = load_scenario(args.config)
        data = dataclasses.asdict(sc)
    if args.seed is not None:
        data["seed"] = args.seed
    if args.trials is not None:
        data["trials"] = args.trials
    if args.adversary:
        data["adversary"] = {"kind": args.adversary, "params": {}}
    return scenario_from_dict(data)


def _summary_line(report) -> str:
    t, st = report.totals, report.statistics
    rate = st["detection_rate"]
    return (f"trials={t['trials']} outcomes={t['outcomes']} tally_ok={t['tally_matches_cast']} "
            f"flagged={t['flagged_voters']} verdicts={t['verdicts']} detection={'n/a' if rate is None else f'{rate:.4f}'}")


def cmd_run(args) -> int:
    sc = _scenario(args)
    artifacts = run_scenario(sc)
    out = args.out or sc.report_path
    if out:
        emit_outputs(artifacts, out)
    if not args.quiet:
        print(_summary_line(artifacts.report))
        print(f"wall_time={artifacts.report.wall_time:.2f}s")
    return EXIT_OK


def _parse_value(text: str):
    return yaml.safe_load(text)


def cmd_sweep(args) -> int:
    base = dataclasses.asdict(_scenario(args))
    values = [_parse_value(v) for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values needs at least one value")
    rows = []
    for value in values:
        data = json.loads(json.dumps(base))
        head, _, rest = args.param.partition(".")
        if head == "adversary":
            if not data.get("adversary"):
                raise ConfigError("sweeping an adversary parameter needs an adversary")
            data["adversary"].setdefault("params", {})[rest] = value
        elif rest:
            raise ConfigError(f"cannot sweep nested parameter {args.param!r}")
        else:
            data[head] = value
        report = run_scenario(scenario_from_dict(data)).report
        rows.append({"value": value, "totals": report.totals, "statistics": report.statistics})
        if not args.quiet:
            print(f"{args.param}={value}: {_summary_line(report)}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.json").write_text(json.dumps({"param": args.param, "rows": rows},
                                                   sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def cmd_verify(args) -> int:
    path = Path(args.transcript)
    if path.is_dir():
        path = path / TRANSCRIPT_FILE
    try:
        records = tx.load_jsonl(path.read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read transcript {path}: {exc}") from exc
    result = verify_transcript(records)
    if not args.quiet:
        for trial, tally in sorted(result.tallies.items()):
            print(f"trial {trial}: tally {tally}")
        for v in result.violations:
            print(f"VIOLATION {v}")
        print("ok" if result.ok else f"{len(result.violations)} violation(s)")
    return EXIT_OK if result.ok else EXIT_VIOLATION


def cmd_demo(args) -> int:
    seed = 7 if args.seed is None else args.seed
    cfg = ElectionConfig(N=4, m=1024, votes=["A", "B", "A", "C"])
    election = Election(cfg, np.random.default_rng(seed))
    result = election.run()
    say = (lambda *a: None) if args.quiet else print
    say(f"Candidates {cfg.candidates}, each encoded as a random {cfg.s}-bit string.")
    say(f"{cfg.N} voters hold pre-shared credentials from the administrator.")
    for r in election.transcript:
        if r["step"] == "auth.verified":
            say(f"round {r['round']}: administrator verified {r['payload']['n']} voter(s)")
        elif r["step"] == "aqkd.accept":
            say("  anonymous key distribution session accepted by the counter")
        elif r["step"] == "aqkd.abort":
            say(f"  key distribution session aborted ({r['payload'].get('reason')})")
        elif r["step"] == "voting.verification-set":
            say(f"round {r['round']}: counter published {len(r['payload']['a'])} accepted remark(s)")
    say(f"Table 3 has {len(result.ballot_table)} row(s); tally {result.tally}")
    for vid, status in result.inclusion.items():
        say(f"  {vid}: inclusion {status}")
    say("election " + ("completed, tally matches the cast votes" if result.complete_and_correct
                       else f"ended with status {result.status}"))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / TRANSCRIPT_FILE).write_text(election.transcript.dumps())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario file (YAML or JSON)")
    common.add_argument("--seed", type=int, help="unsigned 64-bit seed")
    common.add_argument("--trials", type=int)
    common.add_argument("--adversary", choices=[k.value for k in AdversaryKind])
    common.add_argument("--out", help="output directory")
    common.add_argument("--quiet", action="store_true")

    p = argparse.ArgumentParser(prog="qvote", description="Anonymous QKD and quantum election simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)
    sub.add_parser("run", parents=[common], help="execute a scenario").set_defaults(func=cmd_run)
    sw = sub.add_parser("sweep", parents=[common], help="vary one parameter")
    sw.add_argument("--param", required=True, help="scenario field, or adversary.<name>")
    sw.add_argument("--values", required=True, help="comma-separated values")
    sw.set_defaults(func=cmd_sweep)
    ver = sub.add_parser("verify", parents=[common], help="recheck a transcript from public records")
    ver.add_argument("transcript", help="transcript.jsonl or a run output directory")
    ver.set_defaults(func=cmd_verify)
    sub.add_parser("demo", parents=[common], help="small narrated honest election").set_defaults(func=cmd_demo)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry points.

    tersim exam     --scenario FILE [--out-dir DIR] [--channel-preset NAME] [--seed N]
    tersim campaign --cohort FILE [--out-dir DIR]
    tersim stats    --records FILE [--format json|table]
    tersim serve    [--phantom-preset NAME] [--port N]

Exit codes: 0 success, 2 input error, 3 runtime failure, 4 environment
error.  TERSIM_LOG sets the log level.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .netchannel import PRESETS as CHANNEL_PRESETS
from .phantom import PRESETS as PHANTOM_PRESETS
from .scenario_io import (scenario_from_json, cohort_from_json,
                          load_bundled_scenario, FileFormatError)
from .session import SessionRuntimeError, ScenarioInvalidError
from .stats import (records_to_csv, records_from_csv, campaign_report,
                    CsvSchemaError, UnpairedRecordError, StatsError)
from .exam import run_exam_pair, ExamFailure
from .campaign import run_campaign

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_RUNTIME = 3
EXIT_ENV = 4

log = logging.getLogger("tersim")


def _read_file(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise FileFormatError(path, str(exc)) from None


def load_scenario_arg(name_or_path: str):
    """Scenario argument: a file path, or the name of a bundled scenario."""
    if os.path.exists(name_or_path):
        return scenario_from_json(_read_file(name_or_path), name=name_or_path)
    try:
        return load_bundled_scenario(name_or_path)
    except FileNotFoundError:
        raise FileFormatError(
            name_or_path, "no such file and no bundled scenario of that name")


def cmd_exam(args) -> int:
    scenario = load_scenario_arg(args.scenario)
    if args.channel_preset:
        if args.channel_preset not in CHANNEL_PRESETS:
            raise FileFormatError("--channel-preset",
                                  f"unknown preset {args.channel_preset!r}")
        scenario = type(scenario)(
            phantom=scenario.phantom, sweep=scenario.sweep,
            measurements=scenario.measurements,
            channel=CHANNEL_PRESETS[args.channel_preset],
            seed=args.seed if args.seed is not None else scenario.seed,
            name=scenario.name)
    elif args.seed is not None:
        scenario = type(scenario)(
            phantom=scenario.phantom, sweep=scenario.sweep,
            measurements=scenario.measurements, channel=scenario.channel,
            seed=args.seed, name=scenario.name)
    try:
        bedside, remote, trace = run_exam_pair(scenario)
    except (ExamFailure, SessionRuntimeError) as exc:
        log.error("session failed: %s", exc)
        return EXIT_RUNTIME
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "records.csv").write_text(records_to_csv([bedside, remote]))
    (out / "trace.jsonl").write_text(trace.to_jsonl())
    print(f"bedside AP diameter: "
          f"{bedside.ap_diameter * 1000:.1f} mm, AAA={bedside.aaa_detected}")
    print(f"remote  AP diameter: "
          f"{remote.ap_diameter * 1000:.1f} mm, AAA={remote.aaa_detected}")
    print(f"wrote {out / 'records.csv'} and {out / 'trace.jsonl'}")
    return EXIT_OK


def cmd_campaign(args) -> int:
    spec = cohort_from_json(_read_file(args.cohort), name=args.cohort)
    try:
        result = run_campaign(spec)
    except SessionRuntimeError as exc:
        log.error("campaign failed: %s", exc)
        return EXIT_RUNTIME
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "records.csv").write_text(records_to_csv(result.records))
    (out / "report.json").write_text(result.report.to_json() + "\n")
    print(result.report.to_table(), end="")
    if result.failures:
        print(f"failed exams: {len(result.failures)} "
              f"({[f['patient_id'] for f in result.failures]})")
    print(f"wrote {out / 'records.csv'} and {out / 'report.json'}")
    return EXIT_OK


def cmd_stats(args) -> int:
    records = records_from_csv(_read_file(args.records))
    report = campaign_report(records)
    if args.format == "json":
        print(report.to_json())
    else:
        print(report.to_table(), end="")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn
    from .serve import create_app
    if args.phantom_preset not in PHANTOM_PRESETS:
        raise FileFormatError("--phantom-preset",
                              f"unknown preset {args.phantom_preset!r}")
    app = create_app(PHANTOM_PRESETS[args.phantom_preset])
    try:
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    except (OSError, SystemExit) as exc:
        log.error("cannot serve on port %d: %s", args.port, exc)
        return EXIT_ENV
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tersim", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    exam = sub.add_parser("exam", help="run one two-arm scripted exam")
    exam.add_argument("--scenario", required=True,
                      help="scenario file or bundled scenario name")
    exam.add_argument("--out-dir", default="out")
    exam.add_argument("--seed", type=int, default=None)
    exam.add_argument("--channel-preset", default=None,
                      choices=sorted(CHANNEL_PRESETS))
    exam.set_defaults(func=cmd_exam)

    camp = sub.add_parser("campaign", help="run a synthetic study campaign")
    camp.add_argument("--cohort", required=True, help="cohort spec file")
    camp.add_argument("--out-dir", default="out")
    camp.set_defaults(func=cmd_campaign)

    st = sub.add_parser("stats", help="statistics over an exam records CSV")
    st.add_argument("--records", required=True)
    st.add_argument("--format", choices=["json", "table"], default="table")
    st.set_defaults(func=cmd_stats)

    sv = sub.add_parser("serve", help="serve the slave simulator over WebSocket")
    sv.add_argument("--phantom-preset", default="aaa_54mm",
                    choices=sorted(PHANTOM_PRESETS))
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8765)
    sv.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("TERSIM_LOG", "WARNING").upper())
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileFormatError, CsvSchemaError, UnpairedRecordError,
            ScenarioInvalidError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except StatsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: live daemon, scenario evaluation, and DB tooling."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import __version__
from .errors import (
    InvalidInputError,
    InvalidLabelError,
    ScenarioFormatError,
    SnapshotFormatError,
)
from .metrics import build_report
from .perception import FaceEmbedding
from .recognition_db import RecognitionDatabase
from .simulator import build_system, load_scenario_file, run


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="visionassist",
                                     description="Simulated wearable vision-assistance system")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="serve the live daemon")
    p_run.add_argument("--listen", required=True,
                       help="host:port or a Unix socket path")
    p_run.add_argument("--scenario", help="scenario file providing assets and an "
                                          "optional background feed")
    p_run.add_argument("--llm", choices=("mock", "remote"), default="mock")
    p_run.add_argument("--db", help="SQLite path backing the recognition database")

    p_eval = sub.add_parser("eval", help="run a scenario and print the evaluation report")
    p_eval.add_argument("--scenario", required=True)
    p_eval.add_argument("--json", action="store_true", help="structured report on stdout")
    p_eval.add_argument("--trace", help="write the canonical trace to this path")

    p_enroll = sub.add_parser("enroll", help="enroll one embedding from a file")
    p_enroll.add_argument("--db", required=True)
    p_enroll.add_argument("--label", required=True)
    p_enroll.add_argument("--embedding-file", required=True,
                          help="JSON array or whitespace-separated 128 floats")
    p_enroll.add_argument("--source", choices=("voice", "text"), default="text")

    p_export = sub.add_parser("export-db", help="canonical snapshot to stdout")
    p_export.add_argument("--db", required=True)

    p_import = sub.add_parser("import-db", help="canonical snapshot from stdin")
    p_import.add_argument("--db", required=True)

    sub.add_parser("version", help="print version")
    return parser


def _cmd_run(args) -> int:
    from .gateway import GatewayDaemon

    scenario = None
    if args.scenario:
        scenario = load_scenario_file(args.scenario)
    db = RecognitionDatabase(path=args.db) if args.db else None
    daemon = GatewayDaemon(endpoint=args.listen, scenario=scenario, db=db, llm=args.llm)
    for warning in daemon.startup_warnings:
        print(f"warning: {warning}", file=sys.stderr)
    daemon.serve()
    return 0


def _cmd_eval(args) -> int:
    scenario = load_scenario_file(args.scenario)
    system = build_system(scenario)
    trace = run(scenario, system)
    report = build_report(trace.frame_scores)

    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            fh.write(trace.render())

    summary = system.orchestrator.telemetry.summary()
    if args.json:
        doc = {"scenario": scenario.name, "report": report.as_dict(),
               "latency": summary,
               "expectations": [{"by": r.expectation.by, "pattern": r.expectation.pattern,
                                 "passed": r.passed, "matched_at": r.matched_at}
                                for r in trace.expectation_results]}
        print(json.dumps(doc, indent=2))
    else:
        print(f"Scenario: {scenario.name}")
        print()
        print(report.render_text())
        print()
        for cond in ("good", "low"):
            rep = report.conditions[cond]
            if rep.matrix is not None:
                m = rep.matrix
                print(f"Confusion ({cond}): tp={m.tp} fp={m.fp} fn={m.fn} tn={m.tn}")
        lat_bits = []
        for path in ("recognition", "detail"):
            stats = summary[path]
            mean = "n/a" if stats["mean_ms"] is None else f"{stats['mean_ms']:.1f} ms"
            lat_bits.append(f"{path} n={stats['count']} mean={mean}")
        print("Latency: " + "; ".join(lat_bits))
        if trace.expectation_results:
            passed = sum(1 for r in trace.expectation_results if r.passed)
            print(f"Expectations: {passed}/{len(trace.expectation_results)} passed")
            for res in trace.expectation_results:
                status = "PASS" if res.passed else "FAIL"
                print(f"  {status} by={res.expectation.by} pattern={res.expectation.pattern!r}")
    return 0 if trace.all_expectations_pass() else 1


def _read_embedding(path: str) -> FaceEmbedding:
    with open(path, "r", encoding="utf-8") as fh:
        content = fh.read().strip()
    try:
        values = json.loads(content)
    except json.JSONDecodeError:
        values = content.split()
    try:
        vec = np.asarray([float(v) for v in values], dtype=np.float64)
        return FaceEmbedding(vector=vec)
    except (TypeError, ValueError, InvalidInputError) as exc:
        raise InvalidInputError(f"embedding file {path}: {exc}") from exc


def _cmd_enroll(args) -> int:
    embedding = _read_embedding(args.embedding_file)
    db = RecognitionDatabase(path=args.db)
    record = db.enroll(args.label, embedding, args.source, now_ms=0)
    print(f"enrolled {record.label!r} ({len(record.entries)} embedding(s) stored)")
    db.close()
    return 0


def _cmd_export(args) -> int:
    db = RecognitionDatabase(path=args.db)
    sys.stdout.buffer.write(db.export_snapshot())
    sys.stdout.buffer.flush()
    db.close()
    return 0


def _cmd_import(args) -> int:
    data = sys.stdin.buffer.read()
    db = RecognitionDatabase.import_snapshot(data, path=args.db)
    print(f"imported {len(db)} record(s)", file=sys.stderr)
    db.close()
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "enroll":
            return _cmd_enroll(args)
        if args.command == "export-db":
            return _cmd_export(args)
        if args.command == "import-db":
            return _cmd_import(args)
        if args.command == "version":
            print(__version__)
            return 0
    except (ScenarioFormatError, SnapshotFormatError, InvalidInputError,
            InvalidLabelError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()

"""
regcheck - Building Code Compliance Checker

Command-line entry point.

Usage:
    regcheck check model.ifc [--pack pack.zip|dir] [--topics a,b] [--out report.json]
                             [--bcf out.bcfzip] [--lift-config lift.json] [--ground 0.0]
    regcheck convert model.ifc --out triples.nt [--stage lifted|geom|inferred]
    regcheck lint-rules [pack.zip|dir]
    regcheck explain report.json rule-id

Exit codes: 0 = ran, nothing found; 1 = ran, findings (or lint diagnostics)
exist; 2 = input, configuration or pack error.
"""
import argparse
import sys
from pathlib import Path
from typing import List, Optional

import structlog
from pydantic import ValidationError

from app.core.config import settings
from app.core.exceptions import PackLoadError, RegcheckError
from app.core.logging import configure_logging
from app.models.report import CheckConfig, ComplianceReport
from app.services.checker import Stage, get_checker_service
from app.services.graph_store import serialize_ntriples
from app.services.report_writer import write_bcf, write_report_json
from app.services.rule_lint import lint_pack
from app.services.rule_packs import load_pack_path

logger = structlog.get_logger()

EXIT_OK = 0
EXIT_FINDINGS = 1
EXIT_ERROR = 2


def _write(path: Optional[str], data: bytes) -> None:
    if path is None or path == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        Path(path).write_bytes(data)
        logger.info("report_written", path=path, bytes=len(data))


def cmd_check(args: argparse.Namespace) -> int:
    pack = load_pack_path(args.pack)
    config = CheckConfig(
        topics=[t.strip() for t in args.topics.split(",") if t.strip()] if args.topics else None,
        ground_datum_m=args.ground,
        lift_config_path=args.lift_config,
    )
    report = get_checker_service().run_check(args.model, pack, config)
    _write(args.out, write_report_json(report))
    if args.bcf:
        _write(args.bcf, write_bcf(report))
    if report.failed:
        print(f"error: {report.diagnostics[-1].message}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_FINDINGS if report.findings else EXIT_OK


def cmd_convert(args: argparse.Namespace) -> int:
    try:
        source = Path(args.model).read_text(encoding="utf-8", errors="replace")
    except OSError as e:
        print(f"error: cannot read {args.model}: {e}", file=sys.stderr)
        return EXIT_ERROR
    config = CheckConfig(lift_config_path=args.lift_config, ground_datum_m=args.ground)
    kb = get_checker_service().build_knowledge_base(source, config, Stage(args.stage))
    _write(args.out, serialize_ntriples(kb.graph).encode("utf-8"))
    return EXIT_OK


def cmd_lint(args: argparse.Namespace) -> int:
    pack = load_pack_path(args.pack)
    diagnostics = lint_pack(pack)
    for diagnostic in diagnostics:
        print(diagnostic)
    print(f"{pack.name} {pack.version}: {len(pack.plans)} rules, {len(diagnostics)} diagnostics")
    return EXIT_FINDINGS if diagnostics else EXIT_OK


def cmd_explain(args: argparse.Namespace) -> int:
    try:
        report = ComplianceReport.model_validate_json(Path(args.report).read_text(encoding="utf-8"))
    except (OSError, ValidationError) as e:
        print(f"error: cannot read report {args.report}: {e}", file=sys.stderr)
        return EXIT_ERROR
    if args.rule_id not in {r.id for r in report.rules}:
        print(f"error: rule {args.rule_id} was not executed in this report", file=sys.stderr)
        return EXIT_ERROR

    findings = report.findings_for(args.rule_id)
    print(f"{args.rule_id}: {len(findings)} finding(s)")
    for finding in findings:
        print(f"- {finding.iri} [{finding.guid or 'no GUID'}] {finding.severity}: {finding.message}")
        for entry in finding.explanation:
            print(f"    {entry.role}: {entry.iri} [{entry.guid or 'no GUID'}]")
    return EXIT_FINDINGS if findings else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regcheck", description="Building code compliance checker for IFC models")
    parser.add_argument("--log-level", default=settings.LOG_LEVEL, help="Log level (default: %(default)s)")
    parser.add_argument("--log-format", default=settings.LOG_FORMAT, choices=["console", "json"])
    sub = parser.add_subparsers(dest="command", required=True)

    check = sub.add_parser("check", help="Check a model against a rule pack")
    check.add_argument("model", help="IFC STEP file")
    check.add_argument("--pack", help="Rule pack ZIP or directory (default: shipped pack)")
    check.add_argument("--topics", help="Comma-separated topics to check (default: all)")
    check.add_argument("--out", help="report.json path (default: stdout)")
    check.add_argument("--bcf", help="BCF ZIP output path")
    check.add_argument("--lift-config", type=Path, help="Lift configuration JSON")
    check.add_argument("--ground", type=float, help="Ground datum in metres")
    check.set_defaults(handler=cmd_check)

    convert = sub.add_parser("convert", help="Write the model's triples as N-Triples")
    convert.add_argument("model", help="IFC STEP file")
    convert.add_argument("--out", help="N-Triples output path (default: stdout)")
    convert.add_argument("--stage", choices=[s.value for s in Stage], default=Stage.INFERRED.value)
    convert.add_argument("--lift-config", type=Path, help="Lift configuration JSON")
    convert.add_argument("--ground", type=float, help="Ground datum in metres")
    convert.set_defaults(handler=cmd_convert)

    lint = sub.add_parser("lint-rules", help="Lint a rule pack")
    lint.add_argument("pack", nargs="?", help="Rule pack ZIP or directory (default: shipped pack)")
    lint.set_defaults(handler=cmd_lint)

    explain = sub.add_parser("explain", help="Print the findings of one rule from a report")
    explain.add_argument("report", help="report.json written by check")
    explain.add_argument("rule_id", help="Rule id")
    explain.set_defaults(handler=cmd_explain)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point"""
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level, args.log_format)
    try:
        return args.handler(args)
    except PackLoadError as e:
        print("error: rule pack could not be loaded:", file=sys.stderr)
        for error in e.errors:
            print(f"  {error}", file=sys.stderr)
        return EXIT_ERROR
    except RegcheckError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

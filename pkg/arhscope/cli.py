import argparse
import logging
import sys
from pathlib import Path

from arhscope.arh import arh_table, classify, save_classification
from arhscope.config import (
    DEFAULT_ACTIVITY_FILTER,
    DEFAULT_DELTA_T,
    DEFAULT_DEPENDENCY_THRESHOLD,
    EXIT_MODEL,
    EXIT_OK,
    EXIT_USAGE,
    EXIT_VERIFICATION,
    HASSE_DIR,
    LOG_FORMATS,
    MINING_DIR,
    REPORT_NAME,
    STORE_DIR,
    bundled_model_path,
)
from arhscope.errors import ArhscopeError, ModelError, StoreError
from arhscope.log import clickable_path, configure_logging, format_counts, format_ratio
from arhscope.mining import (
    TraceDag,
    TransformConfig,
    export_property,
    filter_invalidating,
    synthesize_log,
    trace_from_dag,
)
from arhscope.model import AnaModel, load_model
from arhscope.orchestrator import Status, VerdictStore, export_hasse, orchestrate
from arhscope.report import build_report, write_report

logger = logging.getLogger(__name__)


class ArgumentParser(argparse.ArgumentParser):
    """argparse with the usage-error exit code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_model(args) -> AnaModel:
    path = Path(args.model) if args.model else bundled_model_path()
    model = load_model(path)
    logger.debug(f"Loaded model {model.name} ({len(model.components)} components)")
    return model


def _load_store(args) -> VerdictStore:
    return VerdictStore.load(Path(args.out) / STORE_DIR)


def _selected(store: VerdictStore, wanted: list[str] | None) -> list[str]:
    if not wanted:
        return list(store.properties)
    unknown = sorted(set(wanted) - set(store.properties))
    if unknown:
        raise StoreError(f"properties {unknown} are not in the store")
    return [p for p in store.properties if p in wanted]


def _write_hasse(store: VerdictStore, out_dir: Path, props: list[str]) -> list[Path]:
    hasse_dir = out_dir / HASSE_DIR
    hasse_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for prop in props:
        path = hasse_dir / f"{prop}.dot"
        path.write_text(export_hasse(store, prop), encoding="utf-8")
        written.append(path)
    return written


def _artifacts(out_dir: Path) -> list[str]:
    """Emitted files relative to ``out_dir``, store and report excluded."""
    return sorted(
        path.relative_to(out_dir).as_posix()
        for path in out_dir.rglob("*")
        if path.is_file()
        and path.relative_to(out_dir).parts[0] != STORE_DIR
        and path.stem != REPORT_NAME
    )


def run_verify(args):
    """Verify every (compromise, property) pair and write the verdict store."""
    model = _load_model(args)
    bounds = model.bounds.override(
        max_sessions=args.max_sessions,
        max_term_depth=args.max_term_depth,
        max_trace_len=args.max_trace_len,
    )
    store = orchestrate(
        model,
        bounds,
        parallelism=args.jobs,
        properties=args.property,
        use_cache=not args.no_cache,
    )
    out_dir = Path(args.out)
    store_dir = store.save(out_dir / STORE_DIR)
    _write_hasse(store, out_dir, list(store.properties))

    violated = sum(r.status is Status.VIOLATED for r in store.records.values())
    pruned = sum(r.status is Status.PRUNED for r in store.records.values())
    logger.info(
        f"Verification complete: {store.invocations} verifier calls for "
        f"{store.scenarios} scenarios: "
        f"{format_counts(violated=violated, pruned=pruned)}"
    )
    logger.info(f"Verdict store: {clickable_path(store_dir, str(store_dir))}")


def run_classify(args):
    """Compute the ARH sets and write JSON, CSV and the HTML summary."""
    out_dir = Path(args.out)
    store = _load_store(args)
    report = classify(store, _selected(store, args.property))
    json_path, csv_path = save_classification(report, arh_table(store, report), out_dir)
    write_report(build_report(store, report, _artifacts(out_dir)), out_dir)
    logger.info(
        f"Classification written to {clickable_path(json_path)} "
        f"and {clickable_path(csv_path)}"
    )


def run_mine(args):
    """Synthesize one event log per property and discover process models."""
    out_dir = Path(args.out)
    store = _load_store(args)
    model = _load_model(args)
    recheck = model.digest == store.digest
    if not recheck:
        logger.warning(
            "Model differs from the one the store was built from; "
            "witnesses are mined without re-checking them"
        )
    cfg = TransformConfig(
        delta_t=args.delta_t,
        activity_filter=() if args.no_filter else DEFAULT_ACTIVITY_FILTER,
    )
    mining_dir = out_dir / MINING_DIR
    formats = args.format or list(LOG_FORMATS)

    for name in _selected(store, args.property):
        dags: list[TraceDag] = []
        for record in store.records_for(name):
            if record.status is not Status.VIOLATED:
                continue
            found = [TraceDag.from_dict(d) for d in record.witnesses]
            if recheck:
                traces = [trace_from_dag(dag, model) for dag in found]
                invalidating = filter_invalidating(
                    traces,
                    model.property(name),
                    model,
                    record.compromise,
                    store.bounds,
                )
                kept = {id(t) for t in invalidating}
                found = [dag for dag, t in zip(found, traces) if id(t) in kept]
            dags.extend(found)

        log = synthesize_log(dags, cfg)
        if not log.traces:
            logger.warning(f"No counterexample traces for {name}")
        written = export_property(name, log, mining_dir, formats, args.threshold)
        logger.info(
            f"{name}: {len(log.traces)} traces, "
            f"{sum(len(t) for t in log.traces)} events → "
            + ", ".join(clickable_path(p) for p in written)
        )


def run_report(args):
    """Write report.json and report.html from the store and emitted files."""
    out_dir = Path(args.out)
    store = _load_store(args)
    arh = classify(store, _selected(store, args.property))
    report = build_report(store, arh, _artifacts(out_dir))
    json_path, html_path = write_report(report, out_dir)
    logger.info(
        f"{report['invocations']} of {report['scenarios']} scenarios verified, "
        f"{format_ratio(report['pruned'], report['scenarios'])} pruned "
        "(holds_within_bounds is a bounded result)"
    )
    logger.info(f"Report: {clickable_path(html_path)} / {clickable_path(json_path)}")


def run_export_hasse(args):
    """Write one status-coloured lattice DOT file per property."""
    out_dir = Path(args.out)
    store = _load_store(args)
    for path in _write_hasse(store, out_dir, _selected(store, args.property)):
        logger.info(f"Wrote {clickable_path(path)}")


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return value


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid number {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {value}")
    return value


def _unit_fraction(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid number {text!r}") from None
    if not 0.0 <= value < 1.0:
        raise argparse.ArgumentTypeError(f"must be in [0, 1), got {value}")
    return value


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog="arhscope",
        description="arhscope – Adversary responsibility analysis for architectures.",
    )
    parser.add_argument(
        "--debug",
        action="store_true",
        help="Enable debug logging",
    )
    parser.add_argument(
        "--log-file",
        help="Also write a debug log to this file",
    )

    common = ArgumentParser(add_help=False)
    common.add_argument(
        "--out",
        "-o",
        default="out",
        help="Output directory (default: out)",
    )
    common.add_argument(
        "--property",
        "-p",
        action="append",
        help="Restrict to this security property (repeatable)",
    )
    with_model = ArgumentParser(add_help=False)
    with_model.add_argument(
        "--model",
        "-m",
        help="Model file (default: the bundled BMS case study)",
    )

    subparsers = parser.add_subparsers(
        dest="command", required=False, parser_class=ArgumentParser
    )

    verify_parser = subparsers.add_parser(
        "verify",
        parents=[common, with_model],
        help="Verify all compromise scenarios and write the verdict store",
    )
    verify_parser.add_argument(
        "--jobs",
        "-j",
        type=_positive_int,
        default=1,
        help="Parallel verification workers (default: 1)",
    )
    verify_parser.add_argument("--max-sessions", type=_positive_int)
    verify_parser.add_argument("--max-term-depth", type=_positive_int)
    verify_parser.add_argument("--max-trace-len", type=_positive_int)
    verify_parser.add_argument(
        "--no-cache",
        action="store_true",
        help="Neither read nor write the verdict cache",
    )
    verify_parser.set_defaults(handler=run_verify)

    classify_parser = subparsers.add_parser(
        "classify",
        parents=[common],
        help="Compute MCS, SPOF, NBNS and NRFC from the verdict store",
    )
    classify_parser.set_defaults(handler=run_classify)

    mine_parser = subparsers.add_parser(
        "mine",
        parents=[common, with_model],
        help="Export event logs and process models of the counterexamples",
    )
    mine_parser.add_argument(
        "--delta-t",
        type=_positive_float,
        default=DEFAULT_DELTA_T,
        help=f"Time between consecutive events (default: {DEFAULT_DELTA_T})",
    )
    mine_parser.add_argument(
        "--no-filter",
        action="store_true",
        help="Keep initialization, PKI and tick events",
    )
    mine_parser.add_argument(
        "--format",
        "-f",
        action="append",
        choices=LOG_FORMATS,
        help="Output format (repeatable; default: all)",
    )
    mine_parser.add_argument(
        "--threshold",
        type=_unit_fraction,
        default=DEFAULT_DEPENDENCY_THRESHOLD,
        help="Minimum dependency value kept in the dependency graph",
    )
    mine_parser.set_defaults(handler=run_mine)

    report_parser = subparsers.add_parser(
        "report",
        parents=[common],
        help="Write the static JSON and HTML report",
    )
    report_parser.set_defaults(handler=run_report)

    hasse_parser = subparsers.add_parser(
        "export-hasse",
        parents=[common],
        help="Write the status-coloured lattice as DOT per property",
    )
    hasse_parser.set_defaults(handler=run_export_hasse)
    return parser


def _welcome() -> None:
    print("=" * 60)
    print("arhscope – Adversary responsibility analysis")
    print("=" * 60)
    print()
    print("Available commands:")
    print("  verify        Verify every compromise scenario (writes the store)")
    print("  classify      Compute the ARH sets from the store")
    print("  mine          Export counterexample event logs and process models")
    print("  report        Write report.json and report.html")
    print("  export-hasse  Write the lattice as DOT, coloured by verdict")
    print()
    print("Usage examples:")
    print("  arhscope verify --jobs 4          # Verify the bundled BMS model")
    print("  arhscope classify                 # MCS/SPOF/NBNS/NRFC tables")
    print("  arhscope mine --format csv        # Event logs as CSV only")
    print()
    print("For more information:")
    print("  arhscope --help                 # Show general help")
    print("  arhscope <command> --help       # Show help for a specific command")
    print("=" * 60)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    log_level = logging.DEBUG if args.debug else logging.INFO
    configure_logging(log_level, file_path=args.log_file)

    if not hasattr(args, "handler"):
        _welcome()
        return EXIT_OK

    try:
        args.handler(args)
    except ModelError as e:
        logger.error(f"Model error: {e}")
        raise SystemExit(EXIT_MODEL)
    except StoreError as e:
        logger.error(f"{e}")
        raise SystemExit(EXIT_USAGE)
    except ArhscopeError as e:
        logger.error(f"Verification error: {e}")
        raise SystemExit(EXIT_VERIFICATION)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

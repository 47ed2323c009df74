"""Static summary report: one dictionary, written as JSON and as HTML."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import mistune
from mistune.plugins.table import table
from mistune.util import escape as escape_text

from arhscope.arh import ArhReport
from arhscope.config import REPORT_NAME
from arhscope.orchestrator import Status, VerdictStore

logger = logging.getLogger(__name__)

BOUNDED_NOTE = (
    "holds_within_bounds means no violation was found within the search "
    "bounds; it is not a proof of security."
)

_ARH_SECTIONS = (
    ("mcs", "Minimal compromise scenarios"),
    ("minimal_spof", "Minimal single points of failure"),
    ("spof", "Single points of failure"),
    ("nbns", "Necessary but not sufficient"),
    ("nrfc", "Not relevant for compromise"),
)


def build_report(
    store: VerdictStore, arh: ArhReport, artifacts: list[str] | None = None
) -> dict:
    """Summary statistics, ARH sets and emitted files as one document."""
    pruned = sum(r.status is Status.PRUNED for r in store.records.values())
    per_property = {}
    for name in store.properties:
        records = store.records_for(name)
        per_property[name] = {
            "violating": sum(r.status.is_violation for r in records),
            "violated": sum(r.status is Status.VIOLATED for r in records),
            "pruned_violated": sum(r.status is Status.PRUNED for r in records),
            "holds_within_bounds": sum(r.status is Status.HOLDS for r in records),
            "witnesses": sum(len(r.witnesses) for r in records),
            "arh": arh.properties[name].to_dict() if name in arh.properties else {},
        }
    return {
        "model_digest": store.digest,
        "components": list(store.components),
        "properties": list(store.properties),
        "bounds": store.bounds.to_dict(),
        "scenarios": store.scenarios,
        "invocations": store.invocations,
        "pruned": pruned,
        "pruning_ratio": round(pruned / store.scenarios, 4) if store.scenarios else 0.0,
        "note": BOUNDED_NOTE,
        "per_property": per_property,
        "multi_sp": arh.to_dict()["multi_sp"],
        "artifacts": sorted(artifacts or []),
    }


def _cell(text: object) -> str:
    return escape_text(str(text)).replace("|", "\\|")


def render_markdown(report: dict) -> str:
    lines = [
        "# Adversary responsibility report",
        "",
        f"Components: {', '.join(report['components'])}",
        "",
        "| scenarios | invocations | pruned | pruning ratio |",
        "|---|---|---|---|",
        f"| {report['scenarios']} | {report['invocations']} | {report['pruned']} "
        f"| {report['pruning_ratio']} |",
        "",
        "Bounds: "
        + ", ".join(f"{k} = {v}" for k, v in sorted(report["bounds"].items())),
        "",
        f"*{report['note']}*",
        "",
    ]
    for name, summary in report["per_property"].items():
        lines += [
            f"## {_cell(name)}",
            "",
            "| violating | violated | pruned_violated | holds_within_bounds "
            "| witnesses |",
            "|---|---|---|---|---|",
            f"| {summary['violating']} | {summary['violated']} "
            f"| {summary['pruned_violated']} | {summary['holds_within_bounds']} "
            f"| {summary['witnesses']} |",
            "",
        ]
        for key, title in _ARH_SECTIONS:
            members = summary["arh"].get(key, [])
            lines += [f"### {title} ({len(members)})", ""]
            if key == "nrfc":
                # Can span most of the lattice; the JSON carries the full list
                lines += ["See the JSON report for the members.", ""]
                continue
            lines += [f"- `{_cell(m)}`" for m in members] or ["- none"]
            lines.append("")
    if report["multi_sp"]:
        lines += ["## Invalidated properties", "", "| compromise | properties |"]
        lines.append("|---|---|")
        lines += [
            f"| `{_cell(key)}` | {_cell(', '.join(props))} |"
            for key, props in report["multi_sp"].items()
        ]
        lines.append("")
    if report["artifacts"]:
        lines += ["## Artifacts", ""]
        lines += [f"- [{_cell(a)}]({a})" for a in report["artifacts"]]
        lines.append("")
    return "\n".join(lines)


def render_html(report: dict) -> str:
    body = mistune.create_markdown(plugins=[table])(render_markdown(report))
    return (
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n"
        "<title>Adversary responsibility report</title>\n</head>\n<body>\n"
        f"{body}</body>\n</html>\n"
    )


def write_report(report: dict, out_dir: Path | str) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / f"{REPORT_NAME}.json"
    json_path.write_text(
        json.dumps(report, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    html_path = out_dir / f"{REPORT_NAME}.html"
    html_path.write_text(render_html(report), encoding="utf-8")
    logger.debug(f"Wrote {json_path} and {html_path}")
    return json_path, html_path

"""Synthetic event logs from counterexample traces, and model discovery.

Witness traces become trace DAGs (the JSON ingestion format), DAGs become
event traces, and a set of event traces for one property is the synthetic
event log that directly-follows and dependency graphs are discovered from.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from datetime import timedelta
from fnmatch import fnmatchcase
from pathlib import Path

import graphviz
import networkx as nx
import pandas as pd
import pm4py
from pm4py.objects.log.obj import EventLog as XesLog

from arhscope.adversary import Compromise
from arhscope.config import (
    ACTIVITY_SEPARATOR,
    ADVERSARY,
    DEFAULT_ACTIVITY_FILTER,
    DEFAULT_DELTA_T,
    DEFAULT_DEPENDENCY_THRESHOLD,
    ESCAPE_CHAR,
    SPOOF_MARK,
    XES_EPOCH,
)
from arhscope.errors import CycleError
from arhscope.model import (
    AnaModel,
    Claim,
    Message,
    SearchBounds,
    SecurityProperty,
    Spoof,
    parse_call,
    render,
    resolve_text,
)
from arhscope.verifier import ExecutionTrace, Reveal, TraceEvent, evaluate_sp

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["case_id", "activity", "timestamp"]

_SPOOF_SIDE = {Spoof.SENDER: "actor", Spoof.RECEIVER: "peer"}


# ---------------------------------------------------------------------------
# Trace DAGs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DagNode:
    id: int
    actor: str
    peer: str
    content: str
    kind: str
    spoofed: str | None = None  # "actor" or "peer"

    def to_dict(self) -> dict:
        data = {
            "id": self.id,
            "actor": self.actor,
            "peer": self.peer,
            "content": self.content,
            "kind": self.kind,
        }
        if self.spoofed:
            data["spoofed"] = self.spoofed
        return data

    @staticmethod
    def from_dict(data: Mapping) -> DagNode:
        return DagNode(
            id=int(data["id"]),
            actor=str(data["actor"]),
            peer=str(data["peer"]),
            content=str(data["content"]),
            kind=str(data.get("kind", "protocol")),
            spoofed=data.get("spoofed"),
        )


@dataclass(frozen=True)
class TraceDag:
    nodes: tuple[DagNode, ...] = ()
    edges: tuple[tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        ids = [node.id for node in self.nodes]
        if len(ids) != len(set(ids)):
            raise ValueError("trace DAG node ids must be unique")
        known = set(ids)
        for a, b in self.edges:
            if a not in known or b not in known:
                raise ValueError(f"edge ({a}, {b}) references an unknown node")

    def node(self, node_id: int) -> DagNode:
        for node in self.nodes:
            if node.id == node_id:
                return node
        raise KeyError(node_id)

    def graph(self) -> nx.DiGraph:
        graph = nx.DiGraph()
        graph.add_nodes_from(node.id for node in self.nodes)
        graph.add_edges_from(self.edges)
        return graph

    def to_dict(self) -> dict:
        return {
            "nodes": [node.to_dict() for node in self.nodes],
            "edges": [list(edge) for edge in self.edges],
        }

    @staticmethod
    def from_dict(data: Mapping) -> TraceDag:
        return TraceDag(
            nodes=tuple(DagNode.from_dict(n) for n in data.get("nodes", [])),
            edges=tuple((int(a), int(b)) for a, b in data.get("edges", [])),
        )


def trace_to_dag(w: ExecutionTrace) -> TraceDag:
    """One node per trace event, chained in trace order."""
    nodes = tuple(
        DagNode(
            i,
            event.actor,
            event.peer,
            event.content,
            event.kind,
            _SPOOF_SIDE.get(event.spoofed),
        )
        for i, event in enumerate(w.events())
    )
    edges = tuple((i, i + 1) for i in range(len(nodes) - 1))
    return TraceDag(nodes, edges)


def topo_sort(dag: TraceDag) -> list[int]:
    """Topological order of node ids, ties broken by ascending id."""
    graph = dag.graph()
    try:
        return list(nx.lexicographical_topological_sort(graph))
    except nx.NetworkXUnfeasible:
        a, b = nx.find_cycle(graph)[0][:2]
        raise CycleError(f"trace DAG has a cycle through edge {a} -> {b}") from None


def trace_from_dag(dag: TraceDag, model: AnaModel) -> ExecutionTrace:
    """Rebuild an execution trace from a DAG produced by ``trace_to_dag``."""
    messages: list[Message] = []
    claims: list[Claim] = []
    reveals: list[Reveal] = []
    setup: list[TraceEvent] = []
    for node_id in topo_sort(dag):
        node = dag.node(node_id)
        if node.kind in ("init", "pki"):
            setup.append(TraceEvent(node.kind, node.actor, node.peer, node.content))
        elif node.kind == "claim":
            call = parse_call(node.content)
            args = tuple(resolve_text(model, render(a)) for a in call.args)
            claims.append(Claim(len(messages) - 1, call.name, node.actor, args))
        elif node.peer == ADVERSARY:
            term = resolve_text(model, node.content)
            reveals.append(Reveal(len(messages), node.actor, term))
        else:
            spoofed = {"actor": Spoof.SENDER, "peer": Spoof.RECEIVER}.get(
                node.spoofed or "", Spoof.NONE
            )
            payload = resolve_text(model, node.content)
            messages.append(Message(node.actor, node.peer, payload, spoofed))
    return ExecutionTrace(tuple(messages), tuple(claims), tuple(reveals), tuple(setup))


def load_trace_dag(path: Path | str) -> TraceDag:
    with open(path, encoding="utf-8") as f:
        return TraceDag.from_dict(json.load(f))


def dump_trace_dag(dag: TraceDag, path: Path | str) -> None:
    Path(path).write_text(
        json.dumps(dag.to_dict(), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def filter_invalidating(
    witnesses: Sequence[ExecutionTrace],
    sp: SecurityProperty,
    model: AnaModel,
    compromise: Compromise,
    bounds: SearchBounds | None = None,
) -> list[ExecutionTrace]:
    """Keep only the traces that falsify ``sp`` under ``compromise``."""
    kept = [w for w in witnesses if not evaluate_sp(w, sp, compromise, model, bounds)]
    if len(kept) < len(witnesses):
        logger.debug(
            f"Dropped {len(witnesses) - len(kept)} traces that do not break {sp.name}"
        )
    return kept


# ---------------------------------------------------------------------------
# Event logs
# ---------------------------------------------------------------------------


def escape_label(text: str, separator: str = ACTIVITY_SEPARATOR) -> str:
    """Backslash-escape the escape char, the separator and the spoof mark."""
    for char in dict.fromkeys((ESCAPE_CHAR, separator, SPOOF_MARK)):
        text = text.replace(char, ESCAPE_CHAR + char)
    return text


def activity_name(node: DagNode, separator: str = ACTIVITY_SEPARATOR) -> str:
    """actor[!] : peer[!] : content, the spoof mark on the impersonated side."""
    actor = escape_label(node.actor, separator)
    peer = escape_label(node.peer, separator)
    if node.spoofed == "actor":
        actor += SPOOF_MARK
    elif node.spoofed == "peer":
        peer += SPOOF_MARK
    return separator.join((actor, peer, escape_label(node.content, separator)))


@dataclass(frozen=True)
class TransformConfig:
    delta_t: float = DEFAULT_DELTA_T
    separator: str = ACTIVITY_SEPARATOR
    activity_filter: tuple[str, ...] = DEFAULT_ACTIVITY_FILTER

    def __post_init__(self) -> None:
        if not self.delta_t > 0:
            raise ValueError(f"delta_t must be positive, got {self.delta_t}")
        if not self.separator:
            raise ValueError("separator must not be empty")

    def drops(self, node: DagNode) -> bool:
        return any(
            fnmatchcase(node.kind, pattern) or fnmatchcase(node.content, pattern)
            for pattern in self.activity_filter
        )


@dataclass(frozen=True)
class Event:
    activity: str
    case_id: int
    timestamp: float

    def __post_init__(self) -> None:
        if not self.activity:
            raise ValueError("activity must not be empty")


@dataclass(frozen=True)
class EventTrace:
    case_id: int
    events: tuple[Event, ...]

    def __post_init__(self) -> None:
        if any(e.case_id != self.case_id for e in self.events):
            raise ValueError("all events of a trace share its case id")
        stamps = [e.timestamp for e in self.events]
        if any(a >= b for a, b in zip(stamps, stamps[1:])):
            raise ValueError("timestamps must be strictly increasing")

    @property
    def activities(self) -> tuple[str, ...]:
        return tuple(e.activity for e in self.events)

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class EventLog:
    traces: tuple[EventTrace, ...] = ()

    def __post_init__(self) -> None:
        ids = [t.case_id for t in self.traces]
        if len(ids) != len(set(ids)):
            raise ValueError("case ids must be unique")

    def events(self) -> Iterator[Event]:
        for trace in self.traces:
            yield from trace.events

    def to_dataframe(self) -> pd.DataFrame:
        rows = [(e.case_id, e.activity, e.timestamp) for e in self.events()]
        return pd.DataFrame(rows, columns=CSV_COLUMNS)

    @staticmethod
    def from_dataframe(df: pd.DataFrame) -> EventLog:
        df = df.sort_values(["case_id", "timestamp"], kind="stable")
        traces = []
        for case_id, group in df.groupby("case_id", sort=True):
            events = tuple(
                Event(str(row.activity), int(case_id), float(row.timestamp))
                for row in group.itertuples(index=False)
            )
            traces.append(EventTrace(int(case_id), events))
        return EventLog(tuple(traces))


def event_trace(dag: TraceDag, case_id: int, cfg: TransformConfig) -> EventTrace:
    nodes = [dag.node(i) for i in topo_sort(dag)]
    kept = [n for n in nodes if not cfg.drops(n)]
    return EventTrace(
        case_id,
        tuple(
            Event(activity_name(n, cfg.separator), case_id, (k + 1) * cfg.delta_t)
            for k, n in enumerate(kept)
        ),
    )


def synthesize_log(
    witnesses: Sequence[TraceDag | ExecutionTrace],
    cfg: TransformConfig | None = None,
) -> EventLog:
    """One event trace per witness, numbered 0, 1, ... over the kept ones."""
    cfg = cfg or TransformConfig()
    traces: list[EventTrace] = []
    for index, witness in enumerate(witnesses):
        dag = witness if isinstance(witness, TraceDag) else trace_to_dag(witness)
        trace = event_trace(dag, len(traces), cfg)
        if trace.events:
            traces.append(trace)
        else:
            logger.debug(f"Witness {index} is empty after filtering")
    return EventLog(tuple(traces))



# ---------------------------------------------------------------------------
# Discovery
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dfg:
    activities: frozenset[str] = frozenset()
    edge_counts: Mapping[tuple[str, str], int] = field(default_factory=dict)
    start_counts: Mapping[str, int] = field(default_factory=dict)
    end_counts: Mapping[str, int] = field(default_factory=dict)


def discover_dfg(log: EventLog) -> Dfg:
    edges: Counter[tuple[str, str]] = Counter()
    starts: Counter[str] = Counter()
    ends: Counter[str] = Counter()
    activities: set[str] = set()
    for trace in log.traces:
        names = trace.activities
        if not names:
            continue
        activities.update(names)
        starts[names[0]] += 1
        ends[names[-1]] += 1
        edges.update(zip(names, names[1:]))
    return Dfg(frozenset(activities), dict(edges), dict(starts), dict(ends))


def dependency_graph(
    dfg: Dfg, threshold: float = DEFAULT_DEPENDENCY_THRESHOLD
) -> dict[tuple[str, str], float]:
    """Heuristic-miner dependency value for every observed succession."""
    if not 0.0 <= threshold < 1.0:
        raise ValueError(f"threshold must be in [0, 1), got {threshold}")
    result = {}
    for (a, b), ab in sorted(dfg.edge_counts.items()):
        if a == b:
            value = ab / (ab + 1)
        else:
            ba = dfg.edge_counts.get((b, a), 0)
            value = (ab - ba) / (ab + ba + 1)
        if value >= threshold:
            result[(a, b)] = value
    return result


# ---------------------------------------------------------------------------
# Import / export
# ---------------------------------------------------------------------------


def _to_xes_frame(log: EventLog) -> pd.DataFrame:
    df = log.to_dataframe()
    return pd.DataFrame(
        {
            "case:concept:name": df["case_id"].astype(str),
            "concept:name": df["activity"],
            "time:timestamp": pd.to_datetime(
                [XES_EPOCH + timedelta(seconds=float(t)) for t in df["timestamp"]],
                utc=True,
            ),
        }
    )


def export_log(log: EventLog, fmt: str, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        log.to_dataframe().to_csv(path, index=False, encoding="utf-8")
    elif fmt == "xes" and not log.traces:
        pm4py.write_xes(XesLog(), str(path))
    elif fmt == "xes":
        pm4py.write_xes(_to_xes_frame(log), str(path), case_id_key="case:concept:name")
    else:
        raise ValueError(f"unsupported log format {fmt!r}")
    logger.debug(f"Wrote {fmt.upper()} log with {len(log.traces)} cases to {path}")
    return path


def read_log(path: Path | str) -> EventLog:
    """Read a CSV or XES event log written by ``export_log``."""
    path = Path(path)
    if path.suffix == ".csv":
        df = pd.read_csv(
            path,
            dtype={"case_id": int, "activity": str, "timestamp": float},
            keep_default_na=False,
        )
        return EventLog.from_dataframe(df)
    if path.suffix == ".xes":
        log = pm4py.read_xes(str(path))
        df = log if isinstance(log, pd.DataFrame) else pm4py.convert_to_dataframe(log)
        if df.empty:
            return EventLog(())
        stamps = pd.to_datetime(df["time:timestamp"], utc=True)
        frame = pd.DataFrame(
            {
                "case_id": df["case:concept:name"].astype(int),
                "activity": df["concept:name"].astype(str),
                "timestamp": [(t - XES_EPOCH).total_seconds() for t in stamps],
            }
        )
        return EventLog.from_dataframe(frame)
    raise ValueError(f"unsupported log file {path.name}")


def _activity_ids(activities: Sequence[str]) -> dict[str, str]:
    return {a: f"a{i}" for i, a in enumerate(sorted(activities))}


def dfg_to_dot(dfg: Dfg, name: str = "dfg") -> str:
    """Directly-follows graph with artificial start and end nodes."""
    dot = graphviz.Digraph(name=name, graph_attr={"rankdir": "LR"})
    ids = _activity_ids(list(dfg.activities))
    dot.node("start", label="start", shape="circle")
    dot.node("end", label="end", shape="doublecircle")
    for activity, node_id in ids.items():
        dot.node(node_id, label=activity, shape="box")
    for activity, count in sorted(dfg.start_counts.items()):
        dot.edge("start", ids[activity], label=str(count))
    for (a, b), count in sorted(dfg.edge_counts.items()):
        dot.edge(ids[a], ids[b], label=str(count))
    for activity, count in sorted(dfg.end_counts.items()):
        dot.edge(ids[activity], "end", label=str(count))
    return dot.source


def dependency_to_dot(
    dependencies: Mapping[tuple[str, str], float], name: str = "dependency"
) -> str:
    dot = graphviz.Digraph(name=name, graph_attr={"rankdir": "LR"})
    activities = {a for pair in dependencies for a in pair}
    ids = _activity_ids(list(activities))
    for activity, node_id in ids.items():
        dot.node(node_id, label=activity, shape="box")
    for (a, b), value in sorted(dependencies.items()):
        dot.edge(ids[a], ids[b], label=f"{value:.3f}")
    return dot.source


def export_model(
    graph: Dfg | Mapping[tuple[str, str], float], path: Path | str
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    source = dfg_to_dot(graph) if isinstance(graph, Dfg) else dependency_to_dot(graph)
    path.write_text(source, encoding="utf-8")
    return path


def export_property(
    name: str,
    log: EventLog,
    out_dir: Path,
    formats: Sequence[str],
    threshold: float = DEFAULT_DEPENDENCY_THRESHOLD,
) -> list[Path]:
    """Write ``<name>.csv``/``.xes`` and the DFG/dependency DOT files."""
    written = []
    for fmt in ("csv", "xes"):
        if fmt in formats:
            written.append(export_log(log, fmt, out_dir / f"{name}.{fmt}"))
    if "dot" in formats:
        dfg = discover_dfg(log)
        written.append(export_model(dfg, out_dir / f"{name}.dfg.dot"))
        deps = dependency_graph(dfg, threshold)
        written.append(export_model(deps, out_dir / f"{name}.dependency.dot"))
    return written

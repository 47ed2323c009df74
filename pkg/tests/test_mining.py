"""Tests for trace DAGs, event-log synthesis and process discovery."""

import random
import xml.etree.ElementTree as ET

import pytest

from arhscope.adversary import Compromise
from arhscope.errors import CycleError
from arhscope.mining import (
    DagNode,
    Event,
    EventLog,
    EventTrace,
    TraceDag,
    TransformConfig,
    activity_name,
    dependency_graph,
    dfg_to_dot,
    discover_dfg,
    dump_trace_dag,
    escape_label,
    event_trace,
    export_log,
    export_property,
    filter_invalidating,
    load_trace_dag,
    read_log,
    synthesize_log,
    topo_sort,
    trace_from_dag,
    trace_to_dag,
)
from arhscope.model import honest_run, replay
from arhscope.verifier import ExecutionTrace, check_property, setup_events

FORGED_RELAY = [
    "A:Adversary:skA",
    "A:M:pair(n,sign(n,skA))",
    "A:A:Start(A,B,n)",
    "M!:B:pair(adv,sign(adv,skA))",
    "B:B:Done(A,B,adv)",
]

# -- helpers -----------------------------------------------------------------


def _witness(model, key: str, prop: str = "auth") -> ExecutionTrace:
    c = Compromise.from_key(model.components, key)
    return check_property(model, c, model.property(prop)).witnesses[0]


def _honest_trace(model) -> ExecutionTrace:
    messages = tuple(honest_run(model))
    claims = replay(model, messages)[-1].claims
    return ExecutionTrace(messages, claims, setup=setup_events(model))


def _node(node_id: int, content: str = "x", kind: str = "protocol") -> DagNode:
    return DagNode(node_id, "A", "B", content, kind)


def _log(*cases: list[str]) -> EventLog:
    """An event log with one trace per activity list, one time unit apart."""
    return EventLog(
        tuple(
            EventTrace(
                case_id,
                tuple(Event(a, case_id, float(k + 1)) for k, a in enumerate(names)),
            )
            for case_id, names in enumerate(cases)
        )
    )


# -- tests: trace DAGs -------------------------------------------------------


class TestTraceDag:
    """DAG construction, ordering and persistence."""

    def test_witness_becomes_a_chain(self, relay):
        """One node per event, linked in trace order."""
        witness = _witness(relay, "A:r,M:w")
        dag = trace_to_dag(witness)
        assert len(dag.nodes) == len(witness.event_keys())
        assert dag.edges == tuple((i, i + 1) for i in range(len(dag.nodes) - 1))
        assert topo_sort(dag) == list(range(len(dag.nodes)))

    def test_setup_comes_first(self, relay):
        """Init per role entity, then the PKI registration."""
        dag = trace_to_dag(_witness(relay, "A:r,M:w"))
        head = [(n.kind, n.actor, n.peer, n.content) for n in dag.nodes[:4]]
        assert head == [
            ("init", "A", "A", "init"),
            ("init", "B", "B", "init"),
            ("init", "M", "M", "init"),
            ("pki", "A", "PKI", "pkA"),
        ]

    def test_ties_break_by_id(self):
        """Unordered nodes come out in ascending id order."""
        dag = TraceDag((_node(2), _node(0), _node(1)), ((2, 0),))
        assert topo_sort(dag) == [1, 2, 0]

    def test_cycle_is_rejected(self):
        """A cyclic trace DAG has no event order."""
        dag = TraceDag((_node(0), _node(1)), ((0, 1), (1, 0)))
        with pytest.raises(CycleError):
            topo_sort(dag)

    def test_invalid_dags(self):
        """Duplicate ids and dangling edges are rejected."""
        with pytest.raises(ValueError, match="unique"):
            TraceDag((_node(0), _node(0)))
        with pytest.raises(ValueError, match="unknown node"):
            TraceDag((_node(0),), ((0, 7),))

    def test_dump_and_load(self, relay, tmp_path):
        """The JSON ingestion format preserves spoof marks."""
        dag = trace_to_dag(_witness(relay, "A:r,B:w"))
        path = tmp_path / "witness.json"
        dump_trace_dag(dag, path)
        loaded = load_trace_dag(path)
        assert loaded == dag
        assert any(n.spoofed == "peer" for n in loaded.nodes)

    def test_trace_from_dag(self, relay):
        """A stored DAG rebuilds a trace with the same events."""
        witness = _witness(relay, "A:r,Net:w")
        rebuilt = trace_from_dag(trace_to_dag(witness), relay)
        assert rebuilt.event_keys() == witness.event_keys()
        assert len(rebuilt) == len(witness)


# -- tests: transformation ---------------------------------------------------


class TestTransformation:
    """Activity names, filtering and timestamps."""

    def test_escape_label(self):
        """Escape char, separator and spoof mark are backslash-escaped."""
        assert escape_label("a:b\\c!") == "a\\:b\\\\c\\!"
        assert escape_label("plain") == "plain"

    def test_activity_name_marks_the_spoofed_side(self):
        """The mark follows the impersonated endpoint."""
        sent = DagNode(0, "M", "B", "x", "adversary", "actor")
        received = DagNode(0, "M", "B", "x", "adversary", "peer")
        assert activity_name(sent) == "M!:B:x"
        assert activity_name(received) == "M:B!:x"
        assert activity_name(_node(0)) == "A:B:x"

    def test_default_filter(self, relay):
        """Init, PKI and tick events are dropped."""
        dag = trace_to_dag(_witness(relay, "A:r,M:w"))
        trace = event_trace(dag, 0, TransformConfig())
        assert trace.activities == tuple(FORGED_RELAY)
        assert [e.timestamp for e in trace.events] == [1.0, 2.0, 3.0, 4.0, 5.0]

    def test_delta_t(self, relay):
        """Timestamps are multiples of delta_t."""
        cfg = TransformConfig(delta_t=2.5)
        trace = event_trace(trace_to_dag(_witness(relay, "A:r,M:w")), 3, cfg)
        assert trace.case_id == 3
        assert [e.timestamp for e in trace.events][:2] == [2.5, 5.0]

    def test_no_filter(self, relay):
        """Without a filter the setup and tick events stay."""
        cfg = TransformConfig(activity_filter=())
        trace = event_trace(trace_to_dag(_witness(relay, "A:r,M:w")), 0, cfg)
        assert trace.activities[0] == "A:A:init"
        assert "A:PKI:pkA" in trace.activities
        assert len(trace) > len(FORGED_RELAY)

    def test_one_event_per_node(self, relay):
        """Without a filter every DAG node becomes exactly one event."""
        dag = trace_to_dag(_witness(relay, "A:r,B:w"))
        trace = event_trace(dag, 0, TransformConfig(activity_filter=()))
        assert len(trace) == len(dag.nodes)
        assert [e.timestamp for e in trace.events] == [
            float(k) for k in range(1, len(dag.nodes) + 1)
        ]

    def test_invalid_config(self):
        """delta_t must be positive, the separator non-empty."""
        with pytest.raises(ValueError):
            TransformConfig(delta_t=0)
        with pytest.raises(ValueError):
            TransformConfig(separator="")

    def test_timestamps_must_increase(self):
        """Equal timestamps within a case are rejected."""
        with pytest.raises(ValueError, match="increasing"):
            EventTrace(0, (Event("a", 0, 1.0), Event("b", 0, 1.0)))

    def test_case_ids_must_be_unique(self):
        """Two traces cannot share a case id."""
        trace = EventTrace(0, (Event("a", 0, 1.0),))
        with pytest.raises(ValueError):
            EventLog((trace, trace))

    def test_relay_log(self, relay):
        """Every forged run starts with the key reveal; marks follow the access."""
        keys = ["A:r,B:w", "A:r,M:w", "A:r,Net:w"]
        log = synthesize_log([_witness(relay, k) for k in keys])
        assert [t.case_id for t in log.traces] == [0, 1, 2]
        assert all(t.activities[0] == "A:Adversary:skA" for t in log.traces)
        marks = [t.activities[3] for t in log.traces]
        assert marks == [
            "M:B!:pair(adv,sign(adv,skA))",
            "M!:B:pair(adv,sign(adv,skA))",
            "M!:B:pair(adv,sign(adv,skA))",
        ]

    def test_empty_cases_are_dropped(self):
        """A witness with nothing left after filtering adds no trace."""
        setup_only = TraceDag((_node(0, "init", "init"),))
        assert synthesize_log([setup_only]).traces == ()

    def test_case_ids_count_kept_traces(self):
        """Witnesses dropped by the filter leave no gap in the case ids."""
        setup_only = TraceDag((_node(0, "init", "init"),))
        message = TraceDag((_node(0),))
        log = synthesize_log([message, setup_only, message, setup_only, message])
        assert [t.case_id for t in log.traces] == [0, 1, 2]
        assert all(e.case_id == t.case_id for t in log.traces for e in t.events)

    def test_filter_invalidating(self, relay):
        """Only traces that break the property under the compromise stay."""
        honest = _honest_trace(relay)
        secrecy = relay.property("secret_n")
        leaked = Compromise.from_key(relay.components, "A:r")
        unread = Compromise.from_key(relay.components, "Net:w")
        assert filter_invalidating([honest], secrecy, relay, leaked) == [honest]
        assert filter_invalidating([honest], secrecy, relay, unread) == []


# -- tests: discovery --------------------------------------------------------


class TestDiscovery:
    """Directly-follows counts and dependency values."""

    def test_dfg_counts(self):
        """Edges, starts and ends are counted per occurrence."""
        dfg = discover_dfg(_log(["a", "b", "c"], ["a", "c"]))
        assert dfg.activities == {"a", "b", "c"}
        assert dfg.edge_counts == {("a", "b"): 1, ("b", "c"): 1, ("a", "c"): 1}
        assert dfg.start_counts == {"a": 2}
        assert dfg.end_counts == {"c": 2}

    def test_dependency_of_a_repeated_succession(self):
        """Two a-b successions and none back give 2/3."""
        deps = dependency_graph(discover_dfg(_log(["a", "b"], ["a", "b"])))
        assert deps[("a", "b")] == pytest.approx(2 / 3)

    def test_dependency_of_a_balanced_succession(self):
        """As often forth as back means no dependency."""
        deps = dependency_graph(discover_dfg(_log(["a", "b", "a"])))
        assert deps[("a", "b")] == pytest.approx(0.0)
        assert deps[("b", "a")] == pytest.approx(0.0)

    def test_dependency_grows_with_evidence(self):
        """Four successions give 0.8."""
        deps = dependency_graph(discover_dfg(_log(*[["a", "b"]] * 4)))
        assert deps[("a", "b")] == pytest.approx(0.8)

    def test_self_loop(self):
        """A single self-succession gives 1/2."""
        deps = dependency_graph(discover_dfg(_log(["a", "a"])))
        assert deps[("a", "a")] == pytest.approx(0.5)

    def test_self_loop_with_evidence(self):
        """Four self-successions give 4/5."""
        dfg = discover_dfg(_log(["a"] * 5))
        assert dfg.edge_counts == {("a", "a"): 4}
        assert dependency_graph(dfg)[("a", "a")] == pytest.approx(0.8, abs=1e-9)

    def test_threshold(self):
        """Values below the threshold are dropped; it must lie in [0, 1)."""
        dfg = discover_dfg(_log(["a", "b", "a"], ["c", "d"]))
        assert set(dependency_graph(dfg, 0.4)) == {("c", "d")}
        with pytest.raises(ValueError):
            dependency_graph(dfg, 1.0)

    def test_dfg_dot(self):
        """Artificial start and end nodes frame the activities."""
        source = dfg_to_dot(discover_dfg(_log(["a", "b"])))
        assert "start" in source
        assert "doublecircle" in source
        assert source.count(" -> ") == 3

    def test_laws_on_random_logs(self):
        """Edge counts add up and every trace replays through its DFG."""
        rng = random.Random(13)
        for _ in range(50):
            cases = [
                [rng.choice("abcd") for _ in range(rng.randint(1, 6))]
                for _ in range(rng.randint(1, 5))
            ]
            dfg = discover_dfg(_log(*cases))
            assert sum(dfg.edge_counts.values()) == sum(len(c) - 1 for c in cases)
            assert sum(dfg.start_counts.values()) == len(cases)
            for names in cases:
                assert names[0] in dfg.start_counts
                assert names[-1] in dfg.end_counts
                for pair in zip(names, names[1:]):
                    assert dfg.edge_counts[pair] > 0


# -- tests: import / export --------------------------------------------------


class TestExport:
    """CSV, XES and DOT files."""

    def test_csv(self, relay, tmp_path):
        """Activity names with commas survive the CSV round trip."""
        log = synthesize_log([_witness(relay, "A:r,M:w")])
        path = export_log(log, "csv", tmp_path / "auth.csv")
        header = path.read_text(encoding="utf-8").splitlines()[0]
        assert header == "case_id,activity,timestamp"
        assert read_log(path) == log

    def test_csv_is_stable(self, relay, tmp_path):
        """Writing a log that was read back gives the same bytes."""
        log = synthesize_log([_witness(relay, "A:r,Net:w")])
        first = export_log(log, "csv", tmp_path / "first.csv")
        second = export_log(read_log(first), "csv", tmp_path / "second.csv")
        assert first.read_bytes() == second.read_bytes()

    def test_xes(self, relay, tmp_path):
        """XES logs read back with the same cases and timestamps."""
        log = synthesize_log([_witness(relay, k) for k in ("A:r,M:w", "A:r,B:w")])
        path = export_log(log, "xes", tmp_path / "auth.xes")
        assert read_log(path) == log

    def test_xes_is_stable(self, relay, tmp_path):
        """Writing an XES log that was read back gives the same bytes."""
        log = synthesize_log([_witness(relay, k) for k in ("A:r,M:w", "A:r,Net:w")])
        first = export_log(log, "xes", tmp_path / "first.xes")
        second = export_log(read_log(first), "xes", tmp_path / "second.xes")
        assert first.read_bytes() == second.read_bytes()

    def test_empty_log_still_writes_xes(self, tmp_path):
        """A property without traces gets a valid XES file with no traces."""
        written = export_property("auth", EventLog(()), tmp_path, ["csv", "xes"])
        assert [p.name for p in written] == ["auth.csv", "auth.xes"]
        root = ET.parse(tmp_path / "auth.xes").getroot()
        assert root.tag.endswith("log")
        assert not [e for e in root.iter() if e.tag.endswith("trace")]
        assert read_log(tmp_path / "auth.csv") == EventLog(())

    def test_unsupported_formats(self, tmp_path):
        """Only CSV and XES logs exist."""
        with pytest.raises(ValueError):
            export_log(_log(["a"]), "json", tmp_path / "log.json")
        with pytest.raises(ValueError):
            read_log(tmp_path / "log.txt")

    def test_export_property(self, relay, tmp_path):
        """One log per format plus both discovered graphs."""
        log = synthesize_log([_witness(relay, "A:r,M:w")])
        written = export_property("auth", log, tmp_path, ["csv", "xes", "dot"])
        assert sorted(p.name for p in written) == [
            "auth.csv",
            "auth.dependency.dot",
            "auth.dfg.dot",
            "auth.xes",
        ]
        assert all(p.exists() for p in written)

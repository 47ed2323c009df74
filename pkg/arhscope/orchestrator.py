"""Compromise-lattice traversal with monotonicity pruning, and the verdict store.

The lattice is walked rank by rank from the empty compromise. Nodes of equal
rank are pairwise incomparable, so a rank is one wave of independent
verification jobs. A (compromise, property) pair above a violated one is
marked ``pruned_violated`` without calling the verifier.
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections.abc import Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from itertools import groupby
from pathlib import Path

import graphviz
import networkx as nx

from arhscope.adversary import Compromise, Permission, all_compromises, leq
from arhscope.config import STORE_INDEX, get_cache_dir
from arhscope.errors import ArhscopeError, StoreError, VerificationError
from arhscope.log import format_counts, format_ratio
from arhscope.mining import trace_to_dag
from arhscope.model import AnaModel, SearchBounds, SecurityProperty
from arhscope.verifier import check_property

logger = logging.getLogger(__name__)

_RAISES = {
    Permission.NONE: (Permission.R, Permission.W),
    Permission.R: (Permission.RW,),
    Permission.W: (Permission.RW,),
    Permission.RW: (),
}

STATUS_COLORS = {
    "holds": "palegreen",
    "violated": "tomato",
    "pruned_violated": "lightsalmon",
}


class Status(str, Enum):
    HOLDS = "holds"
    VIOLATED = "violated"
    PRUNED = "pruned_violated"

    @property
    def is_violation(self) -> bool:
        return self is not Status.HOLDS


# ---------------------------------------------------------------------------
# Lattice
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LatticeNode:
    compromise: Compromise
    covers: frozenset[str]  # keys of the nodes directly below
    covered_by: frozenset[str]  # keys of the nodes directly above


def successors(c: Compromise) -> list[Compromise]:
    """All covers of ``c``: one atomic permission raise each."""
    return [
        c.raised(name, raised)
        for name, perm in c.items()
        for raised in _RAISES[perm]
    ]


def scenario_count(components: int, properties: int) -> int:
    """|P|^|components| · |properties| verification scenarios."""
    if components < 0 or properties < 0:
        raise ValueError("counts must be non-negative")
    return 4**components * properties


def hasse_graph(components: Iterable[str]) -> nx.DiGraph:
    """Cover graph of the compromise lattice, nodes keyed by compromise key."""
    graph = nx.DiGraph()
    for c in all_compromises(components):
        graph.add_node(c.key(), compromise=c, rank=c.rank())
    for c in all_compromises(components):
        for upper in successors(c):
            graph.add_edge(c.key(), upper.key())
    return graph


def lattice(components: Iterable[str]) -> dict[str, LatticeNode]:
    graph = hasse_graph(components)
    return {
        key: LatticeNode(
            data["compromise"],
            frozenset(graph.predecessors(key)),
            frozenset(graph.successors(key)),
        )
        for key, data in graph.nodes(data=True)
    }


def rank_waves(components: Iterable[str]) -> list[list[Compromise]]:
    """Compromises grouped by rank, each wave sorted by key."""
    ordered = sorted(all_compromises(components), key=Compromise.sort_key)
    return [list(wave) for _, wave in groupby(ordered, key=Compromise.rank)]


# ---------------------------------------------------------------------------
# Verdict store
# ---------------------------------------------------------------------------


def key_slug(c: Compromise) -> str:
    """File name stem for a compromise record."""
    key = c.key()
    return key.replace(":", "=").replace(",", "+") if key else "empty"


@dataclass(frozen=True)
class Record:
    compromise: Compromise
    prop: str
    status: Status
    pruned_from: Compromise | None = None
    states_explored: int = 0
    witnesses: tuple[dict, ...] = ()  # trace-DAG documents

    def to_dict(self) -> dict:
        return {
            "compromise": self.compromise.key(),
            "property": self.prop,
            "status": self.status.value,
            "pruned_from": None if self.pruned_from is None else self.pruned_from.key(),
            "states_explored": self.states_explored,
            "witnesses": list(self.witnesses),
        }

    @staticmethod
    def from_dict(components: Sequence[str], data: dict) -> Record:
        pruned_from = data.get("pruned_from")
        return Record(
            compromise=Compromise.from_key(components, data["compromise"]),
            prop=data["property"],
            status=Status(data["status"]),
            pruned_from=(
                None
                if pruned_from is None
                else Compromise.from_key(components, pruned_from)
            ),
            states_explored=int(data.get("states_explored", 0)),
            witnesses=tuple(data.get("witnesses", [])),
        )


def _dump(data: dict) -> str:
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


@dataclass
class VerdictStore:
    """Outcome per (compromise, property), with pruning provenance."""

    components: tuple[str, ...]
    properties: tuple[str, ...]
    bounds: SearchBounds
    digest: str = ""
    records: dict[tuple[str, str], Record] = field(default_factory=dict)
    invocations: int = 0

    @property
    def scenarios(self) -> int:
        return scenario_count(len(self.components), len(self.properties))

    def put(self, record: Record) -> None:
        self.records[(record.compromise.key(), record.prop)] = record

    def get(self, c: Compromise, prop: str) -> Record:
        try:
            return self.records[(c.key(), prop)]
        except KeyError:
            raise StoreError(f"no record for {c} / {prop}") from None

    def records_for(self, prop: str) -> list[Record]:
        return sorted(
            (r for r in self.records.values() if r.prop == prop),
            key=lambda r: r.compromise.sort_key(),
        )

    def is_total(self, prop: str | None = None) -> bool:
        props = [prop] if prop else self.properties
        expected = 4 ** len(self.components)
        return all(len(self.records_for(p)) == expected for p in props)

    def index(self) -> dict:
        return {
            "digest": self.digest,
            "components": list(self.components),
            "properties": list(self.properties),
            "bounds": self.bounds.to_dict(),
            "scenarios": self.scenarios,
            "invocations": self.invocations,
        }

    def save(self, directory: Path | str) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / STORE_INDEX).write_text(_dump(self.index()), encoding="utf-8")
        for prop in self.properties:
            prop_dir = directory / prop
            prop_dir.mkdir(exist_ok=True)
            for record in self.records_for(prop):
                path = prop_dir / f"{key_slug(record.compromise)}.json"
                path.write_text(_dump(record.to_dict()), encoding="utf-8")
        logger.debug(f"Saved {len(self.records)} records to {directory}")
        return directory

    @staticmethod
    def load(directory: Path | str) -> VerdictStore:
        directory = Path(directory)
        index_path = directory / STORE_INDEX
        if not index_path.exists():
            raise StoreError(f"no verdict store in {directory} (run 'verify' first)")
        try:
            index = json.loads(index_path.read_text(encoding="utf-8"))
            store = VerdictStore(
                components=tuple(index["components"]),
                properties=tuple(index["properties"]),
                bounds=SearchBounds(**index["bounds"]),
                digest=index.get("digest", ""),
                invocations=int(index.get("invocations", 0)),
            )
            for prop in store.properties:
                for path in sorted((directory / prop).glob("*.json")):
                    data = json.loads(path.read_text(encoding="utf-8"))
                    store.put(Record.from_dict(store.components, data))
        except (OSError, KeyError, TypeError, ValueError) as e:
            raise StoreError(f"cannot read verdict store {directory}: {e}") from e
        return store


def compute_C(store: VerdictStore, prop: str) -> set[Compromise]:  # noqa: N802
    """C(S, L): compromises under which ``prop`` is violated."""
    if prop not in store.properties:
        raise StoreError(f"property {prop!r} is not in the store")
    if not store.is_total(prop):
        raise StoreError(f"verdict store is incomplete for {prop!r}")
    return {r.compromise for r in store.records_for(prop) if r.status.is_violation}


# ---------------------------------------------------------------------------
# Verification jobs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Outcome:
    key: str
    prop: str
    violated: bool
    states_explored: int
    witnesses: tuple[dict, ...]


def cache_key(model: AnaModel, c: Compromise, prop: str, bounds: SearchBounds) -> str:
    payload = json.dumps(
        [model.digest, c.key(), prop, bounds.to_dict()], sort_keys=True
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _read_cache(path: Path) -> dict | None:
    if not path.exists():
        return None
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        if not isinstance(data.get("violated"), bool):
            raise ValueError("missing verdict")
        return data
    except (OSError, ValueError, AttributeError) as e:
        logger.warning(f"Ignoring unreadable cache record {path.name}: {e}")
        return None


_worker_model: AnaModel | None = None
_worker_bounds: SearchBounds | None = None


def _init_worker(model: AnaModel, bounds: SearchBounds) -> None:
    global _worker_model, _worker_bounds
    _worker_model = model
    _worker_bounds = bounds


def _verify(model: AnaModel, bounds: SearchBounds, key: str, prop: str) -> _Outcome:
    c = Compromise.from_key(model.components, key)
    try:
        verdict = check_property(model, c, model.property(prop), bounds)
    except ArhscopeError as e:
        raise VerificationError(f"{c} / {prop}: {e}") from e
    return _Outcome(
        key,
        prop,
        verdict.violated,
        verdict.states_explored,
        tuple(trace_to_dag(w).to_dict() for w in verdict.witnesses),
    )


def _verify_in_worker(job: tuple[str, str]) -> _Outcome:
    assert _worker_model is not None and _worker_bounds is not None
    return _verify(_worker_model, _worker_bounds, *job)


class Orchestrator:
    """Drives the pruned traversal for one model and bounds."""

    def __init__(
        self,
        model: AnaModel,
        bounds: SearchBounds | None = None,
        jobs: int = 1,
        properties: Sequence[str] | None = None,
        cache_dir: Path | None = None,
    ) -> None:
        self.model = model
        self.bounds = bounds or model.bounds
        self.jobs = max(1, jobs)
        names = [p.name for p in model.properties]
        if properties:
            unknown = sorted(set(properties) - set(names))
            if unknown:
                raise StoreError(f"unknown properties {unknown}")
            names = [n for n in names if n in properties]
        self.properties: tuple[SecurityProperty, ...] = tuple(
            model.property(n) for n in names
        )
        self.cache_dir = cache_dir
        self.cache_hits = 0

    def _cache_path(self, key: str, prop: str) -> Path:
        assert self.cache_dir is not None
        c = Compromise.from_key(self.model.components, key)
        return self.cache_dir / f"{cache_key(self.model, c, prop, self.bounds)}.json"

    def _cached(self, key: str, prop: str) -> _Outcome | None:
        if self.cache_dir is None:
            return None
        data = _read_cache(self._cache_path(key, prop))
        if data is None:
            return None
        return _Outcome(
            key,
            prop,
            data["violated"],
            int(data.get("states_explored", 0)),
            tuple(data.get("witnesses", [])),
        )

    def _remember(self, outcome: _Outcome) -> None:
        if self.cache_dir is None:
            return
        path = self._cache_path(outcome.key, outcome.prop)
        try:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            path.write_text(
                _dump(
                    {
                        "violated": outcome.violated,
                        "states_explored": outcome.states_explored,
                        "witnesses": list(outcome.witnesses),
                    }
                ),
                encoding="utf-8",
            )
        except OSError as e:
            logger.warning(f"Cannot write cache record {path.name}: {e}")

    def _run_wave(
        self, jobs: list[tuple[str, str]], pool: ProcessPoolExecutor | None
    ) -> list[_Outcome]:
        outcomes: list[_Outcome] = []
        pending: list[tuple[str, str]] = []
        for key, prop in jobs:
            cached = self._cached(key, prop)
            if cached is not None:
                self.cache_hits += 1
                outcomes.append(cached)
            else:
                pending.append((key, prop))
        if pool is not None and len(pending) > 1:
            computed = list(pool.map(_verify_in_worker, pending))
        else:
            computed = [_verify(self.model, self.bounds, k, p) for k, p in pending]
        for outcome in computed:
            self._remember(outcome)
        outcomes.extend(computed)
        return sorted(outcomes, key=lambda o: (o.key, o.prop))

    def run(self) -> VerdictStore:
        components = self.model.components
        store = VerdictStore(
            components=components,
            properties=tuple(p.name for p in self.properties),
            bounds=self.bounds,
            digest=self.model.digest,
        )
        roots: dict[str, list[Compromise]] = {p.name: [] for p in self.properties}
        pool = None
        if self.jobs > 1:
            pool = ProcessPoolExecutor(
                max_workers=self.jobs,
                initializer=_init_worker,
                initargs=(self.model, self.bounds),
            )
        try:
            for wave in rank_waves(components):
                jobs = []
                for c in wave:
                    for prop in store.properties:
                        root = next((r for r in roots[prop] if leq(r, c)), None)
                        if root is not None:
                            store.put(Record(c, prop, Status.PRUNED, pruned_from=root))
                        else:
                            jobs.append((c.key(), prop))
                if not jobs:
                    continue
                logger.debug(f"Rank {wave[0].rank()}: dispatching {len(jobs)} jobs")
                for outcome in self._run_wave(jobs, pool):
                    c = Compromise.from_key(components, outcome.key)
                    status = Status.VIOLATED if outcome.violated else Status.HOLDS
                    store.put(
                        Record(
                            c,
                            outcome.prop,
                            status,
                            states_explored=outcome.states_explored,
                            witnesses=outcome.witnesses,
                        )
                    )
                    store.invocations += 1
                    if outcome.violated:
                        roots[outcome.prop].append(c)
        finally:
            if pool is not None:
                pool.shutdown()

        pruned = sum(r.status is Status.PRUNED for r in store.records.values())
        logger.info(
            f"{store.invocations} of {store.scenarios} scenarios verified "
            f"({format_ratio(pruned, store.scenarios)} pruned)"
        )
        logger.debug(format_counts(cached=self.cache_hits, pruned=pruned))
        return store


def orchestrate(
    model: AnaModel,
    bounds: SearchBounds | None = None,
    parallelism: int = 1,
    properties: Sequence[str] | None = None,
    use_cache: bool = True,
) -> VerdictStore:
    """Verify every (compromise, property) pair, pruning above violations."""
    if not model.properties:
        raise StoreError("the model defines no security properties")
    cache_dir = get_cache_dir() if use_cache else None
    return Orchestrator(model, bounds, parallelism, properties, cache_dir).run()


def export_hasse(store: VerdictStore, prop: str) -> str:
    """DOT source of the lattice, each node filled by its status for ``prop``."""
    dot = graphviz.Digraph(
        name=prop,
        graph_attr={"rankdir": "BT"},
        node_attr={"style": "filled", "shape": "box"},
    )
    ordered = sorted(all_compromises(store.components), key=Compromise.sort_key)
    ids = {c.key(): f"n{i}" for i, c in enumerate(ordered)}
    for c in ordered:
        status = store.get(c, prop).status.value
        dot.node(ids[c.key()], label=str(c), fillcolor=STATUS_COLORS[status])
    for c in ordered:
        for upper in successors(c):
            dot.edge(ids[c.key()], ids[upper.key()])
    return dot.source

"""Adversary-centric responsibility hierarchy (ARH) over a verdict store.

A violation set C is held by its minimal elements; membership is
"some minimal element lies below". The four classes:

- MCS: the ⪯-minimal elements of C.
- SPOF: members of C that compromise exactly one component.
- NBNS: minimal non-violating compromises c such that some violating c′ ⪰ c
  stops violating once the components of c are dropped from it.
- NRFC: non-violating compromises whose removal never matters.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Collection, Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import pandas as pd

from arhscope.adversary import Compromise, Permission, all_compromises, leq, subtract
from arhscope.config import ARH_DIR
from arhscope.errors import NotUpwardClosedError, StoreError
from arhscope.orchestrator import VerdictStore, compute_C, successors

logger = logging.getLogger(__name__)

# Largest universe the exact enumeration mode accepts
EXACT_MAX_COMPONENTS = 4

_LOWER = {
    Permission.NONE: (),
    Permission.R: (Permission.NONE,),
    Permission.W: (Permission.NONE,),
    Permission.RW: (Permission.R, Permission.W),
}


def _ordered(cs: Iterable[Compromise]) -> list[Compromise]:
    return sorted(cs, key=Compromise.sort_key)


def predecessors(c: Compromise) -> list[Compromise]:
    """Compromises directly below ``c`` in the lattice."""
    return [
        c.raised(name, lower) for name, perm in c.items() for lower in _LOWER[perm]
    ]


@dataclass(frozen=True)
class UpwardSet:
    """Upward-closed set of compromises, represented by its antichain."""

    generators: frozenset[Compromise]

    @classmethod
    def from_members(cls, members: Collection[Compromise]) -> UpwardSet:
        """Validate upward closure and keep only the minimal members."""
        members = set(members)
        for c in _ordered(members):
            for upper in successors(c):
                if upper not in members:
                    raise NotUpwardClosedError(
                        f"{c} violates but its successor {upper} does not"
                    )
        return cls(
            frozenset(
                c
                for c in members
                if not any(p in members for p in predecessors(c))
            )
        )

    def __contains__(self, c: object) -> bool:
        return isinstance(c, Compromise) and any(leq(m, c) for m in self.generators)


def mcs(violating: Collection[Compromise]) -> set[Compromise]:
    """Minimal compromise scenarios."""
    return set(UpwardSet.from_members(violating).generators)


def spof(violating: Collection[Compromise]) -> set[Compromise]:
    """Violating compromises of a single component (not only minimal ones)."""
    UpwardSet.from_members(violating)
    return {c for c in violating if len(c.dom()) == 1}


def minimal_spof(violating: Collection[Compromise]) -> set[Compromise]:
    return {c for c in mcs(violating) if len(c.dom()) == 1}


def _contributing(
    upward: UpwardSet, components: Sequence[str]
) -> set[Compromise]:
    """Non-violating c with some generator m such that m − c does not violate.

    m ⊔ c lies above c with (m ⊔ c) − c = m − c, and m − c ⪯ c′ − c
    for any violating c′ ⪰ m, so the generators decide. Only dom(c) matters.
    """
    by_dom: dict[frozenset[str], bool] = {}
    found = set()
    for c in all_compromises(components):
        if c in upward:
            continue
        dom = c.dom()
        if dom not in by_dom:
            by_dom[dom] = any(
                subtract(m, c) not in upward for m in upward.generators
            )
        if by_dom[dom]:
            found.add(c)
    return found


def nbns(
    violating: Collection[Compromise], components: Sequence[str]
) -> set[Compromise]:
    """Necessary but not sufficient compromises.

    Contribution is monotone below C, so a contributing c is minimal exactly
    when none of its direct predecessors contributes.
    """
    upward = UpwardSet.from_members(violating)
    found = _contributing(upward, components)
    return {c for c in found if not any(p in found for p in predecessors(c))}


def nrfc(
    violating: Collection[Compromise], components: Sequence[str]
) -> set[Compromise]:
    """Compromises that never contribute to a violation."""
    upward = UpwardSet.from_members(violating)
    contributing = _contributing(upward, components)
    return {
        c
        for c in all_compromises(components)
        if c not in upward and c not in contributing
    }


@dataclass(frozen=True)
class ArhSets:
    mcs: frozenset[Compromise]
    spof: frozenset[Compromise]
    minimal_spof: frozenset[Compromise]
    nbns: frozenset[Compromise]
    nrfc: frozenset[Compromise]

    def labels(self, c: Compromise, violating: bool) -> list[str]:
        if violating:
            names = [("MCS", self.mcs), ("SPOF", self.spof)]
        else:
            names = [("NBNS", self.nbns), ("NRFC", self.nrfc)]
        return [label for label, members in names if c in members]

    def to_dict(self) -> dict[str, list[str]]:
        return {
            name: [str(c) for c in _ordered(getattr(self, name))]
            for name in ("mcs", "spof", "minimal_spof", "nbns", "nrfc")
        }


def arh_sets(
    violating: Collection[Compromise], components: Sequence[str], exact: bool = False
) -> ArhSets:
    """All four classes for one violation set.

    ``exact`` evaluates the definitions by enumerating the whole lattice.
    """
    if exact:
        if len(components) > EXACT_MAX_COMPONENTS:
            raise ValueError(
                f"exact mode supports at most {EXACT_MAX_COMPONENTS} components"
            )
        UpwardSet.from_members(violating)
        return brute_force_sets(violating, components)
    return ArhSets(
        mcs=frozenset(mcs(violating)),
        spof=frozenset(spof(violating)),
        minimal_spof=frozenset(minimal_spof(violating)),
        nbns=frozenset(nbns(violating, components)),
        nrfc=frozenset(nrfc(violating, components)),
    )


def brute_force_sets(
    violating: Collection[Compromise], components: Sequence[str]
) -> ArhSets:
    """Direct evaluation of the definitions over every compromise."""
    universe = all_compromises(components)
    members = set(violating)
    cmin = {
        c for c in members if all(not leq(d, c) or d == c for d in members)
    }
    outside = [c for c in universe if c not in members]

    def contributes(c: Compromise) -> bool:
        return any(
            leq(c, above) and subtract(above, c) not in members for above in members
        )

    candidates = [c for c in outside if contributes(c)]
    return ArhSets(
        mcs=frozenset(cmin),
        spof=frozenset(c for c in members if len(c.dom()) == 1),
        minimal_spof=frozenset(c for c in cmin if len(c.dom()) == 1),
        nbns=frozenset(
            c
            for c in candidates
            if not any(d != c and leq(d, c) for d in candidates)
        ),
        nrfc=frozenset(c for c in outside if not contributes(c)),
    )


# ---------------------------------------------------------------------------
# Store-level classification
# ---------------------------------------------------------------------------


def multi_sp_map(store: VerdictStore) -> dict[str, set[str]]:
    """Compromise key → properties it invalidates."""
    if not store.is_total():
        raise StoreError("verdict store is incomplete")
    result: dict[str, set[str]] = {
        c.key(): set() for c in all_compromises(store.components)
    }
    for record in store.records.values():
        if record.status.is_violation:
            result[record.compromise.key()].add(record.prop)
    return result


@dataclass
class ArhReport:
    components: tuple[str, ...]
    properties: dict[str, ArhSets] = field(default_factory=dict)
    multi_sp: dict[str, set[str]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "components": list(self.components),
            "properties": {
                name: sets.to_dict() for name, sets in sorted(self.properties.items())
            },
            "multi_sp": {
                str(Compromise.from_key(self.components, key)): sorted(props)
                for key, props in sorted(self.multi_sp.items())
                if props
            },
        }


def classify(
    store: VerdictStore, properties: Sequence[str] | None = None
) -> ArhReport:
    names = list(properties or store.properties)
    report = ArhReport(store.components, multi_sp=multi_sp_map(store))
    for name in names:
        sets = arh_sets(compute_C(store, name), store.components)
        report.properties[name] = sets
        logger.info(
            f"{name}: {len(sets.mcs)} MCS, {len(sets.minimal_spof)} minimal SPOF, "
            f"{len(sets.nbns)} NBNS, {len(sets.nrfc)} NRFC"
        )
    return report


def arh_table(store: VerdictStore, report: ArhReport) -> pd.DataFrame:
    """One row per compromise: key, rank, per-property status and ARH labels."""
    rows = []
    for c in _ordered(all_compromises(store.components)):
        row: dict[str, object] = {"compromise": str(c), "rank": c.rank()}
        for name, sets in sorted(report.properties.items()):
            status = store.get(c, name).status
            row[name] = status.value
            row[f"{name}_arh"] = ";".join(sets.labels(c, status.is_violation))
        row["invalidates"] = ";".join(sorted(report.multi_sp.get(c.key(), ())))
        rows.append(row)
    return pd.DataFrame(rows)


def save_classification(
    report: ArhReport, table: pd.DataFrame, out_dir: Path | str
) -> tuple[Path, Path]:
    directory = Path(out_dir) / ARH_DIR
    directory.mkdir(parents=True, exist_ok=True)
    json_path = directory / "arh.json"
    json_path.write_text(
        json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    csv_path = directory / "arh.csv"
    table.to_csv(csv_path, index=False)
    return json_path, csv_path

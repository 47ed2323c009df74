"""CRASH-M adversary: permissions, compromise mappings and capabilities."""

from __future__ import annotations

import itertools
import logging
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass
from enum import Enum

from arhscope.config import ADVERSARY_NONCE
from arhscope.errors import CompromiseMismatchError
from arhscope.model import (
    AnaModel,
    Atom,
    Message,
    Spoof,
    Term,
    fresh_atom,
    replay,
)

logger = logging.getLogger(__name__)


class Permission(Enum):
    """Capability on one component: none < r < rw and none < w < rw."""

    NONE = "none"
    R = "r"
    W = "w"
    RW = "rw"

    @property
    def bits(self) -> int:
        return _BITS[self]

    @property
    def rank(self) -> int:
        return bin(self.bits).count("1")

    @property
    def can_read(self) -> bool:
        return bool(self.bits & 1)

    @property
    def can_write(self) -> bool:
        return bool(self.bits & 2)

    def join(self, other: Permission) -> Permission:
        return _FROM_BITS[self.bits | other.bits]

    def meet(self, other: Permission) -> Permission:
        return _FROM_BITS[self.bits & other.bits]

    def __le__(self, other: Permission) -> bool:
        if not isinstance(other, Permission):
            return NotImplemented
        return self.bits & other.bits == self.bits

    def __lt__(self, other: Permission) -> bool:
        if not isinstance(other, Permission):
            return NotImplemented
        return self != other and self <= other

    @classmethod
    def parse(cls, text: str) -> Permission:
        try:
            return cls(text)
        except ValueError:
            raise ValueError(f"invalid permission {text!r}") from None


_BITS = {Permission.NONE: 0, Permission.R: 1, Permission.W: 2, Permission.RW: 3}
_FROM_BITS = {bits: perm for perm, bits in _BITS.items()}


@dataclass(frozen=True, slots=True)
class Compromise:
    """Total map from the (sorted) model components to permissions."""

    components: tuple[str, ...]
    grants: tuple[Permission, ...]

    def __post_init__(self) -> None:
        if len(self.components) != len(self.grants):
            raise ValueError("components and grants differ in length")
        if list(self.components) != sorted(set(self.components)):
            raise ValueError("components must be sorted and unique")

    @classmethod
    def empty(cls, components: Iterable[str]) -> Compromise:
        names = tuple(sorted(components))
        return cls(names, (Permission.NONE,) * len(names))

    @classmethod
    def of(
        cls, components: Iterable[str], grants: Mapping[str, Permission | str]
    ) -> Compromise:
        names = tuple(sorted(components))
        unknown = set(grants) - set(names)
        if unknown:
            raise CompromiseMismatchError(f"unknown components {sorted(unknown)}")
        return cls(
            names,
            tuple(
                Permission(grants[name]) if name in grants else Permission.NONE
                for name in names
            ),
        )

    @classmethod
    def from_key(cls, components: Iterable[str], key: str) -> Compromise:
        """Parse the canonical ``comp:perm,...`` key (``""`` or ``∅`` is empty)."""
        grants: dict[str, Permission] = {}
        key = key.strip()
        if key and key != "∅":
            for part in key.split(","):
                name, sep, perm = part.strip().rpartition(":")
                if not sep or not name:
                    raise ValueError(f"invalid compromise entry {part!r}")
                grants[name] = Permission.parse(perm)
        return cls.of(components, grants)

    def __getitem__(self, component: str) -> Permission:
        try:
            return self.grants[self.components.index(component)]
        except ValueError:
            raise CompromiseMismatchError(f"unknown component {component!r}") from None

    def items(self) -> Iterator[tuple[str, Permission]]:
        return zip(self.components, self.grants)

    def dom(self) -> frozenset[str]:
        """Compromised components."""
        return frozenset(n for n, p in self.items() if p is not Permission.NONE)

    def rank(self) -> int:
        return sum(p.rank for p in self.grants)

    def key(self) -> str:
        return ",".join(
            f"{n}:{p.value}" for n, p in self.items() if p is not Permission.NONE
        )

    def raised(self, component: str, permission: Permission) -> Compromise:
        index = self.components.index(component)
        grants = list(self.grants)
        grants[index] = permission
        return Compromise(self.components, tuple(grants))

    def join(self, other: Compromise) -> Compromise:
        _check_same_components(self, other)
        return Compromise(
            self.components, tuple(a.join(b) for a, b in zip(self.grants, other.grants))
        )

    def sort_key(self) -> tuple[int, str]:
        return self.rank(), self.key()

    def __str__(self) -> str:
        return self.key() or "∅"


def _check_same_components(c: Compromise, c2: Compromise) -> None:
    if c.components != c2.components:
        raise CompromiseMismatchError(
            f"compromises range over different components: "
            f"{list(c.components)} vs {list(c2.components)}"
        )


def leq(c: Compromise, c2: Compromise) -> bool:
    """c ⪯ c2, the pointwise lift of the permission order."""
    _check_same_components(c, c2)
    return all(a <= b for a, b in zip(c.grants, c2.grants))


def subtract(c2: Compromise, c: Compromise) -> Compromise:
    """c2 − c: drop every component compromised in ``c``."""
    _check_same_components(c, c2)
    return Compromise(
        c2.components,
        tuple(
            Permission.NONE if a is not Permission.NONE else b
            for a, b in zip(c.grants, c2.grants)
        ),
    )


def all_compromises(components: Iterable[str]) -> list[Compromise]:
    """The whole lattice over ``components`` in lexicographic grant order."""
    names = tuple(sorted(components))
    return [
        Compromise(names, grants)
        for grants in itertools.product(list(Permission), repeat=len(names))
    ]


# ---------------------------------------------------------------------------
# Capabilities
# ---------------------------------------------------------------------------


def _grants_on(c: Compromise, entity: str, model: AnaModel) -> Iterator[Permission]:
    yield c[entity]
    domain = model.domain_of(entity)
    if domain is not None:
        yield c[domain]


def can_intercept(c: Compromise, msg: Message, model: AnaModel) -> bool:
    """Read access to an endpoint or to a domain containing one."""
    return any(
        perm.can_read
        for endpoint in {msg.sender, msg.receiver}
        for perm in _grants_on(c, endpoint, model)
    )


def can_inject_as(c: Compromise, endpoint: str, model: AnaModel) -> bool:
    """Write access to ``endpoint`` itself or to its domain."""
    return any(perm.can_write for perm in _grants_on(c, endpoint, model))


def injection_mark(
    c: Compromise, sender: str, receiver: str, model: AnaModel
) -> Spoof | None:
    """Spoof mark for an injection on (sender, receiver), None if impossible.

    The sender mark wins when both endpoints are write-compromised.
    """
    if sender == receiver or (sender, receiver) not in model.links:
        return None
    if can_inject_as(c, sender, model):
        return Spoof.SENDER
    if can_inject_as(c, receiver, model):
        return Spoof.RECEIVER
    return None


def read_compromised(c: Compromise, model: AnaModel) -> list[str]:
    """Entities whose internal knowledge the adversary reads.

    Domain read access only covers traffic, not the members' memory.
    """
    return [e for e in model.entities if c[e].can_read]


def tick_carrier(c: Compromise, model: AnaModel) -> str:
    compromised = [e for e in model.entities if e in c.dom()]
    return compromised[0] if compromised else model.entities[0]


def adversary_nonces(max_sessions: int) -> frozenset[Atom]:
    """Fresh values the adversary may always mint."""
    return frozenset(fresh_atom(ADVERSARY_NONCE, k) for k in range(1, max_sessions + 1))


@dataclass(frozen=True, slots=True)
class Origin:
    """How and when the adversary first obtained a term."""

    position: int
    entity: str
    via: str  # "reveal" or "intercept"


def knowledge_origins(
    c: Compromise,
    prefix: Sequence[Message],
    model: AnaModel,
    max_sessions: int | None = None,
) -> dict[Term, Origin]:
    """First origin of every term the adversary holds after ``prefix``.

    Reveals at position i happen before message i is sent.
    """
    states = replay(model, prefix, max_sessions)
    readers = read_compromised(c, model)
    origins: dict[Term, Origin] = {}
    for i, state in enumerate(states):
        for entity in readers:
            for term in sorted(state.knowledge_of(model, entity), key=repr):
                origins.setdefault(term, Origin(i, entity, "reveal"))
        if i < len(prefix):
            msg = prefix[i]
            if not msg.is_tick and can_intercept(c, msg, model):
                origins.setdefault(msg.payload, Origin(i, msg.sender, "intercept"))
    return origins


def adversary_knowledge(
    c: Compromise,
    prefix: Sequence[Message],
    model: AnaModel,
    max_sessions: int | None = None,
) -> frozenset[Term]:
    """Intercepted payloads plus the knowledge of read-compromised entities."""
    if not c.dom():
        return frozenset()
    return frozenset(knowledge_origins(c, prefix, model, max_sessions))

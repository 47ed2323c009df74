"""Architecture model: ANA graph, term algebra, role scripts and model files.

The model file is JSON (see README for the schema, ``data/bms.json`` is the
reference instance). Parsing produces an immutable ``AnaModel``. Role
scripts are executed by the small engine at the bottom of this module
(``firings`` / ``fire`` / ``deliver`` / ``replay``); both the verifier's
search and trace replay go through it, so honest behaviour has exactly one
definition.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cache
from pathlib import Path

from arhscope.config import (
    ADVERSARY,
    DEFAULT_MAX_SESSIONS,
    DEFAULT_MAX_TERM_DEPTH,
    DEFAULT_MAX_TRACE_LEN,
    PKI,
    SESSION_MARK,
    bundled_model_path,
)
from arhscope.errors import (
    DuplicateComponentError,
    ModelError,
    TraceReplayError,
    UnboundVariableError,
    UnknownClaimError,
    UnknownEndpointError,
)

logger = logging.getLogger(__name__)

_TOKEN_PATTERN = re.compile(r"\s*(?:([A-Za-z_~][\w#~'.-]*)|([(),]))")
_SELECTOR_PATTERN = re.compile(r"^([^.\s]+)\.([^.\s]+)$")

_RESERVED_NAMES = {ADVERSARY, PKI, "tick", "pair", "h", "sign", "verify", "eq"}


# ---------------------------------------------------------------------------
# Terms
# ---------------------------------------------------------------------------


class AtomKind(str, Enum):
    NONCE = "nonce"
    PRIVATE_KEY = "private-key"
    PUBLIC_KEY = "public-key"
    CONSTANT = "constant"


@dataclass(frozen=True, slots=True)
class Atom:
    name: str
    kind: AtomKind = AtomKind.CONSTANT


@dataclass(frozen=True, slots=True)
class Pair:
    left: Term
    right: Term


@dataclass(frozen=True, slots=True)
class Hash:
    inner: Term


@dataclass(frozen=True, slots=True)
class Sig:
    """Signature of ``payload`` under the private-key atom ``key``."""

    payload: Term
    key: Term


@dataclass(frozen=True, slots=True)
class Tick:
    """The content that causes no reaction."""


@dataclass(frozen=True, slots=True)
class Var:
    """A name inside a role expression or receive pattern."""

    name: str


Term = Atom | Pair | Hash | Sig | Tick | Var

TICK = Tick()


@cache
def render(term: Term) -> str:
    """Canonical text form, identical to the model-file term syntax."""
    if isinstance(term, (Atom, Var)):
        return term.name
    if isinstance(term, Pair):
        return f"pair({render(term.left)},{render(term.right)})"
    if isinstance(term, Hash):
        return f"h({render(term.inner)})"
    if isinstance(term, Sig):
        return f"sign({render(term.payload)},{render(term.key)})"
    return "tick"


@cache
def term_depth(term: Term) -> int:
    """Constructor depth; atoms, variables and tick have depth 0."""
    if isinstance(term, Pair):
        return 1 + max(term_depth(term.left), term_depth(term.right))
    if isinstance(term, Hash):
        return 1 + term_depth(term.inner)
    if isinstance(term, Sig):
        return 1 + max(term_depth(term.payload), term_depth(term.key))
    return 0


def subterms(term: Term) -> Iterator[Term]:
    """Yield ``term`` and all of its subterms, parents first."""
    yield term
    if isinstance(term, Pair):
        yield from subterms(term.left)
        yield from subterms(term.right)
    elif isinstance(term, Hash):
        yield from subterms(term.inner)
    elif isinstance(term, Sig):
        yield from subterms(term.payload)
        yield from subterms(term.key)


def variables(term: Term) -> list[str]:
    """Variable names in left-to-right order of first occurrence."""
    seen: dict[str, None] = {}
    for sub in subterms(term):
        if isinstance(sub, Var):
            seen.setdefault(sub.name)
    return list(seen)


def substitute(term: Term, env: Mapping[str, Term]) -> Term:
    """Replace every variable bound in ``env``; unbound variables stay."""
    if isinstance(term, Var):
        return env.get(term.name, term)
    if isinstance(term, Pair):
        return Pair(substitute(term.left, env), substitute(term.right, env))
    if isinstance(term, Hash):
        return Hash(substitute(term.inner, env))
    if isinstance(term, Sig):
        return Sig(substitute(term.payload, env), substitute(term.key, env))
    return term


def is_ground(term: Term) -> bool:
    return not any(isinstance(sub, Var) for sub in subterms(term))


def match_pattern(pattern: Term, term: Term) -> dict[str, Term] | None:
    """Return the substitution that makes ``pattern`` equal to ``term``.

    Pattern variables are expected to be distinct; a repeated variable only
    matches if both occurrences bind the same term.
    """
    binding: dict[str, Term] = {}
    stack = [(pattern, term)]
    while stack:
        p, t = stack.pop()
        if isinstance(p, Var):
            bound = binding.get(p.name)
            if bound is not None and bound != t:
                return None
            binding[p.name] = t
        elif isinstance(p, Pair):
            if not isinstance(t, Pair):
                return None
            stack.append((p.right, t.right))
            stack.append((p.left, t.left))
        elif isinstance(p, Hash):
            if not isinstance(t, Hash):
                return None
            stack.append((p.inner, t.inner))
        elif isinstance(p, Sig):
            if not isinstance(t, Sig):
                return None
            stack.append((p.key, t.key))
            stack.append((p.payload, t.payload))
        elif p != t:
            return None
    return binding


def analyze(terms: Iterable[Term]) -> frozenset[Term]:
    """Close a set of terms under left/right projection of pairs."""
    known: set[Term] = set()
    pending = list(terms)
    while pending:
        term = pending.pop()
        if term in known:
            continue
        known.add(term)
        if isinstance(term, Pair):
            pending.append(term.left)
            pending.append(term.right)
    return frozenset(known)


def derivable(
    term: Term,
    known: frozenset[Term] | set[Term],
    max_depth: int,
    fresh: frozenset[Term] = frozenset(),
) -> bool:
    """Check whether ``term`` can be built from ``known`` (already analyzed).

    At most ``max_depth`` constructor layers may be added on top of known
    terms. Signing requires possession of the private-key atom itself.
    """
    if isinstance(term, Tick) or term in known or term in fresh:
        return True
    if max_depth <= 0:
        return False
    if isinstance(term, Pair):
        return derivable(term.left, known, max_depth - 1, fresh) and derivable(
            term.right, known, max_depth - 1, fresh
        )
    if isinstance(term, Hash):
        return derivable(term.inner, known, max_depth - 1, fresh)
    if isinstance(term, Sig):
        return term.key in known and derivable(
            term.payload, known, max_depth - 1, fresh
        )
    return False


# ---------------------------------------------------------------------------
# Term parsing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Call:
    """A parsed ``name(arg, ...)`` expression (guards use this form)."""

    name: str
    args: tuple[Term, ...]


def _tokenize(text: str, location: str | None) -> list[str]:
    tokens = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        match = _TOKEN_PATTERN.match(text, pos)
        if not match or match.end() == pos:
            raise ModelError(f"cannot parse term {text!r} at offset {pos}", location)
        tokens.append(match.group(1) or match.group(2))
        pos = match.end()
        while pos < len(text) and text[pos].isspace():
            pos += 1
    return tokens


class _TermParser:
    """Recursive-descent parser for ``atom | pair(..) | h(..) | sign(..) | tick``."""

    def __init__(self, text: str, location: str | None) -> None:
        self.text = text
        self.location = location
        self.tokens = _tokenize(text, location)
        self.pos = 0

    def fail(self, message: str) -> ModelError:
        return ModelError(f"{message} in {self.text!r}", self.location)

    def peek(self) -> str | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self, expected: str | None = None) -> str:
        token = self.peek()
        if token is None:
            raise self.fail("unexpected end of term")
        if expected is not None and token != expected:
            raise self.fail(f"expected {expected!r}, found {token!r}")
        self.pos += 1
        return token

    def args(self) -> list[Term]:
        self.take("(")
        result = [self.term()]
        while self.peek() == ",":
            self.take(",")
            result.append(self.term())
        self.take(")")
        return result

    def term(self) -> Term:
        name = self.take()
        if name in "(),":
            raise self.fail(f"unexpected {name!r}")
        if self.peek() != "(":
            return TICK if name == "tick" else Var(name)
        args = self.args()
        if name == "pair":
            if len(args) < 2:
                raise self.fail("pair needs at least two arguments")
            # pair(a,b,c) is pair(a,pair(b,c))
            result = args[-1]
            for left in reversed(args[:-1]):
                result = Pair(left, result)
            return result
        if name == "h":
            if len(args) != 1:
                raise self.fail("h takes exactly one argument")
            return Hash(args[0])
        if name == "sign":
            if len(args) != 2:
                raise self.fail("sign takes exactly two arguments")
            return Sig(args[0], args[1])
        raise self.fail(f"unknown constructor {name!r}")

    def done(self) -> None:
        if self.peek() is not None:
            raise self.fail(f"trailing input {self.peek()!r}")


def parse_term(text: str, location: str | None = None) -> Term:
    """Parse term syntax; every identifier becomes a ``Var`` until resolved."""
    parser = _TermParser(text, location)
    term = parser.term()
    parser.done()
    return term


def parse_call(text: str, location: str | None = None) -> Call:
    """Parse ``name(arg, ...)`` where each argument uses term syntax."""
    parser = _TermParser(text, location)
    name = parser.take()
    if parser.peek() != "(":
        raise parser.fail("expected a call")
    args = parser.args()
    parser.done()
    return Call(name, tuple(args))


# ---------------------------------------------------------------------------
# Model types
# ---------------------------------------------------------------------------


class ComponentKind(str, Enum):
    ENTITY = "entity"
    DOMAIN = "domain"


@dataclass(frozen=True)
class ComponentId:
    name: str
    kind: ComponentKind


class Spoof(str, Enum):
    """Which endpoint of an injected message the adversary impersonates."""

    NONE = "none"
    SENDER = "sender"
    RECEIVER = "receiver"


@dataclass(frozen=True, slots=True)
class Message:
    sender: str
    receiver: str
    payload: Term
    spoofed: Spoof = Spoof.NONE

    @property
    def is_tick(self) -> bool:
        return isinstance(self.payload, Tick)

    @property
    def is_internal(self) -> bool:
        return self.sender == self.receiver


@dataclass(frozen=True)
class Guard:
    """``verify(sig, msg, pub)`` or ``eq(a, b)`` over bound names."""

    op: str
    args: tuple[Term, ...]


@dataclass(frozen=True)
class ClaimSpec:
    label: str
    args: tuple[Term, ...]


@dataclass(frozen=True)
class Step:
    """One guarded step of a role script.

    Execution order: trigger match, fresh values, bindings, guards, claims,
    then the outgoing (or internal) message.
    """

    pattern: Term | None = None  # None for a start step
    sender: str | None = None
    fresh: tuple[str, ...] = ()
    bindings: tuple[tuple[str, Term], ...] = ()
    guards: tuple[Guard, ...] = ()
    send: tuple[str, Term] | None = None
    internal: Term | None = None
    claims: tuple[ClaimSpec, ...] = ()

    @property
    def is_start(self) -> bool:
        return self.pattern is None


@dataclass(frozen=True)
class RoleScript:
    owner: str
    steps: tuple[Step, ...]


@dataclass(frozen=True)
class Secrecy:
    """Each secret is a group of (role, fresh-name) selectors known jointly."""

    secrets: tuple[tuple[tuple[str, str], ...], ...]


@dataclass(frozen=True)
class Agreement:
    end_claim: str
    init_claim: str
    matched_args: tuple[int, ...]


@dataclass(frozen=True)
class SecurityProperty:
    name: str
    kind: Secrecy | Agreement


@dataclass(frozen=True)
class SearchBounds:
    max_sessions: int = DEFAULT_MAX_SESSIONS
    max_trace_len: int = DEFAULT_MAX_TRACE_LEN
    max_term_depth: int = DEFAULT_MAX_TERM_DEPTH

    def __post_init__(self) -> None:
        for name in ("max_sessions", "max_trace_len", "max_term_depth"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ModelError(f"{name} must be a positive integer, got {value!r}")

    def override(self, **values: int | None) -> SearchBounds:
        """Return a copy with every non-None value replaced."""
        return replace(self, **{k: v for k, v in values.items() if v is not None})

    def to_dict(self) -> dict[str, int]:
        return {
            "max_sessions": self.max_sessions,
            "max_term_depth": self.max_term_depth,
            "max_trace_len": self.max_trace_len,
        }


@dataclass(frozen=True, eq=False)
class AnaModel:
    """The architecture graph A = (E, L, D) plus protocol and properties."""

    entities: tuple[str, ...]
    domains: Mapping[str, frozenset[str]]
    links: frozenset[tuple[str, str]]
    roles: Mapping[str, RoleScript]
    initial_knowledge: Mapping[str, frozenset[Term]]
    keys: Mapping[str, str] = field(default_factory=dict)  # private -> public
    properties: tuple[SecurityProperty, ...] = ()
    bounds: SearchBounds = field(default_factory=SearchBounds)
    name: str = "model"
    digest: str = ""
    atoms: Mapping[str, Atom] = field(default_factory=dict)  # global identifiers

    @property
    def components(self) -> tuple[str, ...]:
        """Entity and domain names, sorted."""
        return tuple(sorted((*self.entities, *self.domains)))

    def component(self, name: str) -> ComponentId:
        if name in self.domains:
            return ComponentId(name, ComponentKind.DOMAIN)
        if name in self.entities:
            return ComponentId(name, ComponentKind.ENTITY)
        raise UnknownEndpointError(f"unknown component {name!r}")

    def domain_of(self, entity: str) -> str | None:
        for domain, members in self.domains.items():
            if entity in members:
                return domain
        return None

    def property(self, name: str) -> SecurityProperty:
        for prop in self.properties:
            if prop.name == name:
                return prop
        raise ModelError(f"unknown property {name!r}")

    def entity_index(self, entity: str) -> int:
        return self.entities.index(entity)

    def private_key_for(self, public_name: str) -> Atom | None:
        for private, public in self.keys.items():
            if public == public_name:
                return Atom(private, AtomKind.PRIVATE_KEY)
        return None

    def key_owner(self, private_name: str) -> str | None:
        atom = Atom(private_name, AtomKind.PRIVATE_KEY)
        for entity in self.entities:
            if atom in self.initial_knowledge.get(entity, frozenset()):
                return entity
        return None


# ---------------------------------------------------------------------------
# Model file parsing
# ---------------------------------------------------------------------------


class _ModelParser:
    """Builds an ``AnaModel`` from a decoded model document."""

    def __init__(self, document: Mapping) -> None:
        if not isinstance(document, Mapping):
            raise ModelError("model document must be a JSON object")
        self.doc = document
        self.atoms: dict[str, Atom] = {}

    def _list(self, key: str, location: str | None = None) -> list:
        value = self.doc.get(key, [])
        if not isinstance(value, list):
            raise ModelError(f"'{key}' must be an array", location or key)
        return value

    def _object(self, key: str) -> Mapping:
        value = self.doc.get(key, {})
        if not isinstance(value, Mapping):
            raise ModelError(f"'{key}' must be an object", key)
        return value

    def parse(self) -> AnaModel:
        entities = self._entities()
        domains = self._domains(entities)
        links = self._links(entities, domains)
        keys = self._keys(entities, domains)
        for entity in entities:
            self.atoms[entity] = Atom(entity, AtomKind.CONSTANT)
        knowledge = self._initial_knowledge(entities)
        roles = self._roles(entities, links)
        properties = self._properties(roles)
        bounds_doc = self._object("bounds")
        try:
            bounds = SearchBounds(**bounds_doc)
        except TypeError as e:
            raise ModelError(f"invalid bounds: {e}", "bounds") from e
        canonical = json.dumps(self.doc, sort_keys=True, separators=(",", ":"))
        return AnaModel(
            entities=tuple(sorted(entities)),
            domains={d: frozenset(m) for d, m in sorted(domains.items())},
            links=frozenset(links),
            roles=roles,
            initial_knowledge=knowledge,
            keys=keys,
            properties=properties,
            bounds=bounds,
            name=str(self.doc.get("name", "model")),
            digest=hashlib.sha256(canonical.encode("utf-8")).hexdigest(),
            atoms=dict(self.atoms),
        )

    def _entities(self) -> list[str]:
        entities: list[str] = []
        for i, name in enumerate(self._list("entities")):
            location = f"entities[{i}]"
            if not isinstance(name, str) or not name.strip():
                raise ModelError("entity names must be non-empty strings", location)
            if name in _RESERVED_NAMES:
                raise ModelError(f"{name!r} is a reserved name", location)
            if name in entities:
                raise DuplicateComponentError(f"duplicate entity {name!r}", location)
            entities.append(name)
        return entities

    def _domains(self, entities: list[str]) -> dict[str, set[str]]:
        domains: dict[str, set[str]] = {}
        owner: dict[str, str] = {}
        for name, members in self._object("domains").items():
            location = f"domains.{name}"
            if not name.strip() or name in _RESERVED_NAMES:
                raise ModelError(f"invalid domain name {name!r}", location)
            if name in entities:
                raise DuplicateComponentError(
                    f"domain {name!r} collides with an entity", location
                )
            if not isinstance(members, list):
                raise ModelError("domain members must be an array", location)
            domains[name] = set()
            for member in members:
                if member not in entities:
                    raise UnknownEndpointError(
                        f"unknown endpoint {member!r} in domain", location
                    )
                if member in owner:
                    raise ModelError(
                        f"entity {member!r} already belongs to domain "
                        f"{owner[member]!r}",
                        location,
                    )
                owner[member] = name
                domains[name].add(member)
        return domains

    def _links(
        self, entities: list[str], domains: Mapping[str, set[str]]
    ) -> set[tuple[str, str]]:
        links = {(e, e) for e in entities}
        for i, link in enumerate(self._list("links")):
            location = f"links[{i}]"
            if not (isinstance(link, list) and len(link) == 2):
                raise ModelError("a link is a [from, to] pair", location)
            for endpoint in link:
                if endpoint in domains:
                    raise ModelError(
                        f"domain {endpoint!r} cannot be a link endpoint", location
                    )
                if endpoint not in entities:
                    raise UnknownEndpointError(
                        f"unknown endpoint {endpoint!r}", location
                    )
            links.add((link[0], link[1]))
        return links

    def _keys(self, entities: list[str], domains: Mapping) -> dict[str, str]:
        keys: dict[str, str] = {}
        for private, public in self._object("keys").items():
            location = f"keys.{private}"
            for name in (private, public):
                if not isinstance(name, str) or name in _RESERVED_NAMES:
                    raise ModelError(f"invalid key name {name!r}", location)
                if name in entities or name in domains or name in self.atoms:
                    raise ModelError(f"key name {name!r} is already in use", location)
            self.atoms[private] = Atom(private, AtomKind.PRIVATE_KEY)
            self.atoms[public] = Atom(public, AtomKind.PUBLIC_KEY)
            keys[private] = public
        return keys

    def _initial_knowledge(self, entities: list[str]) -> dict[str, frozenset[Term]]:
        knowledge: dict[str, frozenset[Term]] = {e: frozenset() for e in entities}
        for entity, terms in self._object("initial_knowledge").items():
            location = f"initial_knowledge.{entity}"
            if entity not in entities:
                raise UnknownEndpointError(f"unknown entity {entity!r}", location)
            if not isinstance(terms, list):
                raise ModelError("initial knowledge must be an array", location)
            parsed = set()
            for j, text in enumerate(terms):
                term = parse_term(str(text), f"{location}[{j}]")
                # Undeclared identifiers in initial knowledge are constants
                for name in variables(term):
                    self.atoms.setdefault(name, Atom(name, AtomKind.CONSTANT))
                parsed.add(self._resolve(term, set(), f"{location}[{j}]"))
            knowledge[entity] = frozenset(parsed)
        return knowledge

    def _resolve(
        self,
        term: Term,
        scope: set[str],
        location: str,
        new_vars: list[str] | None = None,
    ) -> Term:
        """Turn identifiers into atoms or in-scope variables.

        With ``new_vars`` given (receive patterns), unknown identifiers become
        fresh pattern variables and are appended to it.
        """
        if isinstance(term, Var):
            if term.name in scope:
                return term
            if term.name in self.atoms:
                return self.atoms[term.name]
            if new_vars is not None:
                if term.name in new_vars:
                    raise ModelError(
                        f"repeated pattern variable {term.name!r}", location
                    )
                new_vars.append(term.name)
                return term
            raise UnboundVariableError(f"unbound variable {term.name!r}", location)
        if isinstance(term, Pair):
            return Pair(
                self._resolve(term.left, scope, location, new_vars),
                self._resolve(term.right, scope, location, new_vars),
            )
        if isinstance(term, Hash):
            return Hash(self._resolve(term.inner, scope, location, new_vars))
        if isinstance(term, Sig):
            key = self._resolve(term.key, scope, location, new_vars)
            if isinstance(key, Atom) and key.kind is not AtomKind.PRIVATE_KEY:
                raise ModelError(
                    f"signing key {key.name!r} is not a private key", location
                )
            return Sig(self._resolve(term.payload, scope, location, new_vars), key)
        return term

    def _roles(
        self, entities: list[str], links: set[tuple[str, str]]
    ) -> dict[str, RoleScript]:
        roles: dict[str, RoleScript] = {}
        for owner, steps in self._object("roles").items():
            if owner not in entities:
                raise UnknownEndpointError(
                    f"unknown entity {owner!r}", f"roles.{owner}"
                )
            if not isinstance(steps, list) or not steps:
                raise ModelError(
                    "a role is a non-empty array of steps", f"roles.{owner}"
                )
            scope: set[str] = set()
            parsed = []
            for i, raw in enumerate(steps):
                parsed.append(
                    self._step(owner, raw, scope, links, f"roles.{owner}[{i}]")
                )
            roles[owner] = RoleScript(owner, tuple(parsed))
        return dict(sorted(roles.items()))

    def _step(
        self,
        owner: str,
        raw: Mapping,
        scope: set[str],
        links: set[tuple[str, str]],
        location: str,
    ) -> Step:
        if not isinstance(raw, Mapping):
            raise ModelError("a step must be an object", location)
        unknown = set(raw) - {
            "trigger", "fresh", "bind", "guard", "send", "internal", "claim"
        }
        if unknown:
            raise ModelError(f"unknown step keys {sorted(unknown)}", location)

        trigger = raw.get("trigger", "start")
        pattern = sender = None
        if trigger != "start":
            if not isinstance(trigger, Mapping) or "receive" not in trigger:
                raise ModelError(
                    "trigger must be 'start' or {receive, from}", f"{location}.trigger"
                )
            sender = trigger.get("from")
            if (sender, owner) not in links:
                raise UnknownEndpointError(
                    f"no link from {sender!r} to {owner!r}", f"{location}.trigger"
                )
            new_vars: list[str] = []
            pattern = self._resolve(
                parse_term(str(trigger["receive"]), f"{location}.trigger"),
                scope,
                f"{location}.trigger",
                new_vars,
            )
            scope.update(new_vars)

        fresh = tuple(raw.get("fresh", []))
        for name in fresh:
            if name in self.atoms or name in scope:
                raise ModelError(f"fresh name {name!r} is already bound", location)
            scope.add(name)

        bindings = []
        bind_doc = raw.get("bind", {})
        if not isinstance(bind_doc, Mapping):
            raise ModelError("bind must be an object", f"{location}.bind")
        for name, text in bind_doc.items():
            where = f"{location}.bind.{name}"
            expr = self._resolve(parse_term(str(text), where), scope, where)
            bindings.append((name, expr))
            scope.add(name)

        guards = []
        for j, text in enumerate(raw.get("guard", [])):
            where = f"{location}.guard[{j}]"
            call = parse_call(str(text), where)
            arity = {"verify": 3, "eq": 2}.get(call.name)
            if arity is None:
                raise ModelError(f"unknown guard {call.name!r}", where)
            if len(call.args) != arity:
                raise ModelError(f"{call.name} takes {arity} arguments", where)
            args = tuple(self._resolve(a, scope, where) for a in call.args)
            if call.name == "verify" and not (
                isinstance(args[2], Atom) and args[2].kind is AtomKind.PUBLIC_KEY
            ):
                raise ModelError("verify needs a public key as third argument", where)
            guards.append(Guard(call.name, args))

        claims = []
        for j, claim in enumerate(raw.get("claim", [])):
            where = f"{location}.claim[{j}]"
            if not isinstance(claim, Mapping) or "label" not in claim:
                raise ModelError("a claim needs a label", where)
            args = tuple(
                self._resolve(parse_term(str(a), where), scope, where)
                for a in claim.get("args", [])
            )
            claims.append(ClaimSpec(str(claim["label"]), args))

        send = None
        if "send" in raw:
            where = f"{location}.send"
            target = raw["send"].get("to") if isinstance(raw["send"], Mapping) else None
            if (owner, target) not in links:
                raise UnknownEndpointError(
                    f"no link from {owner!r} to {target!r}", where
                )
            term = parse_term(str(raw["send"].get("term")), where)
            expr = self._resolve(term, scope, where)
            send = (target, expr)

        internal = None
        if "internal" in raw:
            where = f"{location}.internal"
            term = parse_term(str(raw["internal"]), where)
            internal = self._resolve(term, scope, where)

        return Step(
            pattern=pattern,
            sender=sender,
            fresh=fresh,
            bindings=tuple(bindings),
            guards=tuple(guards),
            send=send,
            internal=internal,
            claims=tuple(claims),
        )

    def _properties(
        self, roles: Mapping[str, RoleScript]
    ) -> tuple[SecurityProperty, ...]:
        claim_arity: dict[str, int] = {}
        fresh_names: set[tuple[str, str]] = set()
        for owner, role in roles.items():
            for step in role.steps:
                fresh_names.update((owner, name) for name in step.fresh)
                for claim in step.claims:
                    claim_arity[claim.label] = len(claim.args)

        properties = []
        seen: set[str] = set()
        for i, raw in enumerate(self._list("properties")):
            location = f"properties[{i}]"
            name = raw.get("name") if isinstance(raw, Mapping) else None
            if not isinstance(name, str) or not name:
                raise ModelError("a property needs a name", location)
            if name in seen:
                raise ModelError(f"duplicate property {name!r}", location)
            seen.add(name)
            kind = raw.get("kind")
            if kind == "secrecy":
                groups = []
                for entry in raw.get("secrets", []):
                    selectors = [entry] if isinstance(entry, str) else list(entry)
                    group = []
                    for selector in selectors:
                        match = _SELECTOR_PATTERN.match(str(selector))
                        if not match or tuple(match.groups()) not in fresh_names:
                            raise UnknownClaimError(
                                f"unknown fresh value {selector!r}", location
                            )
                        group.append((match.group(1), match.group(2)))
                    groups.append(tuple(group))
                if not groups:
                    raise ModelError("secrecy needs at least one secret", location)
                properties.append(SecurityProperty(name, Secrecy(tuple(groups))))
            elif kind == "agreement":
                end, init = raw.get("end"), raw.get("init")
                for label in (end, init):
                    if label not in claim_arity:
                        raise UnknownClaimError(f"unknown claim {label!r}", location)
                args = tuple(raw.get("args", range(claim_arity[end])))
                for index in args:
                    if not 0 <= index < min(claim_arity[end], claim_arity[init]):
                        raise ModelError(
                            f"claim argument {index} out of range", location
                        )
                properties.append(SecurityProperty(name, Agreement(end, init, args)))
            else:
                raise ModelError(f"unknown property kind {kind!r}", location)
        return tuple(properties)


def parse_model(document: Mapping | str) -> AnaModel:
    """Parse and validate a model document (decoded JSON or JSON text)."""
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as e:
            raise ModelError(f"invalid JSON: {e}") from e
    model = _ModelParser(document).parse()
    logger.debug(
        f"Parsed model '{model.name}': {len(model.entities)} entities, "
        f"{len(model.domains)} domains, {len(model.properties)} properties"
    )
    return model


def load_model(path: Path | str) -> AnaModel:
    """Read and parse a model file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as e:
        raise ModelError(f"file not found: {path}") from e
    except OSError as e:
        raise ModelError(f"cannot read {path}: {e}") from e
    return parse_model(text)


def load_bundled_model() -> AnaModel:
    """Load the bundled BMS case-study model."""
    return load_model(bundled_model_path())


def resolve_text(model: AnaModel, text: str) -> Term:
    """Parse a ground term as rendered in traces.

    Global identifiers map to the model's atoms, anything else is a nonce
    (fresh values of honest sessions and of the adversary).
    """

    def resolve(term: Term) -> Term:
        if isinstance(term, Var):
            return model.atoms.get(term.name, Atom(term.name, AtomKind.NONCE))
        if isinstance(term, Pair):
            return Pair(resolve(term.left), resolve(term.right))
        if isinstance(term, Hash):
            return Hash(resolve(term.inner))
        if isinstance(term, Sig):
            return Sig(resolve(term.payload), resolve(term.key))
        return term

    return resolve(parse_term(text))


# ---------------------------------------------------------------------------
# Role execution
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Claim:
    position: int  # index of the message emitted by the claiming step
    label: str
    entity: str
    args: tuple[Term, ...]


@dataclass(frozen=True, slots=True)
class RoleState:
    session: int = 1
    step: int = 0
    env: tuple[tuple[str, Term], ...] = ()


@dataclass(frozen=True, slots=True)
class RunState:
    """Configuration of all entity automata at one point of a trace."""

    roles: tuple[RoleState, ...]
    knowledge: tuple[frozenset[Term], ...]
    inboxes: tuple[tuple[Message, ...], ...]
    claims: tuple[Claim, ...] = ()
    generated: tuple[tuple[str, str, Atom], ...] = ()  # (entity, fresh name, atom)

    def knowledge_of(self, model: AnaModel, entity: str) -> frozenset[Term]:
        return self.knowledge[model.entity_index(entity)]


@dataclass(frozen=True)
class Firing:
    """An enabled step together with the environment it would run in."""

    entity: str
    step: Step
    env: Mapping[str, Term]
    consumed: int | None  # inbox index of the accepted message
    new_atoms: tuple[tuple[str, Atom], ...]


def fresh_atom(name: str, session: int) -> Atom:
    label = name if session == 1 else f"{name}{SESSION_MARK}{session}"
    return Atom(label, AtomKind.NONCE)


def initial_state(model: AnaModel) -> RunState:
    return RunState(
        roles=tuple(RoleState() for _ in model.entities),
        knowledge=tuple(
            model.initial_knowledge.get(e, frozenset()) for e in model.entities
        ),
        inboxes=tuple(() for _ in model.entities),
    )


def next_step(
    model: AnaModel, state: RunState, entity: str, max_sessions: int
) -> Step | None:
    """The step the entity runs next, or None when its sessions are used up."""
    role = model.roles.get(entity)
    if role is None:
        return None
    rs = state.roles[model.entity_index(entity)]
    if rs.step < len(role.steps):
        return role.steps[rs.step]
    if rs.session < max_sessions:
        return role.steps[0]
    return None


def session_env(
    model: AnaModel, state: RunState, entity: str
) -> tuple[int, dict[str, Term]]:
    """Session number and environment the entity's next step runs in."""
    role = model.roles[entity]
    rs = state.roles[model.entity_index(entity)]
    if rs.step < len(role.steps):
        return rs.session, dict(rs.env)
    return rs.session + 1, {}


def guards_hold(
    model: AnaModel, guards: Sequence[Guard], env: Mapping[str, Term]
) -> bool:
    for guard in guards:
        args = [substitute(a, env) for a in guard.args]
        if not all(is_ground(a) for a in args):
            return False
        if guard.op == "eq":
            if args[0] != args[1]:
                return False
        else:
            sig, payload, public = args
            private = (
                model.private_key_for(public.name) if isinstance(public, Atom) else None
            )
            if private is None or sig != Sig(payload, private):
                return False
    return True


def complete_env(
    model: AnaModel,
    step: Step,
    env: Mapping[str, Term],
    session: int,
) -> tuple[dict[str, Term], tuple[tuple[str, Atom], ...]] | None:
    """Add fresh values and bindings to ``env``; None if a guard fails."""
    full = dict(env)
    new_atoms = tuple((name, fresh_atom(name, session)) for name in step.fresh)
    full.update(new_atoms)
    for name, expr in step.bindings:
        full[name] = substitute(expr, full)
    if not guards_hold(model, step.guards, full):
        return None
    return full, new_atoms


def accepts(
    model: AnaModel,
    state: RunState,
    entity: str,
    message: Message,
    max_sessions: int,
) -> Firing | None:
    """Return the firing if the entity's next receive step takes ``message``."""
    step = next_step(model, state, entity, max_sessions)
    if step is None or step.is_start or message.is_tick:
        return None
    if message.receiver != entity or message.sender != step.sender:
        return None
    session, env = session_env(model, state, entity)
    binding = match_pattern(substitute(step.pattern, env), message.payload)
    if binding is None:
        return None
    env.update(binding)
    completed = complete_env(model, step, env, session)
    if completed is None:
        return None
    full, new_atoms = completed
    return Firing(entity, step, full, None, new_atoms)


def firings(model: AnaModel, state: RunState, max_sessions: int) -> list[Firing]:
    """All enabled honest steps, one per entity, in entity-name order.

    A receive step consumes the earliest inbox message it accepts.
    """
    result = []
    for entity in model.entities:
        step = next_step(model, state, entity, max_sessions)
        if step is None:
            continue
        if step.is_start:
            session, env = session_env(model, state, entity)
            completed = complete_env(model, step, env, session)
            if completed is not None:
                full, new_atoms = completed
                result.append(Firing(entity, step, full, None, new_atoms))
            continue
        inbox = state.inboxes[model.entity_index(entity)]
        for index, message in enumerate(inbox):
            firing = accepts(model, state, entity, message, max_sessions)
            if firing is not None:
                result.append(replace(firing, consumed=index))
                break
    return result


def fire(
    model: AnaModel, state: RunState, firing: Firing, position: int
) -> tuple[RunState, Message, frozenset[Term]]:
    """Execute a firing; returns the new state, the emitted message and the
    terms the entity learned."""
    entity = firing.entity
    index = model.entity_index(entity)
    role = model.roles[entity]
    rs = state.roles[index]
    session = rs.session if rs.step < len(role.steps) else rs.session + 1
    step_index = rs.step if rs.step < len(role.steps) else 0

    learned = set(firing.env.values())
    inboxes = list(state.inboxes)
    if firing.consumed is not None:
        inbox = list(inboxes[index])
        learned.add(inbox.pop(firing.consumed).payload)
        inboxes[index] = tuple(inbox)

    claims = tuple(
        Claim(
            position, c.label, entity, tuple(substitute(a, firing.env) for a in c.args)
        )
        for c in firing.step.claims
    )
    if firing.step.send is not None:
        receiver, expr = firing.step.send
        message = Message(entity, receiver, substitute(expr, firing.env))
    elif firing.step.internal is not None:
        message = Message(entity, entity, substitute(firing.step.internal, firing.env))
    else:
        message = Message(entity, entity, TICK)

    env_items = tuple(sorted(firing.env.items(), key=lambda kv: kv[0]))
    roles = list(state.roles)
    roles[index] = RoleState(session, step_index + 1, env_items)
    knowledge = list(state.knowledge)
    new_terms = frozenset(learned) - knowledge[index]
    knowledge[index] = knowledge[index] | new_terms

    new_state = RunState(
        roles=tuple(roles),
        knowledge=tuple(knowledge),
        inboxes=tuple(inboxes),
        claims=state.claims + claims,
        generated=state.generated
        + tuple((entity, name, atom) for name, atom in firing.new_atoms),
    )
    return deliver(model, new_state, message), message, new_terms


def deliver(model: AnaModel, state: RunState, message: Message) -> RunState:
    """Put a message into its receiver's inbox (internal messages and ticks
    are not delivered)."""
    if message.is_tick or message.is_internal or message.receiver not in model.roles:
        return state
    index = model.entity_index(message.receiver)
    inboxes = list(state.inboxes)
    inboxes[index] = inboxes[index] + (message,)
    return replace(state, inboxes=tuple(inboxes))


def _emits_tick(step: Step) -> bool:
    return step.send is None and step.internal is None


def replay(
    model: AnaModel, messages: Sequence[Message], max_sessions: int | None = None
) -> list[RunState]:
    """Execute a trace prefix; returns the state before each message and
    after the last one.

    Even indices are honest positions and must be produced by the sender's
    next enabled step (a tick there means no entity was enabled); odd
    indices are adversary positions (tick or injection, delivered as-is).
    """
    sessions = max_sessions or model.bounds.max_sessions
    state = initial_state(model)
    states = [state]
    for index, message in enumerate(messages):
        if index % 2 == 0:
            candidates = [
                f for f in firings(model, state, sessions) if f.entity == message.sender
            ]
            idle = message.is_tick and not any(_emits_tick(f.step) for f in candidates)
            if not idle:
                if not candidates:
                    raise TraceReplayError(
                        "sender has no enabled step", index, message.sender
                    )
                state, produced, _ = fire(model, state, candidates[0], index)
                if produced != message:
                    raise TraceReplayError(
                        f"step emits {render(produced.payload)} to "
                        f"{produced.receiver}, trace has {render(message.payload)} "
                        f"to {message.receiver}",
                        index,
                        message.sender,
                    )
        elif not message.is_tick:
            state = deliver(model, state, message)
        states.append(state)
    return states


def induced_knowledge(
    model: AnaModel,
    entity: str,
    prefix: Sequence[Message],
    max_sessions: int | None = None,
) -> frozenset[Term]:
    """K(e, w): initial knowledge plus everything bound by e's executed steps."""
    if entity not in model.entities:
        raise UnknownEndpointError(f"unknown entity {entity!r}")
    return replay(model, prefix, max_sessions)[-1].knowledge_of(model, entity)


def honest_run(model: AnaModel) -> list[Message]:
    """The protocol run without adversary: first enabled entity, then a tick."""
    state = initial_state(model)
    messages: list[Message] = []
    tick_carrier = model.entities[0]
    while len(messages) < model.bounds.max_trace_len:
        enabled = firings(model, state, model.bounds.max_sessions)
        if not enabled:
            break
        state, message, _ = fire(model, state, enabled[0], len(messages))
        messages.append(message)
        messages.append(Message(tick_carrier, tick_carrier, TICK))
    return messages

"""Bounded counterexample search under a CRASH-M compromise.

The search runs in rounds. Each round is one honest turn (one enabled entity
executes its next step, or nothing is enabled and the turn idles) followed
by one adversary turn (a tick, or an injection to an entity that waits for a
message it has not got). Rounds are explored breadth-first, so the first
round that breaks the property yields minimal-length witnesses.
"""

from __future__ import annotations

import itertools
import logging
import time
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field
from enum import Enum

from arhscope.adversary import (
    Compromise,
    Origin,
    adversary_nonces,
    can_inject_as,
    can_intercept,
    injection_mark,
    knowledge_origins,
    read_compromised,
    tick_carrier,
)
from arhscope.config import ADVERSARY, PKI
from arhscope.errors import TraceReplayError, VerificationError
from arhscope.model import (
    TICK,
    Agreement,
    AnaModel,
    Atom,
    AtomKind,
    Claim,
    Hash,
    Message,
    Pair,
    RunState,
    SearchBounds,
    Secrecy,
    SecurityProperty,
    Sig,
    Spoof,
    Step,
    Term,
    Var,
    accepts,
    analyze,
    deliver,
    derivable,
    fire,
    firings,
    initial_state,
    is_ground,
    match_pattern,
    next_step,
    render,
    replay,
    session_env,
    substitute,
    subterms,
    term_depth,
    variables,
)

logger = logging.getLogger(__name__)


class Outcome(str, Enum):
    HOLDS = "holds_within_bounds"
    VIOLATED = "violated"


@dataclass(frozen=True, slots=True)
class Reveal:
    """The adversary reads ``term`` out of a read-compromised entity."""

    position: int
    entity: str
    term: Term


@dataclass(frozen=True, slots=True)
class TraceEvent:
    kind: str  # protocol, adversary, claim, init or pki
    actor: str
    peer: str
    content: str
    spoofed: Spoof = Spoof.NONE

    def key(self) -> tuple[str, str, str, str]:
        return self.actor, self.peer, self.content, self.spoofed.value


@dataclass(frozen=True)
class ExecutionTrace:
    """Alternating honest/adversary message sequence with claim events.

    Even positions (0, 2, ...) are honest turns, odd positions adversary
    turns.
    """

    messages: tuple[Message, ...]
    claims: tuple[Claim, ...] = ()
    reveals: tuple[Reveal, ...] = ()
    setup: tuple[TraceEvent, ...] = ()
    id_hint: int | None = None

    def __post_init__(self) -> None:
        if len(self.messages) % 2:
            raise ValueError("an execution trace has even length")

    def __len__(self) -> int:
        return len(self.messages)

    def events(self) -> Iterator[TraceEvent]:
        """Setup, then per position: reveals, the message, its claims."""
        yield from self.setup
        for i, msg in enumerate(self.messages):
            for reveal in self.reveals:
                if reveal.position == i:
                    yield TraceEvent(
                        "adversary", reveal.entity, ADVERSARY, render(reveal.term)
                    )
            yield TraceEvent(
                "adversary" if i % 2 else "protocol",
                msg.sender,
                msg.receiver,
                render(msg.payload),
                msg.spoofed,
            )
            for claim in self.claims:
                if claim.position == i:
                    args = ",".join(render(a) for a in claim.args)
                    yield TraceEvent(
                        "claim", claim.entity, claim.entity, f"{claim.label}({args})"
                    )

    def event_keys(self) -> tuple[tuple[str, str, str, str], ...]:
        return tuple(event.key() for event in self.events())


@dataclass(frozen=True)
class Verdict:
    outcome: Outcome
    witnesses: tuple[ExecutionTrace, ...] = ()
    states_explored: int = 0
    duration: float = field(default=0.0, compare=False)

    @property
    def violated(self) -> bool:
        return self.outcome is Outcome.VIOLATED


# ---------------------------------------------------------------------------
# Deduction
# ---------------------------------------------------------------------------


def deduction_closure(knowledge: Iterable[Term], max_depth: int) -> frozenset[Term]:
    """Everything derivable from ``knowledge`` with at most ``max_depth``
    constructor layers over its projections.

    Enumerates explicitly, so only use it on small sets; the search asks
    ``derivable`` instead.
    """
    if max_depth < 0:
        raise ValueError("max_depth must be >= 0")
    base = analyze(knowledge) - {TICK}
    keys = sorted(
        (t for t in base if isinstance(t, Atom) and t.kind is AtomKind.PRIVATE_KEY),
        key=render,
    )
    closure = set(base)
    layer = set(base)
    for _ in range(max_depth):
        current = sorted(closure, key=render)
        new: set[Term] = set()
        for a, b in itertools.product(current, repeat=2):
            new.add(Pair(a, b))
        for a in current:
            new.add(Hash(a))
            new.update(Sig(a, k) for k in keys)
        layer = new - closure
        if not layer:
            break
        closure |= layer
    closure.add(TICK)
    return frozenset(closure)


# ---------------------------------------------------------------------------
# Trace checks
# ---------------------------------------------------------------------------


def _public_atoms(model: AnaModel) -> frozenset[Term]:
    return frozenset(Atom(e, AtomKind.CONSTANT) for e in model.entities)


def _available(origins: dict[Term, Origin], position: int) -> set[Term]:
    """Adversary knowledge usable for the message at ``position``."""
    return {
        term
        for term, origin in origins.items()
        if origin.position < position
        or (origin.position == position and origin.via == "reveal")
    }


def trace_valid(
    w: ExecutionTrace,
    c: Compromise,
    model: AnaModel,
    bounds: SearchBounds | None = None,
) -> bool:
    """Every honest message is known to its sender, every injection to the
    adversary, and every injection uses a write capability on a link."""
    bounds = bounds or model.bounds
    try:
        states = replay(model, w.messages, bounds.max_sessions)
    except TraceReplayError as e:
        logger.debug(f"Trace not executable: {e}")
        return False
    origins = knowledge_origins(c, w.messages, model, bounds.max_sessions)
    nonces = adversary_nonces(bounds.max_sessions)
    public = _public_atoms(model)

    for i, msg in enumerate(w.messages):
        if msg.is_tick:
            if not msg.is_internal or msg.spoofed is not Spoof.NONE:
                return False
            continue
        if i % 2 == 0:
            if msg.spoofed is not Spoof.NONE:
                return False
            known = analyze(states[i + 1].knowledge_of(model, msg.sender) | public)
            if not derivable(msg.payload, known, term_depth(msg.payload)):
                return False
            continue
        if msg.spoofed is Spoof.NONE or (msg.sender, msg.receiver) not in model.links:
            return False
        if msg.is_internal:
            return False
        marked = msg.sender if msg.spoofed is Spoof.SENDER else msg.receiver
        if not can_inject_as(c, marked, model):
            return False
        known = analyze(_available(origins, i))
        if not derivable(msg.payload, known, bounds.max_term_depth, nonces):
            return False
    return True


def _secret_instances(state: RunState, selector: tuple[str, str]) -> list[Atom]:
    return [atom for e, name, atom in state.generated if (e, name) == selector]


def _secrecy_broken(
    secrecy: Secrecy, state: RunState, known: frozenset[Term]
) -> list[Atom] | None:
    """The known secret atoms of the first fully known secret group."""
    for group in secrecy.secrets:
        leaked = []
        for selector in group:
            hits = [a for a in _secret_instances(state, selector) if a in known]
            if not hits:
                break
            leaked.extend(hits)
        else:
            return leaked
    return None


def _agreement_broken(agreement: Agreement, claims: Sequence[Claim]) -> bool:
    for j, end in enumerate(claims):
        if end.label != agreement.end_claim:
            continue
        wanted = [end.args[k] for k in agreement.matched_args]
        if not any(
            init.label == agreement.init_claim
            and [init.args[k] for k in agreement.matched_args] == wanted
            for init in claims[:j]
        ):
            return True
    return False


def evaluate_sp(
    w: ExecutionTrace,
    sp: SecurityProperty,
    c: Compromise,
    model: AnaModel,
    bounds: SearchBounds | None = None,
) -> bool:
    """w ⊨_c S: True when the property holds on the trace."""
    bounds = bounds or model.bounds
    if isinstance(sp.kind, Secrecy):
        try:
            state = replay(model, w.messages, bounds.max_sessions)[-1]
        except TraceReplayError as e:
            raise VerificationError(f"{sp.name}: {e}") from e
        known = analyze(knowledge_origins(c, w.messages, model, bounds.max_sessions))
        return _secrecy_broken(sp.kind, state, known) is None
    if isinstance(sp.kind, Agreement):
        for claim in w.claims:
            if claim.label in (sp.kind.end_claim, sp.kind.init_claim) and any(
                k >= len(claim.args) for k in sp.kind.matched_args
            ):
                raise VerificationError(
                    f"{sp.name}: claim {claim.label} has too few arguments"
                )
        return not _agreement_broken(sp.kind, w.claims)
    raise VerificationError(f"{sp.name}: unsupported property kind")


# ---------------------------------------------------------------------------
# Injection synthesis
# ---------------------------------------------------------------------------


def _guard_targets(step: Step) -> set[str]:
    """Pattern variables a guard can compute once the rest is known."""
    targets = set()
    for guard in step.guards:
        candidates = guard.args[:1] if guard.op == "verify" else guard.args
        targets.update(a.name for a in candidates if isinstance(a, Var))
    return targets


def _determine(model: AnaModel, step: Step, env: dict[str, Term]) -> dict[str, Term]:
    """Fill in binding and guard-determined values until nothing changes."""
    env = dict(env)
    changed = True
    while changed:
        changed = False
        for name, expr in step.bindings:
            value = substitute(expr, env)
            if name not in env and is_ground(value):
                env[name] = value
                changed = True
        for guard in step.guards:
            args = [substitute(a, env) for a in guard.args]
            if guard.op == "verify":
                sig, payload, public = args
                private = (
                    model.private_key_for(public.name)
                    if isinstance(public, Atom)
                    else None
                )
                if isinstance(sig, Var) and is_ground(payload) and private is not None:
                    env[sig.name] = Sig(payload, private)
                    changed = True
            else:
                left, right = args
                if isinstance(left, Var) and is_ground(right):
                    env[left.name] = right
                    changed = True
                elif isinstance(right, Var) and is_ground(left):
                    env[right.name] = left
                    changed = True
    return env


def synthesize_injections(
    model: AnaModel,
    state: RunState,
    receiver: str,
    known: frozenset[Term],
    bounds: SearchBounds,
) -> list[Term]:
    """Payloads the adversary can build that ``receiver``'s next step accepts.

    ``known`` is the adversary's analysed knowledge.
    """
    step = next_step(model, state, receiver, bounds.max_sessions)
    if step is None or step.is_start:
        return []
    _, env = session_env(model, state, receiver)
    pattern = substitute(step.pattern, env)
    nonces = adversary_nonces(bounds.max_sessions)

    free = variables(pattern)
    targets = _guard_targets(step)
    open_vars = [v for v in free if v not in targets]
    pool = sorted(
        {
            t
            for t in known
            if isinstance(t, Atom) and t.kind in (AtomKind.NONCE, AtomKind.CONSTANT)
        }
        | nonces,
        key=render,
    )

    payloads: set[Term] = set()
    for values in itertools.product(pool, repeat=len(open_vars)):
        values_env = _determine(model, step, dict(zip(open_vars, values)))
        payload = substitute(pattern, values_env)
        if is_ground(payload):
            payloads.add(payload)
    payloads.update(t for t in known if match_pattern(pattern, t) is not None)

    result = []
    for payload in sorted(payloads, key=render):
        if not derivable(payload, known, bounds.max_term_depth, nonces):
            continue
        candidate = Message(step.sender, receiver, payload, Spoof.SENDER)
        if accepts(model, state, receiver, candidate, bounds.max_sessions) is not None:
            result.append(payload)
    return result


# ---------------------------------------------------------------------------
# Search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Node:
    state: RunState
    adversary: frozenset[Term]  # raw, not analysed
    messages: tuple[Message, ...] = ()


class _Search:
    """One check_property run; holds the per-run constants."""

    def __init__(
        self,
        model: AnaModel,
        c: Compromise,
        sp: SecurityProperty,
        bounds: SearchBounds,
    ) -> None:
        self.model = model
        self.c = c
        self.sp = sp
        self.bounds = bounds
        self.readers = read_compromised(c, model)
        self.carrier = tick_carrier(c, model)
        self.states_explored = 0

    def root(self) -> _Node:
        state = initial_state(self.model)
        learned = frozenset().union(
            *(state.knowledge_of(self.model, e) for e in self.readers)
        )
        return _Node(state, learned)

    def honest_moves(self, node: _Node) -> Iterator[_Node]:
        position = len(node.messages)
        enabled = firings(self.model, node.state, self.bounds.max_sessions)
        if not enabled:
            tick = Message(self.carrier, self.carrier, TICK)
            yield _Node(node.state, node.adversary, node.messages + (tick,))
            return
        for firing in enabled:
            state, message, learned = fire(self.model, node.state, firing, position)
            adversary = node.adversary
            if firing.entity in self.readers:
                adversary = adversary | learned
            if not message.is_tick and can_intercept(self.c, message, self.model):
                adversary = adversary | {message.payload}
            yield _Node(state, adversary, node.messages + (message,))

    def adversary_moves(self, node: _Node) -> Iterator[_Node]:
        tick = Message(self.carrier, self.carrier, TICK)
        yield _Node(node.state, node.adversary, node.messages + (tick,))
        if not self.c.dom():
            return
        known = analyze(node.adversary)
        waiting = {
            f.entity
            for f in firings(self.model, node.state, self.bounds.max_sessions)
        }
        for receiver in self.model.entities:
            step = next_step(self.model, node.state, receiver, self.bounds.max_sessions)
            if step is None or step.is_start or receiver in waiting:
                continue
            mark = injection_mark(self.c, step.sender, receiver, self.model)
            if mark is None:
                continue
            for payload in synthesize_injections(
                self.model, node.state, receiver, known, self.bounds
            ):
                message = Message(step.sender, receiver, payload, mark)
                state = deliver(self.model, node.state, message)
                yield _Node(state, node.adversary, node.messages + (message,))

    def broken(self, node: _Node) -> bool:
        if isinstance(self.sp.kind, Secrecy):
            known = analyze(node.adversary)
            return _secrecy_broken(self.sp.kind, node.state, known) is not None
        return _agreement_broken(self.sp.kind, node.state.claims)

    def run(self) -> list[_Node]:
        frontier = [self.root()]
        seen = {(frontier[0].state, analyze(frontier[0].adversary))}
        for round_index in range(self.bounds.max_trace_len // 2):
            violations: list[_Node] = []
            successors: list[_Node] = []
            for node in frontier:
                for after_honest in self.honest_moves(node):
                    for after_adversary in self.adversary_moves(after_honest):
                        self.states_explored += 1
                        if self.broken(after_adversary):
                            violations.append(after_adversary)
                            continue
                        memo = (
                            after_adversary.state,
                            analyze(after_adversary.adversary),
                        )
                        if memo in seen:
                            continue
                        seen.add(memo)
                        successors.append(after_adversary)
            if violations:
                logger.debug(
                    f"{self.sp.name} under {self.c}: violated in round "
                    f"{round_index + 1} ({len(violations)} leaf states)"
                )
                return violations
            if not successors:
                break
            frontier = successors
        return []

    def witness(self, node: _Node) -> ExecutionTrace:
        messages = node.messages
        origins = knowledge_origins(
            self.c, messages, self.model, self.bounds.max_sessions
        )
        needed: set[Term] = set()
        for i, msg in enumerate(messages):
            if i % 2 and not msg.is_tick:
                needed.update(subterms(msg.payload))
        if isinstance(self.sp.kind, Secrecy):
            leaked = _secrecy_broken(self.sp.kind, node.state, analyze(node.adversary))
            needed.update(leaked or ())
        reveals = sorted(
            {
                Reveal(origin.position, origin.entity, term)
                for term, origin in origins.items()
                if term in needed and origin.via == "reveal"
            },
            key=lambda r: (r.position, r.entity, render(r.term)),
        )
        return ExecutionTrace(
            messages=messages,
            claims=node.state.claims,
            reveals=tuple(reveals),
            setup=setup_events(self.model),
        )


def setup_events(model: AnaModel) -> tuple[TraceEvent, ...]:
    """Init step per role entity, then one PKI registration per key pair."""
    events = [TraceEvent("init", e, e, "init") for e in model.roles]
    for private, public in sorted(model.keys.items()):
        owner = model.key_owner(private)
        if owner is not None:
            events.append(TraceEvent("pki", owner, PKI, public))
    return tuple(events)


def check_property(
    model: AnaModel,
    c: Compromise,
    sp: SecurityProperty,
    bounds: SearchBounds | None = None,
) -> Verdict:
    """Search all interleavings within ``bounds`` for a counterexample."""
    bounds = bounds or model.bounds
    if c.components != model.components:
        raise VerificationError(f"compromise {c} does not range over the model")
    start = time.perf_counter()
    search = _Search(model, c, sp, bounds)
    try:
        leaves = search.run()
    except TraceReplayError as e:
        raise VerificationError(f"{c} / {sp.name}: {e}") from e

    witnesses: list[ExecutionTrace] = []
    seen: set[tuple] = set()
    for leaf in leaves:
        trace = search.witness(leaf)
        keys = trace.event_keys()
        if keys in seen:
            continue
        seen.add(keys)
        if not trace_valid(trace, c, model, bounds):
            raise VerificationError(f"{c} / {sp.name}: witness is not valid")
        if evaluate_sp(trace, sp, c, model, bounds):
            raise VerificationError(
                f"{c} / {sp.name}: witness does not falsify the property"
            )
        witnesses.append(
            ExecutionTrace(
                trace.messages,
                trace.claims,
                trace.reveals,
                trace.setup,
                len(witnesses),
            )
        )

    duration = time.perf_counter() - start
    outcome = Outcome.VIOLATED if witnesses else Outcome.HOLDS
    logger.debug(
        f"{sp.name} under {c}: {outcome.value}, "
        f"{search.states_explored} states, {len(witnesses)} witnesses"
    )
    return Verdict(outcome, tuple(witnesses), search.states_explored, duration)

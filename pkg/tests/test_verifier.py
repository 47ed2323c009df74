"""Tests for trace validity, property evaluation and the bounded search."""

import dataclasses

import pytest

from arhscope.adversary import Compromise, all_compromises, leq
from arhscope.errors import VerificationError
from arhscope.model import (
    TICK,
    Atom,
    AtomKind,
    Hash,
    Pair,
    Sig,
    Spoof,
    analyze,
    honest_run,
    render,
    replay,
)
from arhscope.verifier import (
    ExecutionTrace,
    Outcome,
    check_property,
    deduction_closure,
    evaluate_sp,
    setup_events,
    synthesize_injections,
    trace_valid,
)

# -- helpers -----------------------------------------------------------------


def _c(model, key: str = "") -> Compromise:
    return Compromise.from_key(model.components, key)


def _honest_trace(model) -> ExecutionTrace:
    messages = tuple(honest_run(model))
    claims = replay(model, messages)[-1].claims
    return ExecutionTrace(messages, claims, setup=setup_events(model))


def _check(model, key: str, prop: str):
    return check_property(model, _c(model, key), model.property(prop))


# -- tests: deduction ----------------------------------------------------------


class TestDeduction:
    """The explicit deduction closure used for small knowledge sets."""

    def test_depth_zero_is_the_analysed_knowledge(self):
        """Only projections, plus the always-known tick."""
        a, b = Atom("a", AtomKind.NONCE), Atom("b", AtomKind.NONCE)
        assert deduction_closure([Pair(a, b)], 0) == {Pair(a, b), a, b, TICK}

    def test_one_layer(self):
        """Pairs and hashes of known terms; no signatures without a key."""
        a = Atom("a", AtomKind.NONCE)
        closure = deduction_closure([a], 1)
        assert Pair(a, a) in closure
        assert Hash(a) in closure
        assert not any(isinstance(t, Sig) for t in closure)

    def test_signatures_with_a_known_key(self):
        """A known private key signs every known term."""
        a, k = Atom("a", AtomKind.NONCE), Atom("k", AtomKind.PRIVATE_KEY)
        assert Sig(a, k) in deduction_closure([a, k], 1)

    def test_negative_depth(self):
        """Depth must not be negative."""
        with pytest.raises(ValueError):
            deduction_closure([], -1)


# -- tests: trace checks -------------------------------------------------------


class TestTraceChecks:
    """trace_valid and evaluate_sp on hand-built traces."""

    def test_honest_run_is_valid_and_secure(self, relay):
        """The honest run is executable and violates nothing."""
        trace = _honest_trace(relay)
        assert trace_valid(trace, _c(relay), relay)
        for prop in relay.properties:
            assert evaluate_sp(trace, prop, _c(relay), relay)

    def test_secrecy_depends_on_the_compromise(self, relay):
        """The same honest run leaks the nonce once A is readable."""
        trace = _honest_trace(relay)
        secrecy = relay.property("secret_n")
        assert evaluate_sp(trace, secrecy, _c(relay, "Net:w"), relay)
        assert not evaluate_sp(trace, secrecy, _c(relay, "Net:r"), relay)
        assert not evaluate_sp(trace, secrecy, _c(relay, "A:r"), relay)

    def test_odd_length_is_rejected(self, relay):
        """Every honest turn is followed by an adversary turn."""
        with pytest.raises(ValueError):
            ExecutionTrace(tuple(honest_run(relay)[:3]))

    def test_injection_needs_write_access(self, relay):
        """A valid witness becomes invalid under a weaker compromise."""
        witness = _check(relay, "A:r,M:w", "auth").witnesses[0]
        assert trace_valid(witness, _c(relay, "A:r,M:w"), relay)
        assert not trace_valid(witness, _c(relay, "A:r"), relay)
        assert not trace_valid(witness, _c(relay, "M:w"), relay)

    def test_injection_must_be_marked(self, relay):
        """An injected message without spoof mark is not a valid trace."""
        witness = _check(relay, "A:r,M:w", "auth").witnesses[0]
        messages = list(witness.messages)
        messages[1] = dataclasses.replace(messages[1], spoofed=Spoof.NONE)
        tampered = dataclasses.replace(witness, messages=tuple(messages))
        assert not trace_valid(tampered, _c(relay, "A:r,M:w"), relay)


# -- tests: injection synthesis ------------------------------------------------


class TestInjections:
    """Payload candidates for a waiting receiver."""

    def test_forgery_needs_the_key(self, relay):
        """With A's key the adversary signs its own nonce; without, only replays."""
        run = honest_run(relay)
        state = replay(relay, run[:2])[-1]
        leaked = analyze({run[0].payload, Atom("skA", AtomKind.PRIVATE_KEY)})
        payloads = {
            render(p)
            for p in synthesize_injections(relay, state, "B", leaked, relay.bounds)
        }
        assert payloads == {"pair(adv,sign(adv,skA))", "pair(n,sign(n,skA))"}

        observed = analyze({run[0].payload})
        replays = synthesize_injections(relay, state, "B", observed, relay.bounds)
        assert [render(p) for p in replays] == ["pair(n,sign(n,skA))"]

    def test_no_injection_into_a_start_step(self, relay):
        """A role that starts on its own takes no messages."""
        state = replay(relay, [])[-1]
        assert synthesize_injections(relay, state, "A", frozenset(), relay.bounds) == []


# -- tests: search -----------------------------------------------------------


class TestCheckProperty:
    """End-to-end verdicts on the relay model."""

    def test_empty_compromise_holds(self, relay):
        """Nothing breaks without an adversary."""
        for prop in relay.properties:
            verdict = check_property(relay, _c(relay), prop)
            assert verdict.outcome is Outcome.HOLDS
            assert verdict.witnesses == ()
            assert verdict.states_explored > 0

    def test_forged_origin(self, relay):
        """Reading A's key and writing M's side of the link forges a run."""
        verdict = _check(relay, "A:r,M:w", "auth")
        assert verdict.violated
        assert len(verdict.witnesses) == 1
        witness = verdict.witnesses[0]
        assert len(witness) == 4
        injected = witness.messages[1]
        assert injected.spoofed is Spoof.SENDER
        assert (injected.sender, injected.receiver) == ("M", "B")
        assert render(injected.payload) == "pair(adv,sign(adv,skA))"
        assert [r.entity for r in witness.reveals] == ["A"]
        assert [c.label for c in witness.claims] == ["Start", "Done"]

    def test_receiver_side_injection(self, relay):
        """Write access to the receiver marks the receiver."""
        verdict = _check(relay, "A:r,B:w", "auth")
        assert verdict.violated
        assert verdict.witnesses[0].messages[1].spoofed is Spoof.RECEIVER

    def test_key_without_link_access_holds(self, relay):
        """Write access to A does not reach the link M -> B."""
        assert not _check(relay, "A:rw", "auth").violated
        assert not _check(relay, "B:rw,M:rw,Net:rw", "auth").violated

    def test_domain_read_breaks_secrecy(self, relay):
        """Reading Net exposes A's message to M."""
        assert _check(relay, "Net:r", "secret_n").violated
        assert not _check(relay, "Net:w", "secret_n").violated

    def test_witnesses_are_valid_counterexamples(self, relay):
        """Every witness is executable and falsifies its property."""
        c = _c(relay, "B:r")
        prop = relay.property("secret_n")
        verdict = check_property(relay, c, prop)
        assert verdict.violated
        for witness in verdict.witnesses:
            assert trace_valid(witness, c, relay)
            assert not evaluate_sp(witness, prop, c, relay)

    def test_deterministic(self, relay):
        """Identical inputs give identical verdicts and witness order."""
        first = _check(relay, "A:r,Net:w", "auth")
        second = _check(relay, "A:r,Net:w", "auth")
        assert first == second

    def test_violations_are_upward_closed(self, relay):
        """A violation persists under every larger compromise."""
        lattice = all_compromises(relay.components)
        for prop in relay.properties:
            violated = [
                c for c in lattice if check_property(relay, c, prop).violated
            ]
            for c in violated:
                for c2 in lattice:
                    if leq(c, c2):
                        assert c2 in violated, f"{prop.name}: {c} but not {c2}"

    def test_foreign_compromise_is_rejected(self, relay):
        """A compromise over other components cannot be checked."""
        with pytest.raises(VerificationError):
            check_property(
                relay, Compromise.empty(["X"]), relay.property("secret_n")
            )

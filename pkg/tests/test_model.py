"""Tests for terms, model-file parsing and honest role execution."""

import json

import pytest

from arhscope.errors import (
    DuplicateComponentError,
    ModelError,
    TraceReplayError,
    UnboundVariableError,
    UnknownClaimError,
    UnknownEndpointError,
)
from arhscope.model import (
    TICK,
    Agreement,
    Atom,
    AtomKind,
    ComponentKind,
    Hash,
    Message,
    Pair,
    SearchBounds,
    Secrecy,
    Sig,
    Var,
    analyze,
    derivable,
    honest_run,
    induced_knowledge,
    load_model,
    match_pattern,
    parse_call,
    parse_model,
    parse_term,
    render,
    replay,
    resolve_text,
    term_depth,
)

# -- helpers -----------------------------------------------------------------


def _nonce(name: str) -> Atom:
    return Atom(name, AtomKind.NONCE)


def _key(name: str) -> Atom:
    return Atom(name, AtomKind.PRIVATE_KEY)


# -- tests: terms --------------------------------------------------------------


class TestTerms:
    """Term syntax, depth, matching and derivation."""

    def test_pair_with_many_arguments_nests_to_the_right(self):
        """pair(a,b,c) is pair(a,pair(b,c))."""
        term = parse_term("pair(a,b,c)")
        assert term == Pair(Var("a"), Pair(Var("b"), Var("c")))
        assert render(term) == "pair(a,pair(b,c))"

    def test_tick_keyword(self):
        """The bare word tick is the tick content, not a variable."""
        assert parse_term("tick") is TICK

    @pytest.mark.parametrize(
        "text",
        ["pair(a)", "h(a,b)", "sign(a)", "foo(a)", "pair(a,b", "a b", ""],
    )
    def test_malformed_terms_are_rejected(self, text):
        """Wrong arity, unknown constructors and garbage raise ModelError."""
        with pytest.raises(ModelError):
            parse_term(text)

    def test_parse_call(self):
        """Guards use call syntax with term arguments."""
        call = parse_call("verify(s,n,pk)")
        assert call.name == "verify"
        assert call.args == (Var("s"), Var("n"), Var("pk"))

    def test_term_depth(self):
        """Atoms have depth 0, each constructor adds one."""
        n = _nonce("n")
        assert term_depth(n) == 0
        assert term_depth(Pair(n, Hash(n))) == 2
        assert term_depth(Sig(Pair(n, n), _key("k"))) == 2

    def test_match_pattern_binds_variables(self):
        """A pattern binds each variable to the matching subterm."""
        n, k = _nonce("n"), _key("k")
        binding = match_pattern(Pair(Var("x"), Var("y")), Pair(n, Sig(n, k)))
        assert binding == {"x": n, "y": Sig(n, k)}

    def test_match_pattern_mismatch(self):
        """Structure and atom mismatches give None."""
        n = _nonce("n")
        assert match_pattern(Pair(Var("x"), Var("y")), n) is None
        assert match_pattern(Pair(n, Var("y")), Pair(_nonce("m"), n)) is None

    def test_analyze_projects_pairs(self):
        """Analysis adds both components of every pair, recursively."""
        a, b, c = _nonce("a"), _nonce("b"), _nonce("c")
        known = analyze([Pair(a, Pair(b, Hash(c)))])
        assert {a, b, Hash(c)} <= known
        assert c not in known

    def test_signing_needs_the_private_key(self):
        """A signature is derivable only when the key atom itself is known."""
        n, k = _nonce("n"), _key("k")
        assert not derivable(Sig(n, k), frozenset({n}), 3)
        assert derivable(Sig(n, k), frozenset({n, k}), 3)

    def test_depth_limit(self):
        """No more constructor layers than allowed are added."""
        n = _nonce("n")
        assert derivable(Hash(n), frozenset({n}), 1)
        assert not derivable(Hash(Hash(n)), frozenset({n}), 1)

    def test_fresh_values_are_derivable(self):
        """Fresh adversary values need no knowledge."""
        adv = _nonce("adv")
        assert derivable(Pair(adv, adv), frozenset(), 1, frozenset({adv}))


# -- tests: model files ------------------------------------------------------


class TestModelParsing:
    """Validation of model documents."""

    def test_bundled_model(self, bms):
        """The BMS case study has four entities and three domains."""
        assert bms.components == (
            "Backend",
            "DGW",
            "Inner",
            "InternetFacing",
            "TCU",
            "Target",
            "UseCase",
        )
        assert bms.domain_of("TCU") == "InternetFacing"
        assert bms.domain_of("UseCase") == "Inner"
        assert bms.component("Inner").kind is ComponentKind.DOMAIN
        assert bms.component("DGW").kind is ComponentKind.ENTITY
        assert [p.name for p in bms.properties] == [
            "secrecy",
            "authenticity_of_use_case",
        ]

    def test_property_kinds(self, relay):
        """Secrecy selectors and agreement arguments are resolved."""
        assert relay.property("secret_n").kind == Secrecy(((("A", "n"),),))
        assert relay.property("auth").kind == Agreement("Done", "Start", (0, 1, 2))

    def test_self_links_are_implicit(self, relay):
        """Every entity may send internal messages to itself."""
        assert ("A", "A") in relay.links
        assert ("A", "B") not in relay.links

    def test_digest_is_stable(self, relay_doc):
        """Equal documents have equal digests; edits change it."""
        first = parse_model(relay_doc)
        assert parse_model(json.dumps(relay_doc)).digest == first.digest
        relay_doc["bounds"]["max_trace_len"] = 10
        assert parse_model(relay_doc).digest != first.digest

    def test_duplicate_entity(self, relay_doc):
        """An entity declared twice is rejected."""
        relay_doc["entities"].append("A")
        with pytest.raises(DuplicateComponentError):
            parse_model(relay_doc)

    def test_domain_colliding_with_entity(self, relay_doc):
        """Domain and entity names share one namespace."""
        relay_doc["domains"]["A"] = []
        with pytest.raises(DuplicateComponentError):
            parse_model(relay_doc)

    def test_unknown_link_endpoint(self, relay_doc):
        """Links may only join declared entities."""
        relay_doc["links"].append(["A", "Z"])
        with pytest.raises(UnknownEndpointError, match="links\\[2\\]"):
            parse_model(relay_doc)

    def test_send_without_link(self, relay_doc):
        """A role may only send along a declared link."""
        relay_doc["roles"]["A"][0]["send"]["to"] = "B"
        with pytest.raises(UnknownEndpointError, match="no link"):
            parse_model(relay_doc)

    def test_unbound_variable(self, relay_doc):
        """Sending a name nothing binds is an error with its location."""
        relay_doc["roles"]["A"][0]["send"]["term"] = "pair(n,q)"
        with pytest.raises(UnboundVariableError, match="roles.A\\[0\\].send"):
            parse_model(relay_doc)

    def test_unknown_claim(self, relay_doc):
        """Agreement must reference claims some role makes."""
        relay_doc["properties"][1]["end"] = "Nope"
        with pytest.raises(UnknownClaimError):
            parse_model(relay_doc)

    def test_unknown_secret(self, relay_doc):
        """Secrecy selectors must name a fresh value of a role."""
        relay_doc["properties"][0]["secrets"] = ["B.n"]
        with pytest.raises(UnknownClaimError):
            parse_model(relay_doc)

    def test_invalid_json(self):
        """Undecodable text is a model error."""
        with pytest.raises(ModelError, match="invalid JSON"):
            parse_model("{not json")

    def test_missing_file(self, tmp_path):
        """A missing model file reports 'file not found'."""
        with pytest.raises(ModelError, match="file not found"):
            load_model(tmp_path / "missing.json")

    def test_load_from_file(self, relay_file, relay):
        """Loading a file gives the same model as parsing the document."""
        assert load_model(relay_file).digest == relay.digest


class TestSearchBounds:
    """Bounds validation and overrides."""

    def test_rejects_non_positive(self):
        """Every bound is a positive integer."""
        with pytest.raises(ModelError):
            SearchBounds(max_sessions=0)

    def test_override_ignores_none(self):
        """CLI overrides only replace the values actually given."""
        bounds = SearchBounds(1, 16, 3).override(max_sessions=None, max_trace_len=8)
        assert bounds == SearchBounds(max_sessions=1, max_trace_len=8, max_term_depth=3)


# -- tests: execution --------------------------------------------------------


class TestExecution:
    """Honest runs and trace replay."""

    def test_honest_run_of_bms(self, bms):
        """Four steps, each followed by an adversary tick."""
        run = honest_run(bms)
        assert len(run) == 8
        first = run[0]
        assert (first.sender, first.receiver) == ("UseCase", "DGW")
        assert render(first.payload) == "pair(n,sign(n,pkUC))"
        assert run[6].is_internal
        assert render(run[6].payload) == "h(pair(n,oN))"
        assert all(m.is_tick for m in run[1::2])

    def test_claims_are_recorded_with_positions(self, bms):
        """Claims carry the position of the message their step emitted."""
        states = replay(bms, honest_run(bms))
        claims = states[-1].claims
        assert [(c.position, c.label) for c in claims] == [
            (0, "InitiateTransport"),
            (6, "EndWithNonce"),
        ]
        assert claims[0].args == claims[1].args

    def test_replay_rejects_unexecutable_message(self, relay):
        """M has nothing to forward before A has sent."""
        bogus = Message("M", "B", _nonce("n"))
        with pytest.raises(TraceReplayError) as excinfo:
            replay(relay, [bogus])
        assert excinfo.value.index == 0
        assert excinfo.value.entity == "M"

    def test_induced_knowledge(self, bms):
        """TCU learns the nonce, the signature and its own fresh value."""
        knowledge = induced_knowledge(bms, "TCU", honest_run(bms))
        assert _nonce("oN") in knowledge
        assert _nonce("n") in knowledge
        assert _key("pkT") in knowledge

    def test_resolve_text_maps_global_names(self, relay):
        """Keys and entity names resolve to model atoms, others to nonces."""
        term = resolve_text(relay, "pair(adv,sign(adv,skA))")
        assert term == Pair(_nonce("adv"), Sig(_nonce("adv"), _key("skA")))
        assert resolve_text(relay, "A") == Atom("A", AtomKind.CONSTANT)

"""Shared fixtures: a three-entity relay model and the bundled BMS model.

Relay: A signs a fresh nonce n and sends it through M to B, which checks
the signature. M sits in the domain Net. Expected verdicts:

- secret_n breaks under read access to A, M, B or Net.
- auth breaks when A's key is read and the link M -> B is writable
  (through M, Net or B).
"""

import copy
import json

import pytest

from arhscope.model import load_bundled_model, parse_model

RELAY = {
    "name": "relay",
    "entities": ["A", "M", "B"],
    "domains": {"Net": ["M"]},
    "links": [["A", "M"], ["M", "B"]],
    "keys": {"skA": "pkA"},
    "initial_knowledge": {"A": ["skA", "pkA"], "B": ["pkA"]},
    "roles": {
        "A": [
            {
                "fresh": ["n"],
                "bind": {"s": "sign(n,skA)"},
                "claim": [{"label": "Start", "args": ["A", "B", "n"]}],
                "send": {"to": "M", "term": "pair(n,s)"},
            }
        ],
        "M": [
            {
                "trigger": {"receive": "x", "from": "A"},
                "send": {"to": "B", "term": "x"},
            }
        ],
        "B": [
            {
                "trigger": {"receive": "pair(n,s)", "from": "M"},
                "guard": ["verify(s,n,pkA)"],
                "claim": [{"label": "Done", "args": ["A", "B", "n"]}],
            }
        ],
    },
    "properties": [
        {"name": "secret_n", "kind": "secrecy", "secrets": ["A.n"]},
        {"name": "auth", "kind": "agreement", "end": "Done", "init": "Start"},
    ],
    "bounds": {"max_sessions": 1, "max_term_depth": 3, "max_trace_len": 8},
}


@pytest.fixture
def relay_doc():
    """A fresh, mutable copy of the relay document."""
    return copy.deepcopy(RELAY)


@pytest.fixture(scope="session")
def relay():
    return parse_model(RELAY)


@pytest.fixture
def relay_file(tmp_path):
    path = tmp_path / "relay.json"
    path.write_text(json.dumps(RELAY), encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def bms():
    return load_bundled_model()

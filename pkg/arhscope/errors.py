"""Exception hierarchy for arhscope.

Library code raises these; only the CLI turns them into exit codes.
"""


class ArhscopeError(Exception):
    """Base class for every error raised by arhscope."""


class ModelError(ArhscopeError, ValueError):
    """A model document is malformed or violates a model invariant."""

    def __init__(self, message: str, location: str | None = None) -> None:
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class DuplicateComponentError(ModelError):
    """An entity or domain name is declared twice."""


class UnknownEndpointError(ModelError):
    """A link, role or membership references an undeclared component."""


class UnboundVariableError(ModelError):
    """A role expression uses a name that nothing binds."""


class UnknownClaimError(ModelError):
    """A security property references a claim or fresh name no role defines."""


class TraceReplayError(ArhscopeError):
    """A trace prefix cannot be executed against the role scripts."""

    def __init__(self, message: str, index: int, entity: str | None = None) -> None:
        self.index = index
        self.entity = entity
        where = f"step {index}" + (f" ({entity})" if entity else "")
        super().__init__(f"{where}: {message}")


class CompromiseMismatchError(ArhscopeError, ValueError):
    """Two compromises range over different component sets."""


class VerificationError(ArhscopeError):
    """The verifier failed for a (compromise, property) pair."""


class StoreError(ArhscopeError):
    """The verdict store is missing, unreadable or incomplete."""


class NotUpwardClosedError(ArhscopeError, ValueError):
    """A violation set is not upward-closed under the compromise order."""


class CycleError(ArhscopeError, ValueError):
    """A trace graph that must be acyclic contains a cycle."""

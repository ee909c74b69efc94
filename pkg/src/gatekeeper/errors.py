"""Exception hierarchy. Every error carries a stable ``code`` string."""

from __future__ import annotations


class GatekeeperError(Exception):
    code = "error"

    def __init__(self, message: str = "", code: str | None = None) -> None:
        super().__init__(message)
        if code is not None:
            self.code = code


class MalformedDocument(GatekeeperError):
    code = "malformed-syntax"


class SchemaViolation(GatekeeperError):
    code = "schema-violation"

    def __init__(self, invariant: str, component_id: str | None = None, detail: str = "") -> None:
        where = f" at {component_id!r}" if component_id is not None else ""
        msg = f"{invariant}{where}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.invariant = invariant
        self.component_id = component_id


class MalformedRequest(GatekeeperError):
    code = "malformed-request"

    def __init__(self, component_id: str, detail: str) -> None:
        super().__init__(f"malformed request at {component_id!r}: {detail}")
        self.component_id = component_id


class AdapterError(GatekeeperError):
    """Failure inside a system adapter; ``code`` names the failure class."""

    code = "io-failure"

    def __init__(self, code: str, path: str, detail: str = "") -> None:
        super().__init__(f"{code} at {path!r}" + (f": {detail}" if detail else ""), code)
        self.path = path


class LedgerError(GatekeeperError):
    code = "io-failure"


class IndexGap(LedgerError):
    code = "index-gap"


class Divergence(GatekeeperError):
    code = "divergence"

    def __init__(self, step_index: int, detail: str) -> None:
        super().__init__(f"replay diverged at step {step_index}: {detail}")
        self.step_index = step_index


class ScriptExhausted(GatekeeperError):
    code = "script-exhausted"


class PlannerUnavailable(GatekeeperError):
    code = "planner-unavailable"


class TransportFailure(GatekeeperError):
    code = "transport-failure"


class EmptyResults(GatekeeperError):
    code = "empty-results"

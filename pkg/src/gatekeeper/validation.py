"""Action extraction and the IsValid half of the transition function."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterator, Optional

from .errors import MalformedRequest
from .scr import (
    DELETE, DIRECTORY, EDIT, FIDELITY_RANK, FILE, FULL, LATENT, MALFORMED, PROVIDE, WRITE,
    Component, Request, Scr, parent_id,
)

STALE_REVISION = "stale-revision"
UNKNOWN_COMPONENT = "unknown-component"
PARENT_MISSING = "parent-missing"
DIGEST_MISMATCH = "digest-mismatch"
FIDELITY_REGRESSION = "fidelity-regression"
ALREADY_FULL = "already-full"
DELETE_NONEMPTY_DIR = "delete-nonempty-dir"
WRITE_EXISTS = "write-exists"
MALFORMED_REQUEST = "malformed-request"
CONTENT_TAMPERING = "content-tampering"

VIOLATION_CODES = (
    STALE_REVISION, UNKNOWN_COMPONENT, PARENT_MISSING, DIGEST_MISMATCH, FIDELITY_REGRESSION,
    ALREADY_FULL, DELETE_NONEMPTY_DIR, WRITE_EXISTS, MALFORMED_REQUEST, CONTENT_TAMPERING,
)
# Rejections that reveal the agent acted on a false belief about system state.
GROUNDING_CODES = frozenset({DIGEST_MISMATCH, UNKNOWN_COMPONENT})


@dataclass(frozen=True)
class Proposal:
    """An agent-returned document whose request fields encode the action set."""

    scr: Scr


@dataclass(frozen=True)
class MalformedProposal:
    """A reply that could not be decoded into a document at all."""

    raw: str
    reason: str


@dataclass(frozen=True)
class ActionSet:
    actions: tuple[tuple[str, Request], ...] = ()

    def __iter__(self) -> Iterator[tuple[str, Request]]:
        return iter(self.actions)

    def __len__(self) -> int:
        return len(self.actions)

    def __bool__(self) -> bool:
        return bool(self.actions)

    @property
    def ids(self) -> list[str]:
        return [i for i, _ in self.actions]

    def mutations(self) -> ActionSet:
        return ActionSet(tuple((i, r) for i, r in self.actions if r.is_mutation))

    def provides(self) -> ActionSet:
        return ActionSet(tuple((i, r) for i, r in self.actions if r.action == PROVIDE))

    def to_json(self) -> list[dict[str, Any]]:
        return [{"id": i, "request": r.to_json()} for i, r in self.actions]

    @classmethod
    def from_json(cls, items: list[dict[str, Any]]) -> ActionSet:
        return cls(tuple((it["id"], Request.from_json(it["request"], it["id"])) for it in items))


EMPTY_ACTIONS = ActionSet()


@dataclass(frozen=True)
class Violation:
    id: str
    code: str
    message: str

    def to_json(self) -> dict[str, str]:
        return {"id": self.id, "code": self.code, "message": self.message}


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = field(default_factory=tuple)

    @property
    def valid(self) -> bool:
        return not self.violations

    @property
    def codes(self) -> set[str]:
        return {v.code for v in self.violations}

    def to_json(self) -> dict[str, Any]:
        return {"valid": self.valid, "violations": [v.to_json() for v in self.violations]}

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> ValidationReport:
        return cls(tuple(Violation(v["id"], v["code"], v["message"]) for v in obj["violations"]))

    @classmethod
    def single(cls, component_id: str, code: str, message: str) -> ValidationReport:
        return cls((Violation(component_id, code, message),))


def _as_scr(proposal: Proposal | Scr) -> Scr:
    return proposal.scr if isinstance(proposal, Proposal) else proposal


def extract_actions(proposal: Proposal | Scr, current: Optional[Scr] = None) -> ActionSet:
    """All populated requests in id order. Raises MalformedRequest.

    ``current`` is accepted for signature symmetry with ``is_valid``; requests
    on nodes absent from it are extracted all the same.
    """
    actions = sorted(_as_scr(proposal).requests(), key=lambda item: item[0])
    for cid, req in actions:
        if req.action == MALFORMED:
            raise MalformedRequest(cid, f"not a single known variant: {req.raw}")
    return ActionSet(tuple(actions))


def _same_fields(a: Component, b: Component) -> bool:
    return (a.kind, a.fidelity, a.digest, a.size_bytes, a.summary, a.content) == (
        b.kind, b.fidelity, b.digest, b.size_bytes, b.summary, b.content
    )


def _scaffolding(node: Component, known: dict[str, Component]) -> bool:
    """A new request-free directory that only holds new request-bearing nodes."""
    if node.kind != DIRECTORY or node.request is not None or not node.children:
        return False
    for child in node.children:
        if child.id in known:
            return False
        if child.request is None and not _scaffolding(child, known):
            return False
    return True


def is_valid(current: Scr, proposal: Proposal | Scr) -> ValidationReport:
    """Check a proposal against the current state; never raises for bad proposals."""
    prop = _as_scr(proposal)
    cur = current.index
    new = prop.index
    out: list[Violation] = []

    def flag(cid: str, code: str, message: str) -> None:
        out.append(Violation(cid, code, message))

    if prop.revision != current.revision:
        flag("", STALE_REVISION,
             f"proposal revision {prop.revision} != current revision {current.revision}")
    if prop.task != current.task:
        flag("", CONTENT_TAMPERING, "task text changed")

    for cid, old in cur.items():
        if cid not in new:
            flag(cid, CONTENT_TAMPERING, "component removed without a delete request")
        elif not _same_fields(old, new[cid]):
            flag(cid, CONTENT_TAMPERING, "non-request fields changed")

    for cid, node in new.items():
        if cid in cur or node.request is not None:
            continue
        if _scaffolding(node, cur):
            continue
        flag(cid, CONTENT_TAMPERING, "component added without a write request")

    for cid, node in sorted(new.items()):
        req = node.request
        if req is None:
            continue
        existing = cur.get(cid)
        if req.action == MALFORMED:
            flag(cid, MALFORMED_REQUEST, f"not a single known variant: {req.raw}")
        elif req.action == PROVIDE:
            if existing is None or existing.kind != FILE:
                flag(cid, UNKNOWN_COMPONENT, "provide target is not a known file")
            elif existing.fidelity == FULL and req.target_fidelity == FULL:
                flag(cid, ALREADY_FULL, "component is already at full fidelity")
            elif FIDELITY_RANK[req.target_fidelity] <= FIDELITY_RANK[existing.fidelity]:
                flag(cid, FIDELITY_REGRESSION,
                     f"fidelity {existing.fidelity} -> {req.target_fidelity} does not increase")
        elif req.action == EDIT:
            if existing is None or existing.kind != FILE:
                flag(cid, UNKNOWN_COMPONENT, "edit target is not a known file")
            elif existing.digest != req.expected_digest:
                flag(cid, DIGEST_MISMATCH,
                     f"expected digest {req.expected_digest} but current is {existing.digest}")
        elif req.action == WRITE:
            if existing is not None:
                flag(cid, WRITE_EXISTS, "write target already exists; use edit")
            elif node.kind != FILE or node.children or node.fidelity != LATENT \
                    or node.summary is not None or node.content is not None:
                flag(cid, MALFORMED_REQUEST, "new nodes must be latent files")
            else:
                parent = cur.get(parent_id(cid))
                if parent is None or parent.kind != DIRECTORY:
                    flag(cid, PARENT_MISSING, f"parent directory {parent_id(cid)!r} does not exist")
        elif req.action == DELETE:
            if cid == "":
                flag(cid, MALFORMED_REQUEST, "the root cannot be deleted")
            elif existing is None:
                flag(cid, UNKNOWN_COMPONENT, "delete target does not exist")
            elif existing.kind == DIRECTORY and (existing.children or node.children):
                # node.children catches writes proposed into the directory being deleted
                flag(cid, DELETE_NONEMPTY_DIR, "only empty directories can be deleted")

    return ValidationReport(tuple(out))


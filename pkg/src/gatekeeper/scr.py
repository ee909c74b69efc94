"""The SCR document: a versioned component tree that is at once the context map,
the state record and the action interface.

Documents are immutable values. ``parse`` validates every structural invariant,
``canonical_serialize`` produces the deterministic wire bytes and ``scr_digest``
hashes them.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Callable, Iterator, Mapping, Optional, Union

from .errors import MalformedDocument, SchemaViolation

PROTOCOL_VERSION = "gatekeeper/1"
HASH_ALGORITHM = "sha256"
DIGEST_HEX_LENGTH = 64

FILE = "file"
DIRECTORY = "directory"
KINDS = (FILE, DIRECTORY)

LATENT = "latent"
SUMMARY = "summary"
FULL = "full"
FIDELITY_RANK = {LATENT: 0, SUMMARY: 1, FULL: 2}

PROVIDE = "provide"
EDIT = "edit"
WRITE = "write"
DELETE = "delete"
MALFORMED = "malformed"
ACTIONS = (PROVIDE, EDIT, WRITE, DELETE)

_HEX_RE = re.compile(r"[0-9a-f]{%d}" % DIGEST_HEX_LENGTH)

_SCR_KEYS = ("protocol_version", "revision", "task", "root")
_COMPONENT_KEYS = (
    "id", "kind", "fidelity", "digest", "size_bytes",
    "summary", "content", "children", "request",
)


def hash_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def hash_text(text: str) -> str:
    return hash_bytes(text.encode("utf-8"))


def is_digest(value: Any) -> bool:
    return isinstance(value, str) and _HEX_RE.fullmatch(value) is not None


@dataclass(frozen=True)
class Request:
    """One declarative intent attached to a component.

    ``action`` is one of provide/edit/write/delete. Lenient proposal parsing
    may also yield ``action == "malformed"`` with the offending JSON kept in
    ``raw`` so validation can report it instead of failing the whole parse.
    """

    action: str
    target_fidelity: Optional[str] = None
    expected_digest: Optional[str] = None
    content: Optional[str] = None
    raw: Optional[str] = None

    @classmethod
    def provide(cls, target_fidelity: str = FULL) -> Request:
        return cls(PROVIDE, target_fidelity=target_fidelity)

    @classmethod
    def edit(cls, expected_digest: str, content: str) -> Request:
        return cls(EDIT, expected_digest=expected_digest, content=content)

    @classmethod
    def write(cls, content: str) -> Request:
        return cls(WRITE, content=content)

    @classmethod
    def delete(cls) -> Request:
        return cls(DELETE)

    @property
    def is_malformed(self) -> bool:
        return self.action == MALFORMED

    @property
    def is_mutation(self) -> bool:
        return self.action in (EDIT, WRITE, DELETE)

    def to_json(self) -> Any:
        if self.action == PROVIDE:
            return {PROVIDE: {"target_fidelity": self.target_fidelity}}
        if self.action == EDIT:
            return {EDIT: {"expected_digest": self.expected_digest, "content": self.content}}
        if self.action == WRITE:
            return {WRITE: {"content": self.content}}
        if self.action == DELETE:
            return {DELETE: {}}
        return json.loads(self.raw) if self.raw is not None else None

    @classmethod
    def from_json(cls, obj: Any, component_id: str = "") -> Request:
        """Strictly decode a request object; raises SchemaViolation."""
        problem = _request_problem(obj)
        if problem:
            raise SchemaViolation("malformed request", component_id, problem)
        (action, body), = obj.items()
        if action == PROVIDE:
            return cls.provide(body["target_fidelity"])
        if action == EDIT:
            return cls.edit(body["expected_digest"], body["content"])
        if action == WRITE:
            return cls.write(body["content"])
        return cls.delete()


def _request_problem(obj: Any) -> str:
    if not isinstance(obj, dict):
        return "request must be an object"
    if len(obj) != 1:
        return f"expected exactly one variant key, found {len(obj)}"
    (action, body), = obj.items()
    if action not in ACTIONS:
        return f"unknown variant {action!r}"
    if not isinstance(body, dict):
        return f"{action} body must be an object"
    expected = {
        PROVIDE: {"target_fidelity"},
        EDIT: {"expected_digest", "content"},
        WRITE: {"content"},
        DELETE: set(),
    }[action]
    if set(body) != expected:
        return f"{action} body must have keys {sorted(expected)}"
    if action == PROVIDE and body["target_fidelity"] not in (SUMMARY, FULL):
        return "target_fidelity must be 'summary' or 'full'"
    if action == EDIT and not is_digest(body["expected_digest"]):
        return "expected_digest is not a well-formed digest"
    if "content" in body and not isinstance(body["content"], str):
        return "content must be text"
    return ""


@dataclass(frozen=True)
class Component:
    id: str
    kind: str
    fidelity: str = LATENT
    digest: Optional[str] = None
    size_bytes: int = 0
    summary: Optional[str] = None
    content: Optional[str] = None
    children: tuple[Component, ...] = ()
    request: Optional[Request] = None

    @property
    def name(self) -> str:
        return self.id.rsplit("/", 1)[-1]

    @property
    def is_file(self) -> bool:
        return self.kind == FILE

    @property
    def is_dir(self) -> bool:
        return self.kind == DIRECTORY

    def walk(self) -> Iterator[Component]:
        yield self
        for child in self.children:
            yield from child.walk()

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"id": self.id, "kind": self.kind, "fidelity": self.fidelity}
        if self.digest is not None:
            out["digest"] = self.digest
        out["size_bytes"] = self.size_bytes
        if self.summary is not None:
            out["summary"] = self.summary
        if self.content is not None:
            out["content"] = self.content
        if self.kind == DIRECTORY:
            out["children"] = [c.to_json() for c in self.children]
        if self.request is not None:
            out["request"] = self.request.to_json()
        return out


@dataclass(frozen=True)
class Scr:
    revision: int
    task: str
    root: Component
    protocol_version: str = field(default=PROTOCOL_VERSION)

    @cached_property
    def index(self) -> dict[str, Component]:
        return {c.id: c for c in self.root.walk()}

    def components(self) -> Iterator[Component]:
        return self.root.walk()

    def files(self) -> list[Component]:
        return [c for c in self.root.walk() if c.kind == FILE]

    def requests(self) -> list[tuple[str, Request]]:
        return [(c.id, c.request) for c in self.root.walk() if c.request is not None]

    def to_json(self) -> dict[str, Any]:
        return {
            "protocol_version": self.protocol_version,
            "revision": self.revision,
            "task": self.task,
            "root": self.root.to_json(),
        }

    def with_revision(self, revision: int) -> Scr:
        return replace(self, revision=revision)


def find(scr: Scr, component_id: str) -> Optional[Component]:
    return scr.index.get(component_id)


def parent_id(component_id: str) -> str:
    return component_id.rsplit("/", 1)[0] if "/" in component_id else ""


def child_id(parent: str, name: str) -> str:
    return f"{parent}/{name}" if parent else name


# -- canonical bytes ---------------------------------------------------------

def dumps_canonical(obj: Any, *, sort_keys: bool = False) -> bytes:
    """Compact UTF-8 JSON with minimal escaping.

    Key order is the insertion order unless ``sort_keys`` is set; SCR documents
    rely on insertion order to emit fields in schema order.
    """
    return json.dumps(
        obj, ensure_ascii=False, separators=(",", ":"), sort_keys=sort_keys, allow_nan=False
    ).encode("utf-8")


def canonical_serialize(scr: Scr) -> bytes:
    return dumps_canonical(scr.to_json())


def scr_digest(scr: Scr) -> str:
    return hash_bytes(canonical_serialize(scr))


def estimate_tokens(data: Union[bytes, str]) -> int:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return math.ceil(len(data) / 4)


TokenCounter = Callable[[bytes], int]


# -- parsing -----------------------------------------------------------------

def parse(data: Union[bytes, str, Mapping[str, Any]]) -> Scr:
    """Decode and validate an SCR document."""
    return from_json(_load(data), lenient=False)


def parse_proposal(data: Union[bytes, str, Mapping[str, Any]]) -> Scr:
    """Decode an agent-returned document.

    Differs from ``parse`` in two ways: malformed request objects are kept as
    ``Request(action="malformed")`` for validation to report, and files that
    carry a request may omit their digest (new files have none yet).
    """
    return from_json(_load(data), lenient=True)


def _load(data: Union[bytes, str, Mapping[str, Any]]) -> Any:
    if isinstance(data, Mapping):
        return data
    if not isinstance(data, (bytes, str)):
        raise SchemaViolation("document must be an object")
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedDocument(f"input is not UTF-8: {exc}") from exc
    try:
        return json.loads(data)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"invalid JSON: {exc}") from exc


def from_json(obj: Any, *, lenient: bool = False) -> Scr:
    if not isinstance(obj, Mapping):
        raise SchemaViolation("document must be an object")
    extra = set(obj) - set(_SCR_KEYS)
    if extra:
        raise SchemaViolation("unknown document field", None, ", ".join(sorted(extra)))
    for key in _SCR_KEYS:
        if key not in obj:
            raise SchemaViolation("missing document field", None, key)
    if obj["protocol_version"] != PROTOCOL_VERSION:
        raise SchemaViolation("unsupported protocol_version", None, repr(obj["protocol_version"]))
    revision = obj["revision"]
    if not _is_int(revision) or revision < 0:
        raise SchemaViolation("revision must be a non-negative integer")
    if not isinstance(obj["task"], str):
        raise SchemaViolation("task must be text")
    root = _component(obj["root"], expected_id="", lenient=lenient)
    if root.kind != DIRECTORY:
        raise SchemaViolation("root must be a directory", "")
    return Scr(revision=revision, task=obj["task"], root=root)


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _component(obj: Any, expected_id: Optional[str], lenient: bool) -> Component:
    if not isinstance(obj, Mapping):
        raise SchemaViolation("component must be an object", expected_id)
    cid = obj.get("id")
    if not isinstance(cid, str):
        raise SchemaViolation("component id must be text", expected_id)
    if expected_id is not None and cid != expected_id:
        raise SchemaViolation("id must equal root id ''", cid)
    extra = set(obj) - set(_COMPONENT_KEYS)
    if extra:
        raise SchemaViolation("unknown component field", cid, ", ".join(sorted(extra)))

    kind = obj.get("kind")
    if kind not in KINDS:
        raise SchemaViolation("kind must be 'file' or 'directory'", cid)
    fidelity = obj.get("fidelity")
    if fidelity not in FIDELITY_RANK:
        raise SchemaViolation("fidelity must be latent, summary or full", cid)
    size = obj.get("size_bytes")
    if not _is_int(size) or size < 0:
        raise SchemaViolation("size_bytes must be a non-negative integer", cid)
    summary = obj.get("summary")
    content = obj.get("content")
    for label, value in (("summary", summary), ("content", content)):
        if value is not None and not isinstance(value, str):
            raise SchemaViolation(f"{label} must be text", cid)

    request = None
    if "request" in obj:
        raw = obj["request"]
        if lenient and _request_problem(raw):
            request = Request(MALFORMED, raw=dumps_canonical(raw, sort_keys=True).decode("utf-8"))
        else:
            request = Request.from_json(raw, cid)

    digest = obj.get("digest")
    if kind == DIRECTORY:
        if "digest" in obj or "content" in obj or "summary" in obj:
            raise SchemaViolation("directories never carry digest, summary or content", cid)
        if fidelity != LATENT:
            raise SchemaViolation("directories are always latent", cid)
        children_raw = obj.get("children")
        if not isinstance(children_raw, list):
            raise SchemaViolation("directory must have a children list", cid)
        children = tuple(_component(c, None, lenient) for c in children_raw)
        prefix = f"{cid}/" if cid else ""
        for child in children:
            name = child.id[len(prefix):]
            if not child.id.startswith(prefix) or not name or "/" in name:
                raise SchemaViolation("id must be the canonical path from root", child.id,
                                      f"expected a child of {cid!r}")
        for left, right in zip(children, children[1:]):
            if not left.id < right.id:
                raise SchemaViolation("children must be sorted strictly ascending by id", cid,
                                      f"{left.id!r} before {right.id!r}")
    else:
        if "children" in obj:
            raise SchemaViolation("files never carry children", cid)
        children = ()
        if digest is None and not (lenient and request is not None):
            raise SchemaViolation("files carry a digest at every fidelity", cid)
        if digest is not None and not is_digest(digest):
            raise SchemaViolation("digest must be lowercase hex", cid)
        if fidelity == LATENT and (summary is not None or content is not None):
            raise SchemaViolation("latent components carry no summary or content", cid)
        if fidelity == SUMMARY and (summary is None or content is not None):
            raise SchemaViolation("summary fidelity requires summary and forbids content", cid)
        if fidelity == FULL and (summary is None or content is None):
            raise SchemaViolation("full fidelity requires summary and content", cid)
        if content is not None and digest is not None and hash_text(content) != digest:
            raise SchemaViolation("digest must equal the hash of content", cid)

    return Component(
        id=cid, kind=kind, fidelity=fidelity, digest=digest, size_bytes=size,
        summary=summary, content=content, children=children, request=request,
    )


def validate(scr: Scr, *, lenient: bool = False) -> Scr:
    """Check the invariants of a programmatically built document."""
    from_json(scr.to_json(), lenient=lenient)
    return scr


def strip_requests(scr: Scr) -> Scr:
    def clear(c: Component) -> Component:
        kids = tuple(clear(k) for k in c.children)
        if c.request is None and kids == c.children:
            return c
        return replace(c, request=None, children=kids)

    return replace(scr, root=clear(scr.root))

"""System adapters: the trusted layer that owns the real state.

Two implementations share one contract. ``VirtualAdapter`` keeps a tree in
memory and supports fault injection; ``FilesystemAdapter`` binds a directory
on disk and approximates atomic commits with staged writes plus an undo log.
"""

from __future__ import annotations

import copy
import fnmatch
import json
import os
import shutil
import tempfile
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Optional, Union

from .errors import AdapterError
from .scr import (
    DELETE, DIRECTORY, EDIT, FILE, FULL, LATENT, WRITE,
    Component, Scr, child_id, dumps_canonical, hash_bytes, parent_id,
)
from .validation import ActionSet

DEFAULT_MAX_FILE_BYTES = 1024 * 1024
DEFAULT_SUMMARY_LINES = 8
STAGING_DIR = ".gatekeeper-staging"

MISSING_IN_SYSTEM = "missing-in-system"
MISSING_IN_SCR = "missing-in-scr"
DIGEST_DRIFT = "digest-drift"
KIND_CONFLICT = "kind-conflict"

Summarizer = Callable[[str, str, int], str]
FaultHook = Callable[[str, str], None]


@dataclass(frozen=True)
class Entry:
    path: str
    kind: str
    size: int = 0
    digest: Optional[str] = None
    mtime: int = 0


def extractive_summary(path: str, text: str, max_lines: int) -> str:
    lines = text.splitlines()
    header = f"file {path}: {len(text.encode('utf-8'))} bytes, {len(lines)} lines"
    return "\n".join([header, *lines[: max_lines - 1]])


@dataclass(frozen=True)
class MapConfig:
    ignore_globs: tuple[str, ...] = ()
    max_file_bytes: int = DEFAULT_MAX_FILE_BYTES
    summary_max_lines: int = DEFAULT_SUMMARY_LINES
    summarizer: Summarizer = field(default=extractive_summary, compare=False)

    def __post_init__(self) -> None:
        if self.summary_max_lines < 1:
            raise ValueError("summary_max_lines must be >= 1")
        if self.max_file_bytes < 0:
            raise ValueError("max_file_bytes must be >= 0")
        object.__setattr__(self, "ignore_globs", tuple(self.ignore_globs))


class SystemAdapter(ABC):
    """Contract every adapter implements.

    Paths are canonical ids: slash-separated, relative to the root, no leading
    slash. Reads outside a transaction are side-effect free.
    """

    @abstractmethod
    def list_tree(self) -> list[Entry]:
        """Every file and directory below the root (root excluded), sorted by path."""

    @abstractmethod
    def read(self, path: str) -> bytes: ...

    @abstractmethod
    def write(self, path: str, data: bytes) -> None:
        """Create or replace a file, creating parent directories as needed."""

    @abstractmethod
    def delete(self, path: str) -> None:
        """Remove a file or an empty directory."""

    @abstractmethod
    def begin(self) -> None: ...

    @abstractmethod
    def commit(self) -> None: ...

    @abstractmethod
    def rollback(self) -> None: ...

    def stat(self, path: str) -> Optional[Entry]:
        for entry in self.list_tree():
            if entry.path == path:
                return entry
        return None

    def summarize(self, path: str, max_lines: int, summarizer: Summarizer = extractive_summary) -> str:
        return summarizer(path, _decode(path, self.read(path)), max_lines)


def _decode(path: str, data: bytes) -> str:
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise AdapterError("unsupported", path, "binary content") from exc


# -- in-memory adapter -------------------------------------------------------

class VirtualAdapter(SystemAdapter):
    def __init__(self, files: Optional[dict[str, Union[str, bytes]]] = None,
                 dirs: Iterable[str] = (), fault: Optional[FaultHook] = None) -> None:
        self.files: dict[str, bytes] = {}
        self.dirs: set[str] = set()
        self.mtimes: dict[str, int] = {}
        self.clock = 0
        self.fault = fault
        self._snapshot: Optional[tuple[Any, ...]] = None
        for d in dirs:
            self._mkdirs(d)
        for path, data in (files or {}).items():
            self.write(path, data.encode("utf-8") if isinstance(data, str) else data)

    @classmethod
    def from_manifest(cls, manifest: Union[dict[str, Any], str, Path]) -> VirtualAdapter:
        """Load a ``{"entries": [{"path", "content"} | {"path", "kind": "directory"}]}`` tree."""
        if not isinstance(manifest, dict):
            manifest = json.loads(Path(manifest).read_text(encoding="utf-8"))
        adapter = cls()
        for item in manifest["entries"]:
            if item.get("kind") == DIRECTORY:
                adapter._mkdirs(item["path"])
            else:
                adapter.write(item["path"], item["content"].encode("utf-8"))
                if "mtime" in item:
                    adapter.mtimes[item["path"]] = item["mtime"]
                    adapter.clock = max(adapter.clock, item["mtime"])
        return adapter

    def to_manifest(self) -> dict[str, Any]:
        entries: list[dict[str, Any]] = []
        for path in sorted(set(self.files) | self.dirs):
            if path in self.dirs:
                if not any(p.startswith(path + "/") for p in self.files):
                    entries.append({"path": path, "kind": DIRECTORY})
            else:
                entries.append({"path": path, "content": self.files[path].decode("utf-8"),
                                "mtime": self.mtimes[path]})
        return {"entries": entries}

    def clone(self) -> VirtualAdapter:
        twin = VirtualAdapter()
        twin.files = dict(self.files)
        twin.dirs = set(self.dirs)
        twin.mtimes = dict(self.mtimes)
        twin.clock = self.clock
        return twin

    def list_tree(self) -> list[Entry]:
        out = [Entry(d, DIRECTORY, 0, None, 0) for d in self.dirs]
        out += [Entry(p, FILE, len(b), hash_bytes(b), self.mtimes[p]) for p, b in self.files.items()]
        return sorted(out, key=lambda e: e.path)

    def read(self, path: str) -> bytes:
        try:
            return self.files[path]
        except KeyError:
            raise AdapterError("unknown-component", path, "no such file") from None

    def _mkdirs(self, path: str) -> None:
        chain = [path, *_ancestors(path)] if path else []
        for d in chain:
            if d in self.files:
                raise AdapterError("io-failure", d, "a file is in the way")
        self.dirs.update(chain)

    def write(self, path: str, data: bytes) -> None:
        if self.fault:
            self.fault(WRITE, path)
        if not path or path in self.dirs:
            raise AdapterError("io-failure", path, "is a directory")
        self._mkdirs(parent_id(path))
        self.files[path] = bytes(data)
        self.clock += 1
        self.mtimes[path] = self.clock

    def delete(self, path: str) -> None:
        if self.fault:
            self.fault(DELETE, path)
        if path in self.files:
            del self.files[path]
            del self.mtimes[path]
        elif path in self.dirs:
            prefix = path + "/"
            if any(p.startswith(prefix) for p in self.files) or any(d.startswith(prefix) for d in self.dirs):
                raise AdapterError("io-failure", path, "directory not empty")
            self.dirs.discard(path)
        else:
            raise AdapterError("unknown-component", path, "no such file or directory")

    def begin(self) -> None:
        if self._snapshot is not None:
            raise AdapterError("io-failure", "", "transaction already open")
        self._snapshot = copy.deepcopy((self.files, self.dirs, self.mtimes, self.clock))

    def commit(self) -> None:
        self._snapshot = None

    def rollback(self) -> None:
        if self._snapshot is not None:
            self.files, self.dirs, self.mtimes, self.clock = self._snapshot
            self._snapshot = None


# -- filesystem adapter ------------------------------------------------------

class FilesystemAdapter(SystemAdapter):
    """Adapter over a real directory.

    Mutations inside a transaction are staged under ``.gatekeeper-staging`` in
    the root (same filesystem, so renames are atomic per file). ``commit``
    renames them into place, keeping an undo log so that a failure part-way
    restores the previous tree.
    """

    def __init__(self, root: Union[str, Path], fault: Optional[FaultHook] = None) -> None:
        self.root = Path(root)
        if not self.root.is_dir():
            raise AdapterError("io-failure", str(root), "root is not a directory")
        self.fault = fault
        self._ops: Optional[list[tuple[str, str, Optional[Path]]]] = None
        self._staging: Optional[Path] = None
        self._overlay: dict[str, Optional[bytes]] = {}

    def _abs(self, path: str) -> Path:
        return self.root.joinpath(*path.split("/")) if path else self.root

    def list_tree(self) -> list[Entry]:
        out: list[Entry] = []
        try:
            for dirpath, dirnames, filenames in os.walk(self.root, onerror=_raise):
                rel = Path(dirpath).relative_to(self.root).as_posix()
                rel = "" if rel == "." else rel
                if not rel:
                    dirnames[:] = [d for d in dirnames if d != STAGING_DIR]
                for d in dirnames:
                    out.append(Entry(child_id(rel, d), DIRECTORY, 0, None, 0))
                for f in filenames:
                    full = Path(dirpath, f)
                    data = full.read_bytes()
                    out.append(Entry(child_id(rel, f), FILE, len(data), hash_bytes(data),
                                     full.stat().st_mtime_ns))
        except OSError as exc:
            raise AdapterError("io-failure", "", str(exc)) from exc
        return sorted(out, key=lambda e: e.path)

    def read(self, path: str) -> bytes:
        if self._ops is not None and path in self._overlay:
            data = self._overlay[path]
            if data is None:
                raise AdapterError("unknown-component", path, "deleted in this transaction")
            return data
        target = self._abs(path)
        if not path or not target.is_file():
            raise AdapterError("unknown-component", path, "no such file")
        try:
            return target.read_bytes()
        except OSError as exc:
            raise AdapterError("io-failure", path, str(exc)) from exc

    def _exists(self, path: str) -> Optional[str]:
        """Kind of ``path`` in the transaction's view, or None."""
        if path in self._overlay:
            return FILE if self._overlay[path] is not None else None
        if any(p.startswith(path + "/") and d is not None for p, d in self._overlay.items()):
            return DIRECTORY
        target = self._abs(path)
        if target.is_file():
            return FILE
        if target.is_dir():
            return DIRECTORY
        return None

    def _live_children(self, path: str) -> bool:
        target = self._abs(path)
        for child in target.iterdir() if target.is_dir() else ():
            if self._exists(child_id(path, child.name)) is not None:
                return True
        return any(p.startswith(path + "/") and d is not None for p, d in self._overlay.items())

    def write(self, path: str, data: bytes) -> None:
        if self._ops is None:
            self.begin()
            try:
                self.write(path, data)
                self.commit()
            except BaseException:
                self.rollback()
                raise
            return
        if not path or self._exists(path) == DIRECTORY:
            raise AdapterError("io-failure", path, "is a directory")
        parent = parent_id(path)
        while parent:
            if self._exists(parent) == FILE:
                raise AdapterError("io-failure", parent, "a file is in the way")
            parent = parent_id(parent)
        assert self._staging is not None
        fd, staged = tempfile.mkstemp(dir=self._staging)
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        self._overlay[path] = bytes(data)
        self._ops.append((WRITE, path, Path(staged)))

    def delete(self, path: str) -> None:
        if self._ops is None:
            self.begin()
            try:
                self.delete(path)
                self.commit()
            except BaseException:
                self.rollback()
                raise
            return
        kind = self._exists(path) if path else None
        if kind is None:
            raise AdapterError("unknown-component", path, "no such file or directory")
        if kind == DIRECTORY and self._live_children(path):
            raise AdapterError("io-failure", path, "directory not empty")
        self._overlay[path] = None
        self._ops.append((DELETE, path, None))

    def begin(self) -> None:
        if self._ops is not None:
            raise AdapterError("io-failure", "", "transaction already open")
        self._staging = self.root / STAGING_DIR
        shutil.rmtree(self._staging, ignore_errors=True)
        self._staging.mkdir()
        self._ops = []
        self._overlay = {}

    def _discard(self) -> None:
        if self._staging is not None:
            shutil.rmtree(self._staging, ignore_errors=True)
        self._staging = None
        self._ops = None
        self._overlay = {}

    def rollback(self) -> None:
        self._discard()

    def commit(self) -> None:
        assert self._ops is not None and self._staging is not None
        trash = self._staging / "trash"
        trash.mkdir()
        undo: list[Callable[[], None]] = []
        try:
            for n, (op, path, staged) in enumerate(self._ops):
                if self.fault:
                    self.fault(op, path)
                target = self._abs(path)
                if op == WRITE:
                    assert staged is not None
                    for anc in reversed(_ancestors(path)):
                        d = self._abs(anc)
                        if not d.exists():
                            d.mkdir()
                            undo.append(lambda d=d: d.rmdir())
                    if target.exists():
                        backup = trash / str(n)
                        os.replace(target, backup)
                        undo.append(lambda t=target, b=backup: os.replace(b, t))
                    os.replace(staged, target)
                    undo.append(lambda t=target: t.unlink())
                elif target.is_dir():
                    target.rmdir()
                    undo.append(lambda t=target: t.mkdir())
                else:
                    backup = trash / str(n)
                    os.replace(target, backup)
                    undo.append(lambda t=target, b=backup: os.replace(b, t))
        except (OSError, AdapterError) as exc:
            for action in reversed(undo):
                action()
            self._discard()
            if isinstance(exc, AdapterError):
                raise
            raise AdapterError("io-failure", "", str(exc)) from exc
        self._discard()


def _raise(exc: OSError) -> None:
    raise exc


def _ancestors(path: str) -> list[str]:
    out = []
    parent = parent_id(path)
    while parent:
        out.append(parent)
        parent = parent_id(parent)
    return out


# -- protocol operations over any adapter ------------------------------------

def is_ignored(path: str, globs: Iterable[str]) -> bool:
    """True if ``path`` or any of its ancestors matches one of ``globs``."""
    globs = tuple(globs)
    if not globs:
        return False
    candidate = path
    while candidate:
        if any(fnmatch.fnmatchcase(candidate, g) for g in globs):
            return True
        candidate = parent_id(candidate)
    return False


def visible_entries(adapter: SystemAdapter, config: MapConfig) -> list[Entry]:
    """Entries after applying ignore globs.

    A directory whose contents were all ignored is dropped as well; directories
    that were empty to begin with stay visible.
    """
    entries = adapter.list_tree()
    if not config.ignore_globs:
        return entries
    had_children: set[str] = set()
    for e in entries:
        if "/" in e.path:
            had_children.add(parent_id(e.path))
    kept = {e.path: e for e in entries if not is_ignored(e.path, config.ignore_globs)}
    kept_children: dict[str, int] = {}
    for path in kept:
        if "/" in path:
            kept_children[parent_id(path)] = kept_children.get(parent_id(path), 0) + 1
    for path in sorted(kept, key=lambda p: -p.count("/")):
        e = kept[path]
        if e.kind == DIRECTORY and path in had_children and not kept_children.get(path):
            del kept[path]
            if "/" in path:
                kept_children[parent_id(path)] -= 1
    return [kept[p] for p in sorted(kept)]


def provide_content(adapter: SystemAdapter, component_id: str, target: str,
                    config: MapConfig = MapConfig()) -> tuple[Optional[str], Optional[str], str]:
    """Read a file at the requested fidelity: ``(summary, content, digest)``.

    Both fidelities include a summary; only ``full`` includes the content.
    """
    if not component_id or is_ignored(component_id, config.ignore_globs):
        raise AdapterError("unknown-component", component_id, "not a visible file")
    data = adapter.read(component_id)
    if len(data) > config.max_file_bytes:
        raise AdapterError("too-large", component_id,
                           f"{len(data)} bytes exceeds max_file_bytes={config.max_file_bytes}")
    text = _decode(component_id, data)
    summary = config.summarizer(component_id, text, config.summary_max_lines)
    content = text if target == FULL else None
    return summary, content, hash_bytes(data)


def build_scr(adapter: SystemAdapter, config: MapConfig, task: str, revision: int = 0,
              fidelity: Optional[dict[str, str]] = None) -> Scr:
    """Snapshot the adapter's tree as a document.

    ``fidelity`` maps file ids to the level they should be populated at;
    everything else is latent. Files that can no longer be read as text fall
    back to latent.
    """
    fidelity = fidelity or {}
    nodes: dict[str, dict[str, Any]] = {"": {"kind": DIRECTORY, "children": []}}
    for e in visible_entries(adapter, config):
        node: dict[str, Any] = {"kind": e.kind, "entry": e, "children": []}
        nodes[e.path] = node
        nodes[parent_id(e.path)]["children"].append(e.path)

    def make(cid: str) -> Component:
        node = nodes[cid]
        if node["kind"] == DIRECTORY:
            kids = tuple(make(k) for k in sorted(node["children"]))
            return Component(id=cid, kind=DIRECTORY, children=kids)
        e: Entry = node["entry"]
        level = fidelity.get(cid, LATENT)
        summary = content = None
        digest = e.digest
        if level != LATENT:
            try:
                summary, content, digest = provide_content(adapter, cid, level, config)
            except AdapterError:
                level = LATENT
        return Component(id=cid, kind=FILE, fidelity=level, digest=digest, size_bytes=e.size,
                         summary=summary, content=content)

    return Scr(revision=revision, task=task, root=make(""))


def build_latent_map(adapter: SystemAdapter, config: MapConfig = MapConfig(), task: str = "") -> Scr:
    return build_scr(adapter, config, task, revision=0)


@dataclass(frozen=True)
class Mismatch:
    id: str
    kind: str

    def to_json(self) -> dict[str, str]:
        return {"id": self.id, "kind": self.kind}


def verify_sync(scr: Scr, adapter: SystemAdapter, config: MapConfig = MapConfig()) -> list[Mismatch]:
    system = {e.path: e for e in visible_entries(adapter, config)}
    out: list[Mismatch] = []
    for c in scr.components():
        if c.id == "":
            continue
        e = system.get(c.id)
        if e is None:
            out.append(Mismatch(c.id, MISSING_IN_SYSTEM))
        elif e.kind != c.kind:
            out.append(Mismatch(c.id, KIND_CONFLICT))
        elif c.kind == FILE and e.digest != c.digest:
            out.append(Mismatch(c.id, DIGEST_DRIFT))
    known = scr.index
    out += [Mismatch(p, MISSING_IN_SCR) for p in system if p not in known]
    return sorted(out, key=lambda m: (m.id, m.kind))


def mutation_order(actions: ActionSet) -> list[tuple[str, Any]]:
    """Non-delete mutations in id order, then deletes deepest-first."""
    muts = [(i, r) for i, r in actions if r.is_mutation]
    rest = [(i, r) for i, r in muts if r.action != DELETE]
    deletes = sorted(((i, r) for i, r in muts if r.action == DELETE),
                     key=lambda item: (-item[0].count("/"), item[0]))
    return rest + deletes


def apply_mutations(adapter: SystemAdapter, actions: ActionSet, config: MapConfig = MapConfig()) -> None:
    """Apply edit/write/delete requests atomically.

    Provide requests are ignored here. On any failure the transaction is rolled
    back and the AdapterError is re-raised; the tree is then exactly as before.
    """
    adapter.begin()
    try:
        for cid, req in mutation_order(actions):
            if is_ignored(cid, config.ignore_globs):
                raise AdapterError("unknown-component", cid, "path is ignored")
            if req.action == EDIT:
                current = adapter.read(cid)
                if len(current) > config.max_file_bytes:
                    raise AdapterError("too-large", cid, "existing file exceeds max_file_bytes")
                _decode(cid, current)
                if hash_bytes(current) != req.expected_digest:
                    raise AdapterError("digest-mismatch", cid, "file changed since it was read")
                _write_text(adapter, cid, req.content, config)
            elif req.action == WRITE:
                if _exists(adapter, cid):
                    raise AdapterError("write-exists", cid)
                _write_text(adapter, cid, req.content, config)
            elif req.action == DELETE:
                adapter.delete(cid)
    except AdapterError:
        adapter.rollback()
        raise
    except OSError as exc:
        adapter.rollback()
        raise AdapterError("io-failure", "", str(exc)) from exc
    adapter.commit()


def _exists(adapter: SystemAdapter, path: str) -> bool:
    try:
        adapter.read(path)
    except AdapterError:
        return False
    return True


def _write_text(adapter: SystemAdapter, cid: str, content: str, config: MapConfig) -> None:
    data = content.encode("utf-8")
    if len(data) > config.max_file_bytes:
        raise AdapterError("too-large", cid, "new content exceeds max_file_bytes")
    adapter.write(cid, data)


def manifest_bytes(adapter: VirtualAdapter) -> bytes:
    return dumps_canonical(adapter.to_manifest(), sort_keys=True)


def fidelity_floor(scr: Scr) -> dict[str, str]:
    return {c.id: c.fidelity for c in scr.components() if c.kind == FILE and c.fidelity != LATENT}


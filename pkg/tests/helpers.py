"""Random trees, proposals and corruptions for property and fuzz tests."""

from __future__ import annotations

import copy
import itertools
import random
from fractions import Fraction
from typing import Any, Callable

from gatekeeper.adapters import MapConfig, VirtualAdapter, build_scr
from gatekeeper.policy import attach_requests
from gatekeeper.scr import DIRECTORY, FILE, Component, Scr, child_id, hash_text, parse_proposal
from gatekeeper.validation import Proposal

NAMES = ["a", "b", "c", "src", "lib", "x.txt", "y.md", "z.py", "notes", "é.txt"]
WORDS = ["alpha", "beta", "gamma", "delta", "naïve", "“quoted”", "tab\there", "\\slash", "end"]


def random_text(rng: random.Random) -> str:
    lines = [" ".join(rng.choices(WORDS, k=rng.randint(0, 5))) for _ in range(rng.randint(0, 12))]
    return "\n".join(lines) + ("\n" if rng.random() < 0.7 else "")


def random_tree(rng: random.Random, max_entries: int = 10) -> VirtualAdapter:
    adapter = VirtualAdapter()
    dirs = [""]
    for _ in range(rng.randint(0, max_entries)):
        parent = rng.choice(dirs)
        path = child_id(parent, rng.choice(NAMES))
        if path in adapter.files or path in adapter.dirs:
            continue
        if rng.random() < 0.3:
            adapter.dirs.add(path)
            dirs.append(path)
        else:
            adapter.write(path, random_text(rng).encode("utf-8"))
    return adapter


def random_state(rng: random.Random, max_entries: int = 10) -> tuple[VirtualAdapter, Scr]:
    """A random tree and an in-sync document with mixed fidelities and revision."""
    adapter = random_tree(rng, max_entries)
    levels = {p: rng.choice(["latent", "summary", "full"]) for p in adapter.files}
    scr = build_scr(adapter, MapConfig(), "task " + rng.choice(WORDS),
                    revision=rng.randint(0, 5), fidelity=levels)
    return adapter, scr


def _doc_nodes(doc: dict[str, Any]) -> dict[str, dict[str, Any]]:
    out: dict[str, dict[str, Any]] = {}

    def walk(node: dict[str, Any]) -> None:
        out[node["id"]] = node
        for kid in node.get("children", []):
            walk(kid)

    walk(doc["root"])
    return out


def random_valid_requests(rng: random.Random, scr: Scr) -> dict[str, Any]:
    """Requests that are each individually and jointly valid against ``scr``."""
    requests: dict[str, Any] = {}
    files = [c for c in scr.files()]
    dirs = [c for c in scr.components() if c.kind == "directory"]
    for c in rng.sample(files, k=min(len(files), rng.randint(0, 3))):
        roll = rng.random()
        if roll < 0.35 and c.fidelity != "full":
            target = "full" if c.fidelity == "summary" or rng.random() < 0.6 else "summary"
            requests[c.id] = {"provide": {"target_fidelity": target}}
        elif roll < 0.7:
            requests[c.id] = {"edit": {"expected_digest": c.digest, "content": random_text(rng)}}
        else:
            requests[c.id] = {"delete": {}}
    for d in rng.sample(dirs, k=min(len(dirs), rng.randint(0, 2))):
        if d.id and not d.children and d.id not in requests:
            requests[d.id] = {"delete": {}}
    if dirs and rng.random() < 0.6:
        parent = rng.choice([d for d in dirs if d.id not in requests])
        cid = child_id(parent.id, f"new{rng.randint(0, 99)}.txt")
        if cid not in scr.index:
            requests[cid] = {"write": {"content": random_text(rng)}}
    return requests


def valid_proposal(rng: random.Random, scr: Scr) -> Proposal:
    return attach_requests(scr, random_valid_requests(rng, scr))


def _with_doc(scr: Scr, requests: dict[str, Any], mutate: Callable[[dict[str, Any]], None]) -> Proposal:
    doc = attach_requests(scr, requests).scr.to_json()
    mutate(doc)
    return Proposal(parse_proposal(doc))


def corrupt(rng: random.Random, scr: Scr) -> tuple[str, Proposal]:
    """A proposal with at least one invalid request; returns the intended code too."""
    base = random_valid_requests(rng, scr)
    files = scr.files()
    nodes = list(scr.index.values())
    kinds = ["stale-revision", "unknown-component", "parent-missing", "malformed-request",
             "content-tampering", "write-exists"]
    if files:
        kinds += ["digest-mismatch", "content-tampering"]
    if any(c.fidelity == "summary" for c in files):
        kinds.append("fidelity-regression")
    if any(c.fidelity == "full" for c in files):
        kinds.append("already-full")
    if any(c.kind == "directory" and c.children and c.id for c in nodes):
        kinds.append("delete-nonempty-dir")
    kind = rng.choice(kinds)
    reqs = dict(base)

    if kind == "stale-revision":
        return kind, attach_requests(scr, reqs, revision=scr.revision + rng.randint(1, 3))
    if kind == "unknown-component":
        cid = f"ghost{rng.randint(0, 9)}/missing.txt" if rng.random() < 0.5 else "missing.bin"
        reqs[cid] = rng.choice([{"delete": {}}, {"provide": {"target_fidelity": "full"}},
                                {"edit": {"expected_digest": "0" * 64, "content": "x"}}])
        return kind, attach_requests(scr, reqs)
    if kind == "parent-missing":
        reqs[f"nowhere{rng.randint(0, 9)}/deep/file.txt"] = {"write": {"content": "x"}}
        return kind, attach_requests(scr, reqs)
    if kind == "malformed-request":
        target = rng.choice(nodes).id
        reqs[target] = rng.choice([{}, {"delete": {}, "write": {"content": "x"}},
                                   {"explode": {}}, {"provide": {"target_fidelity": "latent"}},
                                   {"edit": {"expected_digest": "XYZ", "content": "x"}}, "delete"])
        return kind, attach_requests(scr, reqs)
    if kind == "write-exists":
        target = rng.choice(nodes).id
        reqs[target] = {"write": {"content": "clobber"}}
        return kind, attach_requests(scr, reqs)
    if kind == "digest-mismatch":
        c = rng.choice(files)
        reqs[c.id] = {"edit": {"expected_digest": hash_text(f"stale {rng.random()}"), "content": "new"}}
        return kind, attach_requests(scr, reqs)
    if kind == "fidelity-regression":
        c = rng.choice([c for c in files if c.fidelity == "summary"])
        reqs[c.id] = {"provide": {"target_fidelity": "summary"}}
        return kind, attach_requests(scr, reqs)
    if kind == "already-full":
        c = rng.choice([c for c in files if c.fidelity == "full"])
        reqs[c.id] = {"provide": {"target_fidelity": "full"}}
        return kind, attach_requests(scr, reqs)
    if kind == "delete-nonempty-dir":
        d = rng.choice([c for c in nodes if c.kind == "directory" and c.children and c.id])
        for kid in d.children:
            reqs.pop(kid.id, None)
        reqs[d.id] = {"delete": {}}
        return kind, attach_requests(scr, reqs)

    # content-tampering
    def tamper(doc: dict[str, Any]) -> None:
        by_id = _doc_nodes(doc)
        choices = [i for i in by_id if i in scr.index and i != ""]
        roll = rng.random()
        if not choices or roll < 0.2:
            doc["task"] = doc["task"] + " (and also something else)"
            return
        target = by_id[rng.choice(choices)]
        if target["kind"] == "file" and roll < 0.6:
            target["size_bytes"] += 1
        elif target["kind"] == "file" and roll < 0.8:
            text = "rewritten without an edit request"
            target.update(fidelity="full", summary="s", content=text, digest=hash_text(text))
            target.pop("request", None)
        else:
            pid = target["id"].rsplit("/", 1)[0] if "/" in target["id"] else ""
            parent = by_id[pid]
            parent["children"] = [k for k in parent["children"] if k["id"] != target["id"]]

    return "content-tampering", _with_doc(scr, reqs, tamper)


def deepcopy_doc(scr: Scr) -> dict[str, Any]:
    return copy.deepcopy(scr.to_json())


def brute_force(items: dict[str, tuple[float, float]], lam: float) -> frozenset[str]:
    """Independent selection oracle: try every subset, keep the best, smaller on ties.

    ``items`` maps id to (score, cost).
    """
    ids = sorted(items)
    gain = {i: Fraction(items[i][0]) - Fraction(lam) * Fraction(items[i][1]) for i in ids}
    best, best_set = Fraction(0), ()
    for r in range(len(ids) + 1):
        for combo in itertools.combinations(ids, r):
            value = sum((gain[i] for i in combo), Fraction(0))
            if value > best or (value == best and len(combo) < len(best_set)):
                best, best_set = value, combo
    return frozenset(best_set)


def make_scr(items: dict[str, tuple[float, int]]) -> Scr:
    """Latent files named after the items, sized so the default cost model returns the cost."""
    kids = tuple(Component(i, FILE, digest=hash_text(i), size_bytes=4 * items[i][1])
                 for i in sorted(items))
    return Scr(0, "t", Component("", DIRECTORY, children=kids))

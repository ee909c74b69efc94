"""Access to the fixture trees, tasks, scripts and golden vectors shipped with the package."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from .adapters import MapConfig, VirtualAdapter, build_latent_map, build_scr
from .harness import TaskSpec
from .policy import attach_requests
from .scr import PROTOCOL_VERSION, HASH_ALGORITHM, Component, Request, Scr, DIRECTORY

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = FIXTURES / "golden.json"
TREES = ("demo", "refactor")


def tree(name: str) -> VirtualAdapter:
    return VirtualAdapter.from_manifest(FIXTURES / name / "tree.json")


def task(name: str) -> TaskSpec:
    return TaskSpec.load(FIXTURES / name / "task.json")


def script(name: str, file: str = "plan.json") -> list[Any]:
    return json.loads((FIXTURES / name / file).read_text(encoding="utf-8"))


def golden_documents() -> dict[str, Scr]:
    """Documents whose canonical bytes are frozen in ``golden.json``."""
    docs = {"minimal": Scr(0, "", Component("", DIRECTORY))}
    for name in TREES:
        docs[f"{name}-latent"] = build_latent_map(tree(name), MapConfig(), task(name).description)
    demo = tree("demo")
    rich = build_scr(demo, MapConfig(summary_max_lines=2),
                     'naïve “quotes” \\ back\tslash\nnewline \u0001 ✓', revision=3,
                     fidelity={"src/a.txt": "full", "README.md": "summary"})
    docs["demo-rich"] = attach_requests(rich, {
        "old.txt": Request.delete().to_json(),
        "src/b.txt": Request.provide("summary").to_json(),
        "src/new.txt": Request.write("fresh\n").to_json(),
    }).scr
    return docs


def load_golden() -> dict[str, Any]:
    return json.loads(GOLDEN.read_text(encoding="utf-8"))


def golden_header() -> dict[str, str]:
    return {"protocol_version": PROTOCOL_VERSION, "hash_algorithm": HASH_ALGORITHM}

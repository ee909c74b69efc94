"""Agent policies.

The context-selection rule picks which unsummarized files to request by
maximizing total value minus lambda times total token cost. With additive
value and cost models that argmax separates per component; small instances
are cross-checked against exhaustive subset search.
"""

from __future__ import annotations

import copy
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Callable, Iterable, Optional, Protocol, Union

from .adapters import SystemAdapter
from .errors import PlannerUnavailable, ScriptExhausted, TransportFailure
from .scr import (
    DIRECTORY, EDIT, FILE, FULL, Component, Request, Scr, parent_id, parse_proposal,
)
from .validation import MalformedProposal, Proposal

MAX_EXACT_THRESHOLD = 20
DEFAULT_EXACT_THRESHOLD = 12

ValueModel = Callable[[Component, str], float]
CostModel = Callable[[Component], float]

_WORD = re.compile(r"[a-z0-9]+")


def word_tokens(text: str) -> set[str]:
    return set(_WORD.findall(text.lower()))


def default_relevance(component: Component, task: str) -> float:
    """Shared distinct words with the task: 3 per id match plus 1 per summary match."""
    wanted = word_tokens(task)
    score = 3 * len(wanted & word_tokens(component.id))
    if component.summary is not None:
        score += len(wanted & word_tokens(component.summary))
    return float(score)


def token_cost(component: Component) -> float:
    return float(math.ceil(component.size_bytes / 4))


@dataclass(frozen=True)
class PolicyConfig:
    lam: float = 1.0
    value_model: ValueModel = default_relevance
    cost_model: CostModel = token_cost
    exact_threshold: int = DEFAULT_EXACT_THRESHOLD

    def __post_init__(self) -> None:
        if self.lam < 0 or not math.isfinite(self.lam):
            raise ValueError("lambda must be a non-negative real")
        if not 0 <= self.exact_threshold <= MAX_EXACT_THRESHOLD:
            raise ValueError(f"exact_threshold must be in [0, {MAX_EXACT_THRESHOLD}]")


def _exact_gain(score: float, cost: float, lam: float) -> Fraction:
    return Fraction(score) - Fraction(lam) * Fraction(cost)


def exhaustive_select(gains: dict[str, Fraction]) -> frozenset[str]:
    """Best subset by brute force over all 2^n subsets.

    Among maximizers the smallest subset wins. Subsets are walked in Gray-code
    order so each visit costs one integer addition.
    """
    ids = sorted(gains)
    if not ids:
        return frozenset()
    denom = math.lcm(*(g.denominator for g in gains.values()))
    ints = [int(gains[i] * denom) for i in ids]
    best_value, best_size, best_mask = 0, 0, 0
    value, size, mask = 0, 0, 0
    for k in range(1, 1 << len(ids)):
        bit = (k & -k).bit_length() - 1
        mask ^= 1 << bit
        if mask >> bit & 1:
            value += ints[bit]
            size += 1
        else:
            value -= ints[bit]
            size -= 1
        if value > best_value or (value == best_value and size < best_size):
            best_value, best_size, best_mask = value, size, mask
    return frozenset(i for n, i in enumerate(ids) if best_mask >> n & 1)


def select_provide_set(scr: Scr, task: str, config: PolicyConfig = PolicyConfig()) -> frozenset[str]:
    """Files below full fidelity worth requesting; ties (gain exactly 0) are left out."""
    candidates = [c for c in scr.files() if c.fidelity != FULL]
    gains = {
        c.id: _exact_gain(config.value_model(c, task), config.cost_model(c), config.lam)
        for c in candidates
    }
    chosen = frozenset(i for i, g in gains.items() if g > 0)
    if len(candidates) <= config.exact_threshold:
        brute = exhaustive_select(gains)
        if brute != chosen:
            raise AssertionError(f"separable rule {sorted(chosen)} != exhaustive {sorted(brute)}")
    return chosen


# -- decisions and templates -------------------------------------------------

@dataclass(frozen=True)
class Done:
    rationale: str = ""

    def to_json(self) -> dict[str, Any]:
        return {"done": {"rationale": self.rationale}}


Decision = Union[Proposal, MalformedProposal, Done]


class Policy(Protocol):
    def decide(self, scr: Scr, task: str, last_outcome: Any) -> Decision: ...


def attach_requests(scr: Scr, requests: dict[str, Any], revision: Optional[int] = None) -> Proposal:
    """Build a proposal from ``scr`` with the given raw request objects attached.

    Requests on unknown ids get a fresh latent file node (and request-free
    parent directories as needed); whether that is acceptable is for the
    validator to decide.
    """
    doc = scr.to_json()
    if revision is not None:
        doc["revision"] = revision
    nodes: dict[str, dict[str, Any]] = {}

    def index(node: dict[str, Any]) -> None:
        nodes[node["id"]] = node
        for kid in node.get("children", []):
            index(kid)

    index(doc["root"])

    def ensure(cid: str, kind: str) -> dict[str, Any]:
        if cid in nodes:
            return nodes[cid]
        parent = ensure(parent_id(cid), DIRECTORY)
        if parent["kind"] != DIRECTORY:
            raise ValueError(f"cannot place {cid!r} under file {parent['id']!r}")
        node: dict[str, Any] = {"id": cid, "kind": kind, "fidelity": "latent", "size_bytes": 0}
        if kind == DIRECTORY:
            node["children"] = []
        parent["children"].append(node)
        parent["children"].sort(key=lambda n: n["id"])
        nodes[cid] = node
        return node

    for cid, raw in requests.items():
        ensure(cid, FILE)["request"] = copy.deepcopy(raw)
    return Proposal(parse_proposal(doc))


@dataclass
class Template:
    """One scripted turn: raw requests by id, at the current or a pinned revision.

    ``expected_digest`` values may be ``"@current"`` (the component's digest in
    the document being answered) or ``"@initial"`` (its digest in the first
    document the policy saw), which is how stale beliefs are scripted.
    """

    requests: dict[str, Any]
    revision: Optional[int] = None

    @classmethod
    def from_json(cls, obj: Any) -> Template:
        if not isinstance(obj, dict) or not isinstance(obj.get("requests"), dict):
            raise ValueError("a template is an object with a 'requests' mapping")
        rev = obj.get("revision", "current")
        return cls(dict(obj["requests"]), None if rev == "current" else int(rev))

    def resolve(self, scr: Scr, initial: Scr) -> dict[str, Any]:
        out = {}
        for cid, raw in self.requests.items():
            raw = copy.deepcopy(raw)
            body = raw.get(EDIT) if isinstance(raw, dict) else None
            if isinstance(body, dict) and body.get("expected_digest") in ("@current", "@initial"):
                source = scr if body["expected_digest"] == "@current" else initial
                known = source.index.get(cid)
                body["expected_digest"] = known.digest if known and known.digest else "0" * 64
            out[cid] = raw
        return out


class ScriptedPolicy:
    """Emits scripted proposals in order, then one Done, then raises."""

    def __init__(self, script: Iterable[Union[Template, dict[str, Any]]]) -> None:
        self.script = [t if isinstance(t, Template) else Template.from_json(t) for t in script]
        if not self.script:
            raise ValueError("script must not be empty")
        self.position = 0
        self._initial: Optional[Scr] = None

    def decide(self, scr: Scr, task: str, last_outcome: Any = None) -> Decision:
        if self._initial is None:
            self._initial = scr
        n = self.position
        self.position += 1
        if n < len(self.script):
            tpl = self.script[n]
            return attach_requests(scr, tpl.resolve(scr, self._initial), tpl.revision)
        if n == len(self.script):
            return Done("script complete")
        raise ScriptExhausted(f"script of {len(self.script)} templates stepped past its end")


def scripted_policy(script: Iterable[Union[Template, dict[str, Any]]]) -> ScriptedPolicy:
    return ScriptedPolicy(script)


def provide_proposal(scr: Scr, ids: Iterable[str], target: str = FULL) -> Proposal:
    return attach_requests(scr, {i: Request.provide(target).to_json() for i in sorted(ids)})


class _Delegating:
    def __init__(self, planner: Policy) -> None:
        self.planner = planner

    def _plan(self, scr: Scr, task: str, last_outcome: Any) -> Decision:
        try:
            return self.planner.decide(scr, task, last_outcome)
        except TransportFailure as exc:
            raise PlannerUnavailable(str(exc)) from exc


class GatekeeperPolicy(_Delegating):
    """Request context while the value/cost trade favors it, then let the planner act."""

    def __init__(self, config: PolicyConfig, planner: Policy) -> None:
        super().__init__(planner)
        self.config = config
        self._refused: set[str] = set()
        self._last_provide: frozenset[str] = frozenset()

    def decide(self, scr: Scr, task: str, last_outcome: Any = None) -> Decision:
        if self._last_provide and last_outcome is not None and not last_outcome.accepted:
            self._refused |= self._last_provide
        wanted = select_provide_set(scr, task, self.config) - self._refused
        self._last_provide = frozenset(wanted)
        if wanted:
            return provide_proposal(scr, wanted)
        return self._plan(scr, task, last_outcome)


def gatekeeper_policy(config: PolicyConfig, planner: Policy) -> GatekeeperPolicy:
    return GatekeeperPolicy(config, planner)


class BaselinePolicy(_Delegating):
    """Provides a fixed set of files on the first turn, then hands over to the planner."""

    def __init__(self, adapter: SystemAdapter, planner: Policy, recent: Optional[int] = None) -> None:
        super().__init__(planner)
        self.adapter = adapter
        self.recent = recent
        self._opened = False

    def initial_set(self, scr: Scr) -> list[str]:
        files = [c.id for c in scr.files() if c.fidelity != FULL]
        if self.recent is None:
            return files
        mtimes = {e.path: e.mtime for e in self.adapter.list_tree()}
        ranked = sorted(files, key=lambda i: (-mtimes.get(i, 0), i))
        return ranked[: max(self.recent, 0)]

    def decide(self, scr: Scr, task: str, last_outcome: Any = None) -> Decision:
        if not self._opened:
            self._opened = True
            ids = self.initial_set(scr)
            if ids:
                return provide_proposal(scr, ids)
        return self._plan(scr, task, last_outcome)


def baseline_full_context(adapter: SystemAdapter, planner: Policy) -> BaselinePolicy:
    return BaselinePolicy(adapter, planner)


def baseline_recent_files(adapter: SystemAdapter, n: int, planner: Policy) -> BaselinePolicy:
    return BaselinePolicy(adapter, planner, recent=n)


__all__ = [
    "BaselinePolicy", "Decision", "Done", "GatekeeperPolicy", "Policy", "PolicyConfig",
    "ScriptedPolicy", "Template", "attach_requests", "baseline_full_context",
    "baseline_recent_files", "default_relevance", "exhaustive_select", "gatekeeper_policy",
    "provide_proposal", "scripted_policy", "select_provide_set", "token_cost", "word_tokens",
]

"""The deterministic transition function, the append-only ledger, and replay."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Optional, Union

from .adapters import MapConfig, SystemAdapter, apply_mutations, build_scr, fidelity_floor, \
    provide_content, verify_sync
from .errors import AdapterError, Divergence, GatekeeperError, IndexGap, LedgerError
from .scr import (
    FIDELITY_RANK, Scr, TokenCounter, canonical_serialize, dumps_canonical, estimate_tokens,
    parse_proposal, scr_digest,
)
from .validation import (
    EMPTY_ACTIONS, MALFORMED_REQUEST, ActionSet, MalformedProposal, Proposal, ValidationReport,
    extract_actions, is_valid,
)

logger = logging.getLogger(__name__)

AnyProposal = Union[Proposal, MalformedProposal]


@dataclass(frozen=True)
class StepOutcome:
    accepted: bool
    report: ValidationReport
    applied_actions: ActionSet = EMPTY_ACTIONS
    tokens_in: int = 0
    tokens_out: int = 0

    def to_json(self) -> dict[str, Any]:
        return {
            "accepted": self.accepted,
            "report": self.report.to_json(),
            "applied_actions": self.applied_actions.to_json(),
            "tokens_in": self.tokens_in,
            "tokens_out": self.tokens_out,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> StepOutcome:
        return cls(
            accepted=obj["accepted"],
            report=ValidationReport.from_json(obj["report"]),
            applied_actions=ActionSet.from_json(obj["applied_actions"]),
            tokens_in=obj["tokens_in"],
            tokens_out=obj["tokens_out"],
        )


def proposal_bytes(proposal: AnyProposal) -> bytes:
    if isinstance(proposal, MalformedProposal):
        return proposal.raw.encode("utf-8")
    return canonical_serialize(proposal.scr)


def decode_proposal(data: Union[bytes, str]) -> AnyProposal:
    """Parse agent output leniently; undecodable input becomes a MalformedProposal."""
    text = data.decode("utf-8", errors="replace") if isinstance(data, bytes) else data
    try:
        return Proposal(parse_proposal(text))
    except GatekeeperError as exc:
        return MalformedProposal(text, str(exc))


def step(current: Scr, proposal: AnyProposal, adapter: SystemAdapter,
         config: MapConfig = MapConfig(),
         token_counter: TokenCounter = estimate_tokens) -> tuple[Scr, StepOutcome]:
    """Validate a proposal and, if valid, execute it against the adapter.

    Rejection leaves ``current`` untouched. Acceptance re-reads the tree from
    the adapter so the returned document is ground truth, with every request
    cleared.
    """
    tokens_in = token_counter(canonical_serialize(current))
    tokens_out = token_counter(proposal_bytes(proposal))

    def reject(report: ValidationReport) -> tuple[Scr, StepOutcome]:
        return current, StepOutcome(False, report, EMPTY_ACTIONS, tokens_in, tokens_out)

    if isinstance(proposal, MalformedProposal):
        return reject(ValidationReport.single("", MALFORMED_REQUEST, proposal.reason))
    report = is_valid(current, proposal)
    if not report.valid:
        return reject(report)
    actions = extract_actions(proposal, current)
    if not actions:
        return current, StepOutcome(True, report, EMPTY_ACTIONS, tokens_in, tokens_out)

    floor = fidelity_floor(current)
    try:
        for cid, req in actions.provides():
            provide_content(adapter, cid, req.target_fidelity, config)
            if FIDELITY_RANK[req.target_fidelity] > FIDELITY_RANK[floor.get(cid, "latent")]:
                floor[cid] = req.target_fidelity
        apply_mutations(adapter, actions.mutations(), config)
    except AdapterError as exc:
        logger.info("rejecting proposal at revision %d: %s", current.revision, exc)
        return reject(ValidationReport.single(exc.path, exc.code, str(exc)))

    following = build_scr(adapter, config, current.task, current.revision + 1, floor)
    return following, StepOutcome(True, report, actions, tokens_in, tokens_out)


@dataclass(frozen=True)
class LedgerEntry:
    step_index: int
    pre_digest: str
    proposal_canonical: bytes
    outcome: StepOutcome
    post_digest: str

    def to_json(self) -> dict[str, Any]:
        return {
            "step_index": self.step_index,
            "pre_digest": self.pre_digest,
            "proposal_canonical": self.proposal_canonical.decode("utf-8"),
            "outcome": self.outcome.to_json(),
            "post_digest": self.post_digest,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> LedgerEntry:
        return cls(
            step_index=obj["step_index"],
            pre_digest=obj["pre_digest"],
            proposal_canonical=obj["proposal_canonical"].encode("utf-8"),
            outcome=StepOutcome.from_json(obj["outcome"]),
            post_digest=obj["post_digest"],
        )

    def to_line(self) -> bytes:
        return dumps_canonical(self.to_json(), sort_keys=True) + b"\n"


@dataclass
class Ledger:
    """Append-only sequence of entries, optionally mirrored to a JSONL file."""

    path: Optional[Path] = None
    entries: list[LedgerEntry] = field(default_factory=list)

    @classmethod
    def open(cls, path: Union[str, Path]) -> Ledger:
        path = Path(path)
        ledger = cls(path)
        if path.exists():
            try:
                with path.open("rb") as fh:
                    for n, line in enumerate(fh):
                        if not line.strip():
                            continue
                        entry = LedgerEntry.from_json(json.loads(line))
                        if entry.step_index != n:
                            raise IndexGap(f"{path}: line {n} has step_index {entry.step_index}")
                        ledger.entries.append(entry)
            except (OSError, ValueError, KeyError) as exc:
                raise LedgerError(f"cannot read ledger {path}: {exc}") from exc
        return ledger

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[LedgerEntry]:
        return iter(self.entries)

    @property
    def next_index(self) -> int:
        return len(self.entries)

    def append(self, entry: LedgerEntry) -> Ledger:
        if entry.step_index != self.next_index:
            raise IndexGap(f"expected step_index {self.next_index}, got {entry.step_index}")
        if self.path is not None:
            try:
                with self.path.open("ab") as fh:
                    fh.write(entry.to_line())
            except OSError as exc:
                raise LedgerError(f"cannot append to {self.path}: {exc}") from exc
        self.entries.append(entry)
        return self


def ledger_append(ledger: Ledger, entry: LedgerEntry) -> Ledger:
    return ledger.append(entry)


class Engine:
    """Serializes steps against one adapter and records each in a ledger."""

    def __init__(self, adapter: SystemAdapter, config: MapConfig = MapConfig(),
                 ledger: Optional[Ledger] = None,
                 token_counter: TokenCounter = estimate_tokens) -> None:
        self.adapter = adapter
        self.config = config
        self.ledger = ledger if ledger is not None else Ledger()
        self.token_counter = token_counter

    def step(self, current: Scr, proposal: AnyProposal) -> tuple[Scr, StepOutcome]:
        following, outcome = step(current, proposal, self.adapter, self.config, self.token_counter)
        self.ledger.append(LedgerEntry(
            step_index=self.ledger.next_index,
            pre_digest=scr_digest(current),
            proposal_canonical=proposal_bytes(proposal),
            outcome=outcome,
            post_digest=scr_digest(following),
        ))
        return following, outcome

    def replay(self, initial: Scr) -> Scr:
        return replay(initial, self.ledger, self.adapter, self.config)


def replay(initial: Scr, ledger: Union[Ledger, list[LedgerEntry]], adapter: SystemAdapter,
           config: MapConfig = MapConfig(), token_counter: TokenCounter = estimate_tokens) -> Scr:
    """Re-execute the accepted entries of ``ledger`` starting from ``initial``.

    Raises Divergence naming the first step whose recorded digests cannot be
    reproduced, including when the adapter no longer matches the state the
    entry was recorded against.
    """
    state = initial
    for entry in ledger:
        n = entry.step_index
        if scr_digest(state) != entry.pre_digest:
            raise Divergence(n, "pre-state digest differs from the record")
        drift = verify_sync(state, adapter, config)
        if drift:
            raise Divergence(n, "system out of sync: " + ", ".join(f"{m.id} {m.kind}" for m in drift))
        if not entry.outcome.accepted:
            if entry.post_digest != entry.pre_digest:
                raise Divergence(n, "rejected entry changed the state digest")
            continue
        state, outcome = step(state, decode_proposal(entry.proposal_canonical), adapter, config,
                              token_counter)
        if not outcome.accepted:
            raise Divergence(n, f"recorded acceptance was rejected on replay: {outcome.report.codes}")
        if scr_digest(state) != entry.post_digest:
            raise Divergence(n, "post-state digest differs from the record")
    return state

"""Engine for agent-system interaction through one versioned state document.

An agent sees the system only through one SCR document, asks for context
progressively, and changes the system only through validated, atomic,
replayable transactions.
"""

from pathlib import Path

from .adapters import (
    FilesystemAdapter, MapConfig, SystemAdapter, VirtualAdapter, apply_mutations,
    build_latent_map, provide_content, verify_sync,
)
from .engine import Engine, Ledger, LedgerEntry, StepOutcome, ledger_append, replay, step
from .harness import (
    Metrics, Predicate, RunResult, TaskSpec, compare_strategies, grounding_avg, progress_avg,
    run_episode, tokens_avg,
)
from .policy import (
    Done, GatekeeperPolicy, PolicyConfig, ScriptedPolicy, baseline_full_context,
    baseline_recent_files, default_relevance, gatekeeper_policy, scripted_policy,
    select_provide_set,
)
from .remote import PolicyServer, RemotePolicy, remote_policy
from .scr import (
    Component, Request, Scr, canonical_serialize, estimate_tokens, find, parse, parse_proposal,
    scr_digest,
)
from .validation import ActionSet, Proposal, ValidationReport, extract_actions, is_valid

FIXTURES = Path(__file__).parent / "fixtures"

__all__ = [
    "ActionSet", "Component", "Done", "Engine", "FIXTURES", "FilesystemAdapter",
    "GatekeeperPolicy", "Ledger", "LedgerEntry", "MapConfig", "Metrics", "PolicyConfig",
    "PolicyServer", "Predicate", "Proposal", "RemotePolicy", "Request", "RunResult", "Scr",
    "ScriptedPolicy", "StepOutcome", "SystemAdapter", "TaskSpec", "ValidationReport",
    "VirtualAdapter", "apply_mutations", "baseline_full_context", "baseline_recent_files",
    "build_latent_map", "canonical_serialize", "compare_strategies", "default_relevance",
    "estimate_tokens", "extract_actions", "find", "gatekeeper_policy", "grounding_avg",
    "is_valid", "ledger_append", "parse", "parse_proposal", "progress_avg", "provide_content",
    "remote_policy", "replay", "run_episode", "scr_digest", "scripted_policy",
    "select_provide_set", "step", "tokens_avg", "verify_sync",
]

"""Episode runner and the three evaluation metrics.

* progress: percentage of sub-task predicates satisfied, averaged over runs;
* grounding errors: rejected steps whose violations show a false belief about
  system state (digest-mismatch or unknown-component), averaged over runs;
* tokens: estimated input plus output tokens over all steps, averaged over runs.
"""

from __future__ import annotations

import json
import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence, Union

from .adapters import MapConfig, SystemAdapter, build_latent_map
from .engine import Engine, Ledger
from .errors import AdapterError, EmptyResults, GatekeeperError
from .policy import Done, Policy
from .scr import Scr, dumps_canonical, hash_bytes
from .validation import GROUNDING_CODES

logger = logging.getLogger(__name__)

FILE_EXISTS = "file-exists"
FILE_ABSENT = "file-absent"
FILE_CONTAINS = "file-contains"
FILE_EQUALS = "file-equals"
PREDICATES = (FILE_EXISTS, FILE_ABSENT, FILE_CONTAINS, FILE_EQUALS)


@dataclass(frozen=True)
class Predicate:
    kind: str
    path: str
    value: Optional[str] = None

    def __post_init__(self) -> None:
        if self.kind not in PREDICATES:
            raise ValueError(f"unknown predicate {self.kind!r}")
        if self.kind in (FILE_CONTAINS, FILE_EQUALS) and self.value is None:
            raise ValueError(f"{self.kind} needs a value")

    def evaluate(self, adapter: SystemAdapter) -> bool:
        try:
            data = adapter.read(self.path)
        except AdapterError:
            data = None
        if self.kind == FILE_EXISTS:
            return data is not None
        if self.kind == FILE_ABSENT:
            return data is None
        if data is None:
            return False
        if self.kind == FILE_EQUALS:
            return hash_bytes(data) == self.value
        assert self.value is not None
        return self.value.encode("utf-8") in data

    def to_json(self) -> dict[str, Any]:
        out = {"type": self.kind, "path": self.path}
        if self.kind == FILE_CONTAINS:
            out["literal"] = self.value
        elif self.kind == FILE_EQUALS:
            out["digest"] = self.value
        return out

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> Predicate:
        return cls(obj["type"], obj["path"], obj.get("literal", obj.get("digest")))


@dataclass(frozen=True)
class TaskSpec:
    description: str
    subtasks: tuple[Predicate, ...]
    max_steps: int = 20

    def __post_init__(self) -> None:
        if not self.subtasks:
            raise ValueError("a task needs at least one sub-task")
        if self.max_steps < 0:
            raise ValueError("max_steps must be non-negative")

    @property
    def k(self) -> int:
        return len(self.subtasks)

    def to_json(self) -> dict[str, Any]:
        return {
            "description": self.description,
            "subtasks": [p.to_json() for p in self.subtasks],
            "max_steps": self.max_steps,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> TaskSpec:
        return cls(obj["description"], tuple(Predicate.from_json(p) for p in obj["subtasks"]),
                   obj.get("max_steps", 20))

    @classmethod
    def load(cls, path: Union[str, Path]) -> TaskSpec:
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class RunResult:
    run_index: int
    subtask_flags: list[bool]
    grounding_errors: int = 0
    total_tokens: int = 0
    steps: int = 0
    ledger_path: Optional[str] = None
    aborted: Optional[str] = None
    initial: Optional[Scr] = field(default=None, repr=False, compare=False)
    final: Optional[Scr] = field(default=None, repr=False, compare=False)
    ledger: Optional[Ledger] = field(default=None, repr=False, compare=False)

    @property
    def progress_percent(self) -> float:
        return 100.0 * sum(self.subtask_flags) / len(self.subtask_flags)

    def to_json(self) -> dict[str, Any]:
        return {
            "run_index": self.run_index,
            "subtask_flags": self.subtask_flags,
            "grounding_errors": self.grounding_errors,
            "total_tokens": self.total_tokens,
            "steps": self.steps,
            "ledger_path": self.ledger_path,
            "aborted": self.aborted,
        }


def run_episode(policy: Policy, engine: Engine, task: TaskSpec, run_index: int = 0) -> RunResult:
    """Drive the protocol cycle until the policy is done or ``max_steps`` is hit.

    Policy or transport failures end the episode early; the result records the
    reason in ``aborted`` and still scores the tree as it stands.
    """
    scr = build_latent_map(engine.adapter, engine.config, task.description)
    result = RunResult(run_index, [], initial=scr, ledger=engine.ledger,
                       ledger_path=str(engine.ledger.path) if engine.ledger.path else None)
    last = None
    for _ in range(task.max_steps):
        try:
            decision = policy.decide(scr, task.description, last)
        except GatekeeperError as exc:
            logger.warning("run %d aborted: %s", run_index, exc)
            result.aborted = f"{exc.code}: {exc}"
            break
        if isinstance(decision, Done):
            break
        scr, last = engine.step(scr, decision)
        result.steps += 1
        result.total_tokens += last.tokens_in + last.tokens_out
        if not last.accepted and last.report.codes & GROUNDING_CODES:
            result.grounding_errors += 1
    result.final = scr
    result.subtask_flags = [p.evaluate(engine.adapter) for p in task.subtasks]
    return result


def _require(results: Sequence[Any]) -> None:
    if not results:
        raise EmptyResults("no runs to aggregate")


def progress_avg(results: Sequence[RunResult], k: Optional[int] = None) -> float:
    _require(results)
    k = len(results[0].subtask_flags) if k is None else k
    if k < 1 or any(len(r.subtask_flags) != k for r in results):
        raise ValueError(f"every run must report exactly {k} sub-task flags")
    done = sum(sum(1 for flag in r.subtask_flags if flag) for r in results)
    return 100.0 * done / (len(results) * k)


def grounding_avg(results: Sequence[RunResult]) -> float:
    _require(results)
    return sum(r.grounding_errors for r in results) / len(results)


def tokens_avg(results: Sequence[RunResult]) -> float:
    _require(results)
    return sum(r.total_tokens for r in results) / len(results)


@dataclass
class Metrics:
    runs: list[RunResult]
    progress_avg_percent: float
    grounding_avg: float
    tokens_avg: float
    progress_std: float = 0.0
    grounding_std: float = 0.0
    tokens_std: float = 0.0

    @property
    def r(self) -> int:
        return len(self.runs)

    @classmethod
    def from_runs(cls, runs: list[RunResult]) -> Metrics:
        return cls(
            runs=runs,
            progress_avg_percent=progress_avg(runs),
            grounding_avg=grounding_avg(runs),
            tokens_avg=tokens_avg(runs),
            progress_std=statistics.pstdev(r.progress_percent for r in runs),
            grounding_std=statistics.pstdev(float(r.grounding_errors) for r in runs),
            tokens_std=statistics.pstdev(float(r.total_tokens) for r in runs),
        )

    def to_json(self) -> dict[str, Any]:
        return {
            "R": self.r,
            "progress_avg_percent": self.progress_avg_percent,
            "progress_std": self.progress_std,
            "grounding_avg": self.grounding_avg,
            "grounding_std": self.grounding_std,
            "tokens_avg": self.tokens_avg,
            "tokens_std": self.tokens_std,
            "runs": [r.to_json() for r in self.runs],
        }


@dataclass
class Report:
    rows: list[tuple[str, Metrics]]

    def row(self, name: str) -> Metrics:
        return dict(self.rows)[name]

    def to_json(self) -> dict[str, Any]:
        return {"strategies": [{"name": n, **m.to_json()} for n, m in self.rows]}

    def to_bytes(self) -> bytes:
        return dumps_canonical(self.to_json())

    def format_table(self) -> str:
        header = ("Strategy", "Avg. Task Completion (%)", "Avg. Grounding Errors", "Avg. Total Tokens")
        lines = [header]
        for name, m in self.rows:
            lines.append((
                name,
                f"{m.progress_avg_percent:.1f} ± {m.progress_std:.1f}",
                f"{m.grounding_avg:.2f} ± {m.grounding_std:.2f}",
                f"{m.tokens_avg:,.0f} ± {m.tokens_std:,.0f}",
            ))
        widths = [max(len(row[i]) for row in lines) for i in range(len(header))]
        out = []
        for n, row in enumerate(lines):
            out.append("  ".join(cell.ljust(w) if i == 0 else cell.rjust(w)
                                 for i, (cell, w) in enumerate(zip(row, widths))))
            if n == 0:
                out.append("  ".join("-" * w for w in widths))
        return "\n".join(out)


StrategyFactory = Callable[[SystemAdapter], Policy]


def compare_strategies(strategies: Sequence[tuple[str, StrategyFactory]], task: TaskSpec,
                       repeats: int, adapter_factory: Callable[[], SystemAdapter],
                       config: MapConfig = MapConfig(),
                       ledger_dir: Optional[Path] = None) -> Report:
    """Run every strategy ``repeats`` times on a fresh adapter and tabulate the metrics."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    rows = []
    for name, factory in strategies:
        runs = []
        for i in range(repeats):
            adapter = adapter_factory()
            ledger = Ledger()
            if ledger_dir is not None:
                path = Path(ledger_dir) / f"{name}-{i}.jsonl"
                path.unlink(missing_ok=True)
                ledger = Ledger.open(path)
            engine = Engine(adapter, config, ledger)
            runs.append(run_episode(factory(adapter), engine, task, run_index=i))
        rows.append((name, Metrics.from_runs(runs)))
    return Report(rows)


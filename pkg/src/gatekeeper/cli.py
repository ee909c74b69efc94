"""Batch commands: map, validate, step, run, replay.

Machine-readable canonical JSON goes to stdout, diagnostics to stderr.
Settings resolve as command-line flag, then ``GATEKEEPER_*`` environment
variable, then the JSON config file (``--config`` or ``GATEKEEPER_CONFIG``),
then built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

from . import FIXTURES
from .adapters import (
    DEFAULT_MAX_FILE_BYTES, DEFAULT_SUMMARY_LINES, FilesystemAdapter, MapConfig, SystemAdapter,
    VirtualAdapter, build_latent_map, verify_sync,
)
from .engine import Engine, Ledger, decode_proposal, replay
from .errors import Divergence, GatekeeperError
from .harness import TaskSpec, compare_strategies
from .policy import (
    BaselinePolicy, GatekeeperPolicy, Policy, PolicyConfig, ScriptedPolicy,
)
from .remote import RemotePolicy
from .scr import Scr, canonical_serialize, dumps_canonical, parse, scr_digest
from .validation import MalformedProposal, is_valid

log = logging.getLogger("gatekeeper")

EXIT_OK = 0
EXIT_REJECTED = 1
EXIT_INPUT = 2
EXIT_DRIFT = 3

STRATEGIES = ("scripted", "gatekeeper", "full-context", "recent-files", "remote")
BUNDLED = ("demo", "refactor")
ENV_PREFIX = "GATEKEEPER_"


@dataclass
class CliConfig:
    root: Optional[str] = None
    ignore: tuple[str, ...] = ()
    lam: float = 0.001
    summary_lines: int = DEFAULT_SUMMARY_LINES
    max_file_bytes: int = DEFAULT_MAX_FILE_BYTES
    endpoint: Optional[str] = None
    ledger: Optional[str] = None
    max_steps: Optional[int] = None

    @property
    def map_config(self) -> MapConfig:
        return MapConfig(self.ignore, self.max_file_bytes, self.summary_lines)


_ENV_NAMES = {
    "root": "ROOT", "ignore": "IGNORE", "lam": "LAMBDA", "summary_lines": "SUMMARY_LINES",
    "max_file_bytes": "MAX_FILE_BYTES", "endpoint": "ENDPOINT", "ledger": "LEDGER",
    "max_steps": "MAX_STEPS",
}
_FILE_NAMES = {"lam": "lambda"}


def _coerce(key: str, value: Any) -> Any:
    if value is None:
        return None
    if key == "ignore":
        if isinstance(value, str):
            value = [g for g in value.split(",") if g]
        return tuple(value)
    if key == "lam":
        return float(value)
    if key in ("summary_lines", "max_file_bytes", "max_steps"):
        return int(value)
    return str(value)


def resolve_config(args: argparse.Namespace, env: Optional[dict[str, str]] = None) -> CliConfig:
    env = dict(os.environ) if env is None else env
    cfg = CliConfig()
    config_path = getattr(args, "config", None) or env.get(ENV_PREFIX + "CONFIG")
    from_file: dict[str, Any] = {}
    if config_path:
        from_file = json.loads(Path(config_path).read_text(encoding="utf-8"))
    for f in fields(CliConfig):
        key = f.name
        flag = getattr(args, key, None)
        if flag is not None and flag != ():
            value = flag
        elif ENV_PREFIX + _ENV_NAMES[key] in env:
            value = env[ENV_PREFIX + _ENV_NAMES[key]]
        elif _FILE_NAMES.get(key, key) in from_file:
            value = from_file[_FILE_NAMES.get(key, key)]
        else:
            continue
        setattr(cfg, key, _coerce(key, value))
    return cfg


def _emit(obj: Any = None, raw: Optional[bytes] = None) -> None:
    out = raw if raw is not None else dumps_canonical(obj)
    sys.stdout.buffer.write(out + b"\n")
    sys.stdout.flush()


def _read_scr(path: str) -> Scr:
    return parse(Path(path).read_bytes())


# -- commands ----------------------------------------------------------------

def cmd_map(args: argparse.Namespace, cfg: CliConfig) -> int:
    root = cfg.root or "."
    try:
        adapter = FilesystemAdapter(root)
        scr = build_latent_map(adapter, cfg.map_config, args.task or "")
    except GatekeeperError as exc:
        log.error("cannot map %s: %s", root, exc)
        return EXIT_INPUT
    _emit(raw=canonical_serialize(scr))
    return EXIT_OK


def _load_pair(args: argparse.Namespace):
    current = _read_scr(args.current)
    proposal = decode_proposal(Path(args.proposal).read_bytes())
    if isinstance(proposal, MalformedProposal):
        raise GatekeeperError(f"{args.proposal}: {proposal.reason}")
    return current, proposal


def cmd_validate(args: argparse.Namespace, cfg: CliConfig) -> int:
    try:
        current, proposal = _load_pair(args)
    except (GatekeeperError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    report = is_valid(current, proposal)
    _emit(report.to_json())
    for v in report.violations:
        log.info("%s %s: %s", v.code, v.id, v.message)
    return EXIT_OK if report.valid else EXIT_REJECTED


def cmd_step(args: argparse.Namespace, cfg: CliConfig) -> int:
    try:
        current, proposal = _load_pair(args)
        adapter = FilesystemAdapter(cfg.root or ".")
        ledger = Ledger.open(cfg.ledger) if cfg.ledger else Ledger()
    except (GatekeeperError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    drift = verify_sync(current, adapter, cfg.map_config)
    if drift:
        for m in drift:
            log.error("out of sync: %s %s", m.kind, m.id)
        _emit({"sync": [m.to_json() for m in drift]})
        return EXIT_DRIFT
    following, outcome = Engine(adapter, cfg.map_config, ledger).step(current, proposal)
    _emit(raw=canonical_serialize(following))
    for v in outcome.report.violations:
        log.info("rejected: %s %s: %s", v.code, v.id, v.message)
    return EXIT_OK if outcome.accepted else EXIT_REJECTED


def _bundled(name: str) -> Path:
    return FIXTURES / name


def make_strategy(name: str, adapter: SystemAdapter, *, script: Optional[list[Any]],
                  lam: float, endpoint: Optional[str], recent: int) -> Policy:
    def planner() -> Policy:
        if endpoint:
            return RemotePolicy(endpoint)
        if script is None:
            raise GatekeeperError(f"strategy {name!r} needs --script or --endpoint")
        return ScriptedPolicy(script)

    if name == "scripted":
        if script is None:
            raise GatekeeperError("strategy 'scripted' needs --script")
        return ScriptedPolicy(script)
    if name == "gatekeeper":
        return GatekeeperPolicy(PolicyConfig(lam=lam), planner())
    if name == "full-context":
        return BaselinePolicy(adapter, planner())
    if name == "recent-files":
        return BaselinePolicy(adapter, planner(), recent=recent)
    if name == "remote":
        if not endpoint:
            raise GatekeeperError("strategy 'remote' needs --endpoint")
        return RemotePolicy(endpoint)
    raise GatekeeperError(f"unknown strategy {name!r}; choose from {', '.join(STRATEGIES)}")


def cmd_run(args: argparse.Namespace, cfg: CliConfig) -> int:
    tree: Optional[Path] = Path(args.tree) if args.tree else None
    script_path = args.script
    task_path = Path(args.taskspec)
    if args.taskspec in BUNDLED:
        base = _bundled(args.taskspec)
        task_path = base / "task.json"
        tree = tree or (base / "tree.json" if not cfg.root else None)
        if script_path is None:
            script_path = str(base / ("script.json" if args.taskspec == "demo" else "plan.json"))
    try:
        task = TaskSpec.load(task_path)
        if cfg.max_steps is not None:
            task = TaskSpec(task.description, task.subtasks, cfg.max_steps)
        script = json.loads(Path(script_path).read_text(encoding="utf-8")) if script_path else None
    except (OSError, ValueError, KeyError) as exc:
        log.error("cannot load inputs: %s", exc)
        return EXIT_INPUT

    workdir = Path(tempfile.mkdtemp(prefix="gatekeeper-run-"))
    counter = iter(range(1 << 30))

    def adapter_factory() -> SystemAdapter:
        if tree is not None:
            return VirtualAdapter.from_manifest(tree)
        if not cfg.root:
            raise GatekeeperError("run needs --root or --tree")
        # Episodes mutate their tree, so each one gets a private copy.
        target = workdir / f"run-{next(counter)}"
        shutil.copytree(cfg.root, target)
        return FilesystemAdapter(target)

    def factory(name: str) -> Callable[[SystemAdapter], Policy]:
        return lambda adapter: make_strategy(name, adapter, script=script, lam=cfg.lam,
                                             endpoint=cfg.endpoint, recent=args.recent)

    ledger_dir = Path(cfg.ledger) if cfg.ledger else None
    if ledger_dir is not None:
        ledger_dir.mkdir(parents=True, exist_ok=True)
    names = args.strategy or ["gatekeeper"]
    try:
        report = compare_strategies([(n, factory(n)) for n in names], task, args.repeats,
                                    adapter_factory, cfg.map_config, ledger_dir)
    except GatekeeperError as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    finally:
        shutil.rmtree(workdir, ignore_errors=True)
    if ledger_dir is not None:
        for name, metrics in report.rows:
            for run in metrics.runs:
                assert run.initial is not None
                (ledger_dir / f"{name}-{run.run_index}.initial.json").write_bytes(
                    canonical_serialize(run.initial))
    _emit(raw=report.to_bytes())
    print(report.format_table(), file=sys.stderr)
    return EXIT_OK


def cmd_replay(args: argparse.Namespace, cfg: CliConfig) -> int:
    try:
        initial = _read_scr(args.initial)
        ledger = Ledger.open(args.ledger_path)
    except (GatekeeperError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    workdir = Path(tempfile.mkdtemp(prefix="gatekeeper-replay-"))
    try:
        if args.tree:
            adapter: SystemAdapter = VirtualAdapter.from_manifest(args.tree)
        else:
            # Replay re-executes mutations; work on a copy so the source tree stays pristine.
            shutil.copytree(cfg.root or ".", workdir / "tree")
            adapter = FilesystemAdapter(workdir / "tree")
        final = replay(initial, ledger, adapter, cfg.map_config)
    except Divergence as exc:
        log.error("%s", exc)
        _emit({"replayed": False, "divergence_step": exc.step_index, "detail": str(exc)})
        return EXIT_REJECTED
    except (GatekeeperError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    finally:
        shutil.rmtree(workdir, ignore_errors=True)
    _emit({"replayed": True, "steps": len(ledger), "final_digest": scr_digest(final)})
    return EXIT_OK


# -- argument parsing --------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--root", help="root directory of the system")
    p.add_argument("--ignore", action="append", help="glob to leave out of the map (repeatable)")
    p.add_argument("--lambda", dest="lam", type=float, help="token-cost weight for context requests")
    p.add_argument("--summary-lines", dest="summary_lines", type=int)
    p.add_argument("--max-file-bytes", dest="max_file_bytes", type=int)
    p.add_argument("--endpoint", help="URL of a remote policy")
    p.add_argument("--ledger", help="ledger file (step) or directory (run)")
    p.add_argument("--max-steps", dest="max_steps", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gatekeeper", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("map", help="print the latent map of a tree")
    _common(p)
    p.add_argument("--task", default="", help="task text to embed in the document")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("validate", help="check a proposal against a current document")
    _common(p)
    p.add_argument("current")
    p.add_argument("proposal")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("step", help="validate and execute one proposal")
    _common(p)
    p.add_argument("current")
    p.add_argument("proposal")
    p.set_defaults(func=cmd_step)

    p = sub.add_parser("run", help="run episodes and print metrics")
    _common(p)
    p.add_argument("taskspec", help=f"task JSON file, or one of {', '.join(BUNDLED)}")
    p.add_argument("--strategy", action="append", choices=STRATEGIES)
    p.add_argument("--script", help="JSON list of proposal templates for scripted planners")
    p.add_argument("--tree", help="virtual tree manifest instead of --root")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--recent", type=int, default=3, help="file count for recent-files")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("replay", help="re-execute a ledger and check every digest")
    _common(p)
    p.add_argument("initial")
    p.add_argument("ledger_path", metavar="ledger")
    p.add_argument("--tree", help="virtual tree manifest instead of --root")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
    except (OSError, ValueError) as exc:
        log.error("bad configuration: %s", exc)
        return EXIT_INPUT
    return args.func(args, cfg)


if __name__ == "__main__":
    sys.exit(main())

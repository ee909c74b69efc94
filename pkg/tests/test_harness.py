import statistics

import pytest
from hypothesis import given, settings, strategies as st

from gatekeeper.adapters import VirtualAdapter
from gatekeeper.engine import Engine, Ledger
from gatekeeper.errors import EmptyResults
from gatekeeper.harness import (
    Metrics, Predicate, RunResult, TaskSpec, compare_strategies, grounding_avg, progress_avg,
    run_episode, tokens_avg,
)
from gatekeeper.policy import Done, GatekeeperPolicy, PolicyConfig, ScriptedPolicy, BaselinePolicy
from gatekeeper.scr import hash_text


def runs(flags=None, errors=None, tokens=None):
    n = len(flags or errors or tokens)
    return [RunResult(i, list(map(bool, flags[i])) if flags else [True],
                      grounding_errors=errors[i] if errors else 0,
                      total_tokens=tokens[i] if tokens else 0) for i in range(n)]


def test_progress_example():
    assert progress_avg(runs(flags=[[1, 1, 0, 0], [1, 0, 1, 1]])) == 62.5


@pytest.mark.parametrize("flag, expected", [(1, 100.0), (0, 0.0)])
def test_progress_extremes(flag, expected):
    assert progress_avg(runs(flags=[[flag] * 3] * 4)) == expected


def test_grounding_examples():
    assert grounding_avg(runs(errors=[2, 0, 1])) == 1.0
    assert grounding_avg(runs(errors=[0, 0])) == 0
    assert grounding_avg(runs(errors=[3])) == 3.0


def test_token_examples():
    assert tokens_avg(runs(tokens=[100, 300])) == 200
    assert tokens_avg(runs(tokens=[77])) == 77
    assert tokens_avg(runs(tokens=[0, 0, 0])) == 0


def test_empty_results_raise():
    for fn in (progress_avg, grounding_avg, tokens_avg):
        with pytest.raises(EmptyResults):
            fn([])


def test_ragged_flags_rejected():
    bad = [RunResult(0, [True]), RunResult(1, [True, False])]
    with pytest.raises(ValueError):
        progress_avg(bad)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 8), st.integers(1, 6), st.data())
def test_metrics_match_direct_sums(r, k, data):
    flags = data.draw(st.lists(st.lists(st.booleans(), min_size=k, max_size=k), min_size=r, max_size=r))
    errors = data.draw(st.lists(st.integers(0, 50), min_size=r, max_size=r))
    tokens = data.draw(st.lists(st.integers(0, 10**7), min_size=r, max_size=r))
    results = [RunResult(i, flags[i], errors[i], tokens[i]) for i in range(r)]
    done = sum(sum(1 for f in row if f) for row in flags)
    assert progress_avg(results) == pytest.approx(100 * done / (r * k), rel=1e-9)
    assert grounding_avg(results) == pytest.approx(sum(errors) / r, rel=1e-9)
    assert tokens_avg(results) == pytest.approx(sum(tokens) / r, rel=1e-9)


# -- episodes ------------------------------------------------------------------

def tree():
    return VirtualAdapter({"old.txt": "bye\n", "a.txt": "hello\n"})


TASK = TaskSpec("tidy", (Predicate("file-absent", "old.txt"),
                         Predicate("file-contains", "a.txt", "everyone"),
                         Predicate("file-equals", "a.txt", hash_text("hello everyone\n"))))

PLAN = [{"requests": {"old.txt": {"delete": {}},
                      "a.txt": {"edit": {"expected_digest": "@current",
                                         "content": "hello everyone\n"}}}}]


def test_complete_script_sets_every_flag():
    result = run_episode(ScriptedPolicy(PLAN), Engine(tree()), TASK)
    assert result.subtask_flags == [True, True, True]
    assert result.grounding_errors == 0


def test_immediate_done_scores_the_initial_tree():
    adapter = tree()
    result = run_episode(ScriptedPolicy([{"requests": {}}]), Engine(adapter), TASK)
    assert result.subtask_flags == [p.evaluate(tree()) for p in TASK.subtasks] == [False] * 3


def test_stale_edit_is_a_grounding_error():
    adapter = tree()

    class OutOfBand:
        """Edits a.txt behind the agent's back, then proposes with the stale digest."""

        def __init__(self):
            self.turn = 0

        def decide(self, scr, task, last_outcome=None):
            self.turn += 1
            if self.turn > 1:
                return Done()
            adapter.write("a.txt", b"changed elsewhere\n")
            return ScriptedPolicy([{"requests": {"a.txt": {"edit": {
                "expected_digest": "@current", "content": "x"}}}}]).decide(scr, task)

    engine = Engine(adapter)
    result = run_episode(OutOfBand(), engine, TASK)
    assert result.grounding_errors == 1
    assert engine.ledger.entries[0].outcome.report.codes == {"digest-mismatch"}


def test_metrics_are_recomputable_from_the_ledger():
    engine = Engine(tree())
    plan = [{"requests": {"nope.txt": {"delete": {}}}}, *PLAN]
    result = run_episode(ScriptedPolicy(plan), engine, TASK)
    entries = engine.ledger.entries
    assert result.total_tokens == sum(e.outcome.tokens_in + e.outcome.tokens_out for e in entries)
    assert result.grounding_errors == sum(
        1 for e in entries if not e.outcome.accepted
        and e.outcome.report.codes & {"digest-mismatch", "unknown-component"}) == 1
    assert result.steps == len(entries) == 2


def test_max_steps_caps_the_episode():
    loop = [{"requests": {"ghost": {"delete": {}}}}] * 10
    task = TaskSpec("x", TASK.subtasks, max_steps=3)
    assert run_episode(ScriptedPolicy(loop), Engine(tree()), task).steps == 3


def test_taskspec_round_trip():
    assert TaskSpec.from_json(TASK.to_json()) == TASK
    with pytest.raises(ValueError):
        TaskSpec("empty", ())


def ten_files():
    files = {f"mod{i}.py": "\n".join(f"filler line {j}" for j in range(40)) for i in range(9)}
    files["parser.py"] = "def parse(): pass\n"
    return VirtualAdapter(files)


PARSER_TASK = TaskSpec("fix the parser", (Predicate("file-contains", "parser.py", "return"),))
PARSER_PLAN = [{"requests": {"parser.py": {"edit": {"expected_digest": "@current",
                                                    "content": "def parse(): return 1\n"}}}}]


def test_relevance_guided_context_is_cheaper():
    report = compare_strategies(
        [("full-context", lambda a: BaselinePolicy(a, ScriptedPolicy(PARSER_PLAN))),
         ("gatekeeper", lambda a: GatekeeperPolicy(PolicyConfig(lam=0.001), ScriptedPolicy(PARSER_PLAN)))],
        PARSER_TASK, repeats=2, adapter_factory=ten_files)
    full, gk = report.row("full-context"), report.row("gatekeeper")
    assert gk.progress_avg_percent == full.progress_avg_percent == 100
    assert gk.tokens_avg < full.tokens_avg
    assert gk.tokens_std == full.tokens_std == 0
    table = report.format_table().splitlines()
    assert len(table) == 4 and table[0].startswith("Strategy")


def test_single_strategy_single_repeat(tmp_path):
    report = compare_strategies([("only", lambda a: ScriptedPolicy(PLAN))], TASK, 1, tree,
                                ledger_dir=tmp_path)
    assert len(report.rows) == 1
    assert len(Ledger.open(tmp_path / "only-0.jsonl")) == 1
    assert report.to_bytes() == report.to_bytes()


def test_population_std():
    m = Metrics.from_runs(runs(tokens=[100, 300]))
    assert m.tokens_std == statistics.pstdev([100, 300]) == 100

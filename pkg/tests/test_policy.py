import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from gatekeeper.adapters import MapConfig, VirtualAdapter, build_latent_map, build_scr
from gatekeeper.engine import Engine
from gatekeeper.errors import PlannerUnavailable, ScriptExhausted, TransportFailure
from gatekeeper.harness import Predicate, TaskSpec, run_episode
from gatekeeper.policy import (
    BaselinePolicy, Done, GatekeeperPolicy, PolicyConfig, ScriptedPolicy, default_relevance,
    exhaustive_select, select_provide_set,
)
from gatekeeper.scr import Component, FILE, hash_text
from gatekeeper.validation import Proposal, extract_actions

from helpers import brute_force, make_scr


def config_for(items, lam, threshold=12):
    return PolicyConfig(lam=lam, value_model=lambda c, task: items[c.id][0],
                        exact_threshold=threshold)


def test_two_item_example():
    items = {"a": (5, 2), "b": (1, 3)}
    assert select_provide_set(make_scr(items), "t", config_for(items, 1)) == {"a"}
    assert brute_force(items, 1) == {"a"}


def test_zero_lambda_takes_everything_positive():
    items = {"a": (1, 50), "b": (2, 1), "c": (0.5, 9)}
    assert select_provide_set(make_scr(items), "t", config_for(items, 0)) == {"a", "b", "c"}


def test_ties_are_excluded():
    items = {"a": (4, 2), "b": (6, 3)}
    assert select_provide_set(make_scr(items), "t", config_for(items, 2)) == frozenset()


def test_full_files_are_not_candidates():
    adapter = VirtualAdapter({"a": "alpha"})
    scr = build_scr(adapter, MapConfig(), "t", fidelity={"a": "full"})
    assert select_provide_set(scr, "a", PolicyConfig(lam=0)) == frozenset()


def test_gray_code_search_matches_oracle():
    gains = {"a": Fraction(3), "b": Fraction(-1), "c": Fraction(0), "d": Fraction(1, 3)}
    assert exhaustive_select(gains) == {"a", "d"}


@pytest.mark.parametrize("task, cid, summary, expected", [
    ("rename function foo", "src/foo.py", None, 3),
    ("rename function foo", "lib/bar.c", None, 0),
    ("foo foo foo", "src/foo.py", None, 3),
    ("fix the parser", "src/p.py", "the parser lives here", 2),
])
def test_default_relevance(task, cid, summary, expected):
    c = Component(cid, FILE, fidelity="summary" if summary else "latent", digest=hash_text(""),
                  summary=summary)
    assert default_relevance(c, task) == expected


item_maps = st.dictionaries(
    st.from_regex(r"[a-z]{1,4}", fullmatch=True),
    st.tuples(st.integers(0, 40), st.integers(0, 30)), max_size=10)


@settings(max_examples=200, deadline=None)
@given(item_maps, st.fractions(0, 5, max_denominator=8))
def test_selection_matches_brute_force(items, lam):
    chosen = select_provide_set(make_scr(items), "t", config_for(items, float(lam), threshold=0))
    assert chosen == brute_force(items, float(lam))


@settings(max_examples=150, deadline=None)
@given(item_maps, st.floats(0, 5), st.floats(0, 5))
def test_higher_lambda_never_selects_more(items, lam1, lam2):
    lo, hi = sorted((lam1, lam2))
    scr = make_scr(items)
    assert select_provide_set(scr, "t", config_for(items, hi)) <= \
        select_provide_set(scr, "t", config_for(items, lo))


@settings(max_examples=150, deadline=None)
@given(item_maps, st.floats(0, 5), st.integers(1, 7))
def test_scaling_value_and_lambda_together_changes_nothing(items, lam, k):
    scaled = {i: (s * k, c) for i, (s, c) in items.items()}
    scr = make_scr(items)
    assert select_provide_set(scr, "t", config_for(items, lam)) == \
        select_provide_set(scr, "t", config_for(scaled, lam * k))


def test_bad_config():
    with pytest.raises(ValueError):
        PolicyConfig(lam=-1)
    with pytest.raises(ValueError):
        PolicyConfig(exact_threshold=21)


# -- scripted -----------------------------------------------------------------

@pytest.fixture
def demo():
    return VirtualAdapter({"old.txt": "obsolete\n", "src/a.txt": "hello\n", "src/b.txt": "x"})


def test_scripted_delete_episode(demo):
    engine = Engine(demo)
    task = TaskSpec("remove old", (Predicate("file-absent", "old.txt"),))
    result = run_episode(ScriptedPolicy([{"requests": {"old.txt": {"delete": {}}}}]), engine, task)
    assert result.steps == 1
    assert [e.outcome.accepted for e in engine.ledger] == [True]
    assert result.subtask_flags == [True]


def test_empty_script_rejected():
    with pytest.raises(ValueError):
        ScriptedPolicy([])


def test_script_past_end_raises(demo):
    scr = build_latent_map(demo)
    policy = ScriptedPolicy([{"requests": {}}])
    assert isinstance(policy.decide(scr, ""), Proposal)
    assert isinstance(policy.decide(scr, ""), Done)
    with pytest.raises(ScriptExhausted):
        policy.decide(scr, "")


def test_script_with_unknown_id_is_not_prevalidated(demo):
    engine = Engine(demo)
    scr = build_latent_map(demo)
    prop = ScriptedPolicy([{"requests": {"ghost.txt": {"delete": {}}}}]).decide(scr, "")
    assert extract_actions(prop).ids == ["ghost.txt"]
    _, out = engine.step(scr, prop)
    assert out.report.codes == {"unknown-component"}


def test_digest_placeholders(demo):
    scr = build_latent_map(demo)
    plan = [{"requests": {"src/a.txt": {"edit": {"expected_digest": "@current", "content": "1"}}}},
            {"requests": {"src/a.txt": {"edit": {"expected_digest": "@initial", "content": "2"}}}}]
    policy, engine = ScriptedPolicy(plan), Engine(demo)
    scr, first = engine.step(scr, policy.decide(scr, ""))
    scr, second = engine.step(scr, policy.decide(scr, "", first))
    assert first.accepted
    assert second.report.codes == {"digest-mismatch"}


# -- gatekeeper and baselines ------------------------------------------------------

class Recorder:
    def __init__(self, decision=None):
        self.calls = 0
        self.decision = decision or Done("nothing to do")

    def decide(self, scr, task, last_outcome=None):
        self.calls += 1
        return self.decision


def test_gatekeeper_provides_the_relevant_file_first(demo):
    scr = build_latent_map(demo, task="fix the greeting in a")
    config = PolicyConfig(lam=0.01)
    policy = GatekeeperPolicy(config, Recorder())
    first = policy.decide(scr, scr.task)
    actions = extract_actions(first)
    assert set(actions.ids) == select_provide_set(scr, scr.task, config) == {"src/a.txt"}
    assert all(r.action == "provide" and r.target_fidelity == "full" for _, r in actions)


def test_gatekeeper_skips_to_planner_when_all_full(demo):
    scr = build_scr(demo, MapConfig(), "a", fidelity={p: "full" for p in demo.files})
    planner = Recorder(Proposal(scr))
    assert GatekeeperPolicy(PolicyConfig(lam=0), planner).decide(scr, "a") is planner.decision
    assert planner.calls == 1


def test_gatekeeper_passes_done_through(demo):
    scr = build_latent_map(demo, task="nothing matches")
    assert isinstance(GatekeeperPolicy(PolicyConfig(), Recorder()).decide(scr, scr.task), Done)


def test_gatekeeper_maps_transport_failure(demo):
    class Broken:
        def decide(self, *a):
            raise TransportFailure("down")

    scr = build_latent_map(demo)
    with pytest.raises(PlannerUnavailable):
        GatekeeperPolicy(PolicyConfig(), Broken()).decide(scr, "zzz")


def test_full_context_provides_every_file(demo):
    scr = build_latent_map(demo)
    assert len(extract_actions(BaselinePolicy(demo, Recorder()).decide(scr, ""))) == 3


def test_recent_files(demo):
    demo.write("src/b.txt", b"touched last")
    scr = build_latent_map(demo)
    newest = max(demo.list_tree(), key=lambda e: e.mtime).path
    assert extract_actions(BaselinePolicy(demo, Recorder(), recent=1).decide(scr, "")).ids == [newest]
    many = extract_actions(BaselinePolicy(demo, Recorder(), recent=10).decide(scr, ""))
    assert many == extract_actions(BaselinePolicy(demo, Recorder()).decide(scr, ""))


def test_baseline_then_planner(demo):
    scr = build_latent_map(demo)
    planner = Recorder()
    policy = BaselinePolicy(demo, planner)
    policy.decide(scr, "")
    assert isinstance(policy.decide(scr, ""), Done) and planner.calls == 1


def test_random_instances_do_not_trip_the_cross_check():
    rng = random.Random(5)
    for _ in range(50):
        items = {f"f{i}": (rng.randint(0, 9), rng.randint(0, 9)) for i in range(rng.randint(0, 12))}
        select_provide_set(make_scr(items), "t", config_for(items, rng.choice([0, 0.5, 1, 2])))

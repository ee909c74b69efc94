import pytest

from gatekeeper.adapters import VirtualAdapter
from gatekeeper.engine import Engine
from gatekeeper.harness import Predicate, TaskSpec, run_episode
from gatekeeper.policy import Done, ScriptedPolicy
from gatekeeper.remote import PolicyServer, RemotePolicy, decode_reply
from gatekeeper.validation import MalformedProposal

TASK = TaskSpec("remove old.txt", (Predicate("file-absent", "old.txt"),), max_steps=4)
SCRIPT = [{"requests": {"old.txt": {"delete": {}}}}]


def tree():
    return VirtualAdapter({"old.txt": "bye", "keep.txt": "stay"})


class Canned:
    def __init__(self, *decisions):
        self.decisions = list(decisions)

    def decide(self, scr, task, last_outcome=None):
        return self.decisions.pop(0) if self.decisions else Done()


def test_done_stub_gives_empty_episode():
    with PolicyServer(Canned(Done("nothing"))) as server:
        result = run_episode(RemotePolicy(server.url), Engine(tree()), TASK)
    assert result.steps == 0 and result.subtask_flags == [False]


def test_remote_matches_local_ledger():
    local = Engine(tree())
    run_episode(ScriptedPolicy(SCRIPT), local, TASK)
    remote = Engine(tree())
    with PolicyServer(ScriptedPolicy(SCRIPT)) as server:
        result = run_episode(RemotePolicy(server.url), remote, TASK)
    assert result.subtask_flags == [True]
    assert [e.to_line() for e in remote.ledger] == [e.to_line() for e in local.ledger]


def test_invalid_json_reply_is_one_rejected_step():
    bad = MalformedProposal("this is {not json", "garbage")
    engine = Engine(tree())
    with PolicyServer(Canned(bad, Done())) as server:
        result = run_episode(RemotePolicy(server.url), engine, TASK)
    assert result.steps == 1 and result.aborted is None
    assert [e.outcome.accepted for e in engine.ledger] == [False]
    assert engine.ledger.entries[0].outcome.report.codes == {"malformed-request"}


def test_unreachable_endpoint_aborts():
    server = PolicyServer(Canned())
    url = server.url
    server.httpd.server_close()
    result = run_episode(RemotePolicy(url, retries=1, timeout=2), Engine(tree()), TASK)
    assert result.aborted and result.aborted.startswith("transport-failure")
    assert result.steps == 0


@pytest.mark.parametrize("body", [b"[]", b'{"proposal": 3}', b'{"done": 1}', b'{"a": 1, "b": 2}',
                                  b"\xff\xfe"])
def test_off_contract_replies_are_malformed(body):
    assert isinstance(decode_reply(body), MalformedProposal)


def test_done_reply():
    assert decode_reply(b'{"done": {"rationale": "ok"}}') == Done("ok")

"""JSON-over-HTTP wire contract for policies that live in another process.

Request body, one POST per protocol turn::

    {"scr": <SCR document>, "task": <text>, "last_outcome": <StepOutcome> | null}

Response body: ``{"proposal": <SCR document>}`` or ``{"done": {"rationale": <text>}}``.
"""

from __future__ import annotations

import json
import logging
import threading
import time
import urllib.error
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Optional

from .engine import StepOutcome
from .errors import GatekeeperError, TransportFailure
from .policy import Decision, Done, Policy
from .scr import Scr, dumps_canonical, parse, parse_proposal
from .validation import MalformedProposal, Proposal

logger = logging.getLogger(__name__)

CONTENT_TYPE = "application/json"


def encode_turn(scr: Scr, task: str, last_outcome: Any) -> bytes:
    return dumps_canonical({
        "scr": scr.to_json(),
        "task": task,
        "last_outcome": last_outcome.to_json() if last_outcome is not None else None,
    })


def decode_reply(body: bytes) -> Decision:
    """Turn a response body into a decision; anything off-contract is malformed."""
    text = body.decode("utf-8", errors="replace")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        return MalformedProposal(text, f"reply is not JSON: {exc}")
    if not isinstance(obj, dict) or len(obj) != 1:
        return MalformedProposal(text, "reply must have exactly one of 'proposal' or 'done'")
    if "done" in obj:
        body_ = obj["done"]
        if isinstance(body_, dict) and isinstance(body_.get("rationale", ""), str):
            return Done(body_.get("rationale", ""))
        return MalformedProposal(text, "done must be {rationale: text}")
    if "proposal" in obj:
        try:
            return Proposal(parse_proposal(obj["proposal"]))
        except GatekeeperError as exc:
            return MalformedProposal(text, str(exc))
    return MalformedProposal(text, "reply must have exactly one of 'proposal' or 'done'")


class RemotePolicy:
    """Forwards each turn to an HTTP endpoint.

    Connection failures and non-2xx statuses are retried ``retries`` times
    with a fixed ``backoff``; then TransportFailure is raised and the episode
    aborts.
    """

    def __init__(self, endpoint: str, retries: int = 2, timeout: float = 30.0,
                 backoff: float = 0.0) -> None:
        self.endpoint = endpoint
        self.retries = retries
        self.timeout = timeout
        self.backoff = backoff

    def decide(self, scr: Scr, task: str, last_outcome: Any = None) -> Decision:
        payload = encode_turn(scr, task, last_outcome)
        last_error: Optional[Exception] = None
        for attempt in range(self.retries + 1):
            req = urllib.request.Request(
                self.endpoint, data=payload, method="POST",
                headers={"Content-Type": CONTENT_TYPE},
            )
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    return decode_reply(resp.read())
            except (urllib.error.URLError, OSError) as exc:
                last_error = exc
                logger.warning("policy endpoint %s failed (attempt %d): %s",
                               self.endpoint, attempt + 1, exc)
                if self.backoff:
                    time.sleep(self.backoff)
        raise TransportFailure(f"{self.endpoint}: {last_error}")


def remote_policy(endpoint: str, retries: int = 2) -> RemotePolicy:
    return RemotePolicy(endpoint, retries=retries)


class PolicyServer:
    """Serves a local policy over the wire contract; mostly for tests and demos.

    The served policy sees a parsed document, so it behaves exactly as it
    would in-process.
    """

    def __init__(self, policy: Policy, host: str = "127.0.0.1", port: int = 0) -> None:
        self.policy = policy
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self) -> None:  # noqa: N802
                length = int(self.headers.get("Content-Length", 0))
                turn = json.loads(self.rfile.read(length))
                last = turn["last_outcome"]
                decision = outer.policy.decide(parse(turn["scr"]), turn["task"],
                                               StepOutcome.from_json(last) if last else None)
                if isinstance(decision, Done):
                    body = dumps_canonical(decision.to_json())
                elif isinstance(decision, MalformedProposal):
                    body = decision.raw.encode("utf-8")
                else:
                    body = dumps_canonical({"proposal": decision.scr.to_json()})
                self.send_response(200)
                self.send_header("Content-Type", CONTENT_TYPE)
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def log_message(self, format: str, *args: Any) -> None:
                logger.debug(format, *args)

        self.httpd = ThreadingHTTPServer((host, port), Handler)
        self._thread: Optional[threading.Thread] = None

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}/"

    def __enter__(self) -> PolicyServer:
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def __exit__(self, *exc: Any) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()


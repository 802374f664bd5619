#!/usr/bin/env python3
"""
lm_scoring_client.py
────────────────────
Wire protocol for querying any masked language model, plus the client and
the deterministic mock scorers used for hermetic runs.

Messages are single-line JSON objects:

  MaskScoreRequest      {"id", "tokens", "mask_indices"}
  MaskScoreResponse     {"id", "logprobs": [{"index", "logprob"}, ...]}
  NextSentenceRequest   {"id", "context", "continuation"}
  NextSentenceResponse  {"id", "score"}

A masked request with several indices means: each index masked on its own,
all other tokens visible. Transports: HTTP POST to /score_masked and
/score_next, or newline-delimited JSON over a child process' stdin/stdout.

Run as a script to serve a mock:
    python lm_scoring_client.py mock:uniform:1000            (stdio)
    python lm_scoring_client.py mock:overlap --http 8765     (HTTP)
"""

import argparse
import json
import logging
import math
import shlex
import subprocess
import sys
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import requests

import settings

logger = logging.getLogger(__name__)

# =============================================================================
# CONFIG & CONSTANTS
# =============================================================================

ROUTE_MASKED = "/score_masked"
ROUTE_NEXT = "/score_next"

MOCK_KINDS = ("uniform", "table", "overlap")
DEFAULT_MOCK_VOCAB = 1000

# Seconds to wait for a child process to exit on close().
SUBPROCESS_EXIT_WAIT = 5.0


# =============================================================================
# ERRORS
# =============================================================================

class InvalidRequestError(ValueError):
    """Request violates its own preconditions; never sent."""


class ScoringError(RuntimeError):
    pass


class ProtocolError(ScoringError):
    """Malformed or mismatched message. Not retried."""


class TransportError(ScoringError):
    """Connection / process failure. Retried up to the configured bound."""


# =============================================================================
# MESSAGES
# =============================================================================

@dataclass(frozen=True)
class MaskScoreRequest:
    id: str
    tokens: List[str]
    mask_indices: List[int]

    def validate(self) -> None:
        if not isinstance(self.id, str) or not self.id:
            raise InvalidRequestError("request id must be a non-empty string")
        if not all(isinstance(t, str) for t in self.tokens):
            raise InvalidRequestError(f"{self.id}: tokens must be strings")
        if not self.mask_indices:
            raise InvalidRequestError(f"{self.id}: mask_indices must not be empty")
        prev = -1
        for i in self.mask_indices:
            if isinstance(i, bool) or not isinstance(i, int):
                raise InvalidRequestError(f"{self.id}: mask index {i!r} is not an integer")
            if not 0 <= i < len(self.tokens):
                raise InvalidRequestError(
                    f"{self.id}: mask index {i} out of bounds for {len(self.tokens)} tokens"
                )
            if i <= prev:
                raise InvalidRequestError(f"{self.id}: mask_indices must be strictly increasing")
            prev = i

    def to_wire(self) -> Dict[str, Any]:
        return {"id": self.id, "tokens": list(self.tokens), "mask_indices": list(self.mask_indices)}


@dataclass(frozen=True)
class TokenLogprob:
    index: int
    logprob: float


@dataclass(frozen=True)
class MaskScoreResponse:
    id: str
    logprobs: List[TokenLogprob]

    def to_wire(self) -> Dict[str, Any]:
        return {"id": self.id, "logprobs": [{"index": t.index, "logprob": t.logprob} for t in self.logprobs]}

    def total(self) -> float:
        return math.fsum(t.logprob for t in self.logprobs)


@dataclass(frozen=True)
class NextSentenceRequest:
    id: str
    context: List[str]
    continuation: List[str]

    def validate(self) -> None:
        if not isinstance(self.id, str) or not self.id:
            raise InvalidRequestError("request id must be a non-empty string")
        if not all(isinstance(t, str) for t in list(self.context) + list(self.continuation)):
            raise InvalidRequestError(f"{self.id}: context and continuation must be token strings")

    def to_wire(self) -> Dict[str, Any]:
        return {"id": self.id, "context": list(self.context), "continuation": list(self.continuation)}


@dataclass(frozen=True)
class NextSentenceResponse:
    id: str
    score: float

    def to_wire(self) -> Dict[str, Any]:
        return {"id": self.id, "score": self.score}


Message = Union[MaskScoreRequest, MaskScoreResponse, NextSentenceRequest, NextSentenceResponse]


def encode_message(msg: Message) -> str:
    try:
        return json.dumps(msg.to_wire(), ensure_ascii=False, separators=(",", ":"), allow_nan=False)
    except ValueError as e:
        raise ProtocolError(f"{msg.id}: cannot encode non-finite value ({e})")


def _finite(x: Any, what: str) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
        raise ProtocolError(f"{what} must be a finite number, got {x!r}")
    return float(x)


def decode_message(line: str) -> Message:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ProtocolError(f"not a JSON object: {e}")
    if not isinstance(obj, dict) or not isinstance(obj.get("id"), str):
        raise ProtocolError("message must be an object with a string 'id'")

    keys = set(obj)
    msg_id = obj["id"]
    if "error" in keys:
        raise ProtocolError(f"{msg_id}: scorer reported an error: {obj['error']}")
    if keys == {"id", "tokens", "mask_indices"}:
        return MaskScoreRequest(id=msg_id, tokens=list(obj["tokens"]), mask_indices=list(obj["mask_indices"]))
    if keys == {"id", "logprobs"}:
        entries = obj["logprobs"]
        if not isinstance(entries, list):
            raise ProtocolError(f"{msg_id}: logprobs must be a list")
        out = []
        for e in entries:
            if not isinstance(e, dict) or set(e) != {"index", "logprob"} or isinstance(e["index"], bool) \
                    or not isinstance(e["index"], int):
                raise ProtocolError(f"{msg_id}: malformed logprob entry {e!r}")
            out.append(TokenLogprob(index=e["index"], logprob=_finite(e["logprob"], f"{msg_id} logprob")))
        return MaskScoreResponse(id=msg_id, logprobs=out)
    if keys == {"id", "context", "continuation"}:
        return NextSentenceRequest(id=msg_id, context=list(obj["context"]), continuation=list(obj["continuation"]))
    if keys == {"id", "score"}:
        return NextSentenceResponse(id=msg_id, score=_finite(obj["score"], f"{msg_id} score"))
    raise ProtocolError(f"{msg_id}: unrecognised message fields {sorted(keys)}")


def _error_line(msg_id: str, error: str) -> str:
    return json.dumps({"id": msg_id, "error": error}, ensure_ascii=False, separators=(",", ":"))


# =============================================================================
# MOCK SCORERS
# =============================================================================

class MockScorer:
    """
    Deterministic in-process scorer speaking the wire format byte for byte.

    uniform  every masked token has logprob -ln(vocab_size); next-sentence score 0
    table    logprob = ln P(token) (+ sentence_bonus for trigger tokens present);
             next-sentence score = mean continuation logprob (+ bonus)
    overlap  masked as uniform; next-sentence score = continuation tokens seen in context
    """

    def __init__(self, kind: str = "uniform", vocab_size: int = DEFAULT_MOCK_VOCAB,
                 token_probs: Optional[Dict[str, float]] = None, default_prob: Optional[float] = None,
                 sentence_bonus: Optional[Dict[str, float]] = None, delay: float = 0.0):
        if kind not in MOCK_KINDS:
            raise ValueError(f"unknown mock kind {kind!r}; expected one of {MOCK_KINDS}")
        if vocab_size < 1:
            raise ValueError(f"vocab_size must be >= 1, got {vocab_size}")
        self.kind = kind
        self.vocab_size = int(vocab_size)
        self.token_probs = dict(token_probs or {})
        self.default_prob = float(default_prob) if default_prob is not None else 1.0 / self.vocab_size
        self.sentence_bonus = dict(sentence_bonus or {})
        self.delay = float(delay)
        for tok, p in list(self.token_probs.items()) + [("<default>", self.default_prob)]:
            if not 0.0 < p <= 1.0:
                raise ValueError(f"probability for {tok!r} must be in (0, 1], got {p}")

        self._lock = threading.Lock()
        self.calls = 0
        self.in_flight = 0
        self.max_in_flight = 0

    # --- scoring rules ------------------------------------------------------

    def _bonus(self, tokens: Sequence[str]) -> float:
        present = set(tokens)
        return math.fsum(b for t, b in self.sentence_bonus.items() if t in present)

    def token_logprob(self, tokens: Sequence[str], i: int) -> float:
        if self.kind == "table":
            return math.log(self.token_probs.get(tokens[i], self.default_prob)) + self._bonus(tokens)
        return -math.log(self.vocab_size)

    def next_score(self, context: Sequence[str], continuation: Sequence[str]) -> float:
        if self.kind == "overlap":
            seen = set(context)
            return float(sum(1 for t in continuation if t in seen))
        if self.kind == "table":
            if not continuation:
                return 0.0
            lp = math.fsum(math.log(self.token_probs.get(t, self.default_prob)) for t in continuation)
            return lp / len(continuation) + self._bonus(continuation)
        return 0.0

    def handle(self, msg: Message) -> Message:
        if isinstance(msg, MaskScoreRequest):
            msg.validate()
            return MaskScoreResponse(
                id=msg.id,
                logprobs=[TokenLogprob(index=i, logprob=self.token_logprob(msg.tokens, i)) for i in msg.mask_indices],
            )
        if isinstance(msg, NextSentenceRequest):
            msg.validate()
            return NextSentenceResponse(id=msg.id, score=self.next_score(msg.context, msg.continuation))
        raise ProtocolError(f"{msg.id}: a scorer only answers requests")

    # --- wire level ---------------------------------------------------------

    def respond(self, line: str, route: Optional[str] = None) -> str:
        """One request line in, one response (or error) line out."""
        msg_id = "?"
        try:
            msg = decode_message(line)
            msg_id = msg.id
            if route == ROUTE_MASKED and not isinstance(msg, MaskScoreRequest):
                raise ProtocolError(f"{msg_id}: {ROUTE_MASKED} expects a masked-scoring request")
            if route == ROUTE_NEXT and not isinstance(msg, NextSentenceRequest):
                raise ProtocolError(f"{msg_id}: {ROUTE_NEXT} expects a next-sentence request")
            return encode_message(self.handle(msg))
        except (ProtocolError, InvalidRequestError) as e:
            return _error_line(msg_id, str(e))

    def exchange(self, route: str, msg_id: str, line: str) -> str:
        with self._lock:
            self.calls += 1
            self.in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)
        try:
            if self.delay:
                time.sleep(self.delay)
            return self.respond(line, route)
        finally:
            with self._lock:
                self.in_flight -= 1

    def close(self) -> None:
        pass


def mock_scorer(spec: Union[str, Dict[str, Any]]) -> MockScorer:
    """
    Build a mock from a dict ({"kind": "table", "token_probs": {...}, ...}) or a
    string: "uniform:N", "table:PATH.json", "overlap" / "overlap:N"
    (a leading "mock:" is accepted).
    """
    if isinstance(spec, dict):
        opts = dict(spec)
        return MockScorer(kind=opts.pop("kind", "uniform"), **opts)

    text = spec[len("mock:"):] if spec.startswith("mock:") else spec
    kind, _, arg = text.partition(":")
    if kind == "uniform":
        return MockScorer("uniform", vocab_size=int(arg) if arg else DEFAULT_MOCK_VOCAB)
    if kind == "overlap":
        return MockScorer("overlap", vocab_size=int(arg) if arg else DEFAULT_MOCK_VOCAB)
    if kind == "table":
        if not arg:
            raise ValueError("table mock needs a JSON file: mock:table:PATH")
        with open(Path(arg), "r", encoding="utf-8") as f:
            opts = json.load(f)
        opts.pop("kind", None)
        return MockScorer("table", **opts)
    raise ValueError(f"unknown mock scorer spec {spec!r}")


# =============================================================================
# TRANSPORTS
# =============================================================================

class HttpEndpoint:
    """POSTs one JSON line to <base>/score_masked or <base>/score_next."""

    def __init__(self, base_url: str, timeout: float = settings.TIMEOUT):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self._local = threading.local()
        # every thread's Session, so close() reaches all of them
        self._sessions: List[requests.Session] = []
        self._sessions_lock = threading.Lock()

    def _session(self) -> requests.Session:
        s = getattr(self._local, "session", None)
        if s is None:
            s = requests.Session()
            self._local.session = s
            with self._sessions_lock:
                self._sessions.append(s)
        return s

    def exchange(self, route: str, msg_id: str, line: str) -> str:
        try:
            r = self._session().post(
                self.base_url + route,
                data=(line + "\n").encode("utf-8"),
                headers={"Content-Type": "application/x-ndjson"},
                timeout=self.timeout,
            )
        except requests.RequestException as e:
            raise TransportError(f"{msg_id}: {e}")
        if r.status_code >= 500:
            raise TransportError(f"{msg_id}: HTTP {r.status_code} from {self.base_url}{route}")
        if r.status_code != 200:
            raise ProtocolError(f"{msg_id}: HTTP {r.status_code} from {self.base_url}{route}")
        lines = [ln for ln in r.content.decode("utf-8").splitlines() if ln.strip()]
        if len(lines) != 1:
            raise ProtocolError(f"{msg_id}: expected one response line, got {len(lines)}")
        return lines[0]

    def close(self) -> None:
        with self._sessions_lock:
            sessions, self._sessions = self._sessions, []
        for s in sessions:
            s.close()
        self._local = threading.local()


class SubprocessEndpoint:
    """
    Talks to a child process over stdin/stdout, one JSON object per line.
    Responses may arrive in any order and are matched by id.
    """

    def __init__(self, argv: Sequence[str], timeout: float = settings.TIMEOUT):
        self.argv = list(argv)
        self.timeout = timeout
        try:
            self.proc = subprocess.Popen(
                self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True, encoding="utf-8", bufsize=1,
            )
        except OSError as e:
            raise TransportError(f"cannot start scorer {self.argv!r}: {e}")
        self._write_lock = threading.Lock()
        self._pending: Dict[str, Future] = {}
        self._pending_lock = threading.Lock()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        for line in self.proc.stdout:
            if not line.strip():
                continue
            try:
                msg_id = json.loads(line).get("id")
            except (json.JSONDecodeError, AttributeError):
                logger.warning("[SCORE] WARN: unparseable line from scorer: %r", line[:200])
                continue
            with self._pending_lock:
                fut = self._pending.pop(msg_id, None)
            if fut is None:
                logger.warning("[SCORE] WARN: response for unknown id %r", msg_id)
                continue
            fut.set_result(line.rstrip("\r\n"))
        with self._pending_lock:
            pending, self._pending = self._pending, {}
        for fut in pending.values():
            fut.set_exception(TransportError("scorer process closed its output"))

    def exchange(self, route: str, msg_id: str, line: str) -> str:
        fut: Future = Future()
        with self._pending_lock:
            if msg_id in self._pending:
                raise InvalidRequestError(f"{msg_id}: a request with this id is already in flight")
            self._pending[msg_id] = fut
        try:
            with self._write_lock:
                self.proc.stdin.write(line + "\n")
                self.proc.stdin.flush()
        except (OSError, ValueError) as e:
            with self._pending_lock:
                self._pending.pop(msg_id, None)
            raise TransportError(f"{msg_id}: cannot write to scorer: {e}")
        try:
            return fut.result(timeout=self.timeout)
        except FutureTimeout:
            with self._pending_lock:
                self._pending.pop(msg_id, None)
            raise TransportError(f"{msg_id}: no response within {self.timeout}s")

    def close(self) -> None:
        try:
            self.proc.stdin.close()
        except OSError:
            pass
        try:
            self.proc.wait(timeout=SUBPROCESS_EXIT_WAIT)
        except subprocess.TimeoutExpired:
            self.proc.kill()


# =============================================================================
# CLIENT
# =============================================================================

class ScoringClient:
    """
    Validates requests, enforces the in-flight limit, retries transport
    failures with linear backoff and checks every response against its request.
    """

    def __init__(self, endpoint, max_in_flight: int = settings.MAX_IN_FLIGHT,
                 retries: int = settings.RETRIES, backoff: float = settings.RETRY_BACKOFF):
        if max_in_flight < 1:
            raise ValueError(f"max_in_flight must be >= 1, got {max_in_flight}")
        self.endpoint = endpoint
        self.max_in_flight = int(max_in_flight)
        self.retries = max(0, int(retries))
        self.backoff = float(backoff)
        self._slots = threading.BoundedSemaphore(self.max_in_flight)

    def _call(self, route: str, request) -> str:
        line = encode_message(request)
        attempt = 0
        while True:
            with self._slots:
                try:
                    return self.endpoint.exchange(route, request.id, line)
                except TransportError as e:
                    if attempt >= self.retries:
                        raise
                    err = e
            attempt += 1
            logger.warning("[SCORE] WARN: %s (retry %d/%d)", err, attempt, self.retries)
            time.sleep(self.backoff * attempt)

    def score_masked(self, request: MaskScoreRequest) -> MaskScoreResponse:
        request.validate()
        resp = decode_message(self._call(ROUTE_MASKED, request))
        if not isinstance(resp, MaskScoreResponse):
            raise ProtocolError(f"{request.id}: expected a masked-scoring response")
        if resp.id != request.id:
            raise ProtocolError(f"response id {resp.id!r} does not match request id {request.id!r}")
        got = [t.index for t in resp.logprobs]
        if got != list(request.mask_indices):
            raise ProtocolError(f"{request.id}: response indices {got} != requested {list(request.mask_indices)}")
        return resp

    def score_next_sentence(self, request: NextSentenceRequest) -> NextSentenceResponse:
        request.validate()
        resp = decode_message(self._call(ROUTE_NEXT, request))
        if not isinstance(resp, NextSentenceResponse):
            raise ProtocolError(f"{request.id}: expected a next-sentence response")
        if resp.id != request.id:
            raise ProtocolError(f"response id {resp.id!r} does not match request id {request.id!r}")
        return resp

    def map(self, fn: Callable, items: Sequence) -> List:
        """Apply fn concurrently (bounded by max_in_flight); results keep input order."""
        items = list(items)
        if len(items) <= 1 or self.max_in_flight == 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as ex:
            return list(ex.map(fn, items))

    def score_masked_many(self, requests_: Sequence[MaskScoreRequest]) -> List[MaskScoreResponse]:
        return self.map(self.score_masked, requests_)

    def score_next_many(self, requests_: Sequence[NextSentenceRequest]) -> List[NextSentenceResponse]:
        return self.map(self.score_next_sentence, requests_)

    def close(self) -> None:
        self.endpoint.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def score_masked(client: ScoringClient, request: MaskScoreRequest) -> MaskScoreResponse:
    return client.score_masked(request)


def score_next_sentence(client: ScoringClient, request: NextSentenceRequest) -> NextSentenceResponse:
    return client.score_next_sentence(request)


def open_scorer(spec: str = None, max_in_flight: int = None, retries: int = None,
                timeout: float = None) -> ScoringClient:
    """
    "http://host:port"  → HTTP transport
    "cmd:<command>"     → child process over stdio
    "mock:uniform:N" / "mock:table:PATH" / "mock:overlap" → in-process mock
    """
    spec = spec or settings.SCORER
    timeout = settings.TIMEOUT if timeout is None else timeout
    if spec.startswith(("http://", "https://")):
        endpoint = HttpEndpoint(spec, timeout=timeout)
    elif spec.startswith("cmd:"):
        argv = shlex.split(spec[len("cmd:"):])
        if not argv:
            raise ValueError("cmd: scorer needs a command")
        endpoint = SubprocessEndpoint(argv, timeout=timeout)
    elif spec.startswith("mock:"):
        endpoint = mock_scorer(spec)
    else:
        raise ValueError(f"unrecognised scorer {spec!r}; use http://..., cmd:... or mock:...")
    logger.info("[SCORE] scorer %s", spec)
    return ScoringClient(
        endpoint,
        max_in_flight=settings.MAX_IN_FLIGHT if max_in_flight is None else max_in_flight,
        retries=settings.RETRIES if retries is None else retries,
    )


# =============================================================================
# MOCK SERVERS
# =============================================================================

def serve_stdio(scorer: MockScorer, stdin=None, stdout=None) -> None:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        if not line.strip():
            continue
        stdout.write(scorer.respond(line) + "\n")
        stdout.flush()


def make_http_server(scorer: MockScorer, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    class _Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            if self.path not in (ROUTE_MASKED, ROUTE_NEXT):
                self.send_error(404, "unknown route")
                return
            length = int(self.headers.get("Content-Length", "0"))
            body = self.rfile.read(length).decode("utf-8")
            out = "".join(scorer.respond(ln, self.path) + "\n" for ln in body.splitlines() if ln.strip())
            data = out.encode("utf-8")
            self.send_response(200)
            self.send_header("Content-Type", "application/x-ndjson")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, fmt, *args):
            logger.debug("[SERVE] " + fmt, *args)

    return ThreadingHTTPServer((host, port), _Handler)


def main():
    parser = argparse.ArgumentParser(description="Serve a mock scorer over stdio or HTTP")
    parser.add_argument("spec", help="mock:uniform:N | mock:table:PATH | mock:overlap")
    parser.add_argument("--http", type=int, default=None, metavar="PORT", help="serve HTTP instead of stdio")
    parser.add_argument("--host", default="127.0.0.1")
    args = parser.parse_args()

    scorer = mock_scorer(args.spec)
    if args.http is None:
        serve_stdio(scorer)
        return
    settings.setup_logging()
    server = make_http_server(scorer, args.host, args.http)
    logger.info("[SERVE] %s on http://%s:%d", args.spec, args.host, server.server_address[1])
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


if __name__ == "__main__":
    main()

"""Prompt rendering and generation backends.

Three backends sit behind one call, :func:`generate`:

``stub``
    Offline and deterministic. The SHA-256 of the request decides the output:
    an even digest yields a complete test method, an odd one the same method
    cut short before its closing brace.
``command``
    Request on stdin, response on stdout; a nonzero exit is a backend error.
``http``
    JSON POST with optional bearer token read from an environment variable.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import subprocess
import threading
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence, Union

from .flat import FM, TCS, _DECODE_RE

log = logging.getLogger(__name__)

SYSTEM_TEMPLATE = "You are a unit test case generator with meaningful assertions for Java project: {prj}."
USER_TEMPLATE = (
    "Given a focal method surrounded by ???, generate unit test case methods that cover "
    "maximum line coverage. Only create new tests if they cover new lines of code. Only "
    "generate the Java code part of test methods. Use [TCS] to separate the multiple test "
    "cases. Input text: ???{method}???"
)
FORMAT_INSTRUCTION = (
    "Remove all comments (e.g. line starts with // and surrounded by /* and */), NL "
    "description and @Test annotations. New lines should be substituted with [EOL]."
)

_PLACEHOLDER = re.compile(r"\{(prj|method)\}")

BACKEND_KINDS = ("stub", "command", "http")


class BackendError(RuntimeError):
    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class BackendTimeout(BackendError):
    pass


@dataclass(frozen=True)
class ChatPrompt:
    messages: tuple[tuple[str, str], ...]

    def as_json(self) -> list[dict[str, str]]:
        return [{"role": r, "content": c} for r, c in self.messages]

    def serialize(self) -> str:
        return json.dumps(self.as_json(), ensure_ascii=False, sort_keys=True)


Request = Union[ChatPrompt, str]


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "stub"
    endpoint: str = ""
    command: str = ""
    timeout: float = 60.0
    max_output_tokens: int = 256
    retries: int = 2
    backoff: float = 0.5
    rate: float | None = None  # requests/second; http defaults to 1.0
    token_env: str = "TESTGEN_API_TOKEN"
    concurrency: int = 1
    mode: str = ""  # "flat" (one request per line) or "chat" (one per method)
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")
        if self.mode not in ("", "flat", "chat"):
            raise ValueError(f"unknown request mode {self.mode!r}")

    @property
    def request_mode(self) -> str:
        if self.mode:
            return self.mode
        return "chat" if self.kind == "http" else "flat"

    @property
    def requests_per_second(self) -> float | None:
        if self.rate is not None:
            return self.rate if self.rate > 0 else None
        return 1.0 if self.kind == "http" else None


@dataclass(frozen=True)
class GenerationResponse:
    raw_text: str
    backend: str
    latency: float
    request_hash: str = ""


def render_chat_prompt(project_name: str, focal_method_with_context: str) -> ChatPrompt:
    """The three-message chat prompt with placeholders filled in."""
    if not focal_method_with_context:
        raise ValueError("focal method text must be non-empty")
    if not project_name:
        log.warning("rendering prompt with an empty project name")
    values = {"prj": project_name, "method": focal_method_with_context}

    def fill(template: str) -> str:
        # single pass, so braces inside the method text are never re-expanded
        return _PLACEHOLDER.sub(lambda m: values[m.group(1)], template)

    return ChatPrompt((
        ("system", fill(SYSTEM_TEMPLATE)),
        ("user", fill(USER_TEMPLATE)),
        ("user", FORMAT_INSTRUCTION),
    ))


def strip_target_line(encoded_input: str) -> str:
    """Drop a leading ``<LINE>`` field, keeping the method and its context."""
    for m in _DECODE_RE.finditer(encoded_input):
        if m.group(2) == FM and len(m.group(1)) % 2 == 0:
            return encoded_input[m.end() - len(FM):]
    return encoded_input


def request_text(request: Request) -> str:
    return request.serialize() if isinstance(request, ChatPrompt) else request


def request_hash(request: Request) -> str:
    return hashlib.sha256(request_text(request).encode("utf-8")).hexdigest()


def stub_is_complete(request: Request) -> bool:
    """Whether the stub backend answers ``request`` with a complete test."""
    return int(request_hash(request), 16) % 2 == 0


def stub_response(request: Request) -> str:
    digest = request_hash(request)
    lines = [
        f"public void testGenerated{digest[:8]}() {{",
        f'    String token = "{digest[8:16]}";',
        "    assertNotNull(token);",
    ]
    if int(digest, 16) % 2 == 0:
        lines.append("}")
    return "[EOL]".join(lines)


class TokenBucket:
    """Blocking token bucket; capacity one request."""

    def __init__(self, rate: float):
        self.interval = 1.0 / rate
        self._next = 0.0
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            now = time.monotonic()
            wait = self._next - now
            self._next = max(now, self._next) + self.interval
        if wait > 0:
            time.sleep(wait)


def _call_command(cfg: BackendConfig, text: str) -> str:
    try:
        proc = subprocess.run(
            cfg.command, shell=True, input=text, capture_output=True,
            text=True, encoding="utf-8", timeout=cfg.timeout,
        )
    except subprocess.TimeoutExpired:
        raise BackendTimeout(f"command backend exceeded {cfg.timeout}s") from None
    if proc.returncode != 0:
        raise BackendError(f"command backend exited {proc.returncode}: {proc.stderr.strip()[:200]}", proc.returncode)
    return proc.stdout


def _extract_text(payload: Any) -> str:
    if isinstance(payload, str):
        return payload
    if isinstance(payload, dict):
        for key in ("text", "output", "completion", "content"):
            if isinstance(payload.get(key), str):
                return payload[key]
        choices = payload.get("choices")
        if isinstance(choices, list) and choices:
            first = choices[0]
            if isinstance(first, dict):
                msg = first.get("message")
                if isinstance(msg, dict) and isinstance(msg.get("content"), str):
                    return msg["content"]
                if isinstance(first.get("text"), str):
                    return first["text"]
    raise BackendError("unrecognised response payload")


def _call_http(cfg: BackendConfig, request: Request) -> str:
    body: dict[str, Any] = dict(cfg.params)
    if isinstance(request, ChatPrompt):
        body["messages"] = request.as_json()
    else:
        body["input"] = request
    body["max_tokens"] = cfg.max_output_tokens
    headers = {"Content-Type": "application/json"}
    token = os.environ.get(cfg.token_env) if cfg.token_env else None
    if token:
        headers["Authorization"] = f"Bearer {token}"
    req = urllib.request.Request(
        cfg.endpoint, data=json.dumps(body).encode("utf-8"), headers=headers, method="POST",
    )
    try:
        with urllib.request.urlopen(req, timeout=cfg.timeout) as resp:
            raw = resp.read().decode("utf-8")
    except urllib.error.HTTPError as exc:
        raise BackendError(f"http backend returned {exc.code}", exc.code) from None
    except TimeoutError:
        raise BackendTimeout(f"http backend exceeded {cfg.timeout}s") from None
    except urllib.error.URLError as exc:
        if isinstance(exc.reason, TimeoutError):
            raise BackendTimeout(f"http backend exceeded {cfg.timeout}s") from None
        raise BackendError(f"http backend unreachable: {exc.reason}") from None
    try:
        return _extract_text(json.loads(raw))
    except json.JSONDecodeError:
        return raw


_buckets: dict[tuple[str, float], TokenBucket] = {}
_buckets_lock = threading.Lock()


def _bucket_for(cfg: BackendConfig) -> TokenBucket | None:
    rps = cfg.requests_per_second
    if rps is None:
        return None
    key = (cfg.endpoint or cfg.command or cfg.kind, rps)
    with _buckets_lock:
        if key not in _buckets:
            _buckets[key] = TokenBucket(rps)
        return _buckets[key]


def generate(cfg: BackendConfig, request: Request) -> GenerationResponse:
    """Query the configured backend once, retrying on failure.

    Raises the last :class:`BackendError` when retries are exhausted.
    """
    digest = request_hash(request)
    bucket = _bucket_for(cfg)
    last: BackendError | None = None
    for attempt in range(cfg.retries + 1):
        if attempt and cfg.backoff > 0:
            time.sleep(cfg.backoff * 2 ** (attempt - 1))
        if bucket is not None:
            bucket.acquire()
        start = time.perf_counter()
        try:
            if cfg.kind == "stub":
                text = stub_response(request)
            elif cfg.kind == "command":
                text = _call_command(cfg, request_text(request))
            else:
                text = _call_http(cfg, request)
        except BackendError as exc:
            last = exc
            if cfg.kind == "http" and exc.status is not None and 400 <= exc.status < 500 and exc.status != 429:
                break  # client errors will not improve on retry
            log.warning("backend %s attempt %d failed: %s", cfg.kind, attempt + 1, exc)
            continue
        return GenerationResponse(text, cfg.kind, time.perf_counter() - start, digest)
    assert last is not None
    raise last


def split_candidates(raw_text: str) -> list[str]:
    """Split a response on ``[TCS]``; segments are trimmed, empty ones dropped."""
    return [seg.strip() for seg in raw_text.split(TCS) if seg.strip()]


def _load_log(path: Path) -> dict[str, dict]:
    done: dict[str, dict] = {}
    if not path.exists():
        return done
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            if raw.strip():
                rec = json.loads(raw)
                if rec.get("status") == "ok":
                    done[rec["id"]] = rec
    return done


def run_generation(
    cfg: BackendConfig,
    items: Sequence[tuple[str, Request]],
    log_path: str | Path,
) -> tuple[dict[str, GenerationResponse], dict[str, str]]:
    """Generate for every ``(item id, request)`` pair, logging each result.

    Every response is appended to ``log_path`` before anything else uses it.
    Items already answered in the log by the same backend kind for the same
    request hash are replayed from the log instead of re-querying. Failures are logged and skipped.
    Returns ``(responses, failures)`` keyed by item id.
    """
    log_path = Path(log_path)
    log_path.parent.mkdir(parents=True, exist_ok=True)
    previous = _load_log(log_path)
    lock = threading.Lock()
    responses: dict[str, GenerationResponse] = {}
    failures: dict[str, str] = {}

    def one(item: tuple[str, Request]) -> None:
        item_id, req = item
        digest = request_hash(req)
        prev = previous.get(item_id)
        if prev is not None and prev.get("request_hash") == digest and prev.get("backend") == cfg.kind:
            with lock:
                responses[item_id] = GenerationResponse(prev["response"], prev["backend"], prev["latency"], digest)
            return
        try:
            resp = generate(cfg, req)
            rec = {"id": item_id, "request_hash": digest, "status": "ok", "backend": resp.backend,
                   "latency": round(resp.latency, 6), "response": resp.raw_text}
        except BackendError as exc:
            resp = None
            rec = {"id": item_id, "request_hash": digest, "status": "error", "backend": cfg.kind,
                   "error": str(exc), "error_status": exc.status}
        with lock:
            with open(log_path, "a", encoding="utf-8", newline="\n") as fh:
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
            if resp is None:
                failures[item_id] = rec["error"]
            else:
                responses[item_id] = resp

    if cfg.concurrency > 1:
        with ThreadPoolExecutor(max_workers=cfg.concurrency) as pool:
            list(pool.map(one, items))
    else:
        for item in items:
            one(item)
    return responses, failures

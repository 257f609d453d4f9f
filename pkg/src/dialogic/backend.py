"""Text-completion backends: live OpenAI-compatible HTTP, replay, and mock.

The replay backend makes the whole pipeline deterministic: a transcript file
records (prompt digest, prompt, completion, params) as JSON lines, and replay
serves recorded completions bit-exact, keyed on the prompt digest.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import requests

API_KEY_ENV = "DIALOGIC_API_KEY"


class BackendError(RuntimeError):
    """Base class for completion failures."""


class RateLimitedError(BackendError):
    """The API rejected the request for rate reasons; retried with backoff."""


class BackendTimeout(BackendError):
    """No response within the configured timeout; retried with backoff."""


class ContextLengthExceeded(BackendError):
    """Prompt plus max_tokens exceed the model context; never retried."""


class UnknownPromptError(BackendError):
    """Replay transcript holds no completion for this prompt."""


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    max_tokens: int = 256
    temperature: float = 0.7
    top_p: float = 1.0
    frequency_penalty: float = 1.0
    stop: tuple[str, ...] = ()

    def __post_init__(self):
        if not 0 <= self.temperature <= 2 or not 0 <= self.top_p <= 2:
            raise ValueError("temperature and top_p must be in [0, 2]")

    def params(self) -> dict:
        return {
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
            "top_p": self.top_p,
            "frequency_penalty": self.frequency_penalty,
            "stop": list(self.stop),
        }


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def apply_stop(text: str, stop: Sequence[str]) -> str:
    """Truncate at the first stop sequence (stop string excluded), trim the tail."""
    cut = len(text)
    for s in stop:
        idx = text.find(s)
        if idx != -1:
            cut = min(cut, idx)
    return text[:cut].rstrip()


class CompletionBackend:
    """Interface: complete() is total — it returns text or raises a BackendError."""

    name = "backend"
    concurrency = 1
    context_budget: int | None = None

    def complete(self, req: CompletionRequest) -> str:
        raise NotImplementedError


class MockBackend(CompletionBackend):
    """Scripted backend for tests: a constant, a sequence, or a callable."""

    name = "mock"

    def __init__(self, script: str | Sequence[str] | Callable[[CompletionRequest], str]):
        self._lock = threading.Lock()
        if callable(script):
            self._fn = script
            self._queue = None
        elif isinstance(script, str):
            self._fn = lambda req: script
            self._queue = None
        else:
            self._fn = None
            self._queue = list(script)

    def complete(self, req: CompletionRequest) -> str:
        with self._lock:
            if self._queue is not None:
                if not self._queue:
                    raise BackendError("mock script exhausted")
                text = self._queue.pop(0)
            else:
                text = self._fn(req)
        return apply_stop(text, req.stop)


class ReplayBackend(CompletionBackend):
    """Serve completions recorded in a transcript file, keyed on prompt digest."""

    name = "replay"

    def __init__(self, transcript: str | Path):
        self.transcript = Path(transcript)
        self._completions: dict[str, str] = {}
        if not self.transcript.exists():
            raise FileNotFoundError(f"transcript not found: {self.transcript}")
        with open(self.transcript, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                    self._completions[record["sha256"]] = record["completion"]
                except (json.JSONDecodeError, KeyError) as exc:
                    raise BackendError(
                        f"{self.transcript}:{lineno}: bad transcript record ({exc})") from exc

    def __len__(self) -> int:
        return len(self._completions)

    def complete(self, req: CompletionRequest) -> str:
        digest = prompt_digest(req.prompt)
        try:
            return self._completions[digest]
        except KeyError:
            head = req.prompt[-120:].replace("\n", "\\n")
            raise UnknownPromptError(
                f"no recorded completion for prompt digest {digest[:12]}… (…{head})"
            ) from None


class RecordingBackend(CompletionBackend):
    """Decorator that logs every completion to a JSON-lines transcript."""

    def __init__(self, inner: CompletionBackend, sink: str | Path):
        self.inner = inner
        self.sink = Path(sink)
        self.name = f"record({inner.name})"
        self.concurrency = inner.concurrency
        self.context_budget = inner.context_budget
        self._lock = threading.Lock()

    def complete(self, req: CompletionRequest) -> str:
        completion = self.inner.complete(req)
        record = {
            "sha256": prompt_digest(req.prompt),
            "prompt": req.prompt,
            "completion": completion,
            "params": req.params(),
        }
        with self._lock, open(self.sink, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
        return completion


def record_transcript(backend: CompletionBackend, sink: str | Path) -> RecordingBackend:
    return RecordingBackend(backend, sink)


class _TokenBucket:
    """Simple thread-safe limiter: at most `rate` acquisitions per second."""

    def __init__(self, rate: float):
        self.rate = rate
        self.allowance = rate
        self.last = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self.allowance = min(self.rate, self.allowance + (now - self.last) * self.rate)
                self.last = now
                if self.allowance >= 1.0:
                    self.allowance -= 1.0
                    return
                wait = (1.0 - self.allowance) / self.rate
            time.sleep(wait)


@dataclass
class HttpBackendConfig:
    endpoint: str
    model: str
    api_key: str | None = None  # falls back to the DIALOGIC_API_KEY env var
    timeout: float = 60.0
    retries: int = 3
    concurrency: int = 4
    requests_per_second: float = 4.0
    context_budget: int = 4096
    extra_headers: dict[str, str] = field(default_factory=dict)


class HttpCompletionBackend(CompletionBackend):
    """POST to an OpenAI-compatible completions endpoint with retry/backoff."""

    name = "live"

    def __init__(self, config: HttpBackendConfig, session: requests.Session | None = None):
        self.config = config
        self.concurrency = config.concurrency
        self.context_budget = config.context_budget
        self._session = session or requests.Session()
        self._bucket = _TokenBucket(config.requests_per_second)
        self._slots = threading.Semaphore(config.concurrency)

    def _headers(self) -> dict[str, str]:
        key = self.config.api_key or os.environ.get(API_KEY_ENV, "")
        headers = {"Content-Type": "application/json"}
        if key:
            headers["Authorization"] = f"Bearer {key}"
        headers.update(self.config.extra_headers)
        return headers

    def _post_once(self, req: CompletionRequest) -> str:
        body = {"model": self.config.model, "prompt": req.prompt, **req.params()}
        try:
            response = self._session.post(
                self.config.endpoint, json=body, headers=self._headers(),
                timeout=self.config.timeout)
        except requests.Timeout as exc:
            raise BackendTimeout(f"no response within {self.config.timeout}s") from exc
        except requests.RequestException as exc:
            raise BackendError(f"request failed: {exc}") from exc
        if response.status_code == 429:
            raise RateLimitedError("rate limited (HTTP 429)")
        if response.status_code >= 500:
            raise RateLimitedError(f"server error (HTTP {response.status_code})")
        if response.status_code != 200:
            excerpt = response.text[:200]
            if "context" in excerpt.lower() and "length" in excerpt.lower():
                raise ContextLengthExceeded(excerpt)
            raise BackendError(f"HTTP {response.status_code}: {excerpt}")
        try:
            text = response.json()["choices"][0]["text"]
        except (ValueError, KeyError, IndexError) as exc:
            raise BackendError(f"malformed completion response: {response.text[:200]}") from exc
        return apply_stop(text, req.stop)

    def complete(self, req: CompletionRequest) -> str:
        with self._slots:
            delay = 0.5
            for attempt in range(self.config.retries + 1):
                self._bucket.acquire()
                try:
                    return self._post_once(req)
                except (RateLimitedError, BackendTimeout):
                    if attempt == self.config.retries:
                        raise
                    time.sleep(delay + random.uniform(0, delay / 2))
                    delay *= 2
        raise BackendError("unreachable")  # pragma: no cover

"""Uniform access to chat-completion backends.

One gateway wraps one backend (HTTP or scripted stub) and layers on:

* bounded retry with exponential backoff for transient failures
  (HTTP 429/5xx, timeouts, connection errors),
* a per-backend in-flight concurrency cap,
* an on-disk response cache keyed by (model, prompt text, temperature,
  run index), so re-running an experiment replays stored responses and
  issues zero network calls.

The run index is part of the cache key on purpose: each prompt is sampled
several times per experiment and the repeats must stay independent samples
rather than collapsing into one cached response.

Credentials come from ``AXEVAL_API_KEY_<BACKEND_ID>`` (backend id upper-cased,
non-alphanumerics mapped to ``_``).
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Protocol, Sequence
from urllib.parse import urlparse

import httpx

from .prompts import RenderedPrompt


class GatewayError(Exception):
    """Base class for backend access failures."""


class TransientBackendError(GatewayError):
    """Retryable failure: HTTP 429/5xx, timeout, or connection error."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class HttpStatusError(GatewayError):
    """Non-retryable HTTP failure (4xx other than 429)."""

    def __init__(self, status: int, body: str):
        super().__init__(f"HTTP {status}: {body[:200]}")
        self.status = status


class EmptyCompletionError(GatewayError):
    """The backend answered but the response carried no text content."""


class RetryExhaustedError(GatewayError):
    def __init__(self, attempts: int, last: Exception):
        super().__init__(f"gave up after {attempts} attempts: {last}")
        self.attempts = attempts
        self.last = last


class StubScriptError(GatewayError):
    """No scripted response matches the request, or a script ran dry."""


@dataclass
class ModelConfig:
    """Connection and decoding settings for one deployed model.

    ``temperature=None`` leaves sampling at the backend default; whatever is
    used is recorded in the run manifest.
    """

    backend_id: str
    model_name: str
    endpoint_url: str = ""
    temperature: float | None = None
    max_tokens: int = 512
    timeout: float = 60.0
    system_message: str = ""

    def __post_init__(self):
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be > 0")
        if self.temperature is not None and self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    @property
    def api_key_env(self) -> str:
        suffix = re.sub(r"[^A-Za-z0-9]", "_", self.backend_id).upper()
        return f"AXEVAL_API_KEY_{suffix}"

    def to_json(self) -> dict:
        return {
            "backend_id": self.backend_id,
            "model_name": self.model_name,
            "endpoint_url": self.endpoint_url,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "timeout": self.timeout,
            "system_message": self.system_message,
        }


@dataclass(frozen=True)
class CompletionRequest:
    prompt: RenderedPrompt
    model: ModelConfig
    run_index: int = 1

    def __post_init__(self):
        if self.run_index < 1:
            raise ValueError("run_index starts at 1")


@dataclass(frozen=True)
class CompletionResult:
    raw_text: str
    latency: float
    attempt_count: int
    from_cache: bool = False


class Backend(Protocol):
    def send(self, prompt_text: str, model: ModelConfig) -> str:
        """Issue one completion attempt and return the raw response text."""
        ...


def _default_request_builder(prompt_text: str, model: ModelConfig) -> dict:
    messages = []
    if model.system_message:
        messages.append({"role": "system", "content": model.system_message})
    messages.append({"role": "user", "content": prompt_text})
    payload: dict = {"model": model.model_name, "messages": messages, "max_tokens": model.max_tokens}
    if model.temperature is not None:
        payload["temperature"] = model.temperature
    return payload


def _default_response_extractor(body: dict) -> str | None:
    try:
        content = body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        return None
    return content if isinstance(content, str) else None


class HttpBackend:
    """Chat-completion backend speaking the common JSON wire format.

    ``request_builder`` / ``response_extractor`` are the adapter hooks for
    providers with a different JSON shape.
    """

    def __init__(
        self,
        request_builder: Callable[[str, ModelConfig], dict] | None = None,
        response_extractor: Callable[[dict], str | None] | None = None,
        client: httpx.Client | None = None,
    ):
        self._build = request_builder or _default_request_builder
        self._extract = response_extractor or _default_response_extractor
        self._client = client or httpx.Client()

    def send(self, prompt_text: str, model: ModelConfig) -> str:
        scheme = urlparse(model.endpoint_url).scheme
        if scheme not in ("http", "https"):
            raise GatewayError(f"endpoint_url is not a valid http(s) URL: {model.endpoint_url!r}")
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(model.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        try:
            response = self._client.post(
                model.endpoint_url,
                json=self._build(prompt_text, model),
                headers=headers,
                timeout=model.timeout,
            )
        except httpx.TimeoutException as exc:
            raise TransientBackendError(f"timeout: {exc}") from exc
        except httpx.TransportError as exc:
            raise TransientBackendError(f"transport error: {exc}") from exc

        if response.status_code == 429 or response.status_code >= 500:
            raise TransientBackendError(
                f"HTTP {response.status_code}", status=response.status_code
            )
        if response.status_code >= 400:
            raise HttpStatusError(response.status_code, response.text)

        try:
            body = response.json()
        except json.JSONDecodeError as exc:
            raise EmptyCompletionError(f"response is not JSON: {exc}") from exc
        text = self._extract(body)
        if text is None:
            raise EmptyCompletionError("response carries no text content")
        return text


@dataclass
class ScriptEntry:
    """One stub rule: substrings that must all appear, and the replies to serve.

    ``responses`` items may also be Exception instances (programmatic use only)
    to script transient failures.
    """

    contains: Sequence[str]
    responses: list
    cursor: int = field(default=0, compare=False)

    @classmethod
    def from_json(cls, obj: dict) -> "ScriptEntry":
        contains = obj.get("contains", "")
        if isinstance(contains, str):
            contains = [contains]
        responses = obj.get("responses")
        if not isinstance(responses, list) or not responses:
            raise ValueError("script entry needs a non-empty 'responses' list")
        return cls(contains=list(contains), responses=responses)


class StubBackend:
    """Deterministic scripted backend for offline runs and tests.

    Rules are checked in registration order; the first rule whose substrings
    all occur in the prompt wins, and its response sequence is consumed one
    item per call.
    """

    def __init__(self, entries: Sequence[ScriptEntry] | None = None):
        self._entries: list[ScriptEntry] = list(entries or [])
        self._lock = threading.Lock()
        self.calls = 0

    def register(self, entries: Sequence[ScriptEntry]) -> None:
        with self._lock:
            self._entries.extend(entries)

    @classmethod
    def from_script_file(cls, path: str | Path) -> "StubBackend":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(raw, list):
            raise ValueError("stub script must be a JSON array of entries")
        return cls([ScriptEntry.from_json(obj) for obj in raw])

    def send(self, prompt_text: str, model: ModelConfig) -> str:
        with self._lock:
            for entry in self._entries:
                if all(needle in prompt_text for needle in entry.contains):
                    if entry.cursor >= len(entry.responses):
                        raise StubScriptError(
                            f"script exhausted for matcher {list(entry.contains)!r} "
                            f"after {len(entry.responses)} responses"
                        )
                    response = entry.responses[entry.cursor]
                    entry.cursor += 1
                    self.calls += 1
                    if isinstance(response, Exception):
                        raise response
                    return response
        raise StubScriptError(
            "no scripted response matches the request "
            f"(prompt starts: {prompt_text[:80]!r})"
        )


def stub_register(backend: StubBackend, script: Sequence[ScriptEntry]) -> None:
    """Attach scripted responses to a stub backend (ordered, first match wins)."""
    backend.register(script)


class LlmGateway:
    """Retry, rate limiting, and caching around a single backend."""

    def __init__(
        self,
        backend: Backend,
        cache_dir: str | Path | None = None,
        max_attempts: int = 4,
        backoff_base: float = 0.5,
        backoff_cap: float = 30.0,
        max_in_flight: int = 4,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        self.backend = backend
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._cache_write_lock = threading.Lock()
        self.backend_calls = 0
        self._counter_lock = threading.Lock()

    # -- plain completion -------------------------------------------------

    def complete(self, request: CompletionRequest) -> CompletionResult:
        """Issue the request, retrying transient failures with backoff."""
        start = time.monotonic()
        last: Exception | None = None
        for attempt in range(1, self.max_attempts + 1):
            try:
                with self._slots:
                    with self._counter_lock:
                        self.backend_calls += 1
                    text = self.backend.send(request.prompt.text, request.model)
                return CompletionResult(
                    raw_text=text,
                    latency=time.monotonic() - start,
                    attempt_count=attempt,
                )
            except TransientBackendError as exc:
                last = exc
                if attempt == self.max_attempts:
                    break
                delay = min(self.backoff_base * (2 ** (attempt - 1)), self.backoff_cap)
                self._sleep(delay)
        raise RetryExhaustedError(self.max_attempts, last or GatewayError("unknown failure"))

    # -- caching ----------------------------------------------------------

    def cache_key(self, request: CompletionRequest) -> str:
        payload = json.dumps(
            [
                request.model.model_name,
                request.prompt.text,
                request.model.temperature,
                request.run_index,
            ],
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def _cache_path(self, key: str) -> Path:
        assert self.cache_dir is not None
        return self.cache_dir / f"{key}.json"

    def cached_complete(self, request: CompletionRequest) -> CompletionResult:
        """Serve from the cache when possible; persist the response on a miss.

        A corrupt cache entry counts as a miss and is overwritten.
        """
        if self.cache_dir is None:
            return self.complete(request)
        key = self.cache_key(request)
        path = self._cache_path(key)
        start = time.monotonic()
        if path.is_file():
            try:
                entry = json.loads(path.read_text(encoding="utf-8"))
                raw_text = entry["raw_text"]
                if not isinstance(raw_text, str):
                    raise ValueError("raw_text is not a string")
                return CompletionResult(
                    raw_text=raw_text,
                    latency=time.monotonic() - start,
                    attempt_count=1,
                    from_cache=True,
                )
            except (json.JSONDecodeError, KeyError, ValueError, OSError):
                pass  # fall through to a fresh completion
        result = self.complete(request)
        self._store(key, request, result.raw_text)
        return result

    def refresh(self, request: CompletionRequest) -> CompletionResult:
        """Drop any cached response and fetch a fresh one (used on re-query)."""
        if self.cache_dir is not None:
            path = self._cache_path(self.cache_key(request))
            with self._cache_write_lock:
                path.unlink(missing_ok=True)
        return self.cached_complete(request)

    def _store(self, key: str, request: CompletionRequest, raw_text: str) -> None:
        assert self.cache_dir is not None
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        entry = {
            "request_digest": key,
            "model_name": request.model.model_name,
            "raw_text": raw_text,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
        path = self._cache_path(key)
        tmp = path.with_suffix(".tmp")
        with self._cache_write_lock:
            tmp.write_text(json.dumps(entry, ensure_ascii=False), encoding="utf-8")
            os.replace(tmp, path)

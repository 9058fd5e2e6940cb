"""Completion providers with a content-addressed response cache.

Responsibilities:
- Describe completion requests as hashable value objects.
- Resolve requests against a live OpenAI-compatible chat endpoint, a
  deterministic scripted mock, or the on-disk cache.
- Retry transient live failures with capped exponential backoff.
- Count provider calls and cache hits so rerun tests can assert that a warm
  cache issues zero network calls.

The cache is content-addressed: one JSON file per request digest, written
atomically, so interrupted runs resume without re-spending completions.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .ioutil import atomic_write_text, canonical_json

log = logging.getLogger(__name__)


class BackendError(Exception):
    """Base error for completion providers."""


class MockMissError(BackendError):
    """Scripted mock has no entry for the request and fallback is disabled."""


class AuthMissingError(BackendError):
    """Live provider configured without credentials."""


class RateLimitedError(BackendError):
    """Provider kept rate-limiting after all retries."""


class NetworkFailureError(BackendError):
    """Provider unreachable or persistently failing after retries."""


@dataclass(frozen=True)
class CompletionRequest:
    model_id: str
    prompt: str
    temperature: float = 0.0
    sample_index: int = 0
    max_tokens: int = 512

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if self.sample_index < 0:
            raise ValueError("sample_index must be >= 0")
        if self.temperature == 0 and self.sample_index != 0:
            raise ValueError("temperature 0 requires sample_index 0 (deterministic cache)")


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    provider: str  # "live" | "mock" | "cache"
    latency_ms: int


def cache_key(provider_id: str, req: CompletionRequest) -> str:
    """Digest identifying a request tuple; any byte change changes the key."""
    payload = canonical_json(
        {
            "provider": provider_id,
            "model": req.model_id,
            "prompt": req.prompt,
            "temperature": req.temperature,
            "sample_index": req.sample_index,
        }
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


# --- deterministic fallback generator for the scripted mock ---

_FALLBACK_EXPERTS = (
    "Political Expert",
    "Social Media Expert",
    "Economic Expert",
    "Media Expert",
    "Linguistics Expert",
    "Public Policy Expert",
    "Ethics Expert",
    "Polling Expert",
)
_FALLBACK_LABELS = ("FAVOR", "AGAINST", "NEUTRAL", "NONE")


def _fallback_response(digest: str) -> str:
    """Template completion derived from the request digest.

    Produces a response both stage parsers understand: an ``Experts:`` line,
    a short per-expert discussion, and a ``Final Stance:`` line.  The choice
    of experts and label is a pure function of the digest, so fallback runs
    are reproducible across platforms.
    """
    seed = hashlib.sha256(digest.encode("ascii")).digest()
    picks: list[str] = []
    cursor = 0
    while len(picks) < 3:
        name = _FALLBACK_EXPERTS[seed[cursor] % len(_FALLBACK_EXPERTS)]
        cursor += 1
        if name not in picks:
            picks.append(name)
    label = _FALLBACK_LABELS[seed[cursor] % len(_FALLBACK_LABELS)]
    lines = [f"Experts: {picks[0]}; {picks[1]}; {picks[2]}"]
    for name in picks:
        lines.append(f"{name}: Reading the sentence, the wording points towards {label.lower()}.")
    lines.append(f"Final Stance: {label}")
    return "\n".join(lines)


class MockBackend:
    """Scripted completion provider resolving by exact request digest.

    Fixture files are JSONL records ``{"digest": ..., "text": ...}``.  With
    ``fallback=True`` a miss is answered by the deterministic template
    generator instead of raising, which lets property tests and the bundled
    mock pipeline run with arbitrary prompts and zero fixtures.
    """

    provider_id = "mock"

    def __init__(self, fixture_path: str | Path | None = None, fallback: bool = False):
        self.fallback = fallback
        self.calls = 0
        self._calls_lock = threading.Lock()
        self._fixture: dict[str, str] = {}
        if fixture_path is not None:
            with open(fixture_path, "r", encoding="utf-8") as handle:
                for line in handle:
                    line = line.strip()
                    if not line:
                        continue
                    row = json.loads(line)
                    self._fixture[row["digest"]] = row["text"]

    def complete(self, req: CompletionRequest) -> str:
        with self._calls_lock:
            self.calls += 1
        digest = cache_key(self.provider_id, req)
        if digest in self._fixture:
            return self._fixture[digest]
        if self.fallback:
            return _fallback_response(digest)
        raise MockMissError(f"no scripted response for digest {digest}")


def write_mock_fixture(path: str | Path, entries: dict[str, str]) -> None:
    """Persist digest → response-text pairs in the mock's fixture layout."""
    lines = [canonical_json({"digest": digest, "text": text}) for digest, text in sorted(entries.items())]
    atomic_write_text(path, "\n".join(lines) + "\n")


class LiveBackend:
    """OpenAI-compatible chat-completions client.

    Retries only transient failures (HTTP 429/5xx, connection errors) up to
    ``max_attempts`` with exponential backoff plus jitter; anything else
    surfaces immediately.
    """

    provider_id = "live"

    def __init__(
        self,
        base_url: str,
        api_key: str | None,
        timeout: float = 60.0,
        max_attempts: int = 5,
    ):
        if not api_key:
            raise AuthMissingError("live backend requires an API key")
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.calls = 0
        self._calls_lock = threading.Lock()
        self._rng = random.Random()
        # requests is only needed for live runs; keep the import local so the
        # mock pipeline has no network-capable dependency loaded.
        import requests

        self._requests = requests
        self._session = requests.Session()

    def complete(self, req: CompletionRequest) -> str:
        with self._calls_lock:
            self.calls += 1
        url = f"{self.base_url}/chat/completions"
        payload = {
            "model": req.model_id,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        headers = {"Authorization": f"Bearer {self.api_key}"}
        last_error: Exception | None = None
        rate_limited = False
        for attempt in range(self.max_attempts):
            if attempt:
                delay = min(2.0 ** attempt, 30.0) * (0.5 + self._rng.random() / 2)
                time.sleep(delay)
            try:
                response = self._session.post(url, json=payload, headers=headers, timeout=self.timeout)
            except self._requests.RequestException as exc:
                last_error = exc
                continue
            if response.status_code == 429:
                rate_limited = True
                last_error = BackendError("rate limited (HTTP 429)")
                continue
            if response.status_code >= 500:
                last_error = BackendError(f"server error (HTTP {response.status_code})")
                continue
            if response.status_code != 200:
                raise BackendError(f"completion request failed: HTTP {response.status_code}: {response.text[:200]}")
            try:
                text = response.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendError(f"malformed completion payload: {exc}")
            return text or ""
        if rate_limited:
            raise RateLimitedError(f"gave up after {self.max_attempts} attempts: {last_error}")
        raise NetworkFailureError(f"gave up after {self.max_attempts} attempts: {last_error}")


class ResponseCache:
    """Append-only, content-addressed cache: one JSON record per digest."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self._write_lock = threading.Lock()

    def _path(self, digest: str) -> Path:
        return self.directory / digest[:2] / f"{digest}.json"

    def get(self, digest: str) -> str | None:
        path = self._path(digest)
        if not path.exists():
            return None
        with open(path, "r", encoding="utf-8") as handle:
            record = json.load(handle)
        return record["text"]

    def put(self, digest: str, req: CompletionRequest, text: str) -> None:
        record = {
            "digest": digest,
            "model_id": req.model_id,
            "temperature": req.temperature,
            "sample_index": req.sample_index,
            "prompt_b64": base64.b64encode(req.prompt.encode("utf-8")).decode("ascii"),
            "text": text,
            "timestamp": int(time.time()),
        }
        with self._write_lock:
            atomic_write_text(self._path(digest), canonical_json(record) + "\n")


class CompletionClient:
    """Cache-fronted completion interface shared by all pipeline stages."""

    def __init__(self, provider, cache: ResponseCache | None = None, max_parallelism: int = 8):
        self.provider = provider
        self.cache = cache
        self.max_parallelism = max_parallelism
        self.cache_hits = 0
        self._stats_lock = threading.Lock()

    @property
    def provider_calls(self) -> int:
        return self.provider.calls

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        digest = cache_key(self.provider.provider_id, req)
        if self.cache is not None:
            cached = self.cache.get(digest)
            if cached is not None:
                with self._stats_lock:
                    self.cache_hits += 1
                return CompletionResponse(text=cached, provider="cache", latency_ms=0)
        started = time.monotonic()
        text = self.provider.complete(req)
        latency_ms = int((time.monotonic() - started) * 1000)
        if not text:
            raise BackendError("provider returned an empty completion")
        if self.cache is not None:
            self.cache.put(digest, req, text)
        return CompletionResponse(text=text, provider=self.provider.provider_id, latency_ms=latency_ms)

    def complete_batch(
        self, reqs: Sequence[CompletionRequest], parallelism: int = 1
    ) -> list[CompletionResponse | BackendError]:
        """Resolve requests concurrently; output ``i`` answers input ``i``.

        Per-item failures come back as error objects in place, so one bad
        request never aborts the batch.
        """
        if parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if parallelism > self.max_parallelism:
            raise ValueError(
                f"parallelism {parallelism} exceeds configured ceiling {self.max_parallelism}"
            )
        if not reqs:
            return []

        def run_one(req: CompletionRequest) -> CompletionResponse | BackendError:
            try:
                return self.complete(req)
            except BackendError as exc:
                return exc

        with ThreadPoolExecutor(max_workers=min(parallelism, len(reqs))) as pool:
            return list(pool.map(run_one, reqs))

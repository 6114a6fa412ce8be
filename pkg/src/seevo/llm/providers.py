"""Text-generation backends and the retrying, transcript-keeping client.

A provider turns one :class:`ChatRequest` into response text or raises
:class:`ProviderError` for a transient failure. :class:`LLMClient` wraps a
provider with the retry policy and appends every exchange to the run
transcript, in request order, so any run can be replayed.
"""

from __future__ import annotations

import json
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Protocol, Sequence

import httpx

from .offline import offline_mutator
from .prompts import Message

DEFAULT_TEMPERATURE = 1.0
DEFAULT_ATTEMPTS = 3


class ProviderError(RuntimeError):
    """A failed attempt that may succeed on retry."""


class TranscriptExhausted(RuntimeError):
    """The replay transcript has no entry for this request."""


class ReplayMismatch(RuntimeError):
    """The replayed run asked for a different kind of request than was recorded."""


@dataclass(frozen=True)
class ChatRequest:
    kind: str
    messages: tuple[Message, ...]
    context: Mapping[str, Any] = field(default_factory=dict)
    serial: int = 0
    model: str = ""
    temperature: float = DEFAULT_TEMPERATURE


@dataclass
class ChatExchange:
    kind: str
    messages: tuple[Message, ...]
    model: str
    temperature: float
    response: str = ""
    latency: float = 0.0
    attempt: int = 0
    error: str | None = None

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_record(self) -> dict[str, Any]:
        """Transcript record; wall-clock latency is left out so replays match byte for byte."""
        metadata: dict[str, Any] = {
            "model": self.model,
            "temperature": self.temperature,
            "attempts": self.attempt,
        }
        if self.error is not None:
            metadata["error"] = self.error
        return {
            "kind": self.kind,
            "messages": [m._asdict() for m in self.messages],
            "response": self.response,
            "metadata": metadata,
        }


class Provider(Protocol):
    name: str

    def generate(self, request: ChatRequest) -> str: ...


# ------------------------------------------------------------------ providers


class OfflineMutatorProvider:
    """Deterministic rule edits; each request gets its own RNG from (seed, serial)."""

    name = "offline"

    def __init__(self, seed: int = 0) -> None:
        self.seed = seed

    def generate(self, request: ChatRequest) -> str:
        rng = random.Random(f"{self.seed}:{request.serial}")
        return offline_mutator(request.kind, request.context, rng)


class ReplayProvider:
    """Serves recorded responses; request ``serial`` indexes the transcript."""

    name = "replay"

    def __init__(self, records: Sequence[Mapping[str, Any]]) -> None:
        self.records = list(records)
        self._lock = threading.Lock()
        self.served = 0

    @classmethod
    def from_file(cls, path: str | Path) -> ReplayProvider:
        return cls(read_transcript(path))

    def generate(self, request: ChatRequest) -> str:
        with self._lock:
            if request.serial >= len(self.records):
                raise TranscriptExhausted(
                    f"request {request.serial} ({request.kind}) beyond "
                    f"{len(self.records)} recorded exchanges"
                )
            record = self.records[request.serial]
            if record.get("kind") != request.kind:
                raise ReplayMismatch(
                    f"request {request.serial}: recorded {record.get('kind')!r}, "
                    f"asked for {request.kind!r}"
                )
            self.served += 1
            return record["response"]


class LiveProvider:
    """Chat-completion endpoint speaking the common ``/chat/completions`` wire format."""

    name = "live"

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None,
        timeout: float = 60.0,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        if not base_url:
            raise ValueError("live provider needs a base URL")
        if not model:
            raise ValueError("live provider needs a model name")
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.model = model
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def generate(self, request: ChatRequest) -> str:
        body = {
            "model": request.model or self.model,
            "temperature": request.temperature,
            "messages": [m._asdict() for m in request.messages],
        }
        try:
            reply = self._client.post(self.url, json=body)
        except httpx.HTTPError as exc:
            raise ProviderError(f"network error: {exc}") from exc
        if reply.status_code == 429:
            raise ProviderError("quota exceeded (HTTP 429)")
        if reply.status_code >= 400:
            raise ProviderError(f"HTTP {reply.status_code}: {reply.text[:200]}")
        try:
            content = reply.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed completion payload: {exc!r}") from exc
        return content if isinstance(content, str) else ""

    def close(self) -> None:
        self._client.close()


# --------------------------------------------------------------------- client


class LLMClient:
    """Retry policy, request numbering, optional fan-out and the run transcript."""

    def __init__(
        self,
        provider: Provider,
        model: str = "",
        temperature: float = DEFAULT_TEMPERATURE,
        attempts: int = DEFAULT_ATTEMPTS,
        retry_delay: float = 0.0,
        parallelism: int = 1,
        transcript_path: str | Path | None = None,
    ) -> None:
        if attempts < 1:
            raise ValueError("attempts must be at least 1")
        self.provider = provider
        self.model = model
        self.temperature = temperature
        self.attempts = attempts
        self.retry_delay = retry_delay
        self.parallelism = max(1, parallelism)
        self.transcript: list[ChatExchange] = []
        self.transcript_path = Path(transcript_path) if transcript_path else None
        if self.transcript_path is not None:
            self.transcript_path.parent.mkdir(parents=True, exist_ok=True)
            self.transcript_path.write_text("")
        self._serial = 0

    def _request(self, kind: str, messages: Sequence[Message], context: Mapping[str, Any]) -> ChatRequest:
        request = ChatRequest(
            kind=kind,
            messages=tuple(messages),
            context=dict(context),
            serial=self._serial,
            model=self.model,
            temperature=self.temperature,
        )
        self._serial += 1
        return request

    def _run(self, request: ChatRequest) -> ChatExchange:
        exchange = ChatExchange(request.kind, request.messages, request.model, request.temperature)
        started = time.perf_counter()
        for attempt in range(1, self.attempts + 1):
            exchange.attempt = attempt
            try:
                exchange.response = self.provider.generate(request)
                exchange.error = None
                break
            except ProviderError as exc:
                exchange.error = f"attempt {attempt}/{self.attempts}: {exc}"
                if attempt < self.attempts and self.retry_delay:
                    time.sleep(self.retry_delay * attempt)
        if exchange.error is not None:
            exchange.response = ""
        exchange.latency = time.perf_counter() - started
        return exchange

    def _record(self, exchanges: Sequence[ChatExchange]) -> None:
        self.transcript.extend(exchanges)
        if self.transcript_path is not None:
            with self.transcript_path.open("a", encoding="utf-8") as fh:
                for ex in exchanges:
                    fh.write(json.dumps(ex.to_record(), sort_keys=True) + "\n")

    def complete(
        self, kind: str, messages: Sequence[Message], context: Mapping[str, Any] | None = None
    ) -> ChatExchange:
        exchange = self._run(self._request(kind, messages, context or {}))
        self._record([exchange])
        return exchange

    def complete_many(
        self, items: Sequence[tuple[str, Sequence[Message], Mapping[str, Any]]]
    ) -> list[ChatExchange]:
        """Issue several requests, concurrently if allowed; results keep request order."""
        requests = [self._request(kind, msgs, ctx) for kind, msgs, ctx in items]
        if self.parallelism == 1 or len(requests) < 2:
            exchanges = [self._run(r) for r in requests]
        else:
            with ThreadPoolExecutor(max_workers=self.parallelism) as pool:
                exchanges = list(pool.map(self._run, requests))
        self._record(exchanges)
        return exchanges


def read_transcript(path: str | Path) -> list[dict[str, Any]]:
    records = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: line {n}: {exc.msg}") from None
    return records

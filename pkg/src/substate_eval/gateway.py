"""Model access: chat and vision backends behind one rate-limited, retrying gateway.

Every call that reaches a backend is appended to a ``Transcript``. A recorded
transcript can be turned back into a ``ScriptedBackend`` to replay a run
without network access.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import threading
import time
from collections import deque
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import httpx

logger = logging.getLogger(__name__)

MEDIA_TYPES = ("png", "jpeg", "webp")

DECOMPOSER_TEMPERATURE = 0.2
REASONER_TEMPERATURE = 0.0


class GatewayError(RuntimeError):
    pass


class ProviderError(GatewayError):
    """The backend could not produce a response (after retries, if any)."""


class TransientProviderError(ProviderError):
    """Retryable failure: timeouts, HTTP 429 and 5xx."""


class AuthError(GatewayError):
    pass


class BudgetExceeded(GatewayError):
    pass


def sha256_hex(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True, slots=True)
class ChatRequest:
    system_prompt: str
    user_content: str
    temperature: float = REASONER_TEMPERATURE
    max_output_tokens: int = 2048

    def __post_init__(self) -> None:
        if not self.system_prompt.strip() or not self.user_content.strip():
            raise ValueError("system_prompt and user_content must be non-empty")
        if not 0.0 <= self.temperature <= 1.0:
            raise ValueError(f"temperature must be in [0, 1], got {self.temperature}")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")

    @property
    def digest(self) -> str:
        return sha256_hex(
            json.dumps(
                [self.system_prompt, self.user_content, self.temperature, self.max_output_tokens]
            )
        )


@dataclass(frozen=True, slots=True)
class VisionRequest:
    system_prompt: str
    image: bytes
    media_type: str = "png"

    def __post_init__(self) -> None:
        if not self.system_prompt.strip():
            raise ValueError("system_prompt must be non-empty")
        if not self.image:
            raise ValueError("image payload is empty")
        if self.media_type not in MEDIA_TYPES:
            raise ValueError(f"unsupported media type {self.media_type!r}")

    @property
    def image_digest(self) -> str:
        return sha256_hex(self.image)


@dataclass(frozen=True, slots=True)
class UsageStats:
    input_tokens: int = 0
    output_tokens: int = 0


@dataclass(frozen=True, slots=True)
class BackendConfig:
    """One model endpoint. ``credential_env`` names an environment variable, never a secret."""

    provider: str = "scripted"
    model: str = "scripted"
    endpoint: str = ""
    credential_env: str = ""
    max_retries: int = 2
    requests_per_minute: int = 60
    timeout_s: float = 120.0
    backoff_base_s: float = 1.0

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.requests_per_minute < 1:
            raise ValueError("requests_per_minute must be >= 1")

    @classmethod
    def from_dict(cls, data: Mapping[str, object]) -> BackendConfig:
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown backend config keys: {sorted(unknown)}")
        return cls(**data)  # type: ignore[arg-type]

    def resolve_credential(self) -> str:
        if not self.credential_env:
            raise AuthError(f"backend {self.provider}/{self.model} names no credential variable")
        value = os.environ.get(self.credential_env)
        if not value:
            raise AuthError(f"environment variable {self.credential_env} is not set")
        return value


class Backend(Protocol):
    def complete(self, request: ChatRequest) -> tuple[str, UsageStats]: ...

    def caption(self, request: VisionRequest) -> str: ...


# --- scripted backend ---------------------------------------------------------

ChatHandler = Callable[[ChatRequest], str]
VisionHandler = Callable[[VisionRequest], str]


class ScriptedBackend:
    """Deterministic canned-response backend for tests and replays.

    Chat requests are served, in priority order, from ``by_prompt`` (keyed by
    ``ChatRequest.digest``), then ``handler``, then the FIFO ``responses``
    queue. Vision requests use ``captions`` keyed by image digest, then
    ``vision_handler``. With ``strict=False`` unmatched requests echo back the
    request text instead of raising.
    """

    def __init__(
        self,
        responses: Iterable[str] = (),
        *,
        by_prompt: Mapping[str, str] | None = None,
        captions: Mapping[str, str] | None = None,
        handler: ChatHandler | None = None,
        vision_handler: VisionHandler | None = None,
        strict: bool = True,
    ):
        self._queue: deque[str] = deque(responses)
        self._by_prompt = dict(by_prompt or {})
        self._captions = dict(captions or {})
        self._handler = handler
        self._vision_handler = vision_handler
        self.strict = strict
        self._lock = threading.Lock()
        self.chat_calls: list[ChatRequest] = []
        self.vision_calls: list[VisionRequest] = []

    def queue(self, *responses: str) -> None:
        with self._lock:
            self._queue.extend(responses)

    @property
    def remaining(self) -> int:
        return len(self._queue)

    def complete(self, request: ChatRequest) -> tuple[str, UsageStats]:
        with self._lock:
            self.chat_calls.append(request)
            if request.digest in self._by_prompt:
                text = self._by_prompt[request.digest]
            elif self._handler is not None:
                text = self._handler(request)
            elif self._queue:
                text = self._queue.popleft()
            elif self.strict:
                raise ProviderError("scripted backend has no response for this request")
            else:
                text = request.user_content
        usage = UsageStats(len(request.user_content.split()), len(text.split()))
        return text, usage

    def caption(self, request: VisionRequest) -> str:
        with self._lock:
            self.vision_calls.append(request)
            digest = request.image_digest
            if digest in self._captions:
                return self._captions[digest]
            if self._vision_handler is not None:
                return self._vision_handler(request)
            if self.strict:
                raise ProviderError(f"scripted backend has no caption for image {digest[:12]}")
            return f"image {digest}"

    @classmethod
    def from_transcript(cls, records: Iterable[TranscriptRecord | Mapping], **kwargs) -> ScriptedBackend:
        """Serve every successful recorded response again, keyed by its request digest."""
        by_prompt: dict[str, str] = {}
        captions: dict[str, str] = {}
        for record in records:
            rec = record if isinstance(record, TranscriptRecord) else TranscriptRecord(**record)
            if rec.error is not None or rec.response is None:
                continue
            if rec.kind == "chat":
                by_prompt[rec.prompt_digest] = rec.response
            else:
                captions[rec.prompt_digest] = rec.response
        return cls(by_prompt=by_prompt, captions=captions, **kwargs)


# --- live backend -------------------------------------------------------------


class OpenAICompatibleBackend:
    """Chat-completions style HTTP backend (OpenAI, DeepSeek, Gemini's compatible endpoint)."""

    def __init__(self, cfg: BackendConfig, client: httpx.Client | None = None):
        self.cfg = cfg
        self._client = client or httpx.Client(timeout=cfg.timeout_s)

    def _post(self, payload: dict) -> dict:
        key = self.cfg.resolve_credential()
        url = self.cfg.endpoint.rstrip("/") + "/chat/completions"
        try:
            response = self._client.post(
                url, json=payload, headers={"Authorization": f"Bearer {key}"}
            )
        except httpx.TimeoutException as exc:
            raise TransientProviderError(f"timeout calling {url}") from exc
        except httpx.TransportError as exc:
            raise TransientProviderError(f"transport error calling {url}: {exc}") from exc
        if response.status_code in (401, 403):
            raise AuthError(f"{url} rejected credentials ({response.status_code})")
        if response.status_code == 429 or response.status_code >= 500:
            raise TransientProviderError(f"{url} returned {response.status_code}")
        if response.status_code >= 400:
            raise ProviderError(f"{url} returned {response.status_code}: {response.text[:200]}")
        try:
            return response.json()
        except ValueError as exc:
            raise ProviderError(f"{url} returned non-JSON body") from exc

    @staticmethod
    def _message_text(body: dict) -> str:
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"unexpected response shape: {str(body)[:200]}") from exc
        if isinstance(content, list):
            content = "".join(part.get("text", "") for part in content if isinstance(part, dict))
        if not isinstance(content, str):
            raise ProviderError("response message has no text content")
        return content

    def complete(self, request: ChatRequest) -> tuple[str, UsageStats]:
        body = self._post(
            {
                "model": self.cfg.model,
                "temperature": request.temperature,
                "max_tokens": request.max_output_tokens,
                "messages": [
                    {"role": "system", "content": request.system_prompt},
                    {"role": "user", "content": request.user_content},
                ],
            }
        )
        usage = body.get("usage") or {}
        return self._message_text(body), UsageStats(
            int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))
        )

    def caption(self, request: VisionRequest) -> str:
        data_url = f"data:image/{request.media_type};base64," + base64.b64encode(
            request.image
        ).decode("ascii")
        body = self._post(
            {
                "model": self.cfg.model,
                "temperature": 0.0,
                "messages": [
                    {"role": "system", "content": request.system_prompt},
                    {
                        "role": "user",
                        "content": [
                            {"type": "text", "text": "Describe this screenshot."},
                            {"type": "image_url", "image_url": {"url": data_url}},
                        ],
                    },
                ],
            }
        )
        return self._message_text(body)


def load_script(path: Path | str) -> ScriptedBackend:
    """Build a scripted backend from a file.

    ``*.jsonl`` files are treated as recorded transcripts and replayed; ``*.json``
    files hold ``{"responses": [...], "by_prompt": {...}, "captions": {...}, "strict": true}``.
    """
    path = Path(path)
    if path.suffix == ".jsonl":
        return ScriptedBackend.from_transcript(Transcript.load(path))
    doc = json.loads(path.read_text(encoding="utf-8"))
    return ScriptedBackend(
        doc.get("responses", ()),
        by_prompt=doc.get("by_prompt"),
        captions=doc.get("captions"),
        strict=doc.get("strict", True),
    )


def build_backend(cfg: BackendConfig) -> Backend:
    if cfg.provider == "scripted":
        return load_script(cfg.endpoint) if cfg.endpoint else ScriptedBackend()
    if cfg.provider in ("openai", "openai-compatible", "deepseek", "gemini"):
        if not cfg.endpoint:
            raise ValueError(f"provider {cfg.provider} requires an endpoint")
        return OpenAICompatibleBackend(cfg)
    raise ValueError(f"unknown provider {cfg.provider!r}")


# --- rate limiting --------------------------------------------------------------


class RateLimiter:
    """At most ``budget`` dispatches in any ``window_s`` interval.

    Callers reserve a dispatch slot under a lock and then sleep outside it, so
    concurrent callers are served in arrival order.
    """

    def __init__(
        self,
        budget: int,
        window_s: float = 60.0,
        *,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
        max_wait_s: float | None = None,
    ):
        if budget < 1:
            raise ValueError("budget must be >= 1")
        self.budget = budget
        self.window_s = window_s
        self._clock = clock
        self._sleep = sleep
        self.max_wait_s = max_wait_s
        self._slots: deque[float] = deque()
        self._lock = threading.Lock()

    def reserve(self) -> float:
        """Claim the next dispatch time, without waiting for it."""
        with self._lock:
            now = self._clock()
            start = now
            if len(self._slots) >= self.budget:
                start = max(now, self._slots[-self.budget] + self.window_s)
            if self.max_wait_s is not None and start - now > self.max_wait_s:
                raise BudgetExceeded(
                    f"next dispatch slot is {start - now:.1f}s away (limit {self.max_wait_s}s)"
                )
            self._slots.append(start)
            while len(self._slots) > self.budget:
                self._slots.popleft()
            return start

    def acquire(self) -> float:
        start = self.reserve()
        delay = start - self._clock()
        if delay > 0:
            self._sleep(delay)
        return start


# --- transcripts ----------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class TranscriptRecord:
    seq: int
    timestamp: float
    kind: str  # "chat" | "vision"
    task_id: str
    stage: str
    model: str
    attempt: int
    prompt_digest: str
    request: dict
    response: str | None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "timestamp": self.timestamp,
            "kind": self.kind,
            "task_id": self.task_id,
            "stage": self.stage,
            "model": self.model,
            "attempt": self.attempt,
            "prompt_digest": self.prompt_digest,
            "request": self.request,
            "response": self.response,
            "error": self.error,
        }


class Transcript:
    """Append-only call log, optionally mirrored to a JSON-lines file."""

    def __init__(self, path: Path | str | None = None):
        self.path = Path(path) if path is not None else None
        self.records: list[TranscriptRecord] = []
        self._lock = threading.Lock()
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, **fields) -> TranscriptRecord:
        with self._lock:
            record = TranscriptRecord(seq=len(self.records), **fields)
            self.records.append(record)
            if self.path is not None:
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")
            return record

    def calls(self, *, stage: str | None = None, task_id: str | None = None, kind: str | None = None) -> list[TranscriptRecord]:
        return [
            r
            for r in self.records
            if (stage is None or r.stage == stage)
            and (task_id is None or r.task_id == task_id)
            and (kind is None or r.kind == kind)
        ]

    @staticmethod
    def load(path: Path | str) -> list[TranscriptRecord]:
        records = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                records.append(TranscriptRecord(**json.loads(line)))
        return records


# --- caption cache --------------------------------------------------------------


class CaptionCache(Protocol):
    def get(self, model: str, digest: str) -> str | None: ...

    def put(self, model: str, digest: str, caption: str) -> None: ...


class MemoryCaptionCache:
    def __init__(self) -> None:
        self._data: dict[tuple[str, str], str] = {}
        self._lock = threading.Lock()

    def get(self, model: str, digest: str) -> str | None:
        with self._lock:
            return self._data.get((model, digest))

    def put(self, model: str, digest: str, caption: str) -> None:
        with self._lock:
            self._data[(model, digest)] = caption


# --- gateway --------------------------------------------------------------------


@dataclass
class Gateway:
    """Retrying, rate-limited, transcript-logging front for a single backend."""

    cfg: BackendConfig
    backend: Backend | None = None
    transcript: Transcript = field(default_factory=Transcript)
    caption_cache: CaptionCache = field(default_factory=MemoryCaptionCache)
    clock: Callable[[], float] = time.time
    sleep: Callable[[float], None] = time.sleep
    limiter: RateLimiter | None = None

    def __post_init__(self) -> None:
        if self.backend is None:
            self.backend = build_backend(self.cfg)
        if self.limiter is None:
            self.limiter = RateLimiter(
                self.cfg.requests_per_minute, clock=self.clock, sleep=self.sleep
            )

    def _dispatch(self, kind: str, call, digest: str, request_log: dict, task_id: str, stage: str):
        last_error: Exception | None = None
        for attempt in range(self.cfg.max_retries + 1):
            if attempt:
                self.sleep(self.cfg.backoff_base_s * 2 ** (attempt - 1))
            dispatched_at = self.limiter.acquire()
            common = dict(
                timestamp=dispatched_at,
                kind=kind,
                task_id=task_id,
                stage=stage,
                model=self.cfg.model,
                attempt=attempt,
                prompt_digest=digest,
                request=request_log,
            )
            try:
                result = call()
            except TransientProviderError as exc:
                self.transcript.append(response=None, error=str(exc), **common)
                logger.warning("%s/%s attempt %d failed: %s", task_id, stage, attempt, exc)
                last_error = exc
                continue
            except (ProviderError, AuthError) as exc:
                self.transcript.append(response=None, error=str(exc), **common)
                raise
            text = result[0] if isinstance(result, tuple) else result
            self.transcript.append(response=text, **common)
            return result
        raise ProviderError(
            f"{self.cfg.provider}/{self.cfg.model}: retries exhausted ({last_error})"
        ) from last_error

    def complete(
        self, request: ChatRequest, *, task_id: str = "", stage: str = "chat"
    ) -> tuple[str, UsageStats]:
        log = {"system_digest": sha256_hex(request.system_prompt), "user": request.user_content,
               "temperature": request.temperature}
        return self._dispatch(
            "chat", lambda: self.backend.complete(request), request.digest, log, task_id, stage
        )

    def caption(self, request: VisionRequest, *, task_id: str = "", stage: str = "capture") -> str:
        digest = request.image_digest
        cached = self.caption_cache.get(self.cfg.model, digest)
        if cached is not None:
            return cached
        log = {"system_digest": sha256_hex(request.system_prompt), "media_type": request.media_type}
        text = self._dispatch(
            "vision", lambda: self.backend.caption(request), digest, log, task_id, stage
        )
        self.caption_cache.put(self.cfg.model, digest, text)
        return text


def complete(cfg: BackendConfig, request: ChatRequest, **kwargs) -> tuple[str, UsageStats]:
    """One-shot convenience over a fresh ``Gateway``."""
    return Gateway(cfg, **kwargs).complete(request)


def caption(cfg: BackendConfig, request: VisionRequest, **kwargs) -> str:
    return Gateway(cfg, **kwargs).caption(request)

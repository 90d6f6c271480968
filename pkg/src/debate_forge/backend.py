"""Chat and embedding backends.

Three implementations share one duck-typed surface (``chat``, ``embed``,
``model_id``, ``embedding_model_id``):

* :class:`ScriptedBackend` replays canned responses, for offline runs and tests.
* :class:`OpenAIBackend` talks to any OpenAI-compatible HTTP endpoint.
* :class:`CachedBackend` wraps either one with a content-addressed disk cache.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import tempfile
import threading
import time
from collections import deque
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable, Optional, Sequence

import httpx

from .core import DebateForgeError, InvalidInput, ParseError

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 1.0
DEFAULT_CHAT_MODEL = "gpt-3.5-turbo-0301"
DEFAULT_EMBEDDING_MODEL = "text-embedding-3-small"
DEFAULT_BASE_URL = "https://api.openai.com/v1"
API_KEY_ENV = "DEBATE_FORGE_API_KEY"
BASE_URL_ENV = "DEBATE_FORGE_BASE_URL"
SCRIPTED_EMBEDDING_DIM = 64


class BackendError(DebateForgeError):
    """The provider failed or returned something unusable."""


class ScriptExhausted(BackendError):
    pass


class CacheMiss(BackendError):
    pass


class CacheCorruption(BackendError):
    pass


class ConfigurationError(DebateForgeError):
    pass


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ("system", "user", "assistant"):
            raise InvalidInput(f"unknown message role {self.role!r}")

    def to_dict(self) -> dict[str, str]:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[Message, ...]
    model_id: str = DEFAULT_CHAT_MODEL
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise InvalidInput("chat request has no messages")
        if self.messages[-1].role not in ("user", "assistant"):
            raise InvalidInput("last message must come from user or assistant")
        if self.temperature < 0:
            raise InvalidInput("temperature must be >= 0")
        if self.max_tokens is not None and self.max_tokens <= 0:
            raise InvalidInput("max_tokens must be positive")

    @property
    def text(self) -> str:
        return "\n".join(m.content for m in self.messages)

    def to_dict(self) -> dict[str, Any]:
        body: dict[str, Any] = {
            "model": self.model_id,
            "messages": [m.to_dict() for m in self.messages],
            "temperature": self.temperature,
        }
        if self.max_tokens is not None:
            body["max_tokens"] = self.max_tokens
        return body


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    model_id: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not self.values:
            raise InvalidInput("embedding vector is empty")
        if not all(math.isfinite(v) for v in self.values):
            raise InvalidInput("embedding vector has non-finite values")

    def __len__(self) -> int:
        return len(self.values)


def user_request(prompt: str, system: Optional[str] = None, **kwargs: Any) -> ChatRequest:
    messages = [Message("system", system)] if system else []
    messages.append(Message("user", prompt))
    return ChatRequest(messages=tuple(messages), **kwargs)


def _check_texts(texts: Sequence[str]) -> None:
    for text in texts:
        if not text or not text.strip():
            raise InvalidInput("cannot embed an empty text")


def hashed_embedding(text: str, dim: int = SCRIPTED_EMBEDDING_DIM) -> tuple[float, ...]:
    """Deterministic bag-of-tokens vector, L2-normalised, all components >= 0."""
    counts = [0.0] * dim
    for token in re.findall(r"\w+", text.lower()):
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        counts[int.from_bytes(digest[:8], "big") % dim] += 1.0
    norm = math.sqrt(math.fsum(c * c for c in counts))
    if norm == 0.0:
        counts[0] = 1.0
        norm = 1.0
    return tuple(c / norm for c in counts)


@dataclass
class ChatRule:
    pattern: re.Pattern
    responses: list[str]
    pick: str = "cycle"
    calls: int = 0

    def respond(self, request: ChatRequest) -> str:
        if self.pick == "hash":
            digest = hashlib.sha256(request.text.encode("utf-8")).digest()
            return self.responses[int.from_bytes(digest[:8], "big") % len(self.responses)]
        if self.pick == "once" and self.calls >= len(self.responses):
            raise ScriptExhausted(f"rule {self.pattern.pattern!r} exhausted")
        response = self.responses[self.calls % len(self.responses)]
        self.calls += 1
        return response


class ScriptedBackend:
    """Deterministic stand-in for a provider.

    Chat responses come from ``queue`` (consumed in order) unless a rule whose
    regex matches the request text answers first. Rules pick among their
    responses by ``cycle`` (round robin), ``once`` (each used once, then
    exhausted) or ``hash`` (by request digest, independent of call order).
    Embeddings come from ``embeddings`` or fall back to :func:`hashed_embedding`.
    """

    def __init__(
        self,
        queue: Iterable[str] = (),
        rules: Iterable[dict[str, Any]] = (),
        embeddings: Optional[dict[str, Sequence[float]]] = None,
        embedding_rule: Optional[Callable[[str], Sequence[float]]] = hashed_embedding,
        model_id: str = "scripted-chat",
        embedding_model_id: str = "scripted-embedding",
    ):
        self.queue: deque[str] = deque(queue)
        self.rules = [
            ChatRule(
                pattern=re.compile(r["match"], re.DOTALL),
                responses=list(r["responses"]) if "responses" in r else [r["response"]],
                pick=r.get("pick", "cycle"),
            )
            for r in rules
        ]
        self.embeddings = {k: tuple(v) for k, v in (embeddings or {}).items()}
        self.embedding_rule = embedding_rule
        self.model_id = model_id
        self.embedding_model_id = embedding_model_id
        self.requests: list[ChatRequest] = []
        self._lock = threading.Lock()

    @classmethod
    def from_dir(cls, path: str | os.PathLike) -> "ScriptedBackend":
        """Load ``chat.json`` and optional ``embeddings.json`` from a fixture directory."""
        root = Path(path)
        chat_file = root / "chat.json"
        if not root.is_dir() or not chat_file.exists():
            raise ConfigurationError(f"scripted backend directory {root} has no chat.json")
        chat = json.loads(chat_file.read_text(encoding="utf-8"))
        embeddings = {}
        emb_file = root / "embeddings.json"
        if emb_file.exists():
            embeddings = json.loads(emb_file.read_text(encoding="utf-8"))
        return cls(
            queue=chat.get("queue", ()),
            rules=chat.get("rules", ()),
            embeddings=embeddings,
            model_id=chat.get("model_id", "scripted-chat"),
        )

    def chat(self, request: ChatRequest) -> str:
        with self._lock:
            self.requests.append(request)
            for rule in self.rules:
                if rule.pattern.search(request.text):
                    return rule.respond(request)
            if not self.queue:
                raise ScriptExhausted("script exhausted")
            return self.queue.popleft()

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        _check_texts(texts)
        vectors = []
        for text in texts:
            if text in self.embeddings:
                values = self.embeddings[text]
            elif self.embedding_rule is not None:
                values = self.embedding_rule(text)
            else:
                raise ScriptExhausted(f"no scripted embedding for {text!r}")
            vectors.append(EmbeddingVector(values, self.embedding_model_id))
        if len({len(v) for v in vectors}) > 1:
            raise BackendError("scripted embeddings have inconsistent dimensions")
        return vectors


RETRY_STATUS = frozenset({408, 409, 429, 500, 502, 503, 504})


class OpenAIBackend:
    """Client for OpenAI-compatible ``/chat/completions`` and ``/embeddings``.

    Transient failures (timeouts, connection errors, 429 and 5xx) are retried
    ``max_retries`` times with exponential backoff starting at ``backoff``.
    """

    def __init__(
        self,
        base_url: Optional[str] = None,
        api_key: Optional[str] = None,
        model_id: str = DEFAULT_CHAT_MODEL,
        embedding_model_id: str = DEFAULT_EMBEDDING_MODEL,
        max_retries: int = 3,
        backoff: float = 1.0,
        timeout: float = 120.0,
        concurrency: int = 4,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = (base_url or os.environ.get(BASE_URL_ENV) or DEFAULT_BASE_URL).rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        if not self.api_key:
            raise ConfigurationError(f"no API key: set {API_KEY_ENV}")
        self.model_id = model_id
        self.embedding_model_id = embedding_model_id
        self.max_retries = max_retries
        self.backoff = backoff
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(concurrency)
        self._client = httpx.Client(
            timeout=timeout,
            transport=transport,
            headers={"Authorization": f"Bearer {self.api_key}"},
        )

    def close(self) -> None:
        self._client.close()

    def _post(self, path: str, body: dict[str, Any]) -> dict[str, Any]:
        url = f"{self.base_url}/{path}"
        attempt = 0
        while True:
            try:
                with self._slots:
                    response = self._client.post(url, json=body)
            except (httpx.TimeoutException, httpx.TransportError) as exc:
                if attempt >= self.max_retries:
                    raise BackendError(f"endpoint unreachable: {url}: {exc}") from exc
                failure = str(exc)
            else:
                if response.is_success:
                    try:
                        return response.json()
                    except ValueError as exc:
                        raise BackendError(f"malformed provider payload from {url}") from exc
                if response.status_code not in RETRY_STATUS or attempt >= self.max_retries:
                    raise BackendError(f"{url} returned HTTP {response.status_code}: {response.text[:200]}")
                failure = f"HTTP {response.status_code}"
            delay = self.backoff * 2**attempt
            log.warning("%s failed (%s); retrying in %.1fs", path, failure, delay)
            self._sleep(delay)
            attempt += 1

    def chat(self, request: ChatRequest) -> str:
        payload = self._post("chat/completions", request.to_dict())
        try:
            content = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError("malformed chat completion payload") from exc
        if not isinstance(content, str):
            raise BackendError("chat completion content is not text")
        return content

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        _check_texts(texts)
        if not texts:
            return []
        payload = self._post("embeddings", {"model": self.embedding_model_id, "input": list(texts)})
        try:
            rows = sorted(payload["data"], key=lambda row: row["index"])
            vectors = [EmbeddingVector(row["embedding"], self.embedding_model_id) for row in rows]
        except (KeyError, TypeError, InvalidInput) as exc:
            raise BackendError("malformed embedding payload") from exc
        if len(vectors) != len(texts):
            raise BackendError(f"expected {len(texts)} embeddings, got {len(vectors)}")
        if len({len(v) for v in vectors}) > 1:
            raise BackendError("provider returned embeddings of differing dimension")
        return vectors


def request_digest(kind: str, model_id: str, content: Any, temperature: Optional[float]) -> str:
    blob = json.dumps(
        {"kind": kind, "model_id": model_id, "content": content, "temperature": temperature},
        sort_keys=True,
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


CACHE_MODES = ("off", "on", "replay")


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0


class CachedBackend:
    """Disk cache in front of another backend.

    ``mode`` is ``on`` (read-through), ``replay`` (misses are errors) or
    ``off`` (pass-through). Chat responses are only cached when
    ``cache_chat`` is set, since caching sampled chat collapses diversity.
    Entries live at ``<cache_dir>/<digest[:2]>/<digest>.json``.
    """

    def __init__(self, inner: Any, cache_dir: str | os.PathLike, mode: str = "on", cache_chat: Optional[bool] = None):
        if mode not in CACHE_MODES:
            raise ConfigurationError(f"unknown cache mode {mode!r}")
        self.inner = inner
        self.cache_dir = Path(cache_dir)
        self.mode = mode
        self.cache_chat = (mode == "replay") if cache_chat is None else cache_chat
        self.stats = CacheStats()
        self._lock = threading.Lock()
        if mode != "off":
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            if not os.access(self.cache_dir, os.W_OK):
                raise ConfigurationError(f"cache directory {self.cache_dir} is not writable")

    @property
    def model_id(self) -> str:
        return self.inner.model_id

    @property
    def embedding_model_id(self) -> str:
        return self.inner.embedding_model_id

    def _path(self, digest: str) -> Path:
        return self.cache_dir / digest[:2] / f"{digest}.json"

    def _load(self, digest: str) -> Any:
        path = self._path(digest)
        if not path.exists():
            return None
        try:
            entry = json.loads(path.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise CacheCorruption(f"unreadable cache entry {path}") from exc
        if entry.get("request_digest") != digest or "response" not in entry:
            raise CacheCorruption(f"cache entry {path} does not match its request digest")
        return entry

    def _store(self, digest: str, response: Any) -> None:
        path = self._path(digest)
        path.parent.mkdir(parents=True, exist_ok=True)
        entry = {
            "request_digest": digest,
            "response": response,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(entry, fh, ensure_ascii=False)
        os.replace(tmp, path)

    def _through(self, digest: str, compute: Callable[[], Any]) -> Any:
        entry = self._load(digest)
        if entry is not None:
            with self._lock:
                self.stats.hits += 1
            return entry["response"]
        if self.mode == "replay":
            raise CacheMiss(f"cache miss in replay mode ({digest[:12]})")
        with self._lock:
            self.stats.misses += 1
        response = compute()
        self._store(digest, response)
        return response

    def chat(self, request: ChatRequest) -> str:
        if self.mode == "off" or not self.cache_chat:
            return self.inner.chat(request)
        content = {"messages": [m.to_dict() for m in request.messages], "max_tokens": request.max_tokens}
        digest = request_digest("chat", request.model_id, content, request.temperature)
        return self._through(digest, lambda: self.inner.chat(request))

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        _check_texts(texts)
        if self.mode == "off":
            return self.inner.embed(texts)
        model = self.inner.embedding_model_id
        result: list[Optional[EmbeddingVector]] = [None] * len(texts)
        pending: list[int] = []
        for i, text in enumerate(texts):
            entry = self._load(request_digest("embed", model, text, None))
            if entry is not None:
                with self._lock:
                    self.stats.hits += 1
                result[i] = EmbeddingVector(entry["response"], model)
            elif self.mode == "replay":
                raise CacheMiss(f"cache miss in replay mode for embedding of {text[:40]!r}")
            else:
                pending.append(i)
        if pending:
            with self._lock:
                self.stats.misses += len(pending)
            fresh = self.inner.embed([texts[i] for i in pending])
            for i, vector in zip(pending, fresh):
                self._store(request_digest("embed", model, texts[i], None), list(vector.values))
                result[i] = vector
        return [v for v in result if v is not None]


def cached(backend: Any, cache_dir: str | os.PathLike, mode: str = "on", cache_chat: Optional[bool] = None) -> CachedBackend:
    return CachedBackend(backend, cache_dir, mode=mode, cache_chat=cache_chat)


def chat_until(
    backend: Any,
    request: ChatRequest,
    parse: Callable[[str], Any],
    reminder: str,
    retries: int,
) -> Any:
    """Call ``backend.chat`` and parse the reply, re-prompting on :class:`ParseError`.

    Each retry appends the rejected reply and ``reminder`` to the conversation.
    The last ParseError propagates once ``retries`` re-prompts are used up.
    """
    messages = list(request.messages)
    attempt = 0
    while True:
        reply = backend.chat(ChatRequest(tuple(messages), request.model_id, request.temperature, request.max_tokens))
        try:
            return parse(reply)
        except ParseError as exc:
            if attempt >= retries:
                raise
            log.warning("unusable model output (%s); re-prompting", exc)
            messages += [Message("assistant", reply or "(empty)"), Message("user", f"{exc}. {reminder}")]
            attempt += 1

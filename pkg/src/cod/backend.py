"""Chat-completion and MT backends behind a content-addressed record/replay cache.

Every outbound request is reduced to a canonical JSON form whose SHA-256 is the
cache key.  In ``replay`` mode the cache is the only source of responses and
nothing touches the network; ``record`` fills the cache; ``live`` bypasses it.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import tempfile
import threading
import time
from concurrent.futures import Future
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Union

import httpx

from .lang import Language, resolve

log = logging.getLogger(__name__)

DEFAULT_MODEL = "gpt-3.5-turbo"
DEFAULT_MT_MODEL = "nllb-200-3.3B"


class BackendError(RuntimeError):
    pass


class ReplayMiss(BackendError):
    def __init__(self, key: str, request: dict[str, Any]):
        super().__init__(f"no recorded response for {key[:12]}... ({request.get('kind')})")
        self.key = key
        self.request = request


class HttpError(BackendError):
    def __init__(self, status: int, body: str = ""):
        super().__init__(f"HTTP {status}: {body[:200]}")
        self.status = status


class BackendTimeout(BackendError, TimeoutError):
    pass


class BackendConfigError(BackendError):
    pass


class Mode(str, Enum):
    LIVE = "live"
    RECORD = "record"
    REPLAY = "replay"


@dataclass(frozen=True)
class CompletionRequest:
    model_id: str
    prompt: str
    temperature: float = 0.0
    max_tokens: int = 512

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def canonical(self) -> dict[str, Any]:
        return {"kind": "chat", **asdict(self)}


@dataclass(frozen=True)
class TranslationRequest:
    """One word (or short text) for the MT service; ``attempt`` > 0 asks for a resample."""

    model_id: str
    text: str
    src: str
    tgt: str
    attempt: int = 0

    def __post_init__(self):
        if self.src == self.tgt:
            raise ValueError(f"source and target language are both {self.src}")
        if not self.text.strip():
            raise ValueError("text must be non-empty")

    def canonical(self) -> dict[str, Any]:
        return {"kind": "mt", **asdict(self)}


Request = Union[CompletionRequest, TranslationRequest]


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def cache_key(request: Request) -> str:
    return hashlib.sha256(canonical_json(request.canonical()).encode("utf-8")).hexdigest()


class ReplayCache:
    """Append-only directory of ``<aa>/<bb>/<digest>.json`` response records."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.writes = 0

    def path_for(self, key: str) -> Path:
        return self.root / key[:2] / key[2:4] / f"{key}.json"

    def __contains__(self, key: str) -> bool:
        return self.path_for(key).is_file()

    def get(self, key: str) -> str | None:
        path = self.path_for(key)
        try:
            record = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None
        return record["response"]

    def put(self, key: str, request: dict[str, Any], response: str) -> bool:
        """Store a response unless one is already recorded; returns True on write."""
        path = self.path_for(key)
        if path.exists():
            return False
        path.parent.mkdir(parents=True, exist_ok=True)
        record = {
            "key": key,
            "request": request,
            "response": response,
            "recorded_at": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
        }
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False, indent=1) + "\n")
            os.replace(tmp, path)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
        self.writes += 1
        return True

    def keys(self) -> list[str]:
        return sorted(p.stem for p in self.root.glob("*/*/*.json"))


@dataclass
class RetryPolicy:
    max_attempts: int = 5
    base_delay: float = 0.5
    max_delay: float = 30.0
    seed: int | None = None
    _rng: random.Random = field(init=False, repr=False)

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        self._rng = random.Random(self.seed)

    def delay(self, attempt: int) -> float:
        """Backoff before retry number ``attempt`` (0-based): half to all of the capped exponential delay."""
        cap = min(self.max_delay, self.base_delay * (2 ** attempt))
        return cap * (0.5 + 0.5 * self._rng.random())


def _retryable(status: int) -> bool:
    return status == 429 or status >= 500


class Backend:
    """Completion + MT access shared by lexicon building and experiment runs.

    ``client`` may be any ``httpx.Client``; tests pass one built on
    ``httpx.MockTransport``.  In replay mode no client is created at all.
    """

    def __init__(
        self,
        mode: Mode | str = Mode.REPLAY,
        cache: ReplayCache | str | Path | None = None,
        *,
        api_url: str | None = None,
        api_key: str | None = None,
        mt_url: str | None = None,
        model_id: str = DEFAULT_MODEL,
        mt_model_id: str = DEFAULT_MT_MODEL,
        temperature: float = 0.0,
        max_tokens: int = 512,
        client: httpx.Client | None = None,
        max_inflight: int = 4,
        retry: RetryPolicy | None = None,
        timeout: float = 60.0,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.mode = Mode(mode)
        if isinstance(cache, (str, Path)):
            cache = ReplayCache(cache)
        self.cache = cache
        if self.mode in (Mode.REPLAY, Mode.RECORD) and cache is None:
            raise BackendConfigError(f"mode {self.mode.value} needs a cache directory")
        self.api_url = api_url
        self.api_key = api_key
        self.mt_url = mt_url
        self.model_id = model_id
        self.mt_model_id = mt_model_id
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.retry = retry or RetryPolicy()
        self.timeout = timeout
        self._sleep = sleep
        self._client = client
        self._slots = threading.BoundedSemaphore(max_inflight)
        self._lock = threading.Lock()
        self._inflight: dict[str, Future] = {}
        self.network_calls = 0
        self.cache_hits = 0

    @classmethod
    def from_env(cls, mode: Mode | str, cache_dir: str | Path | None, **kwargs) -> "Backend":
        kwargs.setdefault("api_url", os.environ.get("COD_API_URL"))
        kwargs.setdefault("api_key", os.environ.get("COD_API_KEY"))
        kwargs.setdefault("mt_url", os.environ.get("COD_MT_URL"))
        return cls(mode, cache_dir, **kwargs)

    # -- public API -------------------------------------------------------

    def complete(self, req: CompletionRequest) -> str:
        return self._resolve(req)

    def chat(self, prompt: str) -> str:
        return self.complete(
            CompletionRequest(self.model_id, prompt, self.temperature, self.max_tokens)
        )

    def translate_word(
        self, word: str, src: Language | str, tgt: Language | str, attempt: int = 0
    ) -> str:
        src, tgt = resolve(src), resolve(tgt)
        return self._resolve(TranslationRequest(self.mt_model_id, word, src.code, tgt.code, attempt))

    def close(self) -> None:
        if self._client is not None:
            self._client.close()

    # -- internals --------------------------------------------------------

    def _resolve(self, req: Request) -> str:
        key = cache_key(req)
        if self.mode is not Mode.LIVE:
            cached = self.cache.get(key)
            if cached is not None:
                with self._lock:
                    self.cache_hits += 1
                return cached
            if self.mode is Mode.REPLAY:
                raise ReplayMiss(key, req.canonical())

        # identical concurrent requests share one network call
        with self._lock:
            pending = self._inflight.get(key)
            owner = pending is None
            if owner:
                pending = self._inflight[key] = Future()
        if not owner:
            return pending.result()
        try:
            text = self._fetch(req)
            if self.mode is Mode.RECORD:
                self.cache.put(key, req.canonical(), text)
            pending.set_result(text)
            return text
        except BaseException as exc:
            pending.set_exception(exc)
            raise
        finally:
            with self._lock:
                self._inflight.pop(key, None)

    def _http(self) -> httpx.Client:
        if self._client is None:
            self._client = httpx.Client(timeout=self.timeout)
        return self._client

    def _fetch(self, req: Request) -> str:
        if isinstance(req, CompletionRequest):
            if not self.api_url:
                raise BackendConfigError("COD_API_URL is not set")
            url = self.api_url.rstrip("/")
            if not url.endswith("/chat/completions"):
                url += "/chat/completions"
            payload = {
                "model": req.model_id,
                "messages": [{"role": "user", "content": req.prompt}],
                "temperature": req.temperature,
                "max_tokens": req.max_tokens,
            }
            data = self._post(url, payload)
            try:
                return (data["choices"][0]["message"]["content"] or "").strip()
            except (KeyError, IndexError, TypeError) as exc:
                raise BackendError(f"malformed chat response: {exc!r}") from exc

        if not self.mt_url:
            raise BackendConfigError("COD_MT_URL is not set")
        payload = {
            "model": req.model_id,
            "text": req.text,
            "source_lang": req.src,
            "target_lang": req.tgt,
        }
        if req.attempt:
            payload.update(do_sample=True, seed=req.attempt)
        data = self._post(self.mt_url, payload)
        try:
            return str(data["translation"]).strip()
        except (KeyError, TypeError) as exc:
            raise BackendError(f"malformed MT response: {exc!r}") from exc

    def _post(self, url: str, payload: dict[str, Any]) -> dict[str, Any]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last: BackendError | None = None
        for attempt in range(self.retry.max_attempts):
            if attempt:
                self._sleep(self.retry.delay(attempt - 1))
            with self._slots:
                with self._lock:
                    self.network_calls += 1
                try:
                    resp = self._http().post(url, json=payload, headers=headers)
                except httpx.TimeoutException as exc:
                    last = BackendTimeout(f"request to {url} timed out")
                    log.warning("timeout on attempt %d: %s", attempt + 1, exc)
                    continue
                except httpx.HTTPError as exc:
                    raise BackendError(f"transport error: {exc}") from exc
            if resp.status_code == 200:
                try:
                    return resp.json()
                except ValueError as exc:
                    raise BackendError("response body is not JSON") from exc
            last = HttpError(resp.status_code, resp.text)
            if not _retryable(resp.status_code):
                raise last
            log.warning("HTTP %d on attempt %d", resp.status_code, attempt + 1)
        assert last is not None
        raise last

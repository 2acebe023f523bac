"""Gateway to external completion services: caching, retries, deterministic mock.

All prompts flow through versioned templates; the idempotency key is a pure
function of (template version, prompt, decoding params), so any run recorded
against the remote backend replays bit-identically under cache_only.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

CREDENTIAL_ENV_VAR = "RADREASON_API_KEY"


class CompletionError(RuntimeError):
    pass


class CacheMissError(CompletionError):
    def __init__(self, key: str):
        super().__init__(f"cache_only backend: no cached response for key {key}")
        self.key = key


@dataclass(frozen=True)
class CompletionRequest:
    template_id: str
    template_version: str
    prompt: str
    temperature: float = 0.0
    max_tokens: int = 1024

    @property
    def idempotency_key(self) -> str:
        payload = json.dumps(
            {
                "template_id": self.template_id,
                "template_version": self.template_version,
                "prompt": self.prompt,
                "temperature": self.temperature,
                "max_tokens": self.max_tokens,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# templates

_TEMPLATE_CACHE: dict[str, tuple[str, str]] = {}


def load_template(name: str) -> tuple[str, str]:
    """Return (version, body) of a bundled prompt template."""
    if name not in _TEMPLATE_CACHE:
        ref = resources.files("radreason").joinpath(f"data/templates/{name}.txt")
        text = ref.read_text(encoding="utf-8")
        version = "0"
        body_lines = []
        for line in text.splitlines():
            if line.startswith("#"):
                m = re.search(r"version:\s*(\S+)", line)
                if m:
                    version = m.group(1)
                continue
            body_lines.append(line)
        _TEMPLATE_CACHE[name] = (version, "\n".join(body_lines).strip() + "\n")
    return _TEMPLATE_CACHE[name]


def render_template(name: str, **fields: str) -> CompletionRequest:
    version, body = load_template(name)
    return CompletionRequest(
        template_id=name,
        template_version=version,
        prompt=body.format(**fields),
    )


# ---------------------------------------------------------------------------
# cache: one file per idempotency key

class ResponseCache:
    """Content-addressed response cache; concurrent readers, serialized writes."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._write_lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.txt"

    def get(self, key: str) -> Optional[str]:
        path = self._path(key)
        if path.exists():
            return path.read_text(encoding="utf-8")
        return None

    def put(self, key: str, response: str) -> None:
        with self._write_lock:
            tmp = self._path(key).with_suffix(".tmp")
            tmp.write_text(response, encoding="utf-8")
            tmp.replace(self._path(key))


# ---------------------------------------------------------------------------
# backends

class MockBackend:
    """Fixture-keyed canned responses; never touches the network."""

    name = "mock"

    def __init__(self, responses: dict[str, str]):
        self._responses = dict(responses)

    @classmethod
    def from_file(cls, path: str | Path) -> "MockBackend":
        """Load a JSONL fixture. Records either carry a precomputed "key", or
        the request fields from which the key is recomputed."""
        responses: dict[str, str] = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if "key" in rec:
                key = rec["key"]
            else:
                key = CompletionRequest(
                    template_id=rec["template_id"],
                    template_version=rec["template_version"],
                    prompt=rec["prompt"],
                    temperature=rec.get("temperature", 0.0),
                    max_tokens=rec.get("max_tokens", 1024),
                ).idempotency_key
            responses[key] = rec["response"]
        return cls(responses)

    def complete(self, request: CompletionRequest) -> str:
        key = request.idempotency_key
        if key not in self._responses:
            raise CompletionError(
                f"mock backend: no fixture response for key {key} "
                f"(template {request.template_id} v{request.template_version})"
            )
        return self._responses[key]


class RemoteBackend:
    """Chat-completion style HTTPS endpoint with bounded exponential backoff."""

    name = "remote"

    def __init__(
        self,
        base_url: str,
        model: str = "gpt-4o",
        max_retries: int = 5,
        backoff_seconds: float = 0.5,
        timeout: float = 60.0,
    ):
        if not base_url:
            raise CompletionError("remote backend requires a base_url")
        api_key = os.environ.get(CREDENTIAL_ENV_VAR)
        if not api_key:
            raise CompletionError(
                f"remote backend requires the {CREDENTIAL_ENV_VAR} environment variable"
            )
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.max_retries = max_retries
        self.backoff_seconds = backoff_seconds
        self.timeout = timeout
        self._api_key = api_key

    def complete(self, request: CompletionRequest) -> str:
        import requests

        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                resp = requests.post(
                    f"{self.base_url}/chat/completions",
                    json=payload,
                    headers={"Authorization": f"Bearer {self._api_key}"},
                    timeout=self.timeout,
                )
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except Exception as e:  # noqa: BLE001 - retry any transport failure
                last_error = e
                time.sleep(self.backoff_seconds * (2**attempt))
        raise CompletionError(f"remote backend: retries exhausted: {last_error}")


class CacheOnlyBackend:
    """Replays a primed cache; a miss is a deterministic error."""

    name = "cache_only"

    def complete(self, request: CompletionRequest) -> str:
        raise CacheMissError(request.idempotency_key)


class CompletionClient:
    """Cache-first completion gateway with bounded in-flight concurrency."""

    def __init__(
        self,
        backend,
        cache: Optional[ResponseCache] = None,
        max_in_flight: int = 4,
    ):
        self.backend = backend
        self.cache = cache
        self._semaphore = threading.Semaphore(max_in_flight)

    def complete(self, request: CompletionRequest) -> str:
        key = request.idempotency_key
        if self.cache is not None:
            cached = self.cache.get(key)
            if cached is not None:
                return cached
        with self._semaphore:
            response = self.backend.complete(request)
        if self.cache is not None:
            self.cache.put(key, response)
        return response


def make_client(
    backend_name: str,
    cache_dir: Optional[str | Path] = None,
    mock_fixture: Optional[str | Path] = None,
    base_url: str = "",
    workers: int = 4,
) -> CompletionClient:
    cache = ResponseCache(cache_dir) if cache_dir else None
    if backend_name == "mock":
        if mock_fixture is None:
            raise CompletionError("mock backend requires a fixture file")
        backend = MockBackend.from_file(mock_fixture)
    elif backend_name == "cache-only" or backend_name == "cache_only":
        if cache is None:
            raise CompletionError("cache_only backend requires a cache directory")
        backend = CacheOnlyBackend()
    elif backend_name == "remote":
        backend = RemoteBackend(base_url=base_url)
    else:
        raise CompletionError(f"unknown backend {backend_name!r}")
    return CompletionClient(backend, cache=cache, max_in_flight=workers)

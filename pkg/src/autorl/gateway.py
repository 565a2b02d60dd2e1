"""Single entry point for LLM inference.

``Gateway.infer`` runs in one of three modes:

``live``
    call the provider and return its text verbatim.
``record``
    call the provider and persist the response in a ``FixtureStore`` keyed by
    the prompt fingerprint.
``replay``
    never call the provider; return the stored fixture or raise ``FixtureMiss``.

Provider credentials come from environment variables (``ANTHROPIC_API_KEY``,
``OPENAI_API_KEY``, optionally ``OPENAI_BASE_URL`` and ``AUTORL_MODEL``). Their
values are never logged.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Protocol

from .errors import DuplicateFixture, FixtureMiss, ProviderRefusal, ProviderTimeout

log = logging.getLogger(__name__)

MODES = ("live", "record", "replay")


@dataclass(frozen=True)
class InferenceSettings:
    context_length_tokens: int = 128_000
    max_tokens: int = 1024
    temperature: float = 0.6
    top_p: float = 0.7
    top_k: int = 50

    def __post_init__(self):
        if self.context_length_tokens <= 0:
            raise ValueError("context_length_tokens must be positive")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must lie in (0, 1]")
        if self.top_k < 1:
            raise ValueError("top_k must be at least 1")


@dataclass(frozen=True)
class Prompt:
    system_text: str
    user_text: str
    template_id: str
    substitutions: dict = field(default_factory=dict, compare=False)
    appendix: str = ""

    def with_appendix(self, text: str) -> "Prompt":
        """Append a free-form section after the rendered user block."""
        extra = text if not self.appendix else self.appendix + "\n\n" + text
        return replace(self, user_text=self.user_text + "\n\n" + text, appendix=extra)


@dataclass(frozen=True)
class LLMResponse:
    text: str
    provider_id: str
    prompt_fingerprint: str
    latency: float


def fingerprint(prompt: Prompt, settings: InferenceSettings) -> str:
    payload = {
        "system": prompt.system_text,
        "user": prompt.user_text,
        "settings": asdict(settings),
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class FixtureStore:
    """Directory of ``<fingerprint>.json`` records.

    Writes go through a temp file that is hard-linked into place, so two
    writers racing on one fingerprint cannot both win.
    """

    def __init__(self, root):
        self.root = Path(root)

    def path(self, fp: str) -> Path:
        return self.root / f"{fp}.json"

    def get(self, fp: str) -> dict | None:
        try:
            return json.loads(self.path(fp).read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None

    def put(self, fp: str, template_id: str, text: str) -> str:
        existing = self.get(fp)
        if existing is not None:
            if existing["response"] != text:
                raise DuplicateFixture(fp)
            return fp
        self.root.mkdir(parents=True, exist_ok=True)
        record = {"fingerprint": fp, "template_id": template_id, "response": text}
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".tmp-", suffix=".json")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(record, fh, ensure_ascii=False, indent=1)
            try:
                os.link(tmp, self.path(fp))
            except FileExistsError:
                if self.get(fp)["response"] != text:
                    raise DuplicateFixture(fp) from None
        finally:
            os.unlink(tmp)
        return fp

    def list(self) -> list[dict]:
        if not self.root.is_dir():
            return []
        out = []
        for p in sorted(self.root.glob("*.json")):
            if p.name.startswith(".tmp-"):
                continue
            rec = json.loads(p.read_text(encoding="utf-8"))
            out.append({"fingerprint": rec["fingerprint"], "template_id": rec.get("template_id", "")})
        return out


class ProviderTransportError(Exception):
    """Raised by providers for retryable transport failures."""


class Provider(Protocol):
    provider_id: str

    def complete(self, prompt: Prompt, settings: InferenceSettings) -> str: ...


class Gateway:
    def __init__(
        self,
        provider: Provider | None = None,
        mode: str = "live",
        store: FixtureStore | None = None,
        settings: InferenceSettings | None = None,
        backoff: float = 0.5,
    ):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if mode in ("record", "replay") and store is None:
            raise ValueError(f"{mode} mode needs a fixture store")
        if mode in ("live", "record") and provider is None:
            raise ValueError(f"{mode} mode needs a provider")
        self.provider = provider
        self.mode = mode
        self.store = store
        self.settings = settings or InferenceSettings()
        self.backoff = backoff
        self.provider_calls = 0
        self._lock = threading.Lock()

    def infer(self, prompt: Prompt, settings: InferenceSettings | None = None) -> LLMResponse:
        settings = settings or self.settings
        fp = fingerprint(prompt, settings)
        start = time.monotonic()
        if self.mode == "replay":
            rec = self.store.get(fp)
            if rec is None:
                raise FixtureMiss(fp, prompt.template_id)
            return LLMResponse(rec["response"], "replay", fp, time.monotonic() - start)

        text = self._call(prompt, settings)
        if self.mode == "record":
            self.store.put(fp, prompt.template_id, text)
        return LLMResponse(text, self.provider.provider_id, fp, time.monotonic() - start)

    def _call(self, prompt: Prompt, settings: InferenceSettings) -> str:
        for attempt in range(2):
            with self._lock:
                self.provider_calls += 1
            try:
                text = self.provider.complete(prompt, settings)
                break
            except ProviderTransportError as exc:
                if attempt == 1:
                    raise ProviderTimeout(f"{self.provider.provider_id}: {exc}") from exc
                log.warning("transport failure from %s, retrying", self.provider.provider_id)
                time.sleep(self.backoff * 2**attempt)
        if not text or not text.strip():
            raise ProviderRefusal(f"{self.provider.provider_id} returned an empty response")
        return text


def record_fixture(store: FixtureStore, prompt: Prompt, settings: InferenceSettings, response_text: str) -> str:
    """Bind ``response_text`` to the prompt's fingerprint; returns the fixture id."""
    return store.put(fingerprint(prompt, settings), prompt.template_id, response_text)


# -- providers ---------------------------------------------------------------


class ScriptedProvider:
    """Deterministic provider answering from per-template response queues.

    The last response of each queue repeats once the queue runs dry. A callable
    may be supplied instead of a list for tests that need to inspect prompts.
    """

    provider_id = "scripted"

    def __init__(self, responses: dict[str, list[str] | Callable[[Prompt], str]]):
        self._responses = {k: (v if callable(v) else list(v)) for k, v in responses.items()}
        self._cursor: dict[str, int] = {}
        self.prompts: list[Prompt] = []

    @classmethod
    def from_yaml(cls, path) -> "ScriptedProvider":
        import yaml

        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        return cls({k: v if isinstance(v, list) else [v] for k, v in data.items()})

    def complete(self, prompt: Prompt, settings: InferenceSettings) -> str:
        self.prompts.append(prompt)
        source = self._responses.get(prompt.template_id)
        if source is None:
            return ""
        if callable(source):
            return source(prompt)
        i = self._cursor.get(prompt.template_id, 0)
        self._cursor[prompt.template_id] = i + 1
        return source[min(i, len(source) - 1)]


class AnthropicProvider:
    provider_id = "anthropic"
    url = "https://api.anthropic.com/v1/messages"

    def __init__(self, model: str | None = None, timeout: float = 120.0):
        self.model = model or os.environ.get("AUTORL_MODEL", "claude-3-7-sonnet-latest")
        self.timeout = timeout

    def complete(self, prompt: Prompt, settings: InferenceSettings) -> str:
        import httpx

        key = os.environ.get("ANTHROPIC_API_KEY")
        if not key:
            raise ProviderRefusal("ANTHROPIC_API_KEY is not set")
        body = {
            "model": self.model,
            "system": prompt.system_text,
            "messages": [{"role": "user", "content": prompt.user_text}],
            "max_tokens": settings.max_tokens,
            "temperature": settings.temperature,
            "top_p": settings.top_p,
            "top_k": settings.top_k,
        }
        headers = {"x-api-key": key, "anthropic-version": "2023-06-01"}
        try:
            r = httpx.post(self.url, json=body, headers=headers, timeout=self.timeout)
        except httpx.TransportError as exc:
            raise ProviderTransportError(type(exc).__name__) from exc
        if r.status_code >= 500 or r.status_code == 429:
            raise ProviderTransportError(f"HTTP {r.status_code}")
        if r.status_code != 200:
            raise ProviderRefusal(f"HTTP {r.status_code}: {r.text[:200]}")
        return "".join(b.get("text", "") for b in r.json().get("content", []))


class OpenAIProvider:
    """Any chat-completions compatible endpoint. ``top_k`` is not sent."""

    provider_id = "openai"

    def __init__(self, model: str | None = None, base_url: str | None = None, timeout: float = 120.0):
        self.model = model or os.environ.get("AUTORL_MODEL", "gpt-4o")
        self.base_url = (base_url or os.environ.get("OPENAI_BASE_URL", "https://api.openai.com/v1")).rstrip("/")
        self.timeout = timeout

    def complete(self, prompt: Prompt, settings: InferenceSettings) -> str:
        import httpx

        key = os.environ.get("OPENAI_API_KEY")
        if not key:
            raise ProviderRefusal("OPENAI_API_KEY is not set")
        body = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": prompt.system_text},
                {"role": "user", "content": prompt.user_text},
            ],
            "max_tokens": settings.max_tokens,
            "temperature": settings.temperature,
            "top_p": settings.top_p,
        }
        try:
            r = httpx.post(
                f"{self.base_url}/chat/completions",
                json=body,
                headers={"Authorization": f"Bearer {key}"},
                timeout=self.timeout,
            )
        except httpx.TransportError as exc:
            raise ProviderTransportError(type(exc).__name__) from exc
        if r.status_code >= 500 or r.status_code == 429:
            raise ProviderTransportError(f"HTTP {r.status_code}")
        if r.status_code != 200:
            raise ProviderRefusal(f"HTTP {r.status_code}: {r.text[:200]}")
        choices = r.json().get("choices") or [{}]
        return choices[0].get("message", {}).get("content") or ""


PROVIDERS = {"anthropic": AnthropicProvider, "openai": OpenAIProvider}

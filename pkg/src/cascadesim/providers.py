"""Pluggable text -> vector and post-generation providers.

The simulation core never talks to a hosted model directly: it consumes an
``embed`` / ``emote`` / ``generate_post`` interface. The deterministic local
implementation (seeded feature hashing + a bundled emotion lexicon + post
templates) makes whole runs exactly reproducible; the HTTP client plugs any
external embedding/generation service into the same interface with a
digest-keyed response cache.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import ConfigurationError, ProviderError

_TOKEN_RE = re.compile(r"[a-z0-9']+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class ProviderSpec:
    """How to construct a provider. ``endpoint`` is required for external_http."""

    kind: str = "deterministic_local"
    endpoint: str | None = None
    timeout: float = 10.0
    retry_budget: int = 2
    cache_path: str | None = None

    def __post_init__(self):
        if self.kind not in ("deterministic_local", "external_http"):
            raise ConfigurationError(f"unknown provider kind {self.kind!r}")
        if self.kind == "external_http" and not self.endpoint:
            raise ConfigurationError("external_http provider requires an endpoint")
        if self.retry_budget < 0:
            raise ConfigurationError("retry_budget must be nonnegative")


@dataclass(frozen=True)
class StateSummary:
    """The slice of agent state a post generator is allowed to see."""

    stance: str
    emotion_peak: str
    persona_seed: str


def load_lexicon(dim: int) -> dict[str, np.ndarray]:
    """Bundled word -> emotion table, adapted to ``dim`` channels.

    The table is authored with 8 channels; other dims truncate or zero-pad.
    """

    raw = json.loads(
        resources.files("cascadesim.data").joinpath("emotion_lexicon.json").read_text()
    )
    table = {}
    for word, values in raw["words"].items():
        v = np.zeros(dim, dtype=np.float64)
        k = min(dim, len(values))
        v[:k] = values[:k]
        table[word] = v
    return table


_POST_TEMPLATES = {
    "support": [
        "Standing with {author} on this. {emotion} but the response looks right.",
        "Credit where due: this update from {author} addresses the real issue. Feeling {emotion}.",
    ],
    "neutral": [
        "Watching how this develops. {emotion} about the latest from {author}.",
        "Not sure what to make of the {author} situation yet. Mostly {emotion}.",
    ],
    "oppose": [
        "This from {author} changes nothing. Still {emotion} about the whole thing.",
        "Hard to take {author} seriously after this. {emotion} does not begin to cover it.",
    ],
}


class DeterministicProvider:
    """Fully deterministic local provider: hashing embedder, lexicon emotions,
    template posts. Identical inputs always produce identical outputs."""

    kind = "deterministic_local"

    def __init__(self, dim: int, emotion_dim: int, salt: str = "cascadesim-v1"):
        if dim < 1 or emotion_dim < 1:
            raise ConfigurationError("provider dimensions must be positive")
        self.dim = dim
        self.emotion_dim = emotion_dim
        self._salt = salt.encode("utf-8")
        self._lexicon = load_lexicon(emotion_dim)
        self._embed_cache: dict[str, np.ndarray] = {}
        self._emote_cache: dict[str, np.ndarray] = {}
        self.calls = {"embed": 0, "emote": 0, "generate_post": 0}

    def _token_feature(self, token: str) -> tuple[int, float]:
        h = hashlib.blake2b(token.encode("utf-8"), digest_size=8, salt=self._salt[:16])
        raw = int.from_bytes(h.digest(), "little")
        return raw % self.dim, 1.0 if raw >> 63 else -1.0

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise ProviderError("cannot embed empty text")
        cached = self._embed_cache.get(text)
        if cached is not None:
            return cached
        self.calls["embed"] += 1
        v = np.zeros(self.dim, dtype=np.float64)
        for token in tokenize(text):
            idx, sign = self._token_feature(token)
            v[idx] += sign
        nrm = float(np.linalg.norm(v))
        if nrm == 0.0:
            raise ProviderError(f"text hashed to the zero vector: {text!r}")
        v /= nrm
        v.flags.writeable = False
        self._embed_cache[text] = v
        return v

    def emote(self, text: str) -> np.ndarray:
        if not text:
            raise ProviderError("cannot score empty text")
        cached = self._emote_cache.get(text)
        if cached is not None:
            return cached
        self.calls["emote"] += 1
        hits = [self._lexicon[t] for t in tokenize(text) if t in self._lexicon]
        if hits:
            v = np.clip(np.mean(hits, axis=0), -1.0, 1.0)
        else:
            v = np.zeros(self.emotion_dim, dtype=np.float64)
        v.flags.writeable = False
        self._emote_cache[text] = v
        return v

    def generate_post(self, agent_profile, state_summary: StateSummary, msg) -> str:
        self.calls["generate_post"] += 1
        templates = _POST_TEMPLATES.get(state_summary.stance, _POST_TEMPLATES["neutral"])
        pick = hashlib.blake2b(
            f"{state_summary.persona_seed}|{state_summary.emotion_peak}|{msg.author}".encode(),
            digest_size=2,
        ).digest()[0] % len(templates)
        return templates[pick].format(author=msg.author, emotion=state_summary.emotion_peak)


class ExternalHttpProvider:
    """JSON-over-HTTP provider client with retries and a digest-keyed cache.

    Wire format: POST {endpoint}/embed and {endpoint}/emote with {"text": ...}
    returning {"vector": [...]}; POST {endpoint}/generate with {"text": ...}
    returning {"text": ...}. Any status >= 400 is a provider error. Responses
    are cached by (endpoint, op, text) digest; the cache file is append-only.
    """

    kind = "external_http"

    def __init__(self, spec: ProviderSpec, dim: int, emotion_dim: int):
        import httpx

        self.spec = spec
        self.dim = dim
        self.emotion_dim = emotion_dim
        self._client = httpx.Client(timeout=spec.timeout)
        self._cache: dict[str, object] = {}
        self._cache_lock = threading.Lock()
        self._cache_file = None
        if spec.cache_path:
            try:
                with open(spec.cache_path, encoding="utf-8") as fh:
                    for line in fh:
                        if line.strip():
                            entry = json.loads(line)
                            self._cache[entry["key"]] = entry["value"]
            except FileNotFoundError:
                pass
            self._cache_file = open(spec.cache_path, "a", encoding="utf-8")
        self.calls = {"embed": 0, "emote": 0, "generate_post": 0}

    def _key(self, op: str, text: str) -> str:
        return hashlib.sha256(f"{self.spec.endpoint}|{op}|{text}".encode()).hexdigest()

    def _post(self, op: str, path: str, text: str):
        if not text:
            raise ProviderError("cannot send empty text")
        key = self._key(op, text)
        with self._cache_lock:
            if key in self._cache:
                return self._cache[key]
        self.calls[op] += 1
        last_error = None
        for _ in range(self.spec.retry_budget + 1):
            try:
                resp = self._client.post(f"{self.spec.endpoint}{path}", json={"text": text})
                if resp.status_code >= 400:
                    last_error = ProviderError(f"{op}: HTTP {resp.status_code}")
                    continue
                value = resp.json()
                break
            except ProviderError:
                raise
            except Exception as exc:  # timeouts, connection errors, bad JSON
                last_error = ProviderError(f"{op}: {exc}")
        else:
            raise last_error
        with self._cache_lock:
            self._cache[key] = value
            if self._cache_file is not None:
                self._cache_file.write(json.dumps({"key": key, "value": value}) + "\n")
                self._cache_file.flush()
        return value

    def _vector(self, op: str, path: str, text: str, dim: int) -> np.ndarray:
        value = self._post(op, path, text)
        try:
            v = np.asarray(value["vector"], dtype=np.float64)
        except (TypeError, KeyError, ValueError) as exc:
            raise ProviderError(f"{op}: malformed response payload") from exc
        if v.shape != (dim,):
            raise ProviderError(f"{op}: expected dimension {dim}, got {v.shape}")
        if not np.isfinite(v).all():
            raise ProviderError(f"{op}: nonfinite vector")
        return v

    def embed(self, text: str) -> np.ndarray:
        v = self._vector("embed", "/embed", text, self.dim)
        nrm = float(np.linalg.norm(v))
        if nrm == 0.0:
            raise ProviderError("embed: zero vector")
        return v / nrm

    def emote(self, text: str) -> np.ndarray:
        return np.clip(self._vector("emote", "/emote", text, self.emotion_dim), -1.0, 1.0)

    def generate_post(self, agent_profile, state_summary: StateSummary, msg) -> str:
        prompt = (
            f"persona={state_summary.persona_seed} stance={state_summary.stance} "
            f"emotion={state_summary.emotion_peak} responding_to={msg.text or msg.id}"
        )
        value = self._post("generate_post", "/generate", prompt)
        try:
            text = value["text"]
        except (TypeError, KeyError) as exc:
            raise ProviderError("generate_post: malformed response payload") from exc
        if not isinstance(text, str) or not text:
            raise ProviderError("generate_post: empty generation")
        return text


def build_provider(spec: ProviderSpec, dim: int, emotion_dim: int):
    if spec.kind == "deterministic_local":
        return DeterministicProvider(dim, emotion_dim)
    return ExternalHttpProvider(spec, dim, emotion_dim)

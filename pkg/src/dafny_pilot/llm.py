"""Chat-completion client with record/replay cassettes.

The wire format is the common chat-completions JSON shape: request
{model, temperature, messages:[{role, content}]}, response
choices[0].message.content. Cassettes are one JSON file per request key;
the key is a digest of (model_id, temperature, messages), so identical
prompts replay identically and repeated calls step through recorded
responses in order.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .errors import AuthMissing, NetworkError, ProviderError, ReplayMiss
from .prompts import Message, RenderedPrompt

DEFAULT_MODEL = "gpt-4-1106-preview"
DAFNY_WORDS = ("lemma", "method", "ensures", "requires", "calc")


@dataclass(frozen=True)
class ProviderConfig:
    endpoint_url: str = "https://api.openai.com/v1/chat/completions"
    model_id: str = DEFAULT_MODEL
    temperature: float = 0.0
    max_output_tokens: int | None = None
    api_key_env: str = "OPENAI_API_KEY"
    mode: str = "replay"  # "live" | "record" | "replay"
    cassette_dir: str | None = None
    max_attempts: int = 3
    backoff_s: float = 0.5

    def __post_init__(self):
        if self.mode in ("record", "replay") and not self.cassette_dir:
            raise ValueError(f"{self.mode} mode requires cassette_dir")


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    finish_reason: str = "stop"  # "stop" | "length" | "other"
    prompt_tokens: int | None = None
    output_tokens: int | None = None
    provenance: str = ""
    round: int = 1

    def to_json(self) -> dict:
        return {
            "text": self.text,
            "finish_reason": self.finish_reason,
            "prompt_tokens": self.prompt_tokens,
            "output_tokens": self.output_tokens,
        }

    @classmethod
    def from_json(cls, d: dict, provenance: str = "", round: int = 1) -> "CompletionResponse":
        return cls(
            text=d["text"],
            finish_reason=d.get("finish_reason", "stop"),
            prompt_tokens=d.get("prompt_tokens"),
            output_tokens=d.get("output_tokens"),
            provenance=provenance,
            round=round,
        )


def cassette_key(model_id: str, temperature: float, messages: tuple[Message, ...]) -> str:
    payload = {
        "model": model_id,
        "temperature": temperature,
        "messages": [m.to_json() for m in messages],
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class CassetteStore:
    """One JSON file per key under a directory; appends are serialized."""

    def __init__(self, directory: str | os.PathLike):
        self.directory = Path(directory)
        self._lock = threading.Lock()

    def path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def load(self, key: str) -> dict | None:
        p = self.path(key)
        if not p.exists():
            return None
        return json.loads(p.read_text("utf-8"))

    def append(self, key: str, snapshot: list[dict], model_id: str, temperature: float,
               response: CompletionResponse) -> None:
        with self._lock:
            self.directory.mkdir(parents=True, exist_ok=True)
            data = self.load(key) or {
                "key": key,
                "model_id": model_id,
                "temperature": temperature,
                "request_snapshot": snapshot,
                "responses": [],
            }
            data["responses"].append(response.to_json())
            self.path(key).write_text(json.dumps(data, indent=2) + "\n", "utf-8")


class LlmClient:
    """complete() over live HTTP, recording, or cassette replay."""

    def __init__(self, cfg: ProviderConfig, transport=None):
        self.cfg = cfg
        self.store = CassetteStore(cfg.cassette_dir) if cfg.cassette_dir else None
        self._cursors: dict[str, int] = {}
        self._transport = transport  # callable(url, payload, headers) -> (status, body dict)
        self.calls = 0

    def complete(self, prompt: RenderedPrompt) -> CompletionResponse:
        if not prompt.messages:
            raise ValueError("prompt has no messages")
        self.calls += 1
        key = cassette_key(self.cfg.model_id, self.cfg.temperature, prompt.messages)
        if self.cfg.mode == "replay":
            return self._replay(key, prompt)
        response = self._live(prompt)
        if self.cfg.mode == "record":
            assert self.store is not None
            self.store.append(
                key,
                [m.to_json() for m in prompt.messages],
                self.cfg.model_id,
                self.cfg.temperature,
                response,
            )
        return CompletionResponse(
            text=response.text,
            finish_reason=response.finish_reason,
            prompt_tokens=response.prompt_tokens,
            output_tokens=response.output_tokens,
            provenance=f"cassette:{key}" if self.cfg.mode == "record" else response.provenance,
            round=prompt.round,
        )

    def _replay(self, key: str, prompt: RenderedPrompt) -> CompletionResponse:
        assert self.store is not None
        data = self.store.load(key)
        if data is None:
            raise ReplayMiss(key, str(self.store.directory))
        cursor = self._cursors.get(key, 0)
        responses = data.get("responses", [])
        if cursor >= len(responses):
            raise ReplayMiss(key, f"cassette exhausted after {len(responses)} responses")
        self._cursors[key] = cursor + 1
        return CompletionResponse.from_json(
            responses[cursor], provenance=f"cassette:{key}#{cursor}", round=prompt.round
        )

    def _live(self, prompt: RenderedPrompt) -> CompletionResponse:
        api_key = os.environ.get(self.cfg.api_key_env, "")
        if not api_key:
            raise AuthMissing(f"environment variable {self.cfg.api_key_env} is not set")
        payload: dict = {
            "model": self.cfg.model_id,
            "temperature": self.cfg.temperature,
            "messages": [m.to_json() for m in prompt.messages],
        }
        if self.cfg.max_output_tokens:
            payload["max_tokens"] = self.cfg.max_output_tokens
        headers = {"Authorization": f"Bearer {api_key}", "Content-Type": "application/json"}

        transport = self._transport or _httpx_transport
        last_exc: Exception | None = None
        for attempt in range(self.cfg.max_attempts):
            try:
                status, body = transport(self.cfg.endpoint_url, payload, headers)
            except Exception as exc:  # transport-level failure
                last_exc = exc
                time.sleep(self.cfg.backoff_s * (2 ** attempt))
                continue
            if status == 200:
                return _parse_completion(body)
            if status in (429,) or status >= 500:
                last_exc = ProviderError(status, json.dumps(body)[:500])
                time.sleep(self.cfg.backoff_s * (2 ** attempt))
                continue
            raise ProviderError(status, json.dumps(body)[:500])
        if isinstance(last_exc, ProviderError):
            raise last_exc
        raise NetworkError(f"request failed after {self.cfg.max_attempts} attempts: {last_exc}")


def _httpx_transport(url: str, payload: dict, headers: dict) -> tuple[int, dict]:
    import httpx

    resp = httpx.post(url, json=payload, headers=headers, timeout=120.0)
    try:
        body = resp.json()
    except json.JSONDecodeError:
        body = {"raw": resp.text}
    return resp.status_code, body


def _parse_completion(body: dict) -> CompletionResponse:
    try:
        choice = body["choices"][0]
        text = choice["message"]["content"] or ""
        finish = choice.get("finish_reason", "stop")
    except (KeyError, IndexError, TypeError) as exc:
        raise ProviderError(200, f"malformed completion body: {exc}")
    usage = body.get("usage", {}) or {}
    return CompletionResponse(
        text=text,
        finish_reason=finish if finish in ("stop", "length") else "other",
        prompt_tokens=usage.get("prompt_tokens"),
        output_tokens=usage.get("completion_tokens"),
        provenance=str(body.get("id", "")),
    )


_FENCE = re.compile(r"^[ \t]*```[^\n]*\n", re.M)


def extract_code_blocks(response_text: str) -> list[str]:
    """Bodies of fenced code blocks, in order.

    Without fences, falls back to the longest maximal run of lines that
    lexically resemble Dafny (mentioning lemma/method/ensures/requires/calc);
    every returned snippet is a contiguous substring of the input.
    """
    blocks: list[str] = []
    pos = 0
    while True:
        open_m = _FENCE.search(response_text, pos)
        if not open_m:
            break
        body_start = open_m.end()
        close = response_text.find("```", body_start)
        if close == -1:
            blocks.append(response_text[body_start:])
            pos = len(response_text)
            break
        body_end = close
        if body_end > body_start and response_text[body_end - 1] == "\n":
            body_end -= 1
        blocks.append(response_text[body_start:body_end])
        pos = close + 3
    if blocks:
        return [b for b in blocks if b.strip()]

    return _dafny_looking_run(response_text)


_WORD = {w: re.compile(rf"\b{w}\b") for w in DAFNY_WORDS}
_CODEISH = re.compile(r"[{};]|:=|==>|::|\b(var|assert|invariant|function|predicate|while|if|case|returns|decreases|forall|exists|ghost|datatype|type)\b")


def _dafny_looking_run(text: str) -> list[str]:
    lines = text.split("\n")
    offsets = [0]
    for ln in lines:
        offsets.append(offsets[-1] + len(ln) + 1)

    def code_like(ln: str) -> bool:
        if not ln.strip():
            return True  # interior blank lines stay inside a run
        return bool(_CODEISH.search(ln)) or any(rx.search(ln) for rx in _WORD.values())

    runs: list[tuple[int, int]] = []
    i = 0
    n = len(lines)
    while i < n:
        if code_like(lines[i]) and lines[i].strip():
            j = i
            while j + 1 < n and code_like(lines[j + 1]):
                j += 1
            while j > i and not lines[j].strip():
                j -= 1
            runs.append((i, j))
            i = j + 1
        else:
            i += 1

    best: tuple[int, int] | None = None
    best_len = 0
    for (a, b) in runs:
        body = "\n".join(lines[a:b + 1])
        if not any(rx.search(body) for rx in _WORD.values()):
            continue
        if len(body) > best_len:
            best, best_len = (a, b), len(body)
    if best is None:
        return []
    a, b = best
    start = offsets[a]
    end = offsets[b] + len(lines[b])
    return [text[start:end]]

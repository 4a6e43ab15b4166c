"""Chat-completion backends: a wire-compatible HTTP client and the
deterministic scripted stub every test runs against.

The API key comes from the environment only; it is never written to config
files or logs.
"""

from __future__ import annotations

import json
import os
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Optional

ENV_URL = "AUTOLAB_LLM_URL"
ENV_MODEL = "AUTOLAB_LLM_MODEL"
ENV_API_KEY = "AUTOLAB_LLM_API_KEY"

DEFAULT_MODEL = "gpt-4.1"


class LlmError(RuntimeError):
    pass


class StubExhausted(LlmError):
    pass


@dataclass
class ChatRequest:
    model: str
    messages: list[dict]
    temperature: float = 0.0

    def __post_init__(self):
        if not self.messages:
            raise ValueError("messages must be non-empty")
        for message in self.messages:
            if message.get("role") not in ("system", "user", "assistant"):
                raise ValueError(f"bad role in message: {message!r}")

    def to_json(self) -> str:
        # Field order fixed so identical requests serialize byte-identically.
        payload = {
            "model": self.model,
            "messages": [
                {"role": m["role"], "content": m["content"]} for m in self.messages
            ],
            "temperature": self.temperature,
        }
        return json.dumps(payload, separators=(",", ":"), ensure_ascii=False)


class HttpBackend:
    """POSTs the common chat-completions JSON shape, returns the reply text."""

    def __init__(self, url: Optional[str] = None, api_key: Optional[str] = None,
                 timeout: float = 60.0):
        self.url = url or os.environ.get(ENV_URL, "")
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_API_KEY)
        self.timeout = timeout
        if not self.url:
            raise LlmError(f"no endpoint URL; set {ENV_URL}")

    def complete(self, request: ChatRequest) -> str:
        body = request.to_json().encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        http_request = urllib.request.Request(self.url, data=body, headers=headers,
                                              method="POST")
        try:
            with urllib.request.urlopen(http_request, timeout=self.timeout) as response:
                raw = response.read()
        except urllib.error.HTTPError as exc:
            snippet = exc.read()[:200].decode("utf-8", errors="replace")
            raise LlmError(f"HTTP {exc.code}: {snippet}") from None
        except OSError as exc:
            raise LlmError(f"transport failure: {exc}") from None
        try:
            payload = json.loads(raw)
            return payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise LlmError(f"malformed completion payload: {exc}") from None


@dataclass
class ScriptedStub:
    """Canned replies in order, with optional substring matchers that take
    precedence when the last user message contains their trigger."""

    replies: list[str] = field(default_factory=list)
    matchers: list[tuple[str, str]] = field(default_factory=list)
    cursor: int = 0

    def complete(self, request: ChatRequest) -> str:
        last_user = ""
        for message in reversed(request.messages):
            if message["role"] == "user":
                last_user = message["content"]
                break
        for trigger, reply in self.matchers:
            if trigger in last_user:
                return reply
        if self.cursor >= len(self.replies):
            raise StubExhausted(
                f"stub exhausted after {len(self.replies)} replies"
            )
        reply = self.replies[self.cursor]
        self.cursor += 1
        return reply

    @classmethod
    def from_file(cls, path: str) -> "ScriptedStub":
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict) -> "ScriptedStub":
        matchers = [(m["contains"], m["reply"]) for m in data.get("matchers", [])]
        return cls(replies=list(data.get("replies", [])), matchers=matchers)


def complete(backend, request: ChatRequest) -> str:
    """Backend-agnostic completion; agent_core never sees which one it got."""
    return backend.complete(request)

"""Language-model clients: anything with ``complete(prompt) -> str``.

``TemplateClient`` is the deterministic default; ``RecordedClient`` replays
fixtures keyed by prompt hash; ``HttpClient`` talks to a live endpoint
configured through ``HOIMOTION_LLM_URL``, ``HOIMOTION_LLM_TOKEN`` and
``HOIMOTION_LLM_TIMEOUT``.
"""

from __future__ import annotations

import hashlib
import json
import os
import urllib.error
import urllib.request
from pathlib import Path
from typing import Protocol


class LLMError(RuntimeError):
    """A client call failed; safe to retry with the same prompt."""

    retriable = True

    def __init__(self, message: str, prompt: str):
        super().__init__(message)
        self.prompt = prompt


class Prompt(str):
    """A prompt string that also carries the structured inputs it was built from."""

    context: dict

    def __new__(cls, text: str, context: dict | None = None):
        obj = super().__new__(cls, text)
        obj.context = context or {}
        return obj


class LanguageModelClient(Protocol):
    def complete(self, prompt: str) -> str: ...


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(str(prompt).encode("utf-8")).hexdigest()[:16]


class EchoClient:
    def complete(self, prompt: str) -> str:
        return f"[echo:{prompt_hash(prompt)}]"


class TemplateClient:
    """Rule-based stand-in for a fine-tuned LLM; reads ``Prompt.context``."""

    def complete(self, prompt: str) -> str:
        from hoimotion import annotation

        ctx = getattr(prompt, "context", None)
        if not ctx or "kind" not in ctx:
            raise LLMError("template backend needs a structured prompt", prompt)
        if ctx["kind"] == "coarse":
            return annotation.template_coarse(ctx["summary"])
        if ctx["kind"] == "fine":
            return "\n".join(annotation.template_fine(ctx["coarse"], ctx["summary"], ctx["events"]))
        raise LLMError(f"unknown prompt kind {ctx['kind']!r}", prompt)


class RecordedClient:
    """Replays responses from a JSON object ``{prompt_hash: text}``."""

    def __init__(self, responses: dict | str | Path):
        if not isinstance(responses, dict):
            responses = json.loads(Path(responses).read_text())
        self.responses = responses

    def complete(self, prompt: str) -> str:
        key = prompt_hash(prompt)
        if key not in self.responses:
            raise LLMError(f"no recorded response for prompt {key}", prompt)
        return self.responses[key]


class HttpClient:
    """POSTs ``{"prompt": ...}`` and expects ``{"text": ...}`` back."""

    def __init__(self, url: str | None = None, token: str | None = None, timeout: float | None = None):
        self.url = url or os.environ.get("HOIMOTION_LLM_URL")
        self.token = token or os.environ.get("HOIMOTION_LLM_TOKEN")
        self.timeout = timeout or float(os.environ.get("HOIMOTION_LLM_TIMEOUT", "30"))
        if not self.url:
            raise ValueError("HttpClient needs a URL (HOIMOTION_LLM_URL)")

    def complete(self, prompt: str) -> str:
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        req = urllib.request.Request(
            self.url, data=json.dumps({"prompt": str(prompt)}).encode(), headers=headers
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return json.loads(resp.read())["text"]
        except (urllib.error.URLError, TimeoutError, KeyError, ValueError) as exc:
            raise LLMError(f"LLM request failed: {exc}", prompt) from exc


def make_client(name: str, fixtures: str | None = None) -> LanguageModelClient:
    if name == "template":
        return TemplateClient()
    if name == "recorded":
        return RecordedClient(fixtures)
    if name == "http":
        return HttpClient()
    if name == "echo":
        return EchoClient()
    raise ValueError(f"unknown LLM backend {name!r}")

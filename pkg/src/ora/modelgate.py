"""Language-model backend abstraction and the global budget ledger.

One chat-completion contract with two implementations: an HTTP client for
OpenAI-compatible endpoints, and a scripted playbook backend that makes every
test hermetic. All calls from all lead agents flow through a single
ModelGateway, which enforces the run-wide call budget.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import requests
import yaml

#: Default decoding temperatures; ideation runs hotter than code edits.
IDEA_TEMPERATURE = 0.7
CODE_TEMPERATURE = 0.2

ENV_BASE_URL = "ORA_BASE_URL"
ENV_MODEL = "ORA_MODEL"
ENV_API_KEY = "ORA_API_KEY"


class BudgetExhausted(Exception):
    pass


class TransportError(Exception):
    pass


class MalformedResponse(Exception):
    pass


class ScriptExhausted(Exception):
    pass


@dataclass(frozen=True)
class ChatRequest:
    system: str
    messages: tuple[tuple[str, str], ...]  # (role, text), roles user/assistant
    temperature: float = IDEA_TEMPERATURE
    max_output_tokens: int = 4096
    tag: str = ""  # caller label, e.g. "idea_gen", "experiment_step"

    def __post_init__(self):
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if self.messages[0][0] != "user":
            raise ValueError("first message must have role 'user'")
        for role, _ in self.messages:
            if role not in ("user", "assistant"):
                raise ValueError(f"bad role {role!r}")

    def full_text(self) -> str:
        return "\n".join([self.system, *(text for _, text in self.messages)])


def user_request(system: str, prompt: str, *, tag: str, temperature: float,
                 max_output_tokens: int = 4096) -> ChatRequest:
    return ChatRequest(
        system=system,
        messages=(("user", prompt),),
        temperature=temperature,
        max_output_tokens=max_output_tokens,
        tag=tag,
    )


@dataclass(frozen=True)
class ChatResponse:
    text: str
    token_usage: tuple[int, int] = (0, 0)  # (prompt, completion)


@dataclass
class BudgetLedger:
    """Run-global counters for the two cost axes: model calls and candidate
    evaluations. Shared by every lead agent; all updates are atomic."""

    budget_llm_calls: int
    budget_evaluations: int
    llm_calls_used: int = 0
    evaluations_used: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def try_charge_llm_call(self) -> bool:
        with self._lock:
            if self.llm_calls_used >= self.budget_llm_calls:
                return False
            self.llm_calls_used += 1
            return True

    def refund_llm_call(self) -> None:
        with self._lock:
            self.llm_calls_used -= 1

    def charge_evaluation(self) -> bool:
        """Reserve one evaluation; False once the budget is gone."""
        with self._lock:
            if self.evaluations_used >= self.budget_evaluations:
                return False
            self.evaluations_used += 1
            return True

    def snapshot(self) -> tuple[int, int]:
        with self._lock:
            return (self.llm_calls_used, self.evaluations_used)


class ScriptedBackend:
    """Deterministic playbook backend.

    The playbook is an ordered list of entries, each with a `tag`, an optional
    `match` substring tested against the full prompt, and a `response`. Every
    request consumes the first unconsumed matching entry; running out is a
    hard ScriptExhausted error so a miswired test fails loudly.
    """

    def __init__(self, entries: list[dict]):
        for i, entry in enumerate(entries):
            if "tag" not in entry or "response" not in entry:
                raise ValueError(f"playbook entry {i} needs 'tag' and 'response'")
        self._entries = [dict(e, consumed=False) for e in entries]
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        data = yaml.safe_load(Path(path).read_text())
        if data is None:
            data = []
        if not isinstance(data, list):
            raise ValueError("playbook must be a YAML list of entries")
        return cls(data)

    def complete(self, request: ChatRequest) -> ChatResponse:
        text = request.full_text()
        with self._lock:
            for entry in self._entries:
                if entry["consumed"] or entry["tag"] != request.tag:
                    continue
                needle = entry.get("match")
                if needle is not None and needle not in text:
                    continue
                entry["consumed"] = True
                response = str(entry["response"])
                return ChatResponse(
                    text=response,
                    token_usage=(len(text.split()), len(response.split())),
                )
        raise ScriptExhausted(f"no unconsumed playbook entry for tag {request.tag!r}")

    def remaining(self) -> int:
        with self._lock:
            return sum(1 for e in self._entries if not e["consumed"])


class HttpBackend:
    """OpenAI-compatible chat-completions client with bounded retries."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str = "",
        *,
        timeout: float = 120.0,
        max_retries: int = 3,
        retry_delay: float = 1.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.max_retries = max_retries
        self.retry_delay = retry_delay
        self._session = requests.Session()

    @classmethod
    def from_env(cls, **kwargs) -> "HttpBackend":
        base_url = os.environ.get(ENV_BASE_URL)
        model = os.environ.get(ENV_MODEL)
        if not base_url or not model:
            raise TransportError(
                f"HTTP backend needs {ENV_BASE_URL} and {ENV_MODEL} set"
            )
        return cls(base_url, model, os.environ.get(ENV_API_KEY, ""), **kwargs)

    def complete(self, request: ChatRequest) -> ChatResponse:
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system},
                *({"role": role, "content": text} for role, text in request.messages),
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.retry_delay * 2 ** (attempt - 1))
            try:
                http = self._session.post(
                    f"{self.base_url}/chat/completions",
                    data=json.dumps(payload),
                    headers=headers,
                    timeout=self.timeout,
                )
                if http.status_code >= 500:
                    last_error = TransportError(f"server error {http.status_code}")
                    continue
                if http.status_code != 200:
                    raise TransportError(f"unexpected status {http.status_code}: {http.text[:200]}")
                return self._parse(http.text)
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_error = exc
                continue
        raise TransportError(f"gave up after {self.max_retries} retries: {last_error}")

    @staticmethod
    def _parse(body: str) -> ChatResponse:
        try:
            data = json.loads(body)
            text = data["choices"][0]["message"]["content"]
            usage = data.get("usage", {})
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"cannot parse completion body: {exc}") from exc
        if not isinstance(text, str) or not text.strip():
            raise MalformedResponse("empty completion text")
        return ChatResponse(
            text=text,
            token_usage=(
                int(usage.get("prompt_tokens", 0)),
                int(usage.get("completion_tokens", 0)),
            ),
        )


class ModelGateway:
    """Budget-enforcing front door for all model calls.

    A slot is reserved before the backend is invoked so concurrent agents can
    never overrun the budget; a playbook exhaustion refunds the slot because
    no call actually happened.
    """

    def __init__(self, backend, ledger: BudgetLedger):
        self.backend = backend
        self.ledger = ledger

    def complete(self, request: ChatRequest) -> ChatResponse:
        if not self.ledger.try_charge_llm_call():
            raise BudgetExhausted(
                f"LLM call budget exhausted ({self.ledger.budget_llm_calls})"
            )
        try:
            response = self.backend.complete(request)
        except ScriptExhausted:
            self.ledger.refund_llm_call()
            raise
        if not response.text.strip():
            raise MalformedResponse("backend returned empty text")
        return response

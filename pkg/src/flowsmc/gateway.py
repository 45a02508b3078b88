"""Client for an OpenAI-compatible chat-completions endpoint.

Implements the helper contract workflows are written against: a list of
message strings plus an agent role and instructions go in, exactly
``num_of_response`` completion texts come out. Adds retry with exponential
backoff and jitter, token/cost accounting, and a record/replay cassette mode
that makes every engine test network-free and bit-deterministic.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import httpx

from .errors import CassetteMissError, GatewayExhaustedError, MalformedResponseError

logger = logging.getLogger(__name__)

ENDPOINT_ENV = "FLOWSMC_ENDPOINT"
API_KEY_ENV = "FLOWSMC_API_KEY"

CHAT_COMPLETIONS_PATH = "/v1/chat/completions"

RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})


@dataclass(frozen=True)
class ChatRequest:
    """One chat-completion call.

    ``messages`` are bare strings assigned alternating user/assistant roles
    starting at user; ``agent_role`` and ``instructions`` are composed into
    the system message as role preamble plus instructions appendix.
    """

    messages: list[str]
    temperature: float = 0.0
    num_of_response: int = 1
    agent_role: str = ""
    instructions: str = ""
    model: "str | None" = None
    timeout: "float | None" = None

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("messages must be nonempty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.num_of_response < 1:
            raise ValueError("num_of_response must be >= 1")


def compose_system(agent_role: str, instructions: str) -> str:
    """Byte-stable system message: role preamble, then instructions appendix."""
    system = f"You are {agent_role}." if agent_role else ""
    if instructions:
        system = f"{system}\n\n{instructions}" if system else instructions
    return system


def request_body(req: ChatRequest, default_model: str) -> dict:
    messages = []
    system = compose_system(req.agent_role, req.instructions)
    if system:
        messages.append({"role": "system", "content": system})
    for i, content in enumerate(req.messages):
        messages.append(
            {"role": "user" if i % 2 == 0 else "assistant", "content": content}
        )
    return {
        "model": req.model or default_model,
        "messages": messages,
        "temperature": req.temperature,
        "n": req.num_of_response,
    }


def request_digest(body: dict) -> str:
    canonical = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class UsageSnapshot:
    input_tokens: int = 0
    output_tokens: int = 0
    requests: int = 0
    total_cost: float = 0.0

    def as_dict(self) -> dict:
        return {
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "requests": self.requests,
            "total_cost": self.total_cost,
        }


class UsageLedger:
    """Monotone token/cost accounting; one update per completed request."""

    def __init__(self, input_price: float = 0.0, output_price: float = 0.0):
        self.input_price = input_price
        self.output_price = output_price
        self._lock = threading.Lock()
        self._state = UsageSnapshot()

    def record(self, input_tokens: int, output_tokens: int) -> None:
        with self._lock:
            self._state.input_tokens += input_tokens
            self._state.output_tokens += output_tokens
            self._state.requests += 1
            self._state.total_cost += (
                input_tokens * self.input_price + output_tokens * self.output_price
            )

    def summary(self) -> UsageSnapshot:
        with self._lock:
            return replace(self._state)


class Cassette:
    """JSONL request/response store keyed by request digest.

    Record mode appends one entry per previously unseen digest; replay mode
    serves the stored response for a digest and raises on a miss.
    """

    def __init__(self, path: "str | Path"):
        self.path = Path(path)
        self._lock = threading.Lock()
        self.entries: dict[str, dict] = {}
        if self.path.exists():
            for line in self.path.read_text().splitlines():
                if line.strip():
                    rec = json.loads(line)
                    self.entries[rec["digest"]] = rec

    def lookup(self, digest: str) -> dict:
        rec = self.entries.get(digest)
        if rec is None:
            raise CassetteMissError(digest)
        return rec["response"]

    def record(self, digest: str, request: dict, response: dict) -> None:
        with self._lock:
            if digest in self.entries:
                return
            rec = {"digest": digest, "request": request, "response": response}
            self.entries[digest] = rec
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def usage_totals(self) -> tuple[int, int, int]:
        """(input tokens, output tokens, entries) summed over the cassette."""
        tin = tout = 0
        for rec in self.entries.values():
            usage = rec["response"].get("usage", {})
            tin += usage.get("prompt_tokens", 0)
            tout += usage.get("completion_tokens", 0)
        return tin, tout, len(self.entries)


@dataclass
class GatewayConfig:
    endpoint: str = ""
    api_key: str = ""
    model: str = "default-model"
    input_price: float = 0.0
    output_price: float = 0.0
    max_attempts: int = 3
    backoff_base: float = 0.5
    backoff_cap: float = 30.0
    timeout: float = 60.0
    mode: str = "live"  # live | record | replay
    cassette_path: "str | Path | None" = None
    max_concurrency: int = 8

    def __post_init__(self) -> None:
        if not self.endpoint:
            self.endpoint = os.environ.get(ENDPOINT_ENV, "")
        if not self.api_key:
            self.api_key = os.environ.get(API_KEY_ENV, "")
        if self.mode not in ("live", "record", "replay"):
            raise ValueError(f"unknown gateway mode {self.mode!r}")
        if self.mode in ("record", "replay") and self.cassette_path is None:
            raise ValueError(f"{self.mode} mode needs a cassette path")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


class LLMGateway:
    """Thread-safe chat-completions client with retries and usage accounting."""

    def __init__(
        self,
        config: GatewayConfig,
        transport: "httpx.BaseTransport | None" = None,
        sleep_fn: Callable[[float], None] = time.sleep,
        jitter_fn: "Callable[[], float] | None" = None,
    ):
        self.config = config
        self.ledger = UsageLedger(config.input_price, config.output_price)
        self.cassette = (
            Cassette(config.cassette_path) if config.cassette_path is not None else None
        )
        self._sleep = sleep_fn
        # jitter defaults to a time-seeded uniform; injectable for determinism
        self._jitter = jitter_fn if jitter_fn is not None else lambda: time.time() % 1.0
        self._semaphore = threading.Semaphore(config.max_concurrency)
        self._client: "httpx.Client | None" = None
        self._client_lock = threading.Lock()
        self._transport = transport
        self.sleeps: list[float] = []  # recorded backoff delays, newest last

    # --- plumbing -----------------------------------------------------------

    def _http(self) -> httpx.Client:
        with self._client_lock:
            if self._client is None:
                self._client = httpx.Client(
                    transport=self._transport, timeout=self.config.timeout
                )
            return self._client

    def close(self) -> None:
        if self._client is not None:
            self._client.close()

    def _backoff(self, attempt: int) -> float:
        delay = min(self.config.backoff_base * (2**attempt), self.config.backoff_cap)
        return delay * (0.5 + 0.5 * self._jitter())

    # --- core call ------------------------------------------------------------

    def call_llm(self, req: ChatRequest) -> list[str]:
        """Exactly ``num_of_response`` completion texts for one request."""
        body = request_body(req, self.config.model)
        digest = request_digest(body)

        if self.config.mode == "replay":
            assert self.cassette is not None
            response = self.cassette.lookup(digest)
            return self._accept(response, req)

        response = self._post_with_retries(body, req)
        if self.config.mode == "record":
            assert self.cassette is not None
            self.cassette.record(digest, body, response)
        return self._accept(response, req)

    def _post_with_retries(self, body: dict, req: ChatRequest) -> dict:
        url = self.config.endpoint.rstrip("/") + CHAT_COMPLETIONS_PATH
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        timeout = req.timeout if req.timeout is not None else self.config.timeout
        last_error = "no attempt made"
        for attempt in range(self.config.max_attempts):
            if attempt > 0:
                delay = self._backoff(attempt - 1)
                self.sleeps.append(delay)
                self._sleep(delay)
            try:
                with self._semaphore:
                    resp = self._http().post(
                        url, json=body, headers=headers, timeout=timeout
                    )
            except httpx.TimeoutException as exc:
                last_error = f"timeout: {exc}"
                continue
            except httpx.TransportError as exc:
                last_error = f"transport error: {exc}"
                continue
            if resp.status_code in RETRYABLE_STATUS:
                last_error = f"HTTP {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise MalformedResponseError(
                    f"HTTP {resp.status_code}: {resp.text[:200]}"
                )
            return resp.json()
        raise GatewayExhaustedError(
            f"gave up after {self.config.max_attempts} attempts ({last_error})"
        )

    def _accept(self, response: dict, req: ChatRequest) -> list[str]:
        try:
            choices = response["choices"]
            texts = [c["message"]["content"] for c in choices]
        except (KeyError, TypeError) as exc:
            raise MalformedResponseError(f"bad response shape: {exc}") from exc
        if len(texts) != req.num_of_response:
            raise MalformedResponseError(
                f"requested {req.num_of_response} choices, got {len(texts)}"
            )
        usage = response.get("usage", {})
        self.ledger.record(
            usage.get("prompt_tokens", 0), usage.get("completion_tokens", 0)
        )
        return texts

    def usage_summary(self) -> dict:
        """Snapshot of cumulative usage; later requests do not mutate it."""
        return self.ledger.summary().as_dict()

"""Minimal client for OpenAI-compatible chat-completion endpoints."""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from typing import Any, Sequence

import httpx

from .errors import BackendRefusal, BackendUnavailable

log = logging.getLogger(__name__)

DEFAULT_BASE_URL = "https://api.openai.com/v1"
DEFAULT_API_KEY_ENV = "OPENAI_API_KEY"
TRANSIENT_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}


class RateLimiter:
    """Enforces a minimum spacing between calls across threads."""

    def __init__(self, max_per_second: float | None):
        self.interval = 1.0 / max_per_second if max_per_second else 0.0
        self._lock = threading.Lock()
        self._next = 0.0

    def wait(self, clock=time.monotonic, sleep=time.sleep) -> None:
        if not self.interval:
            return
        with self._lock:
            now = clock()
            slot = max(now, self._next)
            self._next = slot + self.interval
        if slot > now:
            sleep(slot - now)


class ChatClient:
    """Sends chat-completion requests with retry and a request-rate ceiling.

    Transient failures (timeouts, connection errors, 429 and 5xx) are retried
    with exponential backoff up to ``max_attempts`` total attempts.
    Authentication and other client errors fail immediately.
    """

    def __init__(
        self,
        model: str,
        *,
        base_url: str = DEFAULT_BASE_URL,
        api_key_env: str = DEFAULT_API_KEY_ENV,
        api_key: str | None = None,
        params: dict[str, Any] | None = None,
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff: float = 1.0,
        max_requests_per_second: float | None = None,
        transport: httpx.BaseTransport | None = None,
        sleep=time.sleep,
    ):
        self.model = model
        self.base_url = base_url.rstrip("/")
        self.params = dict(params or {})
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.limiter = RateLimiter(max_requests_per_second)
        self._sleep = sleep
        key = api_key if api_key is not None else os.environ.get(api_key_env)
        headers = {"Content-Type": "application/json"}
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._http = httpx.Client(headers=headers, timeout=timeout, transport=transport)

    @property
    def identifier(self) -> str:
        return f"{self.base_url}#{self.model}"

    def close(self) -> None:
        self._http.close()

    def complete(self, messages: Sequence[dict[str, str]], **extra: Any) -> dict[str, Any]:
        """POST one request and return the decoded JSON body."""
        body = {"model": self.model, "messages": list(messages), **self.params, **extra}
        url = f"{self.base_url}/chat/completions"
        last_error = "no attempt made"
        for attempt in range(1, self.max_attempts + 1):
            self.limiter.wait()
            try:
                resp = self._http.post(url, json=body)
            except httpx.TransportError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
            else:
                if resp.status_code == 200:
                    try:
                        return resp.json()
                    except json.JSONDecodeError:
                        raise BackendUnavailable("endpoint returned non-JSON body") from None
                last_error = f"HTTP {resp.status_code}: {resp.text[:200]}"
                if resp.status_code not in TRANSIENT_STATUS:
                    raise BackendUnavailable(last_error)
            if attempt < self.max_attempts:
                delay = self.backoff * 2 ** (attempt - 1)
                log.info("chat request failed (%s); retry %d in %.1fs", last_error, attempt, delay)
                self._sleep(delay)
        raise BackendUnavailable(f"giving up after {self.max_attempts} attempts: {last_error}")

    def reply_text(self, messages: Sequence[dict[str, str]], **extra: Any) -> str:
        """Return the assistant text of the first choice; empty or filtered replies raise."""
        data = self.complete(messages, **extra)
        try:
            choice = data["choices"][0]
        except (KeyError, IndexError, TypeError):
            raise BackendRefusal("response carries no choices") from None
        if choice.get("finish_reason") == "content_filter":
            raise BackendRefusal("reply blocked by content filter")
        text = (choice.get("message") or {}).get("content") or ""
        if not text.strip():
            raise BackendRefusal("empty reply")
        return text.strip()

"""Client for an OpenAI-compatible ``/completions`` endpoint."""

from __future__ import annotations

import collections
import logging
import os
import threading
import time
from typing import Any, Callable

import httpx

from qgen.backend.base import Backend, Completion, DecodingParams, TokenScore
from qgen.errors import ApiError, CapabilityError, QuotaExceeded, TransportError

log = logging.getLogger(__name__)

API_KEY_ENV = "QGEN_API_KEY"


class _RateLimiter:
    """Sliding one-minute window over request start times."""

    def __init__(self, per_minute: int | None, clock: Callable[[], float], sleep: Callable[[float], None]):
        self.per_minute = per_minute
        self._clock = clock
        self._sleep = sleep
        self._starts: collections.deque[float] = collections.deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        if not self.per_minute:
            return
        while True:
            with self._lock:
                now = self._clock()
                while self._starts and now - self._starts[0] >= 60.0:
                    self._starts.popleft()
                if len(self._starts) < self.per_minute:
                    self._starts.append(now)
                    return
                wait = 60.0 - (now - self._starts[0])
            self._sleep(max(wait, 0.0))


def _error_message(resp: httpx.Response) -> tuple[str, str | None]:
    try:
        body = resp.json()
    except ValueError:
        return resp.text[:500] or f"HTTP {resp.status_code}", None
    err = body.get("error") if isinstance(body, dict) else None
    if isinstance(err, dict):
        return str(err.get("message") or err), err.get("code") or err.get("type")
    if err:
        return str(err), None
    return f"HTTP {resp.status_code}", None


class HttpBackend(Backend):
    """Generation uses ``{model, prompt, max_tokens, temperature, top_p, n, stop}``;
    scoring uses ``echo=True, logprobs=0, max_tokens=0`` on the same endpoint.

    Transport failures, HTTP 5xx and rate-limit 429s are retried up to
    ``max_retries`` times with exponential backoff (``backoff_s * 2**i``).
    Any other error payload is raised immediately as :class:`ApiError`.
    """

    capabilities = frozenset({"greedy", "nucleus", "logprobs"})

    def __init__(
        self,
        base_url: str,
        model: str,
        *,
        api_key: str | None = None,
        timeout_s: float = 60.0,
        max_retries: int = 3,
        max_in_flight: int = 4,
        requests_per_minute: int | None = None,
        backoff_s: float = 1.0,
        max_completions: int | None = None,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
    ):
        super().__init__(max_completions=max_completions)
        self.model = model
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max(1, max_in_flight))
        self._limiter = _RateLimiter(requests_per_minute, clock, sleep)
        key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._client = httpx.Client(
            base_url=base_url.rstrip("/"), headers=headers, timeout=timeout_s, transport=transport
        )
        self.attempts_made = 0

    def close(self) -> None:
        self._client.close()

    def _post(self, payload: dict[str, Any]) -> dict[str, Any]:
        attempt = 0
        while True:
            attempt += 1
            self.attempts_made += 1
            failure: str
            try:
                with self._slots:
                    self._limiter.acquire()
                    resp = self._client.post("/completions", json=payload)
            except httpx.TransportError as exc:
                failure = f"{type(exc).__name__}: {exc}"
            else:
                if resp.status_code < 400:
                    try:
                        body = resp.json()
                    except ValueError as exc:
                        raise ApiError(f"non-JSON response: {exc}", status=resp.status_code) from exc
                    if isinstance(body, dict) and body.get("error"):
                        msg, _ = _error_message(resp)
                        raise ApiError(msg, status=resp.status_code)
                    return body
                msg, code = _error_message(resp)
                if resp.status_code == 429 and code == "insufficient_quota":
                    raise QuotaExceeded(f"provider quota exhausted: {msg}")
                if resp.status_code != 429 and resp.status_code < 500:
                    raise ApiError(msg, status=resp.status_code)
                failure = f"HTTP {resp.status_code}: {msg}"
            if attempt > self.max_retries:
                raise TransportError(f"request failed after {attempt} attempt(s): {failure}", attempts=attempt)
            delay = self.backoff_s * (2 ** (attempt - 1))
            log.warning("completions request failed (%s); retry %d/%d in %.1fs", failure, attempt, self.max_retries, delay)
            self._sleep(delay)

    def _generate(self, prompt: str, params: DecodingParams, call_index: int) -> list[Completion]:
        if params.strategy == "greedy":
            temperature, top_p = 0.0, 1.0
        else:
            temperature, top_p = params.temperature, params.top_p
        payload = {
            "model": self.model,
            "prompt": prompt,
            "max_tokens": params.max_new_tokens,
            "temperature": temperature,
            "top_p": top_p,
            "n": params.n,
            "stop": list(params.stop) or None,
        }
        body = self._post(payload)
        choices = sorted(body.get("choices") or [], key=lambda c: c.get("index", 0))
        return [Completion(c.get("text") or "") for c in choices]

    def _score(self, prompt: str, completion: str) -> list[TokenScore]:
        payload = {
            "model": self.model,
            "prompt": prompt + completion,
            "max_tokens": 0,
            "echo": True,
            "logprobs": 0,
            "temperature": 0.0,
        }
        body = self._post(payload)
        try:
            lp = body["choices"][0]["logprobs"]
            tokens, logprobs, offsets = lp["tokens"], lp["token_logprobs"], lp["text_offset"]
        except (KeyError, IndexError, TypeError) as exc:
            raise CapabilityError(
                "endpoint did not return echo logprobs; use the mock backend or a logprob-capable endpoint"
            ) from exc
        boundary = len(prompt)
        out = []
        for tok, logprob, off in zip(tokens, logprobs, offsets):
            if off + len(tok) <= boundary:
                continue
            if logprob is None:
                raise CapabilityError(f"no logprob returned for completion token {tok!r}")
            out.append(TokenScore(tok, min(0.0, float(logprob))))
        return out

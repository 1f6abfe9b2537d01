"""HTTP client for the JSON wire protocol (see the service module for the server).

Endpoints: POST /v1/score, /v1/generate, /v1/control-logits, /v1/select.
Requests carry {prefix, suffix, evidence[], markers[]} plus the per-op
fields; responses carry {token_logprobs[]} / {text} / {control_logits}.
Retries use exponential backoff and only fire for transport-level
failures; sizing (413) and capability (501) responses are terminal.
"""

from __future__ import annotations

import os
import threading
import time

import httpx

from ..errors import BackendDataError, CapabilityError, SizingError, TransportError
from ..metrics import LikelihoodScore
from ..serialization import PromptParts, fit_to_budget
from .base import ControlDistribution, Generator, SelectionResult, parse_selection_stream, truncate_at_stop

ENDPOINT_ENV_VAR = "CHUNKSHAPLEY_ENDPOINT"
DEFAULT_TIMEOUT = 120.0
DEFAULT_RETRIES = 2
DEFAULT_MAX_IN_FLIGHT = 8


def endpoint_from_env() -> str | None:
    return os.environ.get(ENDPOINT_ENV_VAR) or None


class HttpGenerator(Generator):
    """Shareable client handle; bounds in-flight requests with a semaphore."""

    def __init__(
        self,
        base_url: str | None = None,
        *,
        client: httpx.Client | None = None,
        timeout: float = DEFAULT_TIMEOUT,
        retries: int = DEFAULT_RETRIES,
        backoff: float = 0.5,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
        max_context_chars: int | None = None,
    ):
        if client is None:
            base_url = base_url or endpoint_from_env()
            if not base_url:
                raise ValueError(
                    f"no backend endpoint: pass base_url or set {ENDPOINT_ENV_VAR}"
                )
            client = httpx.Client(base_url=base_url, timeout=timeout)
        self._client = client
        self._retries = retries
        self._backoff = backoff
        self._sem = threading.BoundedSemaphore(max_in_flight)
        self.max_context_chars = max_context_chars

    def close(self) -> None:
        self._client.close()

    def _payload(self, parts: PromptParts) -> tuple[PromptParts, dict]:
        parts = fit_to_budget(parts, self.max_context_chars)
        return parts, {
            "prefix": parts.prefix,
            "suffix": parts.suffix,
            "evidence": list(parts.evidence),
            "markers": list(parts.markers),
        }

    def _post(self, path: str, payload: dict) -> dict:
        last_exc: Exception | None = None
        for attempt in range(self._retries + 1):
            try:
                with self._sem:
                    resp = self._client.post(path, json=payload)
            except httpx.HTTPError as exc:
                last_exc = exc
                if attempt < self._retries:
                    time.sleep(self._backoff * (2**attempt))
                continue
            if resp.status_code == 200:
                return resp.json()
            if resp.status_code == 413:
                raise SizingError(resp.text)
            if resp.status_code == 501:
                raise CapabilityError(resp.text)
            if resp.status_code >= 500:
                last_exc = TransportError(f"{resp.status_code}: {resp.text[:200]}")
                if attempt < self._retries:
                    time.sleep(self._backoff * (2**attempt))
                continue
            raise BackendDataError(f"{resp.status_code}: {resp.text[:200]}")
        raise TransportError(f"backend unreachable after {self._retries + 1} attempts: {last_exc}")

    def score(self, parts: PromptParts, target: str) -> LikelihoodScore:
        if not target:
            raise ValueError("score target must be non-empty")
        _, payload = self._payload(parts)
        payload["target"] = target
        data = self._post("/v1/score", payload)
        logprobs = data.get("token_logprobs")
        if not isinstance(logprobs, list):
            raise BackendDataError("score response missing token_logprobs")
        return LikelihoodScore(tuple(logprobs))

    def generate(self, parts: PromptParts, max_new_tokens: int, stop: tuple[str, ...] = ()) -> str:
        _, payload = self._payload(parts)
        payload["max_new_tokens"] = max_new_tokens
        payload["stop"] = list(stop)
        data = self._post("/v1/generate", payload)
        text = data.get("text")
        if not isinstance(text, str):
            raise BackendDataError("generate response missing text")
        # defensive client-side cut in case the backend ignored the stop list
        return truncate_at_stop(text, tuple(stop))

    def control_distribution(self, parts: PromptParts) -> ControlDistribution:
        _, payload = self._payload(parts)
        data = self._post("/v1/control-logits", payload)
        logits = data.get("control_logits")
        if not isinstance(logits, dict) or "need" not in logits or "done" not in logits:
            raise BackendDataError("control response missing control_logits{need, done}")
        return ControlDistribution.from_logits(float(logits["need"]), float(logits["done"]))

    def _select(self, parts: PromptParts, k: int) -> SelectionResult:
        _, payload = self._payload(parts)
        data = self._post("/v1/select", payload)
        text = data.get("text")
        if not isinstance(text, str):
            raise BackendDataError("select response missing text")
        return parse_selection_stream(text, k)

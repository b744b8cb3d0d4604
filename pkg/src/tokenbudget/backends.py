"""Pluggable token-generation backends and token counting.

A backend is a continuation oracle: given the full context so far it returns
the next chunk of tokens plus a stop reason, never exceeding the requested
cap. Each generation session owns a fresh backend session, so concurrent
sessions share no mutable state.

Three realizations ship here:

* ``ScriptedBackend`` — deterministic mock with a fixed think/answer script.
* ``BudgetSensitiveBackend`` — synthetic stand-in for a budget-following
  model; it reads the injected ratio markers, infers the budget, and stops
  at a target fraction of it.
* ``HttpStreamBackend`` — client for a line-delimited streaming completion
  server (one JSON token event per line, terminal stop-reason line).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol, Sequence

import httpx

from .core import RATIO_MARKER_RE, THINK_CLOSE, tokenize
from .errors import InvalidParameterError


class StopReason(str, Enum):
    CAP_REACHED = "cap_reached"
    STOP_MARKER = "stop_marker"
    END_OF_SEQUENCE = "end_of_sequence"
    ERROR = "error"


@dataclass(frozen=True)
class SamplingParams:
    """Decoding knobs forwarded to the backend; temperature 0 means greedy."""

    temperature: float = 0.0
    top_p: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise InvalidParameterError("temperature must be >= 0")
        if not (0 < self.top_p <= 1):
            raise InvalidParameterError("top_p must be in (0, 1]")


@dataclass(frozen=True)
class ContinuationRequest:
    context: str
    max_tokens: int
    stop_markers: tuple[str, ...] = ()
    sampling: SamplingParams = SamplingParams()

    def __post_init__(self) -> None:
        if self.max_tokens < 1:
            raise InvalidParameterError("max_tokens must be >= 1")


@dataclass(frozen=True)
class ContinuationResponse:
    tokens: tuple[str, ...]
    stop_reason: StopReason
    detail: str | None = None


class BackendSession(Protocol):
    def complete(self, request: ContinuationRequest) -> ContinuationResponse: ...


class Backend(Protocol):
    def new_session(self) -> BackendSession: ...


def _in_answer_phase(context: str) -> bool:
    # The generation loop appends the think-close tag before any answer
    # request, so its presence cleanly separates the two phases.
    return THINK_CLOSE in context


class ScriptedBackend:
    """Deterministic mock: emit filler until a scripted stop point.

    ``think_tokens`` is the number of tokens after which the mock signals the
    think-close marker (None: never stops, always fills the cap).
    ``answer_tokens`` plays the same role for the answer phase. When
    ``answer_text`` is set, the answer phase replays its tokens instead of
    filler, which makes graded end-to-end runs possible.
    """

    def __init__(
        self,
        think_tokens: int | None = None,
        answer_tokens: int | None = 5,
        answer_text: str | None = None,
    ) -> None:
        if think_tokens is not None and think_tokens < 0:
            raise InvalidParameterError("scripted think length must be >= 0")
        if answer_tokens is not None and answer_tokens < 0:
            raise InvalidParameterError("scripted answer length must be >= 0")
        self.think_tokens = think_tokens
        self.answer_tokens = answer_tokens
        self.answer_surface = tokenize(answer_text) if answer_text is not None else None

    def new_session(self) -> "ScriptedSession":
        return ScriptedSession(self)


class ScriptedSession:
    def __init__(self, script: ScriptedBackend) -> None:
        self._script = script
        self._think_emitted = 0
        self._answer_emitted = 0

    def complete(self, request: ContinuationRequest) -> ContinuationResponse:
        cap = request.max_tokens
        if _in_answer_phase(request.context):
            return self._answer_chunk(cap)
        return self._think_chunk(cap)

    def _think_chunk(self, cap: int) -> ContinuationResponse:
        quota = self._script.think_tokens
        if quota is None:
            tokens = self._filler("w", self._think_emitted, cap)
            self._think_emitted += cap
            return ContinuationResponse(tokens, StopReason.CAP_REACHED)
        remaining = max(quota - self._think_emitted, 0)
        n = min(remaining, cap)
        tokens = self._filler("w", self._think_emitted, n)
        self._think_emitted += n
        if remaining <= cap:
            # The close marker fires as soon as the quota is spent, even when
            # that coincides with the cap boundary.
            return ContinuationResponse(tokens, StopReason.STOP_MARKER)
        return ContinuationResponse(tokens, StopReason.CAP_REACHED)

    def _answer_chunk(self, cap: int) -> ContinuationResponse:
        surface = self._script.answer_surface
        if surface is not None:
            remaining = surface[self._answer_emitted :]
            n = min(len(remaining), cap)
            self._answer_emitted += n
            reason = StopReason.END_OF_SEQUENCE if len(remaining) <= cap else StopReason.CAP_REACHED
            return ContinuationResponse(tuple(remaining[:n]), reason)
        quota = self._script.answer_tokens
        if quota is None:
            tokens = self._filler("a", self._answer_emitted, cap)
            self._answer_emitted += cap
            return ContinuationResponse(tokens, StopReason.CAP_REACHED)
        remaining = max(quota - self._answer_emitted, 0)
        n = min(remaining, cap)
        tokens = self._filler("a", self._answer_emitted, n)
        self._answer_emitted += n
        if remaining <= cap:
            return ContinuationResponse(tokens, StopReason.END_OF_SEQUENCE)
        return ContinuationResponse(tokens, StopReason.CAP_REACHED)

    @staticmethod
    def _filler(prefix: str, start: int, n: int) -> tuple[str, ...]:
        return tuple(f"{prefix}{start + i + 1}" for i in range(n))


class BudgetSensitiveBackend:
    """Synthetic policy that follows the injected ratio markers.

    The session reconstructs the marker stride from the positions of the
    first two markers it sees, infers the budget as stride * K, and plans to
    close its reasoning at ``plan_position + target_fraction * remaining``.
    Crucially the resulting think length is analytically predictable, which
    makes end-to-end adherence metrics checkable in tests. Without parseable
    markers the policy never stops on its own.
    """

    def __init__(self, target_fraction: float, answer_tokens: int = 5) -> None:
        if target_fraction <= 0:
            raise InvalidParameterError("target fraction must be positive")
        if answer_tokens < 0:
            raise InvalidParameterError("answer length must be >= 0")
        self.target_fraction = target_fraction
        self.answer_tokens = answer_tokens

    def new_session(self) -> "BudgetSensitiveSession":
        return BudgetSensitiveSession(self)


class BudgetSensitiveSession:
    def __init__(self, policy: BudgetSensitiveBackend) -> None:
        self._policy = policy
        self._think_emitted = 0
        self._answer_emitted = 0
        self._marker_positions: list[int] = []
        self._planned_total: int | None = None
        self._tracking_lost = False

    def complete(self, request: ContinuationRequest) -> ContinuationResponse:
        cap = request.max_tokens
        if _in_answer_phase(request.context):
            return self._answer_chunk(cap)
        self._observe_markers(request.context)
        plan = self._planned_total
        if plan is not None:
            position = self._think_emitted + len(self._marker_positions)
            stop_in = plan - position
            if stop_in <= cap:
                n = max(stop_in, 0)
                tokens = self._emit_think(n)
                return ContinuationResponse(tokens, StopReason.STOP_MARKER)
        tokens = self._emit_think(cap)
        return ContinuationResponse(tokens, StopReason.CAP_REACHED)

    def _observe_markers(self, context: str) -> None:
        markers = [(int(m.group(1)), int(m.group(2))) for m in RATIO_MARKER_RE.finditer(context)]
        seen = len(self._marker_positions)
        if len(markers) == seen or self._tracking_lost:
            return
        if len(markers) > seen + 1:
            # More than one marker arrived between requests; the session can
            # no longer attribute positions, so it stops planning.
            self._tracking_lost = True
            return
        position = self._think_emitted + len(markers) - 1
        self._marker_positions.append(position)
        if self._planned_total is None and len(self._marker_positions) >= 2:
            stride = self._marker_positions[1] - self._marker_positions[0]
            k_total = markers[-1][1]
            if stride < 1 or k_total < 1:
                return
            inferred_budget = stride * k_total
            anchor = self._marker_positions[1]
            remaining = inferred_budget - anchor
            self._planned_total = anchor + int(self._policy.target_fraction * remaining)

    def _emit_think(self, n: int) -> tuple[str, ...]:
        tokens = tuple(f"w{self._think_emitted + i + 1}" for i in range(n))
        self._think_emitted += n
        return tokens

    def _answer_chunk(self, cap: int) -> ContinuationResponse:
        remaining = max(self._policy.answer_tokens - self._answer_emitted, 0)
        n = min(remaining, cap)
        tokens = tuple(f"a{self._answer_emitted + i + 1}" for i in range(n))
        self._answer_emitted += n
        if remaining <= cap:
            return ContinuationResponse(tokens, StopReason.END_OF_SEQUENCE)
        return ContinuationResponse(tokens, StopReason.CAP_REACHED)


# --- Streaming HTTP client ----------------------------------------------------


@dataclass(frozen=True)
class EndpointConfig:
    """Connection settings for a streaming completion server."""

    base_url: str
    model: str = "default"
    auth_env: str = "TOKENBUDGET_API_TOKEN"
    timeout_s: float = 30.0
    max_retries: int = 2
    path: str = "/v1/stream"


_REMOTE_STOP_REASONS = {
    "cap_reached": StopReason.CAP_REACHED,
    "stop_marker": StopReason.STOP_MARKER,
    "end_of_sequence": StopReason.END_OF_SEQUENCE,
}


class HttpStreamBackend:
    def __init__(self, config: EndpointConfig) -> None:
        self.config = config

    def new_session(self) -> "HttpStreamSession":
        return HttpStreamSession(self.config)


class HttpStreamSession:
    """One connection per generation session; retries are whole-request.

    A connection failure (connect error, timeout, or a stream that ends
    without a terminal event) discards any partial tokens and replays the
    identical request, up to ``max_retries`` additional attempts. Protocol
    violations (bad status, malformed event line, unknown stop reason) are
    not retried: they surface immediately as an error response.
    """

    def __init__(self, config: EndpointConfig, client: httpx.Client | None = None) -> None:
        self._config = config
        self._client = client or httpx.Client(timeout=config.timeout_s)
        self._owns_client = client is None

    def close(self) -> None:
        if self._owns_client:
            self._client.close()

    def __enter__(self) -> "HttpStreamSession":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()

    def complete(self, request: ContinuationRequest) -> ContinuationResponse:
        url = self._config.base_url.rstrip("/") + self._config.path
        payload = {
            "model": self._config.model,
            "context": request.context,
            "max_tokens": request.max_tokens,
            "stop": list(request.stop_markers),
            "temperature": request.sampling.temperature,
            "top_p": request.sampling.top_p,
            "seed": request.sampling.seed,
        }
        headers = {}
        token = os.environ.get(self._config.auth_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"

        last_failure = "no attempts made"
        for _attempt in range(self._config.max_retries + 1):
            try:
                result = self._stream_once(url, payload, headers, request.max_tokens)
            except httpx.TransportError as exc:
                last_failure = f"connection failure: {exc!r}"
                continue
            if result is None:  # stream dropped before the terminal event
                last_failure = "stream ended without terminal event"
                continue
            return result
        return ContinuationResponse((), StopReason.ERROR, detail=last_failure)

    def _stream_once(
        self, url: str, payload: dict, headers: dict, cap: int
    ) -> ContinuationResponse | None:
        tokens: list[str] = []
        with self._client.stream("POST", url, json=payload, headers=headers) as response:
            if response.status_code != 200:
                return ContinuationResponse(
                    (), StopReason.ERROR, detail=f"HTTP {response.status_code}"
                )
            for line in response.iter_lines():
                if not line.strip():
                    continue
                try:
                    event = json.loads(line)
                except json.JSONDecodeError:
                    return ContinuationResponse(
                        (), StopReason.ERROR, detail=f"malformed event line: {line[:80]!r}"
                    )
                if "token" in event:
                    tokens.append(str(event["token"]))
                    if len(tokens) >= cap:
                        # Cap enforcement is client-side: stop reading even if
                        # the server keeps streaming.
                        return ContinuationResponse(tuple(tokens), StopReason.CAP_REACHED)
                elif event.get("done"):
                    reason = _REMOTE_STOP_REASONS.get(str(event.get("stop_reason")))
                    if reason is None:
                        return ContinuationResponse(
                            (),
                            StopReason.ERROR,
                            detail=f"unknown stop reason {event.get('stop_reason')!r}",
                        )
                    return ContinuationResponse(tuple(tokens), reason)
                else:
                    return ContinuationResponse(
                        (), StopReason.ERROR, detail=f"unrecognized event: {line[:80]!r}"
                    )
        return None


# --- Token counting ------------------------------------------------------------

TOKENIZER_MODES = ("markers", "events")


def count_tokens(value: str | Sequence[str], mode: str = "markers") -> int:
    """Count tokens in text or in a stream of token events.

    ``markers`` splits text on whitespace with reserved markers atomic;
    ``events`` counts one token per streamed event, the only count the
    middleware can guarantee against a remote server's own tokenizer.
    """
    if mode == "markers":
        if not isinstance(value, str):
            raise InvalidParameterError("marker-aware counting expects text")
        return len(tokenize(value))
    if mode == "events":
        if isinstance(value, str):
            raise InvalidParameterError("event counting expects a token sequence")
        return len(value)
    raise InvalidParameterError(f"tokenizer mode must be one of {TOKENIZER_MODES}, got {mode!r}")

"""Oracle-guided rectification: prompt construction, chat clients, mocks.

An oracle is any object with an ``oracle_id`` string and a
``complete(request) -> str`` method returning the raw completion.  The
corrected response is whatever sits strictly between the START and END
markers of that completion.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from typing import Callable, Protocol, Sequence

import httpx

from ..errors import InvalidInputError, MissingCredentialError, OracleParseError, TransportError
from .verify import DEFAULT_MARKER

log = logging.getLogger(__name__)

START_MARKER = "=== CORRECTED STARTED ==="
END_MARKER = "=== CORRECTED ENDED ==="
ORACLE_KEY_ENV = "SPOT_ORACLE_KEY"
DEFAULT_MAX_ATTEMPTS = 3
DEFAULT_MAX_IN_FLIGHT = 8


def load_prompt(with_ground_truth: bool) -> str:
    name = "rectify_with_ground_truth.txt" if with_ground_truth else "rectify_without_ground_truth.txt"
    return resources.files("spot").joinpath("data").joinpath("prompts").joinpath(name).read_text(encoding="utf-8")


@dataclass(frozen=True)
class OracleRequest:
    system_prompt: str
    student_answer: str
    ground_truth: str | None = None
    question: str | None = None

    def user_message(self) -> str:
        parts = []
        if self.question:
            parts.append(f"Problem:\n{self.question}")
        parts.append(f"Student Answer:\n{self.student_answer}")
        if self.ground_truth is not None:
            parts.append(f"Reference Ground Truth:\n{self.ground_truth}")
        return "\n\n".join(parts)

    def messages(self) -> list[dict]:
        return [
            {"role": "system", "content": self.system_prompt},
            {"role": "user", "content": self.user_message()},
        ]


def build_request(y_minus: str, ground_truth: str | None = None, question: str | None = None) -> OracleRequest:
    if not y_minus.strip():
        raise InvalidInputError("student answer must be non-empty")
    return OracleRequest(
        system_prompt=load_prompt(ground_truth is not None),
        student_answer=y_minus,
        ground_truth=ground_truth,
        question=question,
    )


def parse_corrected(raw: str) -> str:
    if raw.count(START_MARKER) != 1 or raw.count(END_MARKER) != 1:
        raise OracleParseError("oracle output must contain each marker exactly once", raw)
    start = raw.index(START_MARKER) + len(START_MARKER)
    end = raw.index(END_MARKER)
    if end < start:
        raise OracleParseError("END marker precedes START marker", raw)
    return raw[start:end].strip()


def wrap_corrected(text: str) -> str:
    return f"{START_MARKER}\n{text}\n{END_MARKER}"


class OracleClient(Protocol):
    oracle_id: str

    def complete(self, request: OracleRequest) -> str: ...


class ChatClient:
    """Minimal OpenAI-compatible ``/chat/completions`` client."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        timeout: float = 60.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._http = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def chat(self, messages: list[dict], **params) -> str:
        payload = {"model": self.model, "messages": messages, **params}
        try:
            resp = self._http.post(f"{self.base_url}/chat/completions", json=payload)
        except httpx.HTTPError as exc:
            raise TransportError(f"request to {self.base_url} failed: {exc}") from exc
        if resp.status_code >= 400:
            raise TransportError(f"{self.base_url} returned HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion payload from {self.base_url}") from exc
        if not isinstance(content, str):
            raise TransportError("completion content is not a string")
        return content

    def close(self) -> None:
        self._http.close()


class HttpOracle:
    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        temperature: float = 0.0,
        transport: httpx.BaseTransport | None = None,
    ):
        if api_key is None:
            api_key = os.environ.get(ORACLE_KEY_ENV)
            if not api_key:
                raise MissingCredentialError(f"environment variable {ORACLE_KEY_ENV} is not set")
        self.client = ChatClient(base_url, model, api_key=api_key, transport=transport)
        self.temperature = temperature
        self.oracle_id = f"http:{model}"

    def complete(self, request: OracleRequest) -> str:
        return self.client.chat(request.messages(), temperature=self.temperature)


def fix_final_answer(text: str, ground_truth: str, marker: str = DEFAULT_MARKER) -> str:
    """Replace the final answer in ``text`` with ``ground_truth``, touching nothing else."""
    key = "\\boxed{"
    pos = text.rfind(key)
    if pos != -1:
        depth, i = 1, pos + len(key)
        while i < len(text) and depth:
            depth += {"{": 1, "}": -1}.get(text[i], 0)
            i += 1
        if depth == 0:
            return text[: pos + len(key)] + ground_truth + text[i - 1 :]
    words = text.split()
    if marker in words:
        last = len(words) - 1 - words[::-1].index(marker)
        return " ".join(words[: last + 1] + ground_truth.split())
    return " ".join(words + [marker] + ground_truth.split())


class MockOracle:
    """Deterministic stand-in for a remote oracle.

    Modes:
      ``answer-fix``    swap the final answer for the ground truth (echo if none given)
      ``echo``          return the student answer unchanged
      ``replace-token`` replace word ``index`` with ``replacement``
    """

    MODES = ("answer-fix", "echo", "replace-token")

    def __init__(self, mode: str = "answer-fix", index: int = 0, replacement: str = "", marker: str = DEFAULT_MARKER):
        if mode not in self.MODES:
            raise InvalidInputError(f"unknown mock mode {mode!r}")
        self.mode = mode
        self.index = index
        self.replacement = replacement
        self.marker = marker
        self.oracle_id = f"mock:{mode}"
        self.calls = 0

    def complete(self, request: OracleRequest) -> str:
        self.calls += 1
        text = request.student_answer
        if self.mode == "answer-fix" and request.ground_truth is not None:
            text = fix_final_answer(text, request.ground_truth, self.marker)
        elif self.mode == "replace-token":
            words = text.split()
            words[self.index] = self.replacement
            text = " ".join(words)
        return wrap_corrected(text)


class CallableOracle:
    """Wraps a plain function ``request -> raw completion``."""

    def __init__(self, fn: Callable[[OracleRequest], str], oracle_id: str = "callable"):
        self.fn = fn
        self.oracle_id = oracle_id

    def complete(self, request: OracleRequest) -> str:
        return self.fn(request)


def rectify(
    oracle: OracleClient,
    y_minus: str,
    ground_truth: str | None = None,
    question: str | None = None,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    backoff: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> str:
    """Ask the oracle for a minimal correction of ``y_minus`` and extract it.

    Transport and parse failures are retried with exponential backoff; the
    last error is re-raised once ``max_attempts`` is exhausted.
    """
    request = build_request(y_minus, ground_truth, question)
    last: Exception | None = None
    for attempt in range(max_attempts):
        try:
            return parse_corrected(oracle.complete(request))
        except (TransportError, OracleParseError) as exc:
            last = exc
            log.warning("oracle %s attempt %d/%d failed: %s", oracle.oracle_id, attempt + 1, max_attempts, exc)
            if attempt + 1 < max_attempts:
                sleep(backoff * 2**attempt)
    assert last is not None
    raise last


@dataclass
class RectifyJob:
    y_minus: str
    ground_truth: str | None = None
    question: str | None = None


def rectify_many(
    oracle: OracleClient,
    jobs: Sequence[RectifyJob],
    max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
    **kwargs,
) -> list[str | Exception]:
    """Rectify jobs concurrently; results come back in input order, failures as exceptions."""

    def run(job: RectifyJob):
        try:
            return rectify(oracle, job.y_minus, job.ground_truth, job.question, **kwargs)
        except (TransportError, OracleParseError, InvalidInputError) as exc:
            return exc

    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        return list(pool.map(run, jobs))

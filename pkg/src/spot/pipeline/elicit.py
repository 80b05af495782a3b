"""Error elicitation and the batch rectification stage.

Elicitation draws one response per task and keeps only the ones the
verifier rejects.  Rectification sends each kept failure to an oracle and
turns every parseable, verified correction into a :class:`ContrastivePair`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from ..errors import InvalidInputError, TransportError
from ..policy import PolicyParams, Vocab, sample
from .dataset import ContrastivePair
from .lcs import change_ratio
from .oracle import ChatClient, OracleClient, RectifyJob, rectify_many
from .verify import DEFAULT_MARKER, Task, response_text, verify

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SamplingConfig:
    temperature: float = 0.7
    top_p: float = 0.8
    max_len: int = 64
    seed: int = 0

    def __post_init__(self):
        if not self.temperature > 0:
            raise InvalidInputError("temperature must be positive")
        if not (0.0 < self.top_p <= 1.0):
            raise InvalidInputError("top_p must be in (0, 1]")
        if not (isinstance(self.max_len, int) and self.max_len > 0):
            raise InvalidInputError("max_len must be a positive integer")


class TextGenerator(Protocol):
    def generate(self, task: Task, sampling: SamplingConfig, index: int) -> str: ...


class RemoteGenerator:
    """Samples responses from an OpenAI-compatible chat endpoint."""

    def __init__(self, client: ChatClient):
        self.client = client

    def generate(self, task: Task, sampling: SamplingConfig, index: int) -> str:
        if not isinstance(task.prompt, str):
            raise InvalidInputError(f"task {task.task_id}: remote generation needs a text prompt")
        try:
            return self.client.chat(
                [{"role": "user", "content": task.prompt}],
                temperature=sampling.temperature,
                top_p=sampling.top_p,
                max_tokens=sampling.max_len,
                seed=task_seed(sampling.seed, index),
            )
        except TransportError as exc:
            raise TransportError(f"task {task.task_id}: {exc}", task_id=task.task_id) from exc


@dataclass
class Elicited:
    task: Task
    rejected: list[int] | str
    parse_failed: bool = False

    def to_dict(self) -> dict:
        return {**self.task.to_dict(), "rejected": self.rejected, "parse_failed": self.parse_failed}

    @classmethod
    def from_dict(cls, doc: dict) -> "Elicited":
        return cls(Task.from_dict(doc), doc["rejected"], bool(doc.get("parse_failed", False)))


@dataclass
class ElicitResult:
    failures: list[Elicited]
    n_tasks: int
    n_passed: int
    n_parse_failed: int

    @property
    def pass_rate(self) -> float:
        return self.n_passed / self.n_tasks


def task_seed(seed: int, index: int) -> int:
    """Independent per-task seed derived from the run seed and task position."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def elicit_errors(
    generator: PolicyParams | TextGenerator,
    tasks: Sequence[Task],
    sampling: SamplingConfig,
    marker: str = DEFAULT_MARKER,
) -> ElicitResult:
    if len(tasks) == 0:
        raise InvalidInputError("tasks must be non-empty")
    vocab = generator.vocab if isinstance(generator, PolicyParams) else None
    failures = []
    n_passed = n_parse = 0
    for i, task in enumerate(tasks):
        if isinstance(generator, PolicyParams):
            if isinstance(task.prompt, str):
                raise InvalidInputError(f"task {task.task_id}: policy generation needs a token prompt")
            response = sample(
                generator, task.prompt, sampling.temperature, sampling.top_p, sampling.max_len,
                seed=task_seed(sampling.seed, i),
            )
        else:
            response = generator.generate(task, sampling, i)
        verdict = verify(task, response, vocab, marker)
        if verdict.passed:
            n_passed += 1
            continue
        n_parse += verdict.parse_failed
        failures.append(Elicited(task, response, verdict.parse_failed))
    result = ElicitResult(failures, len(tasks), n_passed, n_parse)
    log.info("elicited %d failures from %d tasks (pass rate %.3f)", len(failures), len(tasks), result.pass_rate)
    return result


@dataclass
class RectifyReport:
    pairs: list[ContrastivePair]
    dropped: list[tuple[str, str]] = field(default_factory=list)


def rectify_failures(
    oracle: OracleClient,
    failures: Sequence[Elicited],
    vocab: Vocab | None = None,
    with_ground_truth: bool = True,
    max_in_flight: int = 8,
    marker: str = DEFAULT_MARKER,
    created_at: str | None = None,
    **rectify_kwargs,
) -> RectifyReport:
    """Rectify elicited failures into verified contrastive pairs.

    Token-id failures are rendered through ``vocab`` for the oracle and the
    correction is re-encoded, so change ratios are measured in tokens.  Text
    failures are compared in whitespace-delimited words.
    """
    jobs = []
    for item in failures:
        question = item.task.prompt if isinstance(item.task.prompt, str) else None
        jobs.append(
            RectifyJob(
                y_minus=response_text(item.rejected, vocab),
                ground_truth=item.task.ground_truth if with_ground_truth else None,
                question=question,
            )
        )
    results = rectify_many(oracle, jobs, max_in_flight=max_in_flight, **rectify_kwargs)
    report = RectifyReport(pairs=[])
    for item, res in zip(failures, results):
        tid = item.task.task_id
        if isinstance(res, Exception):
            report.dropped.append((tid, f"{type(res).__name__}: {res}"))
            log.warning("dropping task %s: %s", tid, res)
            continue
        if isinstance(item.rejected, str):
            chosen: list[int] | str = res
        else:
            try:
                chosen = vocab.encode(res)
            except InvalidInputError as exc:
                report.dropped.append((tid, f"unencodable correction: {exc}"))
                continue
        if not verify(item.task, chosen, vocab, marker).passed:
            report.dropped.append((tid, "correction fails verifier"))
            continue
        report.pairs.append(
            ContrastivePair(
                prompt=item.task.prompt,
                rejected=item.rejected,
                chosen=chosen,
                change_ratio=change_ratio(item.rejected, chosen),
                oracle_id=oracle.oracle_id,
                created_at=created_at,
                ground_truth=item.task.ground_truth,
                task_id=tid,
            )
        )
    return report


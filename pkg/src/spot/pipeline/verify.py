"""Tasks and final-answer verifiers.

Two modes:

* ``exact-match`` -- the answer span is every unit after the last marker unit
  (``=`` by default) up to the end of the response; it must equal the ground
  truth word-for-word.  Used for the synthetic token tasks.
* ``boxed-extract`` -- the content of the last ``\\boxed{...}`` group in the
  response text, compared after stripping whitespace.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from ..errors import InvalidInputError
from ..policy import Vocab

VERIFIER_MODES = ("exact-match", "boxed-extract")
DEFAULT_MARKER = "="


@dataclass
class Task:
    task_id: str
    prompt: list[int] | str
    ground_truth: str
    verifier: str = "exact-match"

    def __post_init__(self):
        if not str(self.ground_truth).strip():
            raise InvalidInputError(f"task {self.task_id}: ground_truth must be non-empty")
        if self.verifier not in VERIFIER_MODES:
            raise InvalidInputError(f"task {self.task_id}: unknown verifier {self.verifier!r}")

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "prompt": self.prompt,
            "ground_truth": self.ground_truth,
            "verifier": self.verifier,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Task":
        return cls(doc["task_id"], doc["prompt"], doc["ground_truth"], doc.get("verifier", "exact-match"))


@dataclass
class Verdict:
    passed: bool
    parse_failed: bool = False
    extracted: str | None = None


def extract_boxed(text: str) -> str | None:
    """Contents of the last ``\\boxed{...}`` with balanced braces, or None."""
    key = "\\boxed{"
    start = text.rfind(key)
    while start != -1:
        i = start + len(key)
        depth = 1
        while i < len(text):
            if text[i] == "{":
                depth += 1
            elif text[i] == "}":
                depth -= 1
                if depth == 0:
                    return text[start + len(key) : i]
            i += 1
        start = text.rfind(key, 0, start)
    return None


def response_text(response: Sequence[int] | str, vocab: Vocab | None) -> str:
    if isinstance(response, str):
        return response
    if vocab is None:
        raise InvalidInputError("token responses need a vocab to be rendered")
    return vocab.decode(response)


def verify(
    task: Task,
    response: Sequence[int] | str,
    vocab: Vocab | None = None,
    marker: str = DEFAULT_MARKER,
) -> Verdict:
    text = response_text(response, vocab)
    if task.verifier == "boxed-extract":
        got = extract_boxed(text)
        if got is None:
            return Verdict(False, parse_failed=True)
        return Verdict(got.strip() == task.ground_truth.strip(), extracted=got.strip())
    words = text.split()
    if marker not in words:
        return Verdict(False, parse_failed=True)
    last = len(words) - 1 - words[::-1].index(marker)
    got = " ".join(words[last + 1 :])
    return Verdict(got == " ".join(task.ground_truth.split()), extracted=got)

"""Contrastive pair records, JSON-lines persistence, and change-ratio filtering."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..errors import DatasetFormatError, InvalidInputError
from .lcs import change_ratio

log = logging.getLogger(__name__)

PAIRS_FORMAT = "spot-pairs"
TASKS_FORMAT = "spot-tasks"
ELICITED_FORMAT = "spot-elicited"
FORMAT_VERSION = 1
DEFAULT_GAMMA = 0.6
HISTOGRAM_BINS = 20


@dataclass
class ContrastivePair:
    prompt: list[int] | str
    rejected: list[int] | str
    chosen: list[int] | str
    change_ratio: float
    oracle_id: str = ""
    created_at: str | None = None
    ground_truth: str | None = None
    task_id: str | None = None

    @classmethod
    def build(cls, prompt, rejected, chosen, oracle_id: str = "", **extra) -> "ContrastivePair":
        return cls(prompt, rejected, chosen, change_ratio(rejected, chosen), oracle_id, **extra)

    def to_dict(self) -> dict:
        doc = {
            "prompt": self.prompt,
            "rejected": self.rejected,
            "chosen": self.chosen,
            "change_ratio": self.change_ratio,
            "oracle_id": self.oracle_id,
        }
        for key in ("created_at", "ground_truth", "task_id"):
            value = getattr(self, key)
            if value is not None:
                doc[key] = value
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ContrastivePair":
        missing = {"prompt", "rejected", "chosen", "change_ratio", "oracle_id"} - set(doc)
        if missing:
            raise InvalidInputError(f"missing fields {sorted(missing)}")
        pair = cls(
            prompt=doc["prompt"],
            rejected=doc["rejected"],
            chosen=doc["chosen"],
            change_ratio=doc["change_ratio"],
            oracle_id=doc["oracle_id"],
            created_at=doc.get("created_at"),
            ground_truth=doc.get("ground_truth"),
            task_id=doc.get("task_id"),
        )
        for name in ("prompt", "rejected", "chosen"):
            value = getattr(pair, name)
            if not (isinstance(value, str) or (isinstance(value, list) and all(isinstance(t, int) for t in value))):
                raise InvalidInputError(f"{name} must be a string or a list of token ids")
        expected = change_ratio(pair.rejected, pair.chosen)
        if not isinstance(pair.change_ratio, (int, float)) or float(pair.change_ratio) != expected:
            raise InvalidInputError(
                f"stored change_ratio {pair.change_ratio!r} does not match recomputed {expected!r}"
            )
        pair.change_ratio = float(pair.change_ratio)
        return pair


def write_jsonl(path, fmt: str, records: Iterable[dict]) -> int:
    count = 0
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"format": fmt, "version": FORMAT_VERSION}) + "\n")
            for rec in records:
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
                count += 1
    except OSError as exc:
        raise DatasetFormatError(f"cannot write: {exc}", path=path) from exc
    return count


def read_jsonl(path, fmt: str) -> list[tuple[int, dict]]:
    """Records of a versioned JSON-lines file with their 1-based line numbers."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DatasetFormatError(f"cannot read: {exc}", path=path) from exc
    if not lines:
        raise DatasetFormatError("missing format header", path=path, line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"bad header: {exc}", path=path, line=1) from exc
    if not isinstance(header, dict) or header.get("format") != fmt or header.get("version") != FORMAT_VERSION:
        raise DatasetFormatError(f"expected header format={fmt!r} version={FORMAT_VERSION}", path=path, line=1)
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"malformed JSON: {exc.msg}", path=path, line=lineno) from exc
        if not isinstance(rec, dict):
            raise DatasetFormatError("record must be a JSON object", path=path, line=lineno)
        out.append((lineno, rec))
    return out


def write_dataset(pairs: Sequence[ContrastivePair], path) -> int:
    return write_jsonl(path, PAIRS_FORMAT, (p.to_dict() for p in pairs))


def read_dataset(path) -> list[ContrastivePair]:
    pairs = []
    for lineno, rec in read_jsonl(path, PAIRS_FORMAT):
        try:
            pairs.append(ContrastivePair.from_dict(rec))
        except (InvalidInputError, KeyError, TypeError) as exc:
            raise DatasetFormatError(str(exc), path=path, line=lineno) from exc
    return pairs


@dataclass
class FilterResult:
    kept: list[ContrastivePair]
    dropped: list[ContrastivePair]
    histogram: list[tuple[float, float, int]] = field(default_factory=list)


def change_ratio_histogram(ratios: Sequence[float], bins: int = HISTOGRAM_BINS) -> list[tuple[float, float, int]]:
    """Equal-width counts on [0, 1]; the last bin is closed on the right."""
    counts, edges = np.histogram(np.asarray(ratios, dtype=float), bins=bins, range=(0.0, 1.0))
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bins)]


def write_histogram(histogram, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_low", "bin_high", "count"])
        for lo, hi, n in histogram:
            w.writerow([repr(lo), repr(hi), n])


def filter_pairs(pairs: Sequence[ContrastivePair], gamma: float = DEFAULT_GAMMA) -> FilterResult:
    """Drop pairs whose change ratio exceeds ``gamma`` (a ratio equal to gamma is kept)."""
    if not (0.0 <= gamma <= 1.0):
        raise InvalidInputError("gamma must be in [0, 1]")
    kept = [p for p in pairs if p.change_ratio <= gamma]
    dropped = [p for p in pairs if p.change_ratio > gamma]
    log.info("change-ratio filter gamma=%s kept %d dropped %d", gamma, len(kept), len(dropped))
    return FilterResult(kept, dropped, change_ratio_histogram([p.change_ratio for p in pairs]))

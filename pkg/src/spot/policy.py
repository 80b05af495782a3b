"""N-gram log-linear sequence policy with closed-form likelihood and gradients.

The policy conditions each next token on the previous ``order`` tokens of the
BOS-padded ``prompt ++ response`` stream.  Parameters are a dense logit table
with one row per context (``V ** order`` rows) and one column per token, so

    log pi(y | x) = sum_t log_softmax(logits[ctx_t])[y_t]

and its gradient with respect to any row is a sum of ``onehot - softmax``
terms.  This makes every objective in :mod:`spot.objectives` exactly
differentiable and cheap to finite-difference.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DatasetFormatError, InvalidInputError

MAX_ORDER = 3
CHECKPOINT_FORMAT = "spot-policy"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Vocab:
    """Synthetic token alphabet with reserved BOS and EOS ids."""

    tokens: tuple[str, ...]
    bos: int = 0
    eos: int = 1

    def __post_init__(self):
        if len(self.tokens) < 3:
            raise InvalidInputError("vocab needs BOS, EOS and at least one content token")
        if len(set(self.tokens)) != len(self.tokens):
            raise InvalidInputError("token names must be unique")
        for name in self.tokens:
            if not name or not name.isprintable() or any(ch.isspace() for ch in name):
                raise InvalidInputError(f"token name {name!r} must be printable and whitespace-free")
        if not (0 <= self.bos < len(self.tokens) and 0 <= self.eos < len(self.tokens)):
            raise InvalidInputError("BOS/EOS ids out of range")
        if self.bos == self.eos:
            raise InvalidInputError("BOS and EOS must differ")

    @classmethod
    def from_content(cls, names: Sequence[str], bos: str = "<bos>", eos: str = "<eos>") -> "Vocab":
        return cls(tokens=(bos, eos, *names), bos=0, eos=1)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id_of(self, name: str) -> int:
        try:
            return self.tokens.index(name)
        except ValueError:
            raise InvalidInputError(f"unknown token {name!r}") from None

    def encode(self, text: str, add_eos: bool = True) -> list[int]:
        """Whitespace-split ``text`` into token ids, optionally terminating with EOS."""
        ids = [self.id_of(word) for word in text.split()]
        if add_eos:
            ids.append(self.eos)
        return ids

    def decode(self, ids: Sequence[int]) -> str:
        """Render ids as space-joined names, dropping BOS/EOS."""
        return " ".join(self.tokens[i] for i in ids if i not in (self.bos, self.eos))


def check_sequence(vocab: Vocab, seq: Sequence[int], what: str = "sequence") -> np.ndarray:
    arr = np.asarray(seq, dtype=np.int64)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidInputError(f"{what} must be a non-empty 1-d token list")
    if arr.min() < 0 or arr.max() >= vocab.size:
        raise InvalidInputError(f"{what} has token id outside [0, {vocab.size})")
    return arr


@dataclass
class PolicyParams:
    vocab: Vocab
    order: int
    logits: np.ndarray

    def __post_init__(self):
        if not (1 <= self.order <= MAX_ORDER):
            raise InvalidInputError(f"order must be in [1, {MAX_ORDER}], got {self.order}")
        self.logits = np.asarray(self.logits, dtype=np.float64)
        expected = (self.vocab.size ** self.order, self.vocab.size)
        if self.logits.shape != expected:
            raise InvalidInputError(f"logits shape {self.logits.shape} != {expected}")
        if not np.all(np.isfinite(self.logits)):
            raise InvalidInputError("logits must be finite")

    @classmethod
    def uniform(cls, vocab: Vocab, order: int = 1) -> "PolicyParams":
        return cls(vocab, order, np.zeros((vocab.size ** order, vocab.size)))

    @classmethod
    def random(cls, vocab: Vocab, order: int = 1, scale: float = 1.0, seed: int = 0) -> "PolicyParams":
        rng = np.random.default_rng(seed)
        return cls(vocab, order, scale * rng.standard_normal((vocab.size ** order, vocab.size)))

    @property
    def num_contexts(self) -> int:
        return self.logits.shape[0]

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.vocab, self.order, self.logits.copy())

    def same_shape(self, other: "PolicyParams") -> bool:
        return self.vocab == other.vocab and self.order == other.order

    def context_index(self, ctx: Sequence[int]) -> int:
        """Row index of an ``order``-token context (oldest token first)."""
        if len(ctx) != self.order:
            raise InvalidInputError(f"context must have {self.order} tokens")
        row = 0
        for tok in ctx:
            row = row * self.vocab.size + int(tok)
        return row

    def next_token_probs(self, ctx: Sequence[int]) -> np.ndarray:
        return _softmax(self.logits[self.context_index(ctx)])


def _softmax(row: np.ndarray) -> np.ndarray:
    z = row - row.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(rows: np.ndarray) -> np.ndarray:
    m = rows.max(axis=-1, keepdims=True)
    z = rows - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def context_rows(params: PolicyParams, prompt: Sequence[int], response: Sequence[int]) -> np.ndarray:
    """Row index used at each response step.

    Step ``t`` is conditioned on the last ``order`` tokens of
    ``[BOS] * order + prompt + response[:t]``.
    """
    vocab = params.vocab
    p = check_sequence(vocab, prompt, "prompt")
    r = check_sequence(vocab, response, "response")
    n = params.order
    stream = np.concatenate([np.full(n, vocab.bos, dtype=np.int64), p, r[:-1]])
    windows = np.lib.stride_tricks.sliding_window_view(stream, n)[len(p):]
    powers = vocab.size ** np.arange(n - 1, -1, -1, dtype=np.int64)
    return windows @ powers


def _checked_response(params: PolicyParams, response: Sequence[int]) -> np.ndarray:
    r = check_sequence(params.vocab, response, "response")
    if r[-1] != params.vocab.eos:
        raise InvalidInputError("response must end with EOS")
    return r


def log_prob(params: PolicyParams, prompt: Sequence[int], response: Sequence[int]) -> float:
    """Sequence log-likelihood ``log pi(response | prompt)``."""
    r = _checked_response(params, response)
    rows = context_rows(params, prompt, r)
    lsm = _log_softmax(params.logits[rows])
    return float(lsm[np.arange(len(r)), r].sum())


def log_prob_and_grad(
    params: PolicyParams, prompt: Sequence[int], response: Sequence[int]
) -> tuple[float, np.ndarray]:
    """Log-likelihood together with its gradient w.r.t. the logit table."""
    r = _checked_response(params, response)
    rows = context_rows(params, prompt, r)
    lsm = _log_softmax(params.logits[rows])
    steps = np.arange(len(r))
    value = float(lsm[steps, r].sum())
    # per-step contribution: onehot(y_t) - softmax(row)
    contrib = -np.exp(lsm)
    contrib[steps, r] += 1.0
    grad = np.zeros_like(params.logits)
    np.add.at(grad, rows, contrib)
    return value, grad


def log_prob_grad(params: PolicyParams, prompt: Sequence[int], response: Sequence[int]) -> np.ndarray:
    return log_prob_and_grad(params, prompt, response)[1]


def nucleus_filter(probs: np.ndarray, top_p: float) -> np.ndarray:
    """Keep the smallest most-probable prefix with mass >= ``top_p`` and renormalise.

    Ties in probability are ordered by ascending token id.
    """
    if not (0.0 < top_p <= 1.0):
        raise InvalidInputError("top_p must be in (0, 1]")
    order = np.lexsort((np.arange(len(probs)), -probs))
    cum = np.cumsum(probs[order])
    cut = min(int(np.searchsorted(cum, top_p, side="left")), len(probs) - 1)
    keep = order[: cut + 1]
    out = np.zeros_like(probs)
    out[keep] = probs[keep]
    return out / out.sum()


def sampling_distribution(params: PolicyParams, ctx: Sequence[int], temperature: float, top_p: float) -> np.ndarray:
    """Next-token distribution used by :func:`sample` (BOS excluded)."""
    if temperature <= 0:
        raise InvalidInputError("temperature must be positive")
    scaled = params.logits[params.context_index(ctx)] / temperature
    scaled = scaled.copy()
    scaled[params.vocab.bos] = -np.inf
    return nucleus_filter(_softmax(scaled), top_p)


def sample(
    params: PolicyParams,
    prompt: Sequence[int],
    temperature: float = 0.7,
    top_p: float = 0.8,
    max_len: int = 64,
    seed: int = 0,
) -> list[int]:
    """Draw a response autoregressively; the result always ends with EOS.

    Generation stops after EOS is drawn or after ``max_len`` tokens, in which
    case EOS is appended.
    """
    if max_len <= 0:
        raise InvalidInputError("max_len must be positive")
    if temperature <= 0:
        raise InvalidInputError("temperature must be positive")
    if not (0.0 < top_p <= 1.0):
        raise InvalidInputError("top_p must be in (0, 1]")
    vocab = params.vocab
    p = check_sequence(vocab, prompt, "prompt")
    rng = np.random.default_rng(seed)
    n = params.order
    ctx = ([vocab.bos] * n + p.tolist())[-n:]
    out: list[int] = []
    while len(out) < max_len:
        probs = sampling_distribution(params, ctx, temperature, top_p)
        tok = int(rng.choice(vocab.size, p=probs))
        out.append(tok)
        if tok == vocab.eos:
            return out
        ctx = (ctx + [tok])[-n:]
    out.append(vocab.eos)
    return out


def policy_to_dict(params: PolicyParams) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "order": params.order,
        "tokens": list(params.vocab.tokens),
        "bos": params.vocab.bos,
        "eos": params.vocab.eos,
        "logits": params.logits.tolist(),
    }


def policy_from_dict(doc: dict) -> PolicyParams:
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise DatasetFormatError(f"not a {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION} checkpoint")
    vocab = Vocab(tuple(doc["tokens"]), bos=doc["bos"], eos=doc["eos"])
    return PolicyParams(vocab, doc["order"], np.array(doc["logits"], dtype=np.float64))


def save_policy(params: PolicyParams, path) -> None:
    """Write a JSON checkpoint; floats use shortest round-trip repr so reloads are bit-exact."""
    Path(path).write_text(json.dumps(policy_to_dict(params)) + "\n", encoding="utf-8")


def load_policy(path) -> PolicyParams:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"invalid JSON: {exc}", path=path) from exc
    try:
        return policy_from_dict(doc)
    except DatasetFormatError as exc:
        raise DatasetFormatError(str(exc), path=path) from exc

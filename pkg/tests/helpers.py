"""Independent oracles shared by the test modules."""

from __future__ import annotations

from itertools import combinations

import numpy as np

from spot.policy import PolicyParams, Vocab

FD_STEP = 1e-5


def small_vocab(n_content: int) -> Vocab:
    return Vocab.from_content([f"t{i}" for i in range(n_content)])


def random_seq(rng, vocab: Vocab, lo: int, hi: int, eos: bool = True) -> list[int]:
    n = int(rng.integers(lo, hi + 1))
    body = [int(t) for t in rng.integers(2, vocab.size, size=n)]
    return body + [vocab.eos] if eos else body


def random_instance(seed: int):
    """Random (policy, reference, prompt, chosen, rejected) with a shared prefix half the time."""
    rng = np.random.default_rng(seed)
    vocab = small_vocab(int(rng.integers(2, 5)))
    order = int(rng.integers(1, 3))
    policy = PolicyParams.random(vocab, order, scale=1.0, seed=int(rng.integers(1 << 30)))
    reference = PolicyParams.random(vocab, order, scale=1.0, seed=int(rng.integers(1 << 30)))
    prompt = random_seq(rng, vocab, 1, 3, eos=False)
    chosen = random_seq(rng, vocab, 0, 5)
    if rng.random() < 0.5:
        k = int(rng.integers(0, len(chosen)))
        rejected = chosen[:k] + random_seq(rng, vocab, 0, 4)
    else:
        rejected = random_seq(rng, vocab, 0, 5)
    return policy, reference, prompt, chosen, rejected


def with_logits(params: PolicyParams, logits: np.ndarray) -> PolicyParams:
    return PolicyParams(params.vocab, params.order, logits)


def central_difference(fn, params: PolicyParams, h: float = FD_STEP) -> np.ndarray:
    """Numerical gradient of ``fn(params) -> float`` over every logit."""
    base = params.logits
    grad = np.zeros_like(base)
    for idx in np.ndindex(base.shape):
        up = base.copy()
        up[idx] += h
        down = base.copy()
        down[idx] -= h
        grad[idx] = (fn(with_logits(params, up)) - fn(with_logits(params, down))) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def brute_force_lcs(a, b) -> int:
    """Longest subsequence of the shorter input that is also a subsequence of the other."""
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)

    def is_subseq(sub, seq):
        it = iter(seq)
        return all(any(x == y for y in it) for x in sub)

    for k in range(len(short), 0, -1):
        for idx in combinations(range(len(short)), k):
            if is_subseq([short[i] for i in idx], long_):
                return k
    return 0


def all_lines() -> list[list[tuple[int, int]]]:
    """Every 4-cell line on a 6x7 board (69 of them)."""
    lines = []
    for r in range(6):
        for c in range(7):
            for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
                cells = [(r + k * dr, c + k * dc) for k in range(4)]
                if all(0 <= rr < 6 and 0 <= cc < 7 for rr, cc in cells):
                    lines.append(cells)
    return lines


LINES = all_lines()
_LINE_IDX = np.array([[r * 7 + c for r, c in line] for line in LINES])


def scan_oracle(grid: np.ndarray, player: int) -> set[int]:
    """Play each legal column for ``player`` and scan all 69 lines for a four."""
    wins = set()
    for col in range(7):
        empty = [r for r in range(6) if grid[r, col] == 0]
        if not empty:
            continue
        g = np.array(grid, dtype=np.int64)
        g[empty[0], col] = player
        if np.any(np.all(g.ravel()[_LINE_IDX] == player, axis=1)):
            wins.add(col)
    return wins

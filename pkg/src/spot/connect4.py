"""Connect4 engine, one-ply winning-move solver, and benchmark generator.

Coordinates: ``grid[row, col]`` with row 0 at the bottom.  Cells hold 0
(empty), 1 (P1) or 2 (P2).  P1 moves first, so P1 is to move whenever the
piece counts are equal.

A *winning move* for a player is a column where dropping that player's
piece immediately completes four in a row; deeper forced wins are not
considered.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DatasetFormatError, IllegalMoveError, InvalidInputError, ResourceError

log = logging.getLogger(__name__)

ROWS, COLS = 6, 7
EMPTY, P1, P2 = 0, 1, 2
DEFAULT_COUNT = 500
DEFAULT_EMPTY_CAP = 0.20
DATASET_FORMAT = "connect4-bench"
DATASET_VERSION = 1
COORDINATES_NOTE = "(row,col) pairs, row 0 = bottom, col 0 = left"
QUESTION_SELF = "Are there any potential winning moves to form 4-in-a-row for you? Output all winning moves."
QUESTION_OPPONENT = (
    "Are there any potential winning moves to form 4-in-a-row for your opponent? Output all winning moves."
)

_DIRECTIONS = ((0, 1), (1, 0), (1, 1), (1, -1))


def other(player: int) -> int:
    return P2 if player == P1 else P1


@dataclass(frozen=True)
class Board:
    grid: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.int8)
        if grid.shape != (ROWS, COLS):
            raise InvalidInputError(f"grid must be {ROWS}x{COLS}")
        grid = grid.copy()
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)

    @classmethod
    def empty(cls) -> "Board":
        return cls(np.zeros((ROWS, COLS), dtype=np.int8))

    @property
    def to_move(self) -> int:
        return P1 if np.count_nonzero(self.grid == P1) == np.count_nonzero(self.grid == P2) else P2

    def heights(self) -> np.ndarray:
        return np.count_nonzero(self.grid, axis=0)

    def serialize(self) -> str:
        def cells(player):
            rows, cols = np.nonzero(self.grid == player)
            order = np.lexsort((cols, rows))
            return ", ".join(f"({rows[i]},{cols[i]})" for i in order)

        mover = "P1" if self.to_move == P1 else "P2"
        return f"P1: {cells(P1)}; P2: {cells(P2)}; to_move: {mover}"

    def __eq__(self, other):
        return isinstance(other, Board) and np.array_equal(self.grid, other.grid)

    def __hash__(self):
        return hash(self.grid.tobytes())


def legal_moves(board: Board) -> set[int]:
    return {c for c in range(COLS) if board.grid[ROWS - 1, c] == EMPTY}


def apply_move(board: Board, column: int, player: int | None = None) -> Board:
    """Drop a piece for ``player`` (default: side to move) into ``column``."""
    if not (0 <= column < COLS):
        raise IllegalMoveError(f"column {column} out of range")
    height = int(np.count_nonzero(board.grid[:, column]))
    if height >= ROWS:
        raise IllegalMoveError(f"column {column} is full")
    grid = board.grid.copy()
    grid[height, column] = board.to_move if player is None else player
    return Board(grid)


def _run_length(grid: np.ndarray, row: int, col: int, dr: int, dc: int, player: int) -> int:
    n = 0
    r, c = row + dr, col + dc
    while 0 <= r < ROWS and 0 <= c < COLS and grid[r, c] == player:
        n += 1
        r += dr
        c += dc
    return n


def completes_four(grid: np.ndarray, row: int, col: int, player: int) -> bool:
    """Whether ``player`` owning (row, col) yields four in a row through that cell."""
    for dr, dc in _DIRECTIONS:
        if 1 + _run_length(grid, row, col, dr, dc, player) + _run_length(grid, row, col, -dr, -dc, player) >= 4:
            return True
    return False


def winning_moves(board: Board, player: int) -> set[int]:
    heights = board.heights()
    wins = set()
    for c in range(COLS):
        h = int(heights[c])
        if h < ROWS and completes_four(board.grid, h, c, player):
            wins.add(c)
    return wins


def has_four(board: Board) -> bool:
    g = board.grid
    for r in range(ROWS):
        for c in range(COLS):
            p = g[r, c]
            if p != EMPTY:
                for dr, dc in _DIRECTIONS:
                    if _run_length(g, r, c, dr, dc, p) >= 3:
                        return True
    return False


def is_valid_state(board: Board) -> bool:
    """Gravity holds, piece counts alternate from P1, and nobody has already won."""
    g = board.grid
    for c in range(COLS):
        col = g[:, c]
        filled = int(np.count_nonzero(col))
        if np.any(col[:filled] == EMPTY) or np.any(col[filled:] != EMPTY):
            return False
    diff = int(np.count_nonzero(g == P1)) - int(np.count_nonzero(g == P2))
    return diff in (0, 1) and not has_four(board)


@dataclass
class BenchInstance:
    id: str
    board: Board
    wins_self: frozenset[int]
    wins_opponent: frozenset[int]

    @property
    def serialized(self) -> str:
        return self.board.serialize()

    @property
    def has_answer(self) -> bool:
        return bool(self.wins_self or self.wins_opponent)

    @classmethod
    def from_board(cls, board: Board, instance_id: str) -> "BenchInstance":
        me = board.to_move
        return cls(
            instance_id,
            board,
            frozenset(winning_moves(board, me)),
            frozenset(winning_moves(board, other(me))),
        )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "board": self.serialized,
            "question_self": QUESTION_SELF,
            "question_opponent": QUESTION_OPPONENT,
            "wins_self": sorted(self.wins_self),
            "wins_opponent": sorted(self.wins_opponent),
        }


def parse_board(text: str) -> Board:
    """Inverse of :meth:`Board.serialize`."""
    grid = np.zeros((ROWS, COLS), dtype=np.int8)
    try:
        fields = dict(part.strip().split(":", 1) for part in text.split(";"))
        for name, player in (("P1", P1), ("P2", P2)):
            body = fields[name].strip()
            if not body:
                continue
            for item in body.split("),"):
                r, c = item.strip().strip("()").split(",")
                grid[int(r), int(c)] = player
    except (KeyError, ValueError, IndexError) as exc:
        raise InvalidInputError(f"cannot parse board {text!r}") from exc
    board = Board(grid)
    mover = fields.get("to_move", "").strip()
    if mover and mover != ("P1" if board.to_move == P1 else "P2"):
        raise InvalidInputError("to_move disagrees with piece counts")
    return board


def _playout(rng: np.random.Generator) -> list[Board]:
    """Harvest every non-terminal position of one uniform-random game."""
    board = Board.empty()
    states = []
    while True:
        moves = sorted(legal_moves(board))
        if not moves:
            return states
        col = int(rng.choice(moves))
        mover = board.to_move
        nxt = apply_move(board, col)
        if completes_four(nxt.grid, int(board.heights()[col]), col, mover):
            return states
        board = nxt
        states.append(board)


def generate_dataset(
    count: int = DEFAULT_COUNT,
    seed: int = 0,
    empty_cap: float = DEFAULT_EMPTY_CAP,
    max_playouts: int = 20000,
) -> list[BenchInstance]:
    """Deduplicated, label-balanced Connect4 positions from random self-play.

    Positions with no winning move for either side are downsampled so they
    make up at most ``empty_cap`` of the result.
    """
    if not (isinstance(count, int) and count > 0):
        raise InvalidInputError("count must be a positive integer")
    if not (0.0 <= empty_cap <= 1.0):
        raise InvalidInputError("empty_cap must be in [0, 1]")
    max_empty = int(np.floor(empty_cap * count + 1e-9))
    need_answer = count - max_empty
    rng = np.random.default_rng(seed)
    seen: set[str] = set()
    with_answer: list[BenchInstance] = []
    no_answer: list[BenchInstance] = []
    playouts = 0
    while (len(with_answer) < need_answer or len(with_answer) + min(len(no_answer), max_empty) < count):
        if playouts >= max_playouts:
            raise ResourceError(
                f"only {len(with_answer)} answerable and {len(no_answer)} empty distinct states after "
                f"{playouts} playouts; need {count} with at most {max_empty} empty"
            )
        playouts += 1
        for board in _playout(rng):
            key = board.serialize()
            if key in seen:
                continue
            seen.add(key)
            inst = BenchInstance.from_board(board, "")
            (with_answer if inst.has_answer else no_answer).append(inst)
    n_empty = min(len(no_answer), max_empty, count)
    n_answer = count - n_empty
    picked_answer = [with_answer[i] for i in sorted(rng.choice(len(with_answer), n_answer, replace=False))]
    picked_empty = [no_answer[i] for i in sorted(rng.choice(len(no_answer), n_empty, replace=False))] if n_empty else []
    chosen = picked_answer + picked_empty
    perm = rng.permutation(len(chosen))
    out = []
    for k, i in enumerate(perm):
        inst = chosen[i]
        inst.id = f"c4-{seed}-{k:05d}"
        out.append(inst)
    log.info("connect4: %d playouts, %d distinct states, %d instances", playouts, len(seen), len(out))
    return out


def write_bench(instances, path) -> int:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            json.dumps({"format": DATASET_FORMAT, "version": DATASET_VERSION, "coordinates": COORDINATES_NOTE}) + "\n"
        )
        for inst in instances:
            fh.write(json.dumps(inst.to_dict()) + "\n")
    return len(instances)


def read_bench(path) -> list[BenchInstance]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    try:
        header = json.loads(lines[0])
    except (IndexError, json.JSONDecodeError) as exc:
        raise DatasetFormatError("missing or invalid header", path=path, line=1) from exc
    if header.get("format") != DATASET_FORMAT or header.get("version") != DATASET_VERSION:
        raise DatasetFormatError(f"expected {DATASET_FORMAT} v{DATASET_VERSION}", path=path, line=1)
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            board = parse_board(doc["board"])
            inst = BenchInstance(doc["id"], board, frozenset(doc["wins_self"]), frozenset(doc["wins_opponent"]))
        except (json.JSONDecodeError, KeyError, TypeError, InvalidInputError) as exc:
            raise DatasetFormatError(str(exc), path=path, line=lineno) from exc
        out.append(inst)
    return out


@dataclass
class AnswerCheck:
    correct: bool
    missing_self: list[int] = field(default_factory=list)
    extra_self: list[int] = field(default_factory=list)
    missing_opponent: list[int] = field(default_factory=list)
    extra_opponent: list[int] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)


def verify_answer(instance: BenchInstance, claimed_self, claimed_opponent) -> AnswerCheck:
    """Exact set comparison of claimed winning columns with the ground truth."""
    diagnostics = []
    for label, claim in (("self", claimed_self), ("opponent", claimed_opponent)):
        for c in claim:
            if isinstance(c, bool) or not isinstance(c, (int, np.integer)):
                diagnostics.append(f"{label}: non-integer column {c!r}")
            elif not (0 <= c < COLS):
                diagnostics.append(f"{label}: column {c} outside [0, {COLS})")
    cs = {c for c in claimed_self if isinstance(c, (int, np.integer)) and not isinstance(c, bool)}
    co = {c for c in claimed_opponent if isinstance(c, (int, np.integer)) and not isinstance(c, bool)}
    check = AnswerCheck(
        correct=False,
        missing_self=sorted(instance.wins_self - cs),
        extra_self=sorted(cs - instance.wins_self),
        missing_opponent=sorted(instance.wins_opponent - co),
        extra_opponent=sorted(co - instance.wins_opponent),
        diagnostics=diagnostics,
    )
    check.correct = not (
        diagnostics or check.missing_self or check.extra_self or check.missing_opponent or check.extra_opponent
    )
    return check

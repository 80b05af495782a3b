import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spot.errors import DatasetFormatError
from spot.pipeline.dataset import (
    ContrastivePair,
    change_ratio_histogram,
    filter_pairs,
    read_dataset,
    write_dataset,
    write_histogram,
)


def _pair_with_ratio(lcs: int, n_plus: int) -> ContrastivePair:
    """Pair whose rejected response shares exactly ``lcs`` tokens with a length-``n_plus`` chosen one."""
    chosen = list(range(2, 2 + n_plus))
    rejected = chosen[:lcs] + [1000 + i for i in range(n_plus - lcs)]
    return ContrastivePair.build([7], rejected, chosen, oracle_id="mock")


def _random_pairs(n: int, seed: int) -> list[ContrastivePair]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        chosen = rng.integers(2, 9, size=int(rng.integers(1, 12))).tolist()
        rejected = rng.integers(2, 9, size=int(rng.integers(1, 12))).tolist()
        out.append(ContrastivePair.build([int(rng.integers(2, 9))], rejected, chosen, oracle_id="mock", task_id=f"t{i}"))
    return out


def test_empty_round_trip(tmp_path):
    path = tmp_path / "d.jsonl"
    assert write_dataset([], path) == 0
    assert read_dataset(path) == []
    assert json.loads(path.read_text().splitlines()[0]) == {"format": "spot-pairs", "version": 1}


def test_round_trip_4000_bit_exact(tmp_path):
    pairs = _random_pairs(4000, 0)
    pairs.append(ContrastivePair.build("Q?", "a b = 3", "a b = 4", oracle_id="http:m", created_at="2024-01-01T00:00:00Z"))
    path = tmp_path / "d.jsonl"
    assert write_dataset(pairs, path) == 4001
    back = read_dataset(path)
    assert back == pairs
    write_dataset(back, tmp_path / "e.jsonl")
    assert (tmp_path / "e.jsonl").read_bytes() == path.read_bytes()


def test_inconsistent_ratio_reports_line(tmp_path):
    path = tmp_path / "d.jsonl"
    write_dataset(_random_pairs(5, 1), path)
    lines = path.read_text().splitlines()
    rec = json.loads(lines[3])
    rec["change_ratio"] = rec["change_ratio"] + 0.125
    lines[3] = json.dumps(rec)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError, match=r":4:"):
        read_dataset(path)


def test_malformed_line_and_header(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text('{"format": "spot-pairs", "version": 1}\n{not json\n')
    with pytest.raises(DatasetFormatError, match=r":2:"):
        read_dataset(path)
    path.write_text('{"format": "other", "version": 1}\n')
    with pytest.raises(DatasetFormatError, match=r":1:"):
        read_dataset(path)
    with pytest.raises(DatasetFormatError, match="missing.jsonl"):
        read_dataset(tmp_path / "missing.jsonl")


def test_filter_boundary_keeps_equal():
    pairs = [_pair_with_ratio(3, 4), _pair_with_ratio(39, 100), _pair_with_ratio(2, 5)]
    assert [p.change_ratio for p in pairs] == [0.25, 0.61, 0.6]
    res = filter_pairs(pairs, 0.6)
    assert [p.change_ratio for p in res.kept] == [0.25, 0.6]
    assert [p.change_ratio for p in res.dropped] == [0.61]


def test_filter_extremes():
    pairs = _random_pairs(50, 2) + [ContrastivePair.build([2], [3, 4], [3, 4])]
    assert len(filter_pairs(pairs, 1.0).kept) == len(pairs)
    kept0 = filter_pairs(pairs, 0.0).kept
    assert all(p.change_ratio == 0.0 for p in kept0) and len(kept0) >= 1


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_filter_partition_and_idempotence(seed, gamma):
    pairs = _random_pairs(30, seed)
    res = filter_pairs(pairs, gamma)
    assert len(res.kept) + len(res.dropped) == len(pairs)
    merged = iter(pairs)
    kept_ids = [id(p) for p in res.kept]
    assert kept_ids == [id(p) for p in merged if p.change_ratio <= gamma]
    again = filter_pairs(res.kept, gamma)
    assert again.dropped == [] and again.kept == res.kept


def test_histogram_bins_and_csv(tmp_path):
    hist = change_ratio_histogram([0.0, 0.05, 0.5, 1.0, 1.0])
    assert len(hist) == 20
    assert hist[0] == (0.0, 0.05, 1)
    assert hist[1][2] == 1
    assert hist[-1][2] == 2
    assert sum(h[2] for h in hist) == 5
    path = tmp_path / "h.csv"
    write_histogram(hist, path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["bin_low", "bin_high", "count"]
    assert len(rows) == 21

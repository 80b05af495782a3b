import numpy as np

from spot.fixture import FILES, build_fixture, bundled_dir, load_bundled, write_fixture
from spot.pipeline.verify import Task, verify


def test_bundled_files_match_generator(tmp_path):
    write_fixture(build_fixture(), tmp_path)
    for name in FILES.values():
        assert (tmp_path / name).read_bytes() == (bundled_dir() / name).read_bytes(), name


def test_fixture_shape_and_invariants():
    fx = load_bundled()
    assert len(fx.train_pairs) == 200 and len(fx.heldout_pairs) == 50
    assert fx.initial_policy.order == 1
    for pair in fx.train_pairs + fx.heldout_pairs:
        # long shared prefix, small divergence
        assert pair.change_ratio < 0.3
        k = next(i for i, (a, b) in enumerate(zip(pair.chosen, pair.rejected)) if a != b)
        assert k >= 20
    train_keys = {(tuple(p.chosen), tuple(p.rejected)) for p in fx.train_pairs}
    assert not any((tuple(p.chosen), tuple(p.rejected)) in train_keys for p in fx.heldout_pairs)


def test_fixture_pairs_pass_and_fail_verifier():
    fx = load_bundled()
    for pair in fx.train_pairs[:50]:
        task = Task("t", pair.prompt, pair.ground_truth)
        assert verify(task, pair.chosen, fx.vocab).passed
        assert not verify(task, pair.rejected, fx.vocab).passed


def test_fixture_seeds_differ():
    a, b = build_fixture(seed=0), build_fixture(seed=1)
    assert np.array_equal(a.initial_policy.logits, b.initial_policy.logits)
    assert [p.chosen for p in a.train_pairs] != [p.chosen for p in b.train_pairs]

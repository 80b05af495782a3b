import math

import numpy as np
import pytest

from spot.errors import InvalidInputError, NonFiniteError
from spot.fixture import build_fixture
from spot.objectives import RewardConfig
from spot.pipeline.dataset import ContrastivePair
from spot.policy import PolicyParams, Vocab
from spot.trainer import (
    METRICS_HEADER,
    MetricsRow,
    MetricsWriter,
    TrainConfig,
    evaluate_holdout,
    num_steps,
    read_metrics,
    train,
    write_metrics,
)


@pytest.fixture(scope="module")
def small():
    fx = build_fixture(seed=3, n_train=40, n_heldout=10, n_tasks=4)
    return fx.initial_policy, fx.train_pairs, fx.heldout_pairs


def test_config_validation():
    with pytest.raises(InvalidInputError):
        TrainConfig(objective="ppo")
    with pytest.raises(InvalidInputError):
        TrainConfig(batch_size=0)
    with pytest.raises(InvalidInputError):
        TrainConfig(learning_rate=-1.0)
    with pytest.raises(InvalidInputError):
        TrainConfig.from_dict({"objective": "dpo", "lr": 0.1})
    cfg = TrainConfig.from_dict({"objective": "dpo", "learning_rate": 0.1})
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    assert (cfg.beta, cfg.batch_size, cfg.epochs) == (0.1, 32, 2)


def test_zero_learning_rate_is_identity(small):
    policy, pairs, _ = small
    final, metrics = train(TrainConfig(objective="spot_bce", learning_rate=0.0), pairs, policy)
    assert np.array_equal(final.logits, policy.logits)
    assert len({(m.loss, m.r_chosen, m.r_rejected) for m in metrics}) == 1


@pytest.mark.parametrize("objective", ["sft", "reward_sft", "dpo", "spot_bce", "spot_bco"])
def test_reference_untouched_and_reproducible(small, tmp_path, objective):
    policy, pairs, _ = small
    before = policy.logits.copy()
    cfg = TrainConfig(objective=objective, learning_rate=0.1, batch_size=8, epochs=2)
    paths = []
    for k in range(2):
        path = tmp_path / f"m{k}.csv"
        with MetricsWriter(path) as w:
            train(cfg, pairs, policy, metrics_writer=w)
        paths.append(path)
    assert np.array_equal(policy.logits, before)
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_reward_sft_single_pair_monotone():
    fx = build_fixture(seed=0, n_train=1, n_heldout=1, n_tasks=1)
    cfg = TrainConfig(objective="reward_sft", optimizer="sgd", learning_rate=0.5, beta=1.0, epochs=60, batch_size=1)
    _, metrics = train(cfg, fx.train_pairs, fx.initial_policy)
    rc = [m.r_chosen for m in metrics]
    lam = [m.lambda_chosen for m in metrics]
    assert all(b >= a for a, b in zip(rc, rc[1:]))
    assert all(b <= a for a, b in zip(lam, lam[1:]))
    assert rc[-1] > rc[0]


def test_bco_with_zero_delta_matches_bce(small):
    policy, pairs, _ = small
    base = dict(learning_rate=0.2, batch_size=8, epochs=2, optimizer="sgd", beta=1.0)
    _, bce = train(TrainConfig(objective="spot_bce", **base), pairs, policy)
    _, bco = train(TrainConfig(objective="spot_bco", delta_fixed=0.0, **base), pairs, policy)
    assert bce == bco


def test_bco_delta_column_tracks_ema(small):
    policy, pairs, _ = small
    cfg = TrainConfig(objective="spot_bco", learning_rate=0.2, batch_size=8, epochs=1, beta=1.0, ema_alpha=0.5)
    _, m = train(cfg, pairs, policy)
    assert m[0].delta == 0.0
    # second batch uses the first batch mean directly
    assert m[1].delta == pytest.approx(0.5 * (m[0].r_chosen + m[0].r_rejected), abs=1e-12)
    expected = 0.5 * (m[1].r_chosen + m[1].r_rejected) * 0.5 + 0.5 * m[1].delta
    assert m[2].delta == pytest.approx(expected, abs=1e-12)


def test_row_count_and_metrics_round_trip(small, tmp_path):
    policy, pairs, _ = small
    cfg = TrainConfig(objective="dpo", learning_rate=0.05, batch_size=7, epochs=3)
    _, metrics = train(cfg, pairs, policy)
    assert len(metrics) == 3 * math.ceil(len(pairs) / 7) == num_steps(cfg, len(pairs))
    assert [m.step for m in metrics] == list(range(1, len(metrics) + 1))
    path = tmp_path / "m.csv"
    write_metrics(metrics, path)
    assert read_metrics(path) == metrics
    write_metrics([], tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == ",".join(METRICS_HEADER) + "\n"
    assert METRICS_HEADER == [f for f in MetricsRow.__dataclass_fields__]


def test_max_steps_caps_run(small):
    policy, pairs, _ = small
    _, metrics = train(TrainConfig(objective="sft", learning_rate=0.01, batch_size=4, epochs=50, max_steps=13), pairs, policy)
    assert len(metrics) == 13


def test_non_finite_names_pair(monkeypatch):
    import spot.trainer as trainer_mod

    v = Vocab.from_content(["a", "b"])
    policy = PolicyParams.uniform(v)
    pairs = [ContrastivePair.build([2], [3, 1], [2, 1]), ContrastivePair.build([2], [2, 1], [3, 3, 1])]
    real = trainer_mod.obj.loss_sft

    def poisoned(policy, prompt, chosen):
        value, grad = real(policy, prompt, chosen)
        return (float("nan"), grad) if len(chosen) == 3 else (value, grad)

    monkeypatch.setattr(trainer_mod.obj, "loss_sft", poisoned)
    cfg = TrainConfig(objective="sft", learning_rate=0.1, batch_size=2, epochs=1)
    with pytest.raises(NonFiniteError, match="pair index 1"):
        train(cfg, pairs, policy)


def test_empty_dataset_rejected(small):
    with pytest.raises(InvalidInputError):
        train(TrainConfig(), [], small[0])


def test_holdout_untrained_and_after_training(small):
    policy, pairs, held = small
    cfg = RewardConfig(beta=0.1)
    summary = evaluate_holdout(policy, policy.copy(), cfg, held)
    assert summary.drift == 0.0 and summary.accuracy == 0.0 and summary.n_pairs == len(held)
    final, _ = train(TrainConfig(objective="sft", learning_rate=0.05, batch_size=8), pairs, policy)
    assert evaluate_holdout(final, policy, cfg, held).drift > 0.0
    with pytest.raises(InvalidInputError):
        evaluate_holdout(policy, policy, cfg, [])


def test_holdout_accuracy_counts_positive_margins():
    v = Vocab.from_content(["a", "b"])
    ref = PolicyParams.uniform(v)
    logits = np.zeros((4, 4))
    logits[:, 2] = 1.0
    pol = PolicyParams(v, 1, logits)
    pairs = [ContrastivePair.build([3], [3, 1], [2, 1]), ContrastivePair.build([3], [2, 1], [3, 1])]
    assert evaluate_holdout(pol, ref, RewardConfig(), pairs).accuracy == 0.5


def test_sft_drifts_more_than_reward_sft(small):
    policy, pairs, held = small
    base = dict(learning_rate=0.5, optimizer="sgd", beta=1.0, batch_size=8, epochs=10)
    sft, _ = train(TrainConfig(objective="sft", **base), pairs, policy)
    rsft, _ = train(TrainConfig(objective="reward_sft", **base), pairs, policy)
    cfg = RewardConfig(beta=1.0)
    assert evaluate_holdout(sft, policy, cfg, held).drift > evaluate_holdout(rsft, policy, cfg, held).drift

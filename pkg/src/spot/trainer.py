"""Deterministic mini-batch training over contrastive pairs.

One optimizer step per batch; the batch gradient is the arithmetic mean of
per-pair gradients, reduced in pair order so runs are bit-reproducible.  The
reference policy is a deep copy of the initial policy and is never touched.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import objectives as obj
from .errors import InvalidInputError, NonFiniteError
from .policy import PolicyParams, log_prob

log = logging.getLogger(__name__)

OBJECTIVES = ("sft", "sft_plus", "reward_sft", "dpo", "spot_bce", "spot_bco")
OPTIMIZERS = ("sgd", "adam")
CHOSEN_ONLY = ("sft", "sft_plus", "reward_sft")


@dataclass
class TrainConfig:
    objective: str = "spot_bco"
    learning_rate: float = 0.05
    batch_size: int = 32
    epochs: int = 2
    beta: float = obj.DEFAULT_BETA
    ema_alpha: float = obj.DEFAULT_EMA_ALPHA
    seed: int = 0
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_steps: int | None = None
    grad_clip: float | None = None
    # pins the BCO shift; None means EMA tracking
    delta_fixed: float | None = None

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise InvalidInputError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.optimizer not in OPTIMIZERS:
            raise InvalidInputError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if not (isinstance(self.learning_rate, (int, float)) and self.learning_rate >= 0):
            raise InvalidInputError("learning_rate must be >= 0")
        for name in ("batch_size", "epochs"):
            value = getattr(self, name)
            if not (isinstance(value, int) and value > 0):
                raise InvalidInputError(f"{name} must be a positive integer")
        if self.max_steps is not None and not (isinstance(self.max_steps, int) and self.max_steps > 0):
            raise InvalidInputError("max_steps must be a positive integer or null")
        if not self.beta > 0:
            raise InvalidInputError("beta must be positive")
        if not (0.0 < self.ema_alpha <= 1.0):
            raise InvalidInputError("ema_alpha must be in (0, 1]")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise InvalidInputError("grad_clip must be positive or null")

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise InvalidInputError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class MetricsRow:
    step: int
    epoch: int
    loss: float
    r_chosen: float
    r_rejected: float
    lambda_chosen: float
    delta: float
    grad_max_norm: float
    kl_estimate: float


METRICS_HEADER = [f.name for f in dataclasses.fields(MetricsRow)]


@dataclass
class HoldoutSummary:
    drift: float
    accuracy: float
    n_pairs: int


@dataclass
class _AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


@dataclass
class _PairCache:
    ref_chosen: list[float] = field(default_factory=list)
    ref_rejected: list[float] = field(default_factory=list)


class MetricsWriter:
    """Streams metrics rows to CSV; callers flush at epoch boundaries."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(METRICS_HEADER)

    def write(self, row: MetricsRow) -> None:
        self._writer.writerow([repr(getattr(row, name)) for name in METRICS_HEADER])

    def flush(self) -> None:
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_metrics(metrics: Sequence[MetricsRow], path) -> None:
    with MetricsWriter(path) as w:
        for row in metrics:
            w.write(row)


def read_metrics(path) -> list[MetricsRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != METRICS_HEADER:
            raise InvalidInputError(f"{path}: unexpected metrics header {header}")
        rows = []
        for rec in reader:
            vals = dict(zip(header, rec))
            rows.append(
                MetricsRow(
                    step=int(vals["step"]),
                    epoch=int(vals["epoch"]),
                    **{k: float(vals[k]) for k in METRICS_HEADER[2:]},
                )
            )
    return rows


def num_steps(config: TrainConfig, n_pairs: int) -> int:
    total = config.epochs * math.ceil(n_pairs / config.batch_size)
    if config.max_steps is not None:
        total = min(total, config.max_steps)
    return total


def _pair_loss(config, policy, reference, rcfg, pair, ref, tracker):
    """Loss, gradient, and (measured) chosen/rejected rewards for one pair."""
    ref_c, ref_r = ref
    objective = config.objective
    if objective in ("sft", "sft_plus"):
        value, grad = obj.loss_sft(policy, pair.prompt, pair.chosen)
        rc = rcfg.beta * (-value - ref_c)
        rr = rcfg.beta * (log_prob(policy, pair.prompt, pair.rejected) - ref_r)
        return value, grad, rc, rr
    if objective == "reward_sft":
        value, grad, rec = obj.loss_reward_sft(policy, reference, rcfg, pair.prompt, pair.chosen, ref_logp=ref_c)
        rr = rcfg.beta * (log_prob(policy, pair.prompt, pair.rejected) - ref_r)
        return value, grad, rec.r_chosen, rr
    if objective == "dpo":
        value, grad, rec = obj.loss_dpo(policy, reference, rcfg, pair, ref_logps=ref)
    elif objective == "spot_bce":
        value, grad, rec = obj.loss_spot_bce(policy, reference, rcfg, pair, ref_logps=ref)
    else:
        value, grad, rec = obj.loss_spot_bco(policy, reference, rcfg, pair, tracker, ref_logps=ref)
    return value, grad, rec.r_chosen, rec.r_rejected


def train(
    config: TrainConfig,
    dataset: Sequence,
    initial_policy: PolicyParams,
    metrics_writer: MetricsWriter | None = None,
) -> tuple[PolicyParams, list[MetricsRow]]:
    """Train a copy of ``initial_policy`` on ``dataset`` (ContrastivePair-like records).

    Returns the final policy and one :class:`MetricsRow` per optimizer step.
    """
    if len(dataset) == 0:
        raise InvalidInputError("dataset must be non-empty")
    reference = initial_policy.copy()
    policy = initial_policy.copy()
    rcfg = obj.RewardConfig(beta=config.beta)
    tracker = obj.DeltaTracker(alpha=config.ema_alpha)
    if config.delta_fixed is not None:
        tracker = obj.DeltaTracker(alpha=config.ema_alpha, delta=float(config.delta_fixed), initialized=True)

    cache = _PairCache()
    for pair in dataset:
        cache.ref_chosen.append(log_prob(reference, pair.prompt, pair.chosen))
        cache.ref_rejected.append(log_prob(reference, pair.prompt, pair.rejected))

    rng = np.random.default_rng(config.seed)
    adam = _AdamState(np.zeros_like(policy.logits), np.zeros_like(policy.logits))
    total = num_steps(config, len(dataset))
    metrics: list[MetricsRow] = []
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(dataset))
        for start in range(0, len(dataset), config.batch_size):
            if step >= total:
                break
            idx = order[start : start + config.batch_size]
            grad_sum = np.zeros_like(policy.logits)
            losses, rcs, rrs = [], [], []
            delta_used = tracker.delta if config.objective == "spot_bco" else 0.0
            for i in idx:
                pair = dataset[i]
                value, grad, rc, rr = _pair_loss(
                    config, policy, reference, rcfg, pair,
                    (cache.ref_chosen[i], cache.ref_rejected[i]), tracker,
                )
                if not (math.isfinite(value) and np.all(np.isfinite(grad))):
                    raise NonFiniteError(f"non-finite loss/gradient at step {step + 1} on pair index {int(i)}")
                grad_sum += grad
                losses.append(value)
                rcs.append(rc)
                rrs.append(rr)
            grad_mean = grad_sum / len(idx)
            grad_max = float(np.max(np.abs(grad_mean)))
            if config.grad_clip is not None and grad_max > config.grad_clip:
                grad_mean = grad_mean * (config.grad_clip / grad_max)
            _apply_update(config, policy, grad_mean, adam)
            if not np.all(np.isfinite(policy.logits)):
                raise NonFiniteError(f"parameters became non-finite at step {step + 1}")
            step += 1
            if config.objective == "spot_bco" and config.delta_fixed is None:
                tracker = obj.update_delta(tracker, list(zip(rcs, rrs)))
            mean_rc = float(np.mean(rcs))
            row = MetricsRow(
                step=step,
                epoch=epoch + 1,
                loss=float(np.mean(losses)),
                r_chosen=mean_rc,
                r_rejected=float(np.mean(rrs)),
                lambda_chosen=float(np.mean([obj.tether_coefficient(r) for r in rcs])),
                delta=float(delta_used),
                grad_max_norm=grad_max,
                kl_estimate=mean_rc / config.beta,
            )
            metrics.append(row)
            if metrics_writer is not None:
                metrics_writer.write(row)
        if metrics_writer is not None:
            metrics_writer.flush()
        if step >= total:
            break
    log.info("trained %s for %d steps", config.objective, step)
    return policy, metrics


def _apply_update(config: TrainConfig, policy: PolicyParams, grad: np.ndarray, adam: _AdamState) -> None:
    lr = config.learning_rate
    if lr == 0:
        return
    if config.optimizer == "sgd":
        policy.logits -= lr * grad
        return
    adam.t += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    adam.m = b1 * adam.m + (1 - b1) * grad
    adam.v = b2 * adam.v + (1 - b2) * grad * grad
    m_hat = adam.m / (1 - b1 ** adam.t)
    v_hat = adam.v / (1 - b2 ** adam.t)
    policy.logits -= lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)


def reward_means(policy, reference, beta: float, pairs: Sequence) -> tuple[float, float]:
    """Mean implicit reward of chosen and rejected responses over ``pairs``."""
    rcfg = obj.RewardConfig(beta=beta)
    rc = [obj.implicit_reward(policy, reference, rcfg, p.prompt, p.chosen) for p in pairs]
    rr = [obj.implicit_reward(policy, reference, rcfg, p.prompt, p.rejected) for p in pairs]
    return float(np.mean(rc)), float(np.mean(rr))


def dataset_loss(config: TrainConfig, policy, reference, pairs: Sequence, delta: float = 0.0) -> float:
    """Mean objective value over ``pairs`` without taking a step."""
    rcfg = obj.RewardConfig(beta=config.beta)
    tracker = obj.DeltaTracker(alpha=config.ema_alpha, delta=delta, initialized=True)
    vals = []
    for p in pairs:
        ref = (log_prob(reference, p.prompt, p.chosen), log_prob(reference, p.prompt, p.rejected))
        vals.append(_pair_loss(config, policy, reference, rcfg, p, ref, tracker)[0])
    return float(np.mean(vals))


def evaluate_holdout(policy, reference, cfg: obj.RewardConfig, heldout_pairs: Sequence) -> HoldoutSummary:
    """Log-prob drift from the reference and margin-sign accuracy on held-out pairs.

    Drift averages ``|log pi_theta - log pi_ref|`` over both responses of every
    pair.  It is a toy-scale stand-in for out-of-domain forgetting.
    """
    if len(heldout_pairs) == 0:
        raise InvalidInputError("holdout set must be non-empty")
    drifts = []
    correct = 0
    for p in heldout_pairs:
        dc = log_prob(policy, p.prompt, p.chosen) - log_prob(reference, p.prompt, p.chosen)
        dr = log_prob(policy, p.prompt, p.rejected) - log_prob(reference, p.prompt, p.rejected)
        drifts.extend((abs(dc), abs(dr)))
        if cfg.beta * (dc - dr) > 0:
            correct += 1
    return HoldoutSummary(
        drift=float(np.mean(drifts)),
        accuracy=correct / len(heldout_pairs),
        n_pairs=len(heldout_pairs),
    )

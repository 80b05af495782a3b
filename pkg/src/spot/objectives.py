"""Implicit reward, elastic tether, and the SFT / Reward-SFT / DPO / SPoT losses.

Every loss returns ``(value, gradient_table, record)`` where the gradient is
with respect to the policy logits.  Rewards are

    r(x, y) = beta * (log pi_theta(y|x) - log pi_ref(y|x))

computed per sequence, with no length normalisation.  The reference policy
never receives gradient.

The BCO shift ``delta`` stands in for ``beta * log Z(x)``, the log partition
term of the KL-constrained optimum, which is intractable and is never
evaluated here.  :class:`DeltaTracker` keeps it as an EMA of batch mean
rewards and is treated as a constant inside each loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInputError
from .policy import PolicyParams, log_prob, log_prob_and_grad

DEFAULT_BETA = 0.1
DEFAULT_EMA_ALPHA = 0.1


@dataclass(frozen=True)
class RewardConfig:
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        if not self.beta > 0:
            raise InvalidInputError("beta must be positive")


@dataclass
class RewardRecord:
    r_chosen: float
    r_rejected: float | None = None
    lambda_chosen: float = 0.5
    step: int = 0

    @property
    def margin(self) -> float | None:
        if self.r_rejected is None:
            return None
        return self.r_chosen - self.r_rejected


@dataclass
class DeltaTracker:
    alpha: float = DEFAULT_EMA_ALPHA
    delta: float = 0.0
    initialized: bool = False

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise InvalidInputError("ema alpha must be in (0, 1]")


@dataclass
class ContrastiveSeqs:
    """Minimal view of a training pair consumed by the losses."""

    prompt: Sequence[int]
    rejected: Sequence[int]
    chosen: Sequence[int]


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def log_sigmoid(z: float) -> float:
    if z >= 0:
        return -math.log1p(math.exp(-z))
    return z - math.log1p(math.exp(z))


def tether_coefficient(r: float) -> float:
    """Gradient scale ``1 - sigmoid(r)`` applied to the chosen term."""
    return sigmoid(-r)


def _check_pair(policy: PolicyParams, reference: PolicyParams) -> None:
    if not policy.same_shape(reference):
        raise InvalidInputError("policy and reference must share vocab and order")


def implicit_reward(
    policy: PolicyParams, reference: PolicyParams, cfg: RewardConfig, prompt, response
) -> float:
    _check_pair(policy, reference)
    return cfg.beta * (log_prob(policy, prompt, response) - log_prob(reference, prompt, response))


def _reward_and_grad(policy, reference, cfg, prompt, response, ref_logp=None):
    _check_pair(policy, reference)
    lp, grad = log_prob_and_grad(policy, prompt, response)
    if ref_logp is None:
        ref_logp = log_prob(reference, prompt, response)
    return cfg.beta * (lp - ref_logp), grad


def loss_sft(policy: PolicyParams, prompt, chosen) -> tuple[float, np.ndarray]:
    lp, grad = log_prob_and_grad(policy, prompt, chosen)
    return -lp, -grad


def loss_reward_sft(
    policy, reference, cfg: RewardConfig, prompt, chosen, ref_logp: float | None = None
) -> tuple[float, np.ndarray, RewardRecord]:
    r, g = _reward_and_grad(policy, reference, cfg, prompt, chosen, ref_logp)
    lam = tether_coefficient(r)
    grad = -(lam * cfg.beta) * g
    return -log_sigmoid(r), grad, RewardRecord(r_chosen=r, lambda_chosen=lam)


def dpo_loss_value(r_chosen: float, r_rejected: float) -> float:
    return -log_sigmoid(r_chosen - r_rejected)


def bce_loss_value(r_chosen: float, r_rejected: float, delta: float = 0.0) -> float:
    return -log_sigmoid(r_chosen - delta) - log_sigmoid(-(r_rejected - delta))


def loss_dpo(
    policy, reference, cfg: RewardConfig, pair, ref_logps: tuple[float, float] | None = None
) -> tuple[float, np.ndarray, RewardRecord]:
    rc_ref, rr_ref = ref_logps if ref_logps is not None else (None, None)
    rc, gc = _reward_and_grad(policy, reference, cfg, pair.prompt, pair.chosen, rc_ref)
    rr, gr = _reward_and_grad(policy, reference, cfg, pair.prompt, pair.rejected, rr_ref)
    coef = sigmoid(-(rc - rr))
    grad = -(coef * cfg.beta) * (gc - gr)
    record = RewardRecord(r_chosen=rc, r_rejected=rr, lambda_chosen=tether_coefficient(rc))
    return dpo_loss_value(rc, rr), grad, record


def _bce_terms(policy, reference, cfg, pair, delta, ref_logps):
    rc_ref, rr_ref = ref_logps if ref_logps is not None else (None, None)
    rc, gc = _reward_and_grad(policy, reference, cfg, pair.prompt, pair.chosen, rc_ref)
    rr, gr = _reward_and_grad(policy, reference, cfg, pair.prompt, pair.rejected, rr_ref)
    pos_grad = -(sigmoid(-(rc - delta)) * cfg.beta) * gc
    neg_grad = (sigmoid(rr - delta) * cfg.beta) * gr
    record = RewardRecord(r_chosen=rc, r_rejected=rr, lambda_chosen=tether_coefficient(rc))
    return bce_loss_value(rc, rr, delta), pos_grad, neg_grad, record


def bce_term_gradients(policy, reference, cfg: RewardConfig, pair, delta: float = 0.0):
    """Positive- and negative-term gradients of the (shifted) BCE loss, kept separate."""
    _, pos, neg, _ = _bce_terms(policy, reference, cfg, pair, delta, None)
    return pos, neg


def loss_spot_bce(
    policy, reference, cfg: RewardConfig, pair, ref_logps: tuple[float, float] | None = None
) -> tuple[float, np.ndarray, RewardRecord]:
    value, pos, neg, record = _bce_terms(policy, reference, cfg, pair, 0.0, ref_logps)
    return value, pos + neg, record


def loss_spot_bco(
    policy,
    reference,
    cfg: RewardConfig,
    pair,
    tracker: DeltaTracker,
    ref_logps: tuple[float, float] | None = None,
) -> tuple[float, np.ndarray, RewardRecord]:
    value, pos, neg, record = _bce_terms(policy, reference, cfg, pair, tracker.delta, ref_logps)
    return value, pos + neg, record


def update_delta(tracker: DeltaTracker, batch_rewards: Sequence[tuple[float, float]]) -> DeltaTracker:
    """EMA update of the reward shift from a batch of ``(r_chosen, r_rejected)``."""
    if len(batch_rewards) == 0:
        raise InvalidInputError("batch must be non-empty")
    batch_mean = float(np.mean([0.5 * (rc + rr) for rc, rr in batch_rewards]))
    if not tracker.initialized:
        new = batch_mean
    else:
        new = tracker.alpha * batch_mean + (1.0 - tracker.alpha) * tracker.delta
    return DeltaTracker(alpha=tracker.alpha, delta=new, initialized=True)

"""Optimization: L1 loss, Adam, the milestone schedule, desk-scale training."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import PatchPair
from .model import ElanConfig, ElanWeights, build, forward, trainable_tensors
from .tensor import Tensor


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute difference over every element (batch-averaged)."""
    if pred.data.shape != target.data.shape:
        raise ValueError(f"shape mismatch {pred.data.shape} vs {target.data.shape}")
    return (pred - target).abs().mean()


@dataclass
class OptimizerState:
    """Adam moment buffers and hyperparameters."""

    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr: float = 2e-4, **kw) -> "OptimizerState":
        state = cls(lr=lr, **kw)
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
        return state


def adam_step(params: list[Tensor], grads, state: OptimizerState) -> OptimizerState:
    """One bias-corrected Adam update, applied to the parameters in place."""
    if not (len(params) == len(grads) == len(state.m)):
        raise ValueError("parameter, gradient and state lengths disagree")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {p.data.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return state


@dataclass(frozen=True)
class Schedule:
    """Step decay: multiply by `factor` after each milestone epoch."""

    base_lr: float = 2e-4
    milestones: tuple[int, ...] = (250, 400, 425, 450, 475)
    factor: float = 0.5

    def __post_init__(self):
        if list(self.milestones) != sorted(set(self.milestones)):
            raise ValueError("milestones must be strictly increasing")


def lr_at(schedule: Schedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    passed = sum(1 for m in schedule.milestones if epoch > m)
    return schedule.base_lr * schedule.factor**passed


def train_toy(
    cfg: ElanConfig,
    pairs: list[PatchPair],
    steps: int,
    seed: int = 0,
    lr: float = 1e-3,
) -> tuple[list[tuple[int, float]], ElanWeights]:
    """Overfit the given patch pairs for `steps` Adam updates.

    Deterministic for a fixed seed; returns the per-step loss trace and the
    trained weights. A desk-scale stand-in for the full training run.
    """
    if not pairs:
        raise ValueError("need at least one patch pair")
    for pair in pairs:
        if pair.scale != cfg.scale:
            raise ValueError(f"pair scale {pair.scale} does not match config {cfg.scale}")
    weights = build(cfg, seed=seed)
    params = trainable_tensors(weights)
    state = OptimizerState.for_params(params, lr=lr)
    x = Tensor(np.stack([p.lr_patch for p in pairs]))
    y = Tensor(np.stack([p.hr_patch for p in pairs]))
    trace: list[tuple[int, float]] = []
    for step in range(steps):
        pred = forward(weights, cfg, x, training=True)
        loss = l1_loss(pred, y)
        for p in params:
            p.zero_grad()
        loss.backward()
        adam_step(params, [p.grad for p in params], state)
        trace.append((step, loss.item()))
    return trace, weights

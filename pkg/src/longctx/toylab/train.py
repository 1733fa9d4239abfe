"""Deterministic Adam training loop for the toy model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, DivergenceError
from .model import ToyModel, loss_and_gradients

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.95
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    learning_rate: float = 1.5e-3
    steps: int = 2000
    batch_size: int = 8
    grad_clip: float = 0.0  # 0 disables clipping
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    seed: int = 0
    divergence_factor: float = 10.0
    divergence_patience: int = 50

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be >= 0")
        if self.steps < 1:
            raise ConfigurationError("steps must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2) -> None:
    state.t += 1
    t = state.t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        state.m[name] = beta1 * state.m[name] + (1 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1 - beta2) * g * g
        m_hat = state.m[name] / (1 - beta1**t)
        v_hat = state.v[name] / (1 - beta2**t)
        params[name] -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale the whole gradient set to a global L2 norm cap; returns the
    pre-clip norm."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def train(model: ToyModel, corpus: np.ndarray, config: TrainConfig,
          optimizer_state: AdamState | None = None):
    """Train in place on an array of fixed-length sequences.

    corpus has shape (num_sequences, seq_len) with seq_len <= the model's
    current context window; targets are the inputs shifted by one. Batch
    order is a seeded shuffle, so fixed seeds give bit-identical runs.
    Returns (model, loss_curve, optimizer_state).
    """
    corpus = np.asarray(corpus)
    if corpus.ndim != 2:
        raise ConfigurationError("corpus must be (num_sequences, seq_len)")
    if corpus.shape[1] > model.context_length:
        raise ConfigurationError(
            f"corpus seq_len {corpus.shape[1]} exceeds context_length "
            f"{model.context_length}"
        )
    rng = np.random.default_rng(config.seed)
    state = optimizer_state if optimizer_state is not None else AdamState()
    n = corpus.shape[0]
    losses = []
    initial_loss = None
    bad_streak = 0

    for step in range(config.steps):
        idx = rng.integers(0, n, size=config.batch_size)
        batch = corpus[idx]
        inputs, targets = batch[:, :-1], batch[:, 1:]
        loss, grads = loss_and_gradients(model, inputs, targets)
        clip_gradients(grads, config.grad_clip)
        if config.learning_rate > 0:
            adam_step(model.params, grads, state, config.learning_rate,
                      config.beta1, config.beta2)
        losses.append(loss)
        if initial_loss is None:
            initial_loss = loss
        if loss > config.divergence_factor * initial_loss:
            bad_streak += 1
            if bad_streak >= config.divergence_patience:
                raise DivergenceError(
                    f"loss {loss:.4f} > {config.divergence_factor}x initial "
                    f"{initial_loss:.4f} for {bad_streak} consecutive steps"
                )
        else:
            bad_streak = 0
    return model, losses, state

"""Shared tensor math: softmax, cross-entropy, Adam, and a finite-difference
gradient checker.

Everything here is pure and deterministic: no global state, float64 only.
Randomness always flows through an explicitly passed generator from
:func:`seeded_rng`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PROB_CLIP = 1e-12  # floor applied to probabilities inside the loss


@dataclass(frozen=True)
class OptimizerConfig:
    """Adam hyperparameters plus an optional decoupled-from-nothing L2 term.

    beta1/beta2/epsilon default to the optimizer's published defaults; the
    learning rate is always problem-specific.
    """

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    l2_penalty: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0.0 < self.beta1 < 1.0):
            raise ValueError("beta1 must be in (0, 1)")
        if not (0.0 < self.beta2 < 1.0):
            raise ValueError("beta2 must be in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.l2_penalty < 0:
            raise ValueError("l2_penalty must be nonnegative")


@dataclass
class AdamState:
    """Per-parameter first/second moment estimates and the step counter."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0

    @classmethod
    def zeros(cls, n_params: int) -> "AdamState":
        return cls(np.zeros(n_params), np.zeros(n_params), 0)


def softmax(logits) -> np.ndarray:
    """Stable softmax over the last axis (max-subtraction before exp)."""
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0:
        raise ValueError("empty logits")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probabilities, gold_index: int) -> float:
    """Negative log-likelihood of the gold class, -ln(p[gold] + clip)."""
    p = np.asarray(probabilities, dtype=np.float64)
    if not 0 <= gold_index < p.shape[-1]:
        raise ValueError(f"gold_index {gold_index} out of range for {p.shape[-1]} classes")
    return float(-np.log(p[gold_index] + PROB_CLIP))


def adam_step(
    params: np.ndarray,
    grads: np.ndarray,
    state: AdamState,
    config: OptimizerConfig,
) -> tuple[np.ndarray, AdamState]:
    """One Adam update; returns fresh arrays, inputs are never mutated.

    With l2_penalty > 0 the raw gradient is replaced by g + l2_penalty * theta
    before the moments are updated.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ValueError(f"params/grads length mismatch: {params.shape} vs {grads.shape}")
    if state.first_moment.shape != params.shape or state.second_moment.shape != params.shape:
        raise ValueError("optimizer state length does not match parameter count")

    g = grads + config.l2_penalty * params if config.l2_penalty > 0 else grads
    t = state.step_count + 1
    m = config.beta1 * state.first_moment + (1.0 - config.beta1) * g
    v = config.beta2 * state.second_moment + (1.0 - config.beta2) * g * g
    m_hat = m / (1.0 - config.beta1**t)
    v_hat = v / (1.0 - config.beta2**t)
    new_params = params - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
    return new_params, AdamState(m, v, t)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Rank-2 matrix product with explicit dimension checks."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects rank-2 operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: ({a.shape[0]}x{a.shape[1]}) @ ({b.shape[0]}x{b.shape[1]})")
    return a @ b


def grad_check(
    model_loss,
    params: np.ndarray,
    analytic_grads: np.ndarray,
    probe_count: int = 200,
    h: float = 1e-5,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Probes `probe_count` randomly sampled coordinates (all of them when the
    parameter vector is smaller). Relative error per coordinate is
    |a - n| / max(1, |a|, |n|), which stays meaningful near zero.
    """
    params = np.asarray(params, dtype=np.float64)
    analytic_grads = np.asarray(analytic_grads, dtype=np.float64)
    if params.shape != analytic_grads.shape:
        raise ValueError("analytic gradient length does not match parameters")
    if probe_count < 1:
        raise ValueError("probe_count must be positive")
    rng = rng if rng is not None else seeded_rng(0)

    flat = params.ravel().copy()
    grads = analytic_grads.ravel()
    n = flat.size
    idx = np.arange(n) if probe_count >= n else rng.choice(n, size=probe_count, replace=False)

    worst = 0.0
    for i in idx:
        keep = flat[i]
        flat[i] = keep + h
        loss_plus = float(model_loss(flat.reshape(params.shape)))
        flat[i] = keep - h
        loss_minus = float(model_loss(flat.reshape(params.shape)))
        flat[i] = keep
        if not (np.isfinite(loss_plus) and np.isfinite(loss_minus)):
            raise ValueError("non-finite loss during gradient check")
        numeric = (loss_plus - loss_minus) / (2.0 * h)
        a = grads[i]
        err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
        worst = max(worst, err)
    return worst


def seeded_rng(seed: int) -> np.random.Generator:
    """Deterministic random stream (PCG64); same seed, same draws, any platform."""
    return np.random.Generator(np.random.PCG64(seed))

"""Dense float64 math the rest of the engine is built on.

Stable activations, softmax cross-entropy with its gradient, a hand-rolled
Adam optimizer, and a central-difference gradient checker. All functions are
pure and operate on plain numpy arrays; training runs in 64-bit throughout
so gradient checks are not confounded by precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError

_TINY = np.nextafter(0.0, 1.0)
_BELOW_ONE = np.nextafter(1.0, 0.0)


def as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def matmul(a, b) -> np.ndarray:
    """Matrix product with explicit shape checking."""
    a, b = as_f64(a), as_f64(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(
            f"matmul needs two 2-d operands, got shapes {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} times {b.shape}")
    return a @ b


def sigmoid(x) -> np.ndarray:
    """Logistic function, stable for large |x| and strictly inside (0, 1)."""
    x = as_f64(x)
    e = np.exp(-np.abs(x))  # in (0, 1], never overflows
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    # exp underflow beyond |x| ~ 745 would round to exact 0 or 1; keep the
    # interval open so downstream logs never see them
    return np.clip(out, _TINY, _BELOW_ONE)


def softmax_cross_entropy(logits, labels):
    """Cross-entropy of softmax(logits) against integer labels.

    Accepts one logit row with a scalar label, or a batch of rows with a
    label vector. Returns (loss, grad) where grad = softmax(logits) - onehot.
    The log-sum-exp is shifted by the row max so huge logits cannot overflow.
    """
    logits = as_f64(logits)
    single = logits.ndim == 1
    lg = logits[None, :] if single else logits
    if lg.ndim != 2:
        raise DimensionError(f"logits must be 1-d or 2-d, got shape {logits.shape}")
    lab = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if lab.shape != (lg.shape[0],):
        raise DimensionError(
            f"labels shape {lab.shape} does not match {lg.shape[0]} logit rows"
        )
    n_classes = lg.shape[1]
    if lab.size and (lab.min() < 0 or lab.max() >= n_classes):
        raise IndexError(f"label out of range for {n_classes} classes")

    shifted = lg - lg.max(axis=1, keepdims=True)
    expv = np.exp(shifted)
    denom = expv.sum(axis=1, keepdims=True)
    rows = np.arange(lg.shape[0])
    loss = np.log(denom[:, 0]) - shifted[rows, lab]
    grad = expv / denom
    grad[rows, lab] -= 1.0
    if single:
        return float(loss[0]), grad[0]
    return loss, grad


@dataclass
class AdamState:
    """Optimizer state for one parameter matrix."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_param(cls, param: np.ndarray, lr: float, beta1: float = 0.9,
                  beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param), 0, lr, beta1,
                   beta2, epsilon)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> np.ndarray:
    """One Adam update with bias correction. Mutates state, returns new params."""
    params, grads = as_f64(params), as_f64(grads)
    if params.shape != grads.shape:
        raise DimensionError(
            f"gradient shape {grads.shape} does not match parameter shape {params.shape}"
        )
    if state.first_moment.shape != params.shape:
        raise DimensionError(
            f"optimizer state shape {state.first_moment.shape} does not match "
            f"parameter shape {params.shape}"
        )
    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    state.first_moment = b1 * state.first_moment + (1.0 - b1) * grads
    state.second_moment = b2 * state.second_moment + (1.0 - b2) * grads * grads
    m_hat = state.first_moment / (1.0 - b1 ** state.step_count)
    v_hat = state.second_moment / (1.0 - b2 ** state.step_count)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)


def finite_difference_gradient(f, at, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, coordinate by coordinate."""
    at = np.array(at, dtype=np.float64)  # private copy; we poke entries in place
    grad = np.zeros_like(at)
    flat = at.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(at)
        flat[i] = orig - h
        lo = f(at)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    return grad

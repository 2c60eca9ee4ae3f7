"""Sparse Bernoulli concept gates.

An amortization matrix maps embeddings to per-concept posterior
probabilities. During training the binary indicators are replaced by a
temperature-controlled logistic relaxation so gradients flow through the
sampler; at inference the posterior mean is thresholded instead. A KL term
against a low-probability prior is what pushes the gates toward sparsity.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, ParameterError
from .numerics import as_f64, matmul, sigmoid

# posteriors are clamped to [PROB_FLOOR, 1 - PROB_FLOOR] before any log or
# logit so saturated amortization outputs stay finite
PROB_FLOOR = 1e-7


def _clamped(probs: np.ndarray) -> np.ndarray:
    return np.clip(probs, PROB_FLOOR, 1.0 - PROB_FLOOR)


def posterior_probs(embeddings, amortization) -> np.ndarray:
    """Per-concept Bernoulli posteriors: sigmoid(embeddings @ amortization)."""
    return sigmoid(matmul(embeddings, amortization))


def sample_relaxed(probs, temperature: float, uniforms) -> np.ndarray:
    """Reparameterized relaxed Bernoulli draw.

    With logistic noise lam = log u - log(1 - u), returns
    sigmoid((logit(prob) + lam) / temperature). As temperature -> 0 this
    sharpens to a hard Bernoulli(prob) draw while staying differentiable
    with respect to prob at any positive temperature.
    """
    if not temperature > 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    probs = as_f64(probs)
    uniforms = as_f64(uniforms)
    if uniforms.shape != probs.shape:
        raise DimensionError(
            f"uniform noise shape {uniforms.shape} does not match probs shape {probs.shape}"
        )
    if uniforms.size and (uniforms.min() <= 0.0 or uniforms.max() >= 1.0):
        raise ParameterError("uniform noise must lie strictly inside (0, 1)")
    qc = _clamped(probs)
    logit_q = np.log(qc) - np.log1p(-qc)
    noise = np.log(uniforms) - np.log1p(-uniforms)
    return sigmoid((logit_q + noise) / temperature)


def relaxed_sample_grad(probs, values, temperature: float) -> np.ndarray:
    """d value / d prob for sample_relaxed, zero where the prob clamp saturates."""
    probs, values = as_f64(probs), as_f64(values)
    qc = _clamped(probs)
    inside = (probs > PROB_FLOOR) & (probs < 1.0 - PROB_FLOOR)
    return values * (1.0 - values) / (temperature * qc * (1.0 - qc)) * inside


def threshold_mean(probs, tau: float) -> np.ndarray:
    """Hard indicators from posterior means: 1 where prob > tau (strict)."""
    if not 0.0 <= tau <= 1.0:
        raise ParameterError(f"threshold must lie in [0, 1], got {tau}")
    return (as_f64(probs) > tau).astype(np.float64)


def kl_to_prior(probs, alpha: float) -> np.ndarray:
    """KL(Bernoulli(q) || Bernoulli(alpha)) summed over concepts, one value per row.

    Inputs of any rank are reduced over every axis but the first, so a
    (rows, patches, concepts) tensor yields per-row sums over both trailing
    axes.
    """
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"prior probability must lie in (0, 1), got {alpha}")
    probs = as_f64(probs)
    qc = _clamped(probs)
    per_entry = qc * (np.log(qc) - np.log(alpha)) \
        + (1.0 - qc) * (np.log1p(-qc) - np.log1p(-alpha))
    per_entry = np.maximum(per_entry, 0.0)  # guard rounding at q == alpha
    if per_entry.ndim == 0:
        return per_entry
    return per_entry.reshape(per_entry.shape[0], -1).sum(axis=1)


def kl_grad(probs, alpha: float) -> np.ndarray:
    """d KL / d q per entry: logit(q) - logit(alpha), zero where clamped."""
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"prior probability must lie in (0, 1), got {alpha}")
    probs = as_f64(probs)
    qc = _clamped(probs)
    inside = (probs > PROB_FLOOR) & (probs < 1.0 - PROB_FLOOR)
    logit_alpha = np.log(alpha) - np.log1p(-alpha)
    return (np.log(qc) - np.log1p(-qc) - logit_alpha) * inside

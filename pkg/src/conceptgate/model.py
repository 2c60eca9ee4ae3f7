"""Two-level gated classifier: forward computation, loss, and exact gradients.

The high level scores whole images against concepts; the low level scores
patches against attributes, takes the best patch per class, and is gated by
whichever high-level concepts are switched on. The loss is two cross-entropy
heads plus a weighted KL of both posteriors against their sparse priors.

All gradients are derived by hand (no autodiff): through the classification
matrices, the indicator masks, the max-over-patches (subgradient routed to
the winning patch), the clamped gate, the relaxed sampler, and the
amortization sigmoids.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from .discovery import (
    kl_grad,
    kl_to_prior,
    posterior_probs,
    relaxed_sample_grad,
    sample_relaxed,
)
from .errors import DimensionError, ParameterError
from .hierarchy import ConceptHierarchy
from .numerics import as_f64, matmul, softmax_cross_entropy

MODES = ("joint", "high-only", "low-only", "no-discovery")


@dataclass
class ModelParams:
    """The four trainable matrices."""

    w_hc: np.ndarray  # H x C, high-level classification
    w_lc: np.ndarray  # L_all x C, low-level classification
    w_hs: np.ndarray  # K x H, high-level amortization
    w_ls: np.ndarray  # K x L_all, low-level amortization

    def copy(self) -> "ModelParams":
        return ModelParams(self.w_hc.copy(), self.w_lc.copy(),
                           self.w_hs.copy(), self.w_ls.copy())


PARAM_NAMES = ("w_hc", "w_lc", "w_hs", "w_ls")


@dataclass
class Gradients:
    w_hc: np.ndarray
    w_lc: np.ndarray
    w_hs: np.ndarray
    w_ls: np.ndarray


@dataclass
class LossBreakdown:
    ce_high: float
    ce_low: float
    kl_high: float
    kl_low: float
    total: float

    def to_dict(self) -> dict:
        return {"ce_high": self.ce_high, "ce_low": self.ce_low,
                "kl_high": self.kl_high, "kl_low": self.kl_low,
                "total": self.total}


@dataclass
class ForwardTrace:
    """Everything the backward pass needs, captured during one forward pass."""

    mode: str
    temperature: float
    batch_images: np.ndarray        # N x K
    batch_patches: np.ndarray       # N x P x K
    s_h: np.ndarray                 # N x H similarities
    s_l: np.ndarray                 # N x P x L similarities
    q_h: np.ndarray | None          # posteriors, None when not sampled
    q_l: np.ndarray | None
    z_h: np.ndarray | None          # indicators feeding the high head
    z_l: np.ndarray | None          # raw low-level indicators
    raw_gate: np.ndarray | None     # N x L, pre-clamp membership sum
    gate: np.ndarray | None         # N x L, clamped to [0, 1]
    z_combined: np.ndarray | None   # N x P x L, gated low indicators
    logits_high: np.ndarray | None  # N x C
    logits_low: np.ndarray | None   # N x C
    argmax_patch: np.ndarray | None  # N x C winning patch per class


def init_params(embed_dim: int, n_high: int, n_low: int, n_classes: int,
                seed: int) -> ModelParams:
    """Fresh parameters.

    Classification matrices start uniform in +-1/sqrt(fan_in); amortization
    matrices start at zero so every posterior begins exactly at 0.5, the
    maximum-entropy gate.
    """
    gen = rng.stream(seed, rng.INIT)
    bound_h = 1.0 / np.sqrt(n_high)
    bound_l = 1.0 / np.sqrt(n_low)
    w_hc = gen.uniform(-bound_h, bound_h, size=(n_high, n_classes))
    w_lc = gen.uniform(-bound_l, bound_l, size=(n_low, n_classes))
    w_hs = np.zeros((embed_dim, n_high))
    w_ls = np.zeros((embed_dim, n_low))
    return ModelParams(w_hc, w_lc, w_hs, w_ls)


def forward_high(s_h, z_h, w_hc) -> np.ndarray:
    """High-level class logits: (z_h * s_h) @ w_hc."""
    s_h, z_h = as_f64(s_h), as_f64(z_h)
    if s_h.shape != z_h.shape:
        raise DimensionError(
            f"indicator shape {z_h.shape} does not match similarity shape {s_h.shape}"
        )
    return matmul(z_h * s_h, w_hc)


def link_indicators(z_h, z_l, hierarchy: ConceptHierarchy) -> np.ndarray:
    """Gate low-level indicators by the active high-level concepts.

    gate[n, l] = min(sum_h z_h[n, h] * B[l, h], 1): a clamped OR over the
    concepts owning attribute l. With one owner per attribute this is the
    plain product z_h[owner] * z_l.
    """
    z_h, z_l = as_f64(z_h), as_f64(z_l)
    gate, _ = _gate(z_h, z_l, hierarchy)
    return gate[:, None, :] * z_l


def _gate(z_h: np.ndarray, z_l: np.ndarray,
          hierarchy: ConceptHierarchy) -> tuple[np.ndarray, np.ndarray]:
    b = hierarchy.membership
    if z_h.ndim != 2 or z_h.shape[1] != b.shape[1]:
        raise DimensionError(
            f"high indicators shape {z_h.shape} does not match {b.shape[1]} concepts"
        )
    if z_l.ndim != 3 or z_l.shape[2] != b.shape[0]:
        raise DimensionError(
            f"low indicators shape {z_l.shape} does not match {b.shape[0]} attributes"
        )
    raw = z_h @ b.T                 # N x L, counts active owners
    return np.minimum(raw, 1.0), raw


def forward_low(s_l, z, w_lc) -> tuple[np.ndarray, np.ndarray]:
    """Low-level class logits via the best patch per class.

    Per-patch logits ((z * s_l) @ w_lc) are reduced with an elementwise max
    over patches; ties break to the first patch index. Returns the reduced
    logits and the winning patch indices.
    """
    s_l, z = as_f64(s_l), as_f64(z)
    if s_l.shape != z.shape:
        raise DimensionError(
            f"indicator shape {z.shape} does not match similarity shape {s_l.shape}"
        )
    if s_l.ndim != 3:
        raise DimensionError(f"patch similarities must be 3-d, got shape {s_l.shape}")
    n, p, l_all = s_l.shape
    masked = (z * s_l).reshape(n * p, l_all)
    per_patch = matmul(masked, w_lc).reshape(n, p, -1)  # N x P x C
    logits = per_patch.max(axis=1)
    argmax_patch = per_patch.argmax(axis=1)  # first max wins ties
    return logits, argmax_patch


def forward_training(params: ModelParams, batch_images, batch_patches, s_h, s_l,
                     hierarchy: ConceptHierarchy, temperature: float,
                     uniforms_high, uniforms_low, mode: str = "joint") -> ForwardTrace:
    """One stochastic training forward pass over a batch.

    uniforms_high / uniforms_low supply the sampler noise explicitly so a
    pass can be replayed exactly (gradient checks, resumed runs).
    """
    if mode not in MODES:
        raise ParameterError(f"mode must be one of {MODES}, got {mode!r}")
    batch_images = as_f64(batch_images)
    batch_patches = as_f64(batch_patches)
    s_h, s_l = as_f64(s_h), as_f64(s_l)
    n, p_count, l_all = s_l.shape
    h_count = s_h.shape[1]

    q_h = q_l = z_h = z_l = None
    raw_gate = gate = z_combined = None

    if mode == "no-discovery":
        # indicators pinned on; the model reduces to two plain linear heads
        z_h = np.ones((n, h_count))
        z_combined = np.ones((n, p_count, l_all))
    else:
        if mode in ("joint", "high-only"):
            q_h = posterior_probs(batch_images, params.w_hs)
            z_h = sample_relaxed(q_h, temperature, uniforms_high)
        if mode in ("joint", "low-only"):
            flat = batch_patches.reshape(n * p_count, -1)
            q_l = posterior_probs(flat, params.w_ls).reshape(n, p_count, l_all)
            z_l = sample_relaxed(q_l, temperature, uniforms_low)
        if mode == "joint":
            gate, raw_gate = _gate(z_h, z_l, hierarchy)
            z_combined = gate[:, None, :] * z_l
        elif mode == "low-only":
            z_combined = z_l  # every attribute stays ungated

    logits_high = argmax_patch = logits_low = None
    if mode != "low-only":
        logits_high = forward_high(s_h, z_h, params.w_hc)
    if mode != "high-only":
        logits_low, argmax_patch = forward_low(s_l, z_combined, params.w_lc)

    return ForwardTrace(mode, temperature, batch_images, batch_patches, s_h, s_l,
                        q_h, q_l, z_h, z_l, raw_gate, gate, z_combined,
                        logits_high, logits_low, argmax_patch)


def compute_loss(trace: ForwardTrace, labels, alpha_h: float, alpha_l: float,
                 beta: float) -> LossBreakdown:
    """Batch-mean loss: both cross-entropy heads plus beta-weighted KL terms.

    Heads or KL terms that the trace's mode leaves out contribute exactly 0.
    """
    labels = np.asarray(labels, dtype=np.int64)
    ce_high = ce_low = kl_high = kl_low = 0.0
    if trace.logits_high is not None:
        losses, _ = softmax_cross_entropy(trace.logits_high, labels)
        ce_high = float(np.mean(losses))
    if trace.logits_low is not None:
        losses, _ = softmax_cross_entropy(trace.logits_low, labels)
        ce_low = float(np.mean(losses))
    if trace.q_h is not None:
        kl_high = float(np.mean(kl_to_prior(trace.q_h, alpha_h)))
    if trace.q_l is not None:
        kl_low = float(np.mean(kl_to_prior(trace.q_l, alpha_l)))
    total = ce_high + ce_low + beta * (kl_high + kl_low)
    return LossBreakdown(ce_high, ce_low, kl_high, kl_low, total)


def backward(trace: ForwardTrace, labels, params: ModelParams,
             hierarchy: ConceptHierarchy, alpha_h: float, alpha_l: float,
             beta: float) -> Gradients:
    """Exact gradients of compute_loss for all four parameter matrices.

    Matrices untouched by the trace's mode come back as zeros.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[0]
    grads = Gradients(np.zeros_like(params.w_hc), np.zeros_like(params.w_lc),
                      np.zeros_like(params.w_hs), np.zeros_like(params.w_ls))
    dz_h = None  # accumulated dLoss/dz_h from both heads
    dz_l = None

    if trace.logits_high is not None:
        _, dlogits = softmax_cross_entropy(trace.logits_high, labels)
        dlogits /= n  # batch mean
        gated = trace.z_h * trace.s_h
        grads.w_hc = gated.T @ dlogits
        if trace.q_h is not None:
            dz_h = (dlogits @ params.w_hc.T) * trace.s_h

    if trace.logits_low is not None:
        _, dlogits = softmax_cross_entropy(trace.logits_low, labels)
        dlogits /= n
        masked = trace.z_combined * trace.s_l
        n_b, p_count, l_all = masked.shape
        c_count = dlogits.shape[1]
        # max over patches: the whole gradient lands on the winning patch
        d_per_patch = np.zeros((n_b, p_count, c_count))
        rows = np.arange(n_b)[:, None]
        cols = np.arange(c_count)[None, :]
        d_per_patch[rows, trace.argmax_patch, cols] = dlogits
        grads.w_lc = masked.reshape(-1, l_all).T @ d_per_patch.reshape(-1, c_count)
        if trace.q_l is not None:
            d_masked = (d_per_patch.reshape(-1, c_count) @ params.w_lc.T)
            dz = d_masked.reshape(n_b, p_count, l_all) * trace.s_l
            if trace.mode == "joint":
                # z = gate (per example) * z_l (per patch)
                dgate = (dz * trace.z_l).sum(axis=1)
                dz_l = dz * trace.gate[:, None, :]
                passed = dgate * (trace.raw_gate < 1.0)  # clamp blocks overflow
                from_gate = passed @ hierarchy.membership  # (N,L)(L,H) -> N x H
                dz_h = from_gate if dz_h is None else dz_h + from_gate
            else:  # low-only: z_combined is z_l itself
                dz_l = dz

    if trace.q_h is not None:
        dq = np.zeros_like(trace.q_h)
        if dz_h is not None:
            dq += dz_h * relaxed_sample_grad(trace.q_h, trace.z_h, trace.temperature)
        dq += (beta / n) * kl_grad(trace.q_h, alpha_h)
        d_preact = dq * trace.q_h * (1.0 - trace.q_h)  # through the sigmoid
        grads.w_hs = trace.batch_images.T @ d_preact

    if trace.q_l is not None:
        dq = np.zeros_like(trace.q_l)
        if dz_l is not None:
            dq += dz_l * relaxed_sample_grad(trace.q_l, trace.z_l, trace.temperature)
        dq += (beta / n) * kl_grad(trace.q_l, alpha_l)
        d_preact = dq * trace.q_l * (1.0 - trace.q_l)
        flat_patches = trace.batch_patches.reshape(-1, trace.batch_patches.shape[-1])
        grads.w_ls = flat_patches.T @ d_preact.reshape(flat_patches.shape[0], -1)

    return grads

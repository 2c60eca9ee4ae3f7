"""Training loop, run configuration, and checkpointing.

The loop is deterministic given a seed: epoch shuffles and sampler noise
come from counter-keyed streams (see rng), and gradient reductions happen
in fixed index order. A run can therefore be stopped at any epoch boundary,
checkpointed, and resumed bit-exactly.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import rng
from .discovery import threshold_mean
from .embeddings import ConceptEmbeddings, EmbeddingDataset, similarity_high, similarity_low
from .errors import DivergenceError, FormatError, ParameterError, ValidationError
from .hierarchy import ConceptHierarchy, validate
from .model import (
    MODES,
    PARAM_NAMES,
    ForwardTrace,
    Gradients,
    LossBreakdown,
    ModelParams,
    backward,
    compute_loss,
    forward_training,
    init_params,
)
from .numerics import AdamState, adam_step

CHECKPOINT_MAGIC = b"CFCK"
CHECKPOINT_VERSION = 1

# which parameter matrices each mode actually trains
MODE_TRAINS = {
    "joint": ("w_hc", "w_lc", "w_hs", "w_ls"),
    "high-only": ("w_hc", "w_hs"),
    "low-only": ("w_lc", "w_ls"),
    "no-discovery": ("w_hc", "w_lc"),
}


def _is_perfect_square(n: int) -> bool:
    if n < 1:
        return False
    r = math.isqrt(n)
    return r * r == n


@dataclass
class TrainConfig:
    alpha_h: float = 1e-4   # high-level prior probability
    alpha_l: float = 1e-4   # low-level prior probability
    beta: float = 1e-4      # KL weight
    gumbel_temperature: float = 0.1
    lr: float = 1e-3
    amortization_lr_multiplier: float = 10.0
    epochs: int = 100
    batch_size: int = 256
    seed: int = 0
    infer_tau: float = 0.05  # posterior threshold used at inference
    patches: int = 16
    mode: str = "joint"

    def validate(self) -> None:
        for name in ("alpha_h", "alpha_l"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ParameterError(f"{name} must lie in (0, 1), got {v}")
        if not 0.0 < self.gumbel_temperature < 1.0:
            raise ParameterError(
                f"gumbel_temperature must lie in (0, 1), got {self.gumbel_temperature}"
            )
        if self.beta < 0.0:
            raise ParameterError(f"beta must be non-negative, got {self.beta}")
        if not self.lr > 0.0:
            raise ParameterError(f"lr must be positive, got {self.lr}")
        if not self.amortization_lr_multiplier > 0.0:
            raise ParameterError(
                f"amortization_lr_multiplier must be positive, "
                f"got {self.amortization_lr_multiplier}"
            )
        if self.epochs < 0:
            raise ParameterError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.seed < 0:
            raise ParameterError(f"seed must be non-negative, got {self.seed}")
        if not 0.0 <= self.infer_tau <= 1.0:
            raise ParameterError(f"infer_tau must lie in [0, 1], got {self.infer_tau}")
        if not _is_perfect_square(self.patches):
            raise ParameterError(
                f"patches must be a perfect square, got {self.patches}"
            )
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}, got {self.mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ParameterError(
                f"unknown config keys: {', '.join(sorted(unknown))}"
            )
        cfg = cls(**data)
        # json round-trips may widen ints to floats; pin integral fields
        for name in ("epochs", "batch_size", "seed", "patches"):
            setattr(cfg, name, int(getattr(cfg, name)))
        return cfg


@dataclass
class EpochStats:
    loss: LossBreakdown
    accuracy_high: float | None
    accuracy_low: float | None
    sparsity_high: float | None  # percent of active indicators
    sparsity_low: float | None

    def to_dict(self) -> dict:
        return {"loss": self.loss.to_dict(), "accuracy_high": self.accuracy_high,
                "accuracy_low": self.accuracy_low, "sparsity_high": self.sparsity_high,
                "sparsity_low": self.sparsity_low}

    @classmethod
    def from_dict(cls, data: dict) -> "EpochStats":
        return cls(LossBreakdown(**data["loss"]), data["accuracy_high"],
                   data["accuracy_low"], data["sparsity_high"], data["sparsity_low"])


@dataclass
class TrainHistory:
    epochs: list[EpochStats] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epochs)

    def to_dict(self) -> dict:
        return {"epochs": [e.to_dict() for e in self.epochs]}

    @classmethod
    def from_dict(cls, data: dict) -> "TrainHistory":
        return cls([EpochStats.from_dict(e) for e in data["epochs"]])


@dataclass
class ResumeState:
    """Everything needed to continue a run exactly where it stopped."""

    params: ModelParams
    adam_states: dict[str, AdamState]
    config: TrainConfig
    epochs_completed: int
    history: TrainHistory


def _fresh_adam_states(params: ModelParams, config: TrainConfig) -> dict[str, AdamState]:
    amortization_lr = config.lr * config.amortization_lr_multiplier
    return {
        "w_hc": AdamState.for_param(params.w_hc, config.lr),
        "w_lc": AdamState.for_param(params.w_lc, config.lr),
        "w_hs": AdamState.for_param(params.w_hs, amortization_lr),
        "w_ls": AdamState.for_param(params.w_ls, amortization_lr),
    }


def _check_resume(resume: ResumeState, config: TrainConfig) -> None:
    if resume.epochs_completed > config.epochs:
        raise ValidationError(
            f"checkpoint already covers {resume.epochs_completed} epochs, "
            f"config asks for {config.epochs}"
        )
    for f in fields(TrainConfig):
        if f.name == "epochs":
            continue  # extending the run is the point of resuming
        if getattr(resume.config, f.name) != getattr(config, f.name):
            raise ValidationError(
                f"checkpoint config differs on {f.name}: "
                f"{getattr(resume.config, f.name)!r} vs {getattr(config, f.name)!r}"
            )


def _epoch_sparsity(trace: ForwardTrace, hierarchy: ConceptHierarchy,
                    tau: float) -> tuple[float | None, float | None]:
    """Fraction of active hard indicators this batch would have at threshold tau."""
    if trace.mode == "no-discovery":
        return 1.0, 1.0
    high = low = None
    hard_h = None
    if trace.q_h is not None:
        hard_h = threshold_mean(trace.q_h, tau)
        high = float(hard_h.mean())
    if trace.q_l is not None:
        hard_l = threshold_mean(trace.q_l, tau)
        if trace.mode == "joint":
            gate = np.minimum(hard_h @ hierarchy.membership.T, 1.0)
            hard_l = gate[:, None, :] * hard_l
        low = float(hard_l.mean())
    return high, low


def train(dataset: EmbeddingDataset, concepts: ConceptEmbeddings,
          hierarchy: ConceptHierarchy, config: TrainConfig,
          resume: ResumeState | None = None,
          checkpoint_path=None,
          log=None) -> tuple[ModelParams, TrainHistory]:
    """Run the full training loop.

    Returns the trained parameters and per-epoch history. When
    checkpoint_path is given, the final state (params, optimizer, config,
    history) is written there so the run can be resumed or evaluated later.
    log, when given, receives one progress string per epoch.
    """
    config.validate()
    validate(hierarchy, concepts)
    if dataset.n_patches != config.patches:
        raise ValidationError(
            f"dataset has {dataset.n_patches} patches per image but the config "
            f"says {config.patches}"
        )
    n = dataset.n_examples
    h_count, l_count = hierarchy.n_high, hierarchy.n_low
    p_count = dataset.n_patches

    s_h_all = similarity_high(dataset, concepts)
    s_l_all = similarity_low(dataset, concepts)
    labels = dataset.labels

    if resume is not None:
        _check_resume(resume, config)
        params = resume.params.copy()
        states = {
            name: AdamState(st.first_moment.copy(), st.second_moment.copy(),
                            st.step_count, st.lr, st.beta1, st.beta2, st.epsilon)
            for name, st in resume.adam_states.items()
        }
        start_epoch = resume.epochs_completed
        history = TrainHistory(list(resume.history.epochs))
    else:
        params = init_params(dataset.embed_dim, h_count, l_count,
                             dataset.n_classes, config.seed)
        states = _fresh_adam_states(params, config)
        start_epoch = 0
        history = TrainHistory()

    mode = config.mode
    trained = MODE_TRAINS[mode]
    sample_high = mode in ("joint", "high-only")
    sample_low = mode in ("joint", "low-only")
    batch_size = config.batch_size

    for epoch in range(start_epoch, config.epochs):
        order = rng.stream(config.seed, rng.SHUFFLE, epoch).permutation(n)
        n_batches = (n + batch_size - 1) // batch_size

        loss_sums = np.zeros(5)  # ce_high, ce_low, kl_high, kl_low, total
        correct_high = correct_low = 0
        seen_high = seen_low = 0
        active_high = active_low = 0.0
        active_high_n = active_low_n = 0

        for b in range(n_batches):
            idx = order[b * batch_size:(b + 1) * batch_size]
            n_b = idx.size
            uniforms_high = uniforms_low = None
            if sample_high:
                gen = rng.stream(config.seed, rng.NOISE, epoch, b, rng.TENSOR_HIGH)
                uniforms_high = rng.uniform_open(gen, (n_b, h_count))
            if sample_low:
                gen = rng.stream(config.seed, rng.NOISE, epoch, b, rng.TENSOR_LOW)
                uniforms_low = rng.uniform_open(gen, (n_b, p_count, l_count))

            trace = forward_training(
                params, dataset.image_embeddings[idx],
                dataset.patch_embeddings[idx], s_h_all[idx], s_l_all[idx],
                hierarchy, config.gumbel_temperature,
                uniforms_high, uniforms_low, mode)
            batch_labels = labels[idx]
            loss = compute_loss(trace, batch_labels, config.alpha_h,
                                config.alpha_l, config.beta)
            if not np.isfinite(loss.total):
                raise DivergenceError(
                    f"non-finite loss {loss.total} at epoch {epoch}, batch {b} "
                    f"(step {states[trained[0]].step_count + 1})"
                )
            grads = backward(trace, batch_labels, params, hierarchy,
                             config.alpha_h, config.alpha_l, config.beta)
            for name in trained:
                setattr(params, name,
                        adam_step(getattr(params, name), getattr(grads, name),
                                  states[name]))

            loss_sums += n_b * np.array([loss.ce_high, loss.ce_low,
                                         loss.kl_high, loss.kl_low, loss.total])
            if trace.logits_high is not None:
                correct_high += int((trace.logits_high.argmax(axis=1) == batch_labels).sum())
                seen_high += n_b
            if trace.logits_low is not None:
                correct_low += int((trace.logits_low.argmax(axis=1) == batch_labels).sum())
                seen_low += n_b
            sp_high, sp_low = _epoch_sparsity(trace, hierarchy, config.infer_tau)
            if sp_high is not None:
                active_high += n_b * sp_high
                active_high_n += n_b
            if sp_low is not None:
                active_low += n_b * sp_low
                active_low_n += n_b

        means = loss_sums / n
        stats = EpochStats(
            loss=LossBreakdown(*means),
            accuracy_high=correct_high / seen_high if seen_high else None,
            accuracy_low=correct_low / seen_low if seen_low else None,
            sparsity_high=100.0 * active_high / active_high_n if active_high_n else None,
            sparsity_low=100.0 * active_low / active_low_n if active_low_n else None,
        )
        history.epochs.append(stats)
        if log is not None:
            acc_h = f"{stats.accuracy_high:.4f}" if stats.accuracy_high is not None else "-"
            acc_l = f"{stats.accuracy_low:.4f}" if stats.accuracy_low is not None else "-"
            log(f"epoch {epoch + 1}/{config.epochs} total={stats.loss.total:.6f} "
                f"acc_high={acc_h} acc_low={acc_l}")

    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, params, states, config,
                        config.epochs, history)
    return params, history


# ---------------------------------------------------------------------------
# checkpoint format: little-endian, 64-bit payloads so a resumed run is
# bit-identical to an uninterrupted one
#
#   magic "CFCK" | version u32 | epochs_completed u64
#   config  (u64 length + UTF-8 JSON)
#   history (u64 length + UTF-8 JSON)
#   4 parameter blocks (w_hc, w_lc, w_hs, w_ls): rows u64, cols u64, f64 data
#   4 optimizer blocks, same order: step u64, lr/beta1/beta2/epsilon f64,
#       first and second moments as f64 data matching the parameter shape
# ---------------------------------------------------------------------------

_CKPT_HEAD = struct.Struct("<4sIQ")


def save_checkpoint(path, params: ModelParams, adam_states: dict[str, AdamState],
                    config: TrainConfig, epochs_completed: int,
                    history: TrainHistory) -> None:
    config_blob = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    history_blob = json.dumps(history.to_dict(), sort_keys=True).encode("utf-8")
    parts = [
        _CKPT_HEAD.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, epochs_completed),
        struct.pack("<Q", len(config_blob)), config_blob,
        struct.pack("<Q", len(history_blob)), history_blob,
    ]
    for name in PARAM_NAMES:
        mat = np.ascontiguousarray(getattr(params, name), dtype="<f8")
        parts.append(struct.pack("<QQ", mat.shape[0], mat.shape[1]))
        parts.append(mat.tobytes())
    for name in PARAM_NAMES:
        st = adam_states[name]
        parts.append(struct.pack("<Qdddd", st.step_count, st.lr, st.beta1,
                                 st.beta2, st.epsilon))
        parts.append(np.ascontiguousarray(st.first_moment, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(st.second_moment, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> ResumeState:
    path = Path(path)
    raw = path.read_bytes()
    offset = 0

    def need(nbytes: int, what: str) -> int:
        if offset + nbytes > len(raw):
            raise FormatError(f"{path}: truncated checkpoint while reading {what}")
        return offset + nbytes

    end = need(_CKPT_HEAD.size, "header")
    magic, version, epochs_completed = _CKPT_HEAD.unpack(raw[offset:end])
    offset = end
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    if version != CHECKPOINT_VERSION:
        raise FormatError(
            f"{path}: unsupported checkpoint version {version}, "
            f"expected {CHECKPOINT_VERSION}"
        )

    def take_blob(what: str) -> bytes:
        nonlocal offset
        end = need(8, f"{what} length")
        (length,) = struct.unpack("<Q", raw[offset:end])
        offset = end
        end = need(length, what)
        blob = raw[offset:end]
        offset = end
        return blob

    try:
        config = TrainConfig.from_dict(json.loads(take_blob("config")))
        history = TrainHistory.from_dict(json.loads(take_blob("history")))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: unreadable embedded metadata ({exc})") from exc

    def take_matrix(what: str) -> np.ndarray:
        nonlocal offset
        end = need(16, f"{what} shape")
        rows, cols = struct.unpack("<QQ", raw[offset:end])
        offset = end
        end = need(rows * cols * 8, what)
        mat = np.frombuffer(raw[offset:end], dtype="<f8").reshape(rows, cols).copy()
        offset = end
        return mat

    matrices = {name: take_matrix(name) for name in PARAM_NAMES}
    params = ModelParams(**matrices)
    states: dict[str, AdamState] = {}
    for name in PARAM_NAMES:
        end = need(8 + 4 * 8, f"{name} optimizer scalars")
        step, lr, beta1, beta2, epsilon = struct.unpack("<Qdddd", raw[offset:end])
        offset = end
        shape = matrices[name].shape
        count = shape[0] * shape[1]
        end = need(count * 8, f"{name} first moment")
        first = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
        end = need(count * 8, f"{name} second moment")
        second = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
        states[name] = AdamState(first, second, step, lr, beta1, beta2, epsilon)
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} unexpected trailing bytes")
    return ResumeState(params, states, config, epochs_completed, history)

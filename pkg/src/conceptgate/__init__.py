"""Training and evaluation engine for two-level gated concept-bottleneck
classifiers over precomputed embeddings.

The model scores images against a coarse concept vocabulary and image
patches against a fine attribute pool, keeps both score sets behind sparse
per-example Bernoulli gates, and links the levels so an attribute can only
fire when one of its parent concepts is on. Training is pure numpy with
hand-derived gradients; evaluation reports classification and
interpretation metrics.
"""

from .discovery import kl_to_prior, posterior_probs, sample_relaxed, threshold_mean
from .embeddings import (
    ConceptEmbeddings,
    EmbeddingDataset,
    l2_normalize,
    load_dataset,
    read_header,
    similarity_high,
    similarity_low,
    write_dataset,
)
from .evaluator import (
    EvaluationReport,
    InferenceResult,
    alignment_bins,
    build_report,
    class_concept_summary,
    emit_report,
    example_indicator_for_matching,
    infer,
    jaccard,
    matching_accuracy,
    sparsity,
)
from .hierarchy import (
    ConceptHierarchy,
    build_general,
    build_shared,
    load_manifest,
    save_manifest,
    validate,
)
from .model import (
    ForwardTrace,
    Gradients,
    LossBreakdown,
    ModelParams,
    backward,
    compute_loss,
    forward_high,
    forward_low,
    forward_training,
    init_params,
    link_indicators,
)
from .numerics import (
    AdamState,
    adam_step,
    finite_difference_gradient,
    matmul,
    sigmoid,
    softmax_cross_entropy,
)
from .trainer import (
    ResumeState,
    TrainConfig,
    TrainHistory,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

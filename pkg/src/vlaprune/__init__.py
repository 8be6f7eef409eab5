"""Differentiable visual-token pruning on a tape-based numpy autodiff core.

The package has three tiers:

* numeric core: :mod:`vlaprune.autodiff` (reverse-mode tape),
  :mod:`vlaprune.gradcheck` (finite differences), :mod:`vlaprune.seeding`.
* pruning: :mod:`vlaprune.pruning` (parameter-free query scoring and
  straight-through selection), :mod:`vlaprune.learnable` (trainable query
  banks and the attention-informed scorer).
* harness: :mod:`vlaprune.testbed` (toy vision-language-action task),
  :mod:`vlaprune.flops` (transformer cost accounting),
  :mod:`vlaprune.cli` (experiment runner).
"""

from .autodiff import (
    RMS_EPS,
    GradientContext,
    ShapeError,
    Tensor,
    value_of,
)
from .flops import (
    ArchSpec,
    CostReport,
    ReportRow,
    attention_quadratic_flops,
    calibrate_overhead,
    decoder_flops,
    emit_report,
    format_cost_table,
    llama7b_arch,
    pipeline_cost,
    retention_stats,
)
from .gradcheck import (
    central_difference,
    finite_difference_gradients,
    max_relative_error,
)
from .learnable import (
    AGGREGATIONS,
    DEFAULT_QUERY_COUNT,
    AttentionSummary,
    LearnableQueryBank,
    aggregate_attention,
    init_bank,
    load_bank,
    save_bank,
    score_llm,
    score_vision,
)
from .pruning import (
    NOISE_KINDS,
    NOISE_MODES,
    NoiseSchedule,
    SelectionResult,
    TokenBatch,
    alpha_at,
    argmax_rows,
    gather_tokens,
    generate_queries,
    kept_mask,
    patch_rows,
    prune,
    score_tokens,
    select_infer,
    select_train,
)
from .seeding import STREAMS, make_rng, spawn, stream_rng
from .testbed import (
    VARIANTS,
    ManipulationReport,
    RecoveryMetrics,
    StepRecord,
    SyntheticSample,
    ToyConfig,
    ToyModel,
    TrainReport,
    TrainingDivergence,
    evaluate_recovery,
    forward,
    generate_sample,
    init_model,
    manipulation_study,
    train,
    train_model,
    write_train_report,
)

__version__ = "0.1.0"

__all__ = [
    "AGGREGATIONS",
    "ArchSpec",
    "AttentionSummary",
    "CostReport",
    "DEFAULT_QUERY_COUNT",
    "GradientContext",
    "LearnableQueryBank",
    "ManipulationReport",
    "NOISE_KINDS",
    "NOISE_MODES",
    "NoiseSchedule",
    "RMS_EPS",
    "RecoveryMetrics",
    "ReportRow",
    "STREAMS",
    "SelectionResult",
    "ShapeError",
    "StepRecord",
    "SyntheticSample",
    "Tensor",
    "TokenBatch",
    "ToyConfig",
    "ToyModel",
    "TrainReport",
    "TrainingDivergence",
    "VARIANTS",
    "aggregate_attention",
    "alpha_at",
    "argmax_rows",
    "attention_quadratic_flops",
    "calibrate_overhead",
    "central_difference",
    "decoder_flops",
    "emit_report",
    "evaluate_recovery",
    "finite_difference_gradients",
    "format_cost_table",
    "forward",
    "gather_tokens",
    "generate_queries",
    "generate_sample",
    "init_bank",
    "init_model",
    "kept_mask",
    "llama7b_arch",
    "load_bank",
    "make_rng",
    "manipulation_study",
    "max_relative_error",
    "patch_rows",
    "pipeline_cost",
    "prune",
    "retention_stats",
    "save_bank",
    "score_llm",
    "score_tokens",
    "score_vision",
    "select_infer",
    "select_train",
    "spawn",
    "stream_rng",
    "train",
    "train_model",
    "value_of",
    "write_train_report",
]

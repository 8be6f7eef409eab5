"""Differentiable visual-token pruning.

The pipeline scores every patch token with queries built from the language
tokens, keeps each query's argmax token, and assembles the retained tokens
back into a batch that preserves original ordering and position IDs. The
special CLS token never participates in scoring and is always kept.

Training-time selection adds decaying uniform exploration noise to the
scores and exposes a straight-through indicator: its forward value is the
exact one-hot argmax, while its gradient is that of the row softmax of the
noisy scores. Inference-time selection is a plain argmax with no noise and
no recording.

Because several queries may pick the same token, duplicates are dropped
from the retained set. Gradient-wise, the retained embedding of a
contested token takes its hard (one-hot) part from the winning row and
soft contributions from every row that picked it.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ShapeError,
    Tensor,
    add,
    detach,
    matmul,
    mul,
    sample_uniform_noise,
    softmax_rows,
    sub,
    take_rows,
    transpose,
    value_of,
)

NOISE_MODES = ("linear-decay", "constant", "off")
NOISE_KINDS = ("uniform", "gumbel")


@dataclass(frozen=True)
class TokenBatch:
    """A token sequence: embeddings, per-token position IDs, optional CLS.

    ``embeddings`` may be a plain array or a recorded Tensor; downstream
    operations preserve whichever was given. Position IDs must be strictly
    increasing, so a batch always remembers its original sequence order
    even after pruning.
    """

    embeddings: object  # Matrix [L x D], ndarray or Tensor
    position_ids: tuple[int, ...] = None
    cls_index: int | None = None

    def __post_init__(self):
        vals = value_of(self.embeddings)
        if vals.ndim != 2:
            raise ShapeError(f"embeddings must be 2-D, got shape {vals.shape}")
        n = vals.shape[0]
        if self.position_ids is None:
            ids = tuple(range(n))
        else:
            ids = tuple(int(p) for p in self.position_ids)
        object.__setattr__(self, "position_ids", ids)
        if len(ids) != n:
            raise ValueError(f"{len(ids)} position IDs for {n} tokens")
        if any(p < 0 for p in ids):
            raise ValueError("position IDs must be non-negative")
        if any(a >= b for a, b in zip(ids, ids[1:])):
            raise ValueError("position IDs must be strictly increasing")
        if self.cls_index is not None and not 0 <= self.cls_index < n:
            raise ValueError(f"cls_index {self.cls_index} out of range for {n} tokens")

    @property
    def length(self) -> int:
        return len(self.position_ids)

    @property
    def dim(self) -> int:
        return value_of(self.embeddings).shape[1]

    @property
    def values(self) -> np.ndarray:
        return value_of(self.embeddings)

    @property
    def patch_indices(self) -> tuple[int, ...]:
        """Row indices of the prunable (non-CLS) tokens."""
        if self.cls_index is None:
            return tuple(range(self.length))
        return tuple(i for i in range(self.length) if i != self.cls_index)


@dataclass(frozen=True)
class NoiseSchedule:
    """Decaying upper bound alpha(t) for the selection noise.

    linear-decay interpolates alpha_start -> alpha_end over decay_steps and
    clamps afterwards; constant holds alpha_start forever; off is always 0.
    """

    alpha_start: float = 1.0
    alpha_end: float = 0.0
    decay_steps: int = 1
    mode: str = "linear-decay"

    def __post_init__(self):
        if self.mode not in NOISE_MODES:
            raise ValueError(f"unknown noise mode {self.mode!r}; known: {NOISE_MODES}")
        if self.alpha_start < 0 or self.alpha_end < 0:
            raise ValueError("noise bounds must be non-negative")
        if self.mode == "linear-decay":
            if self.decay_steps < 1:
                raise ValueError("decay_steps must be at least 1")
            if self.alpha_end > self.alpha_start:
                raise ValueError("linear-decay requires alpha_end <= alpha_start")


def alpha_at(step: int, schedule: NoiseSchedule) -> float:
    """Noise upper bound in effect at training step ``step``."""
    if step < 0:
        raise ValueError(f"step must be non-negative, got {step}")
    if schedule.mode == "off":
        return 0.0
    if schedule.mode == "constant":
        return schedule.alpha_start
    if step >= schedule.decay_steps:
        return schedule.alpha_end
    frac = step / schedule.decay_steps
    return schedule.alpha_start + (schedule.alpha_end - schedule.alpha_start) * frac


@dataclass(frozen=True)
class SelectionResult:
    """Outcome of one selection pass over a score matrix.

    Indices live in the token sequence's index space (``column_ids`` maps
    score columns to sequence positions; it defaults to the identity).
    ``indicator`` keeps the score matrix's shape: one exactly one-hot row
    per query, carrying straight-through gradient provenance when the
    selection was recorded.
    """

    kept_indices: tuple[int, ...]
    per_row_argmax: tuple[int, ...]
    argmax_cols: tuple[int, ...]
    indicator: object  # Matrix [Q x C], ndarray or Tensor
    noise_alpha_used: float
    column_ids: tuple[int, ...]
    cls_index: int | None

    @property
    def retained_count(self) -> int:
        return len(self.kept_indices)


def argmax_rows(values: np.ndarray) -> np.ndarray:
    """Argmax along the last axis; ties break toward the lowest index."""
    return np.argmax(values, axis=-1)


def kept_mask(cols: np.ndarray, n_cols: int) -> np.ndarray:
    """Boolean membership mask of the per-row argmax columns.

    ``cols`` has shape [..., Q]; the result has shape [..., n_cols] with
    True wherever some row picked that column. Works on whole stacks of
    matrices at once.
    """
    cols = np.asarray(cols)
    mask = np.zeros(cols.shape[:-1] + (n_cols,), dtype=bool)
    np.put_along_axis(mask, cols, True, axis=-1)
    return mask


def _resolve_columns(n_cols, column_ids, cls_index):
    if column_ids is None:
        column_ids = tuple(range(n_cols))
    else:
        column_ids = tuple(int(c) for c in column_ids)
        if len(column_ids) != n_cols:
            raise ValueError(
                f"{len(column_ids)} column ids for {n_cols} score columns"
            )
    return column_ids, cls_index


def _selection_from(noisy_values, indicator, alpha, column_ids, cls_index):
    cols = argmax_rows(noisy_values)
    mask = kept_mask(cols[None, :], noisy_values.shape[1])[0]
    kept_ids = {int(column_ids[c]) for c in np.flatnonzero(mask)}
    if cls_index is not None:
        kept_ids.add(int(cls_index))
    return SelectionResult(
        kept_indices=tuple(sorted(kept_ids)),
        per_row_argmax=tuple(int(column_ids[c]) for c in cols),
        argmax_cols=tuple(int(c) for c in cols),
        indicator=indicator,
        noise_alpha_used=float(alpha),
        column_ids=column_ids,
        cls_index=cls_index,
    )


def _one_hot(cols: np.ndarray, n_cols: int) -> np.ndarray:
    out = np.zeros((len(cols), n_cols))
    out[np.arange(len(cols)), cols] = 1.0
    return out


def select_train(
    scores,
    alpha: float,
    rng: np.random.Generator | None = None,
    *,
    column_ids=None,
    cls_index=None,
    noise_kind: str = "uniform",
) -> SelectionResult:
    """Noisy straight-through selection for training.

    Noise in [0, alpha) is added to the scores, each row keeps its argmax,
    and the returned indicator equals the one-hot argmax in value while
    carrying the softmax path's gradient. With ``alpha`` 0 the result is
    identical to :func:`select_infer`.
    """
    if alpha < 0:
        raise ValueError(f"noise upper bound must be non-negative, got {alpha}")
    if noise_kind not in NOISE_KINDS:
        raise ValueError(f"unknown noise kind {noise_kind!r}; known: {NOISE_KINDS}")
    vals = value_of(scores)
    if vals.ndim != 2:
        raise ShapeError(f"scores must be 2-D, got shape {vals.shape}")
    column_ids, cls_index = _resolve_columns(vals.shape[1], column_ids, cls_index)

    if alpha > 0:
        if rng is None:
            raise ValueError("rng is required when alpha > 0")
        if noise_kind == "uniform":
            noise = sample_uniform_noise(vals.shape, alpha, rng)
        else:
            noise = rng.gumbel(size=vals.shape) * alpha
        noisy = add(scores, noise)
    else:
        noisy = scores
    noisy_vals = value_of(noisy)

    hard = _one_hot(argmax_rows(noisy_vals), noisy_vals.shape[1])
    soft = softmax_rows(noisy)
    # forward value is bit-exactly `hard`: the soft term cancels itself
    indicator = add(hard, sub(soft, detach(soft)))
    return _selection_from(noisy_vals, indicator, alpha, column_ids, cls_index)


def select_infer(scores, *, column_ids=None, cls_index=None) -> SelectionResult:
    """Deterministic argmax selection: no noise, no gradient recording."""
    vals = value_of(scores)
    if vals.ndim != 2:
        raise ShapeError(f"scores must be 2-D, got shape {vals.shape}")
    column_ids, cls_index = _resolve_columns(vals.shape[1], column_ids, cls_index)
    indicator = _one_hot(argmax_rows(vals), vals.shape[1])
    return _selection_from(vals, indicator, 0.0, column_ids, cls_index)


def patch_rows(batch: TokenBatch):
    """The prunable token rows, preserving Tensor provenance if present."""
    if batch.cls_index is None:
        return batch.embeddings
    return take_rows(batch.embeddings, batch.patch_indices)


def _queries_from(patches, language: TokenBatch):
    dim = value_of(patches).shape[1]
    if language.length == 0:
        raise ValueError("query generation needs at least one language token")
    if language.dim != dim:
        raise ShapeError(
            f"visual dimension {dim} does not match language dimension {language.dim}"
        )
    weights = softmax_rows(
        mul(matmul(patches, transpose(language.embeddings)), 1.0 / math.sqrt(dim))
    )
    return matmul(weights, language.embeddings)


def generate_queries(visual: TokenBatch, language: TokenBatch):
    """One query per patch token, built without any learned parameters.

    Each patch row attends over the language tokens (scaled dot product,
    row softmax), so every query is a convex combination of language rows.
    The CLS row, if present, contributes no query.
    """
    return _queries_from(patch_rows(visual), language)


def score_tokens(queries, visual: TokenBatch):
    """Scaled query-to-patch-token scores; column j scores patch token j."""
    patches = patch_rows(visual)
    dim = visual.dim
    if value_of(queries).shape[1] != dim:
        raise ShapeError(
            f"query dimension {value_of(queries).shape[1]} does not match "
            f"token dimension {dim}"
        )
    return mul(matmul(queries, transpose(patches)), 1.0 / math.sqrt(dim))


def gather_tokens(batch: TokenBatch, sel: SelectionResult) -> TokenBatch:
    """Assemble the retained tokens into a new batch.

    Tokens come out in their original sequence order with their original
    position IDs. When the selection carries gradient provenance, the
    output embeddings are built through a routing product so that the
    straight-through gradients reach both the scores and the embeddings;
    the forward value is an exact row gather either way.
    """
    kept = sel.kept_indices
    if not kept:
        raise ValueError("selection kept no tokens")
    if max(kept) >= batch.length:
        raise ValueError("selection refers to rows outside the batch")
    new_cls = kept.index(sel.cls_index) if sel.cls_index is not None else None
    new_ids = tuple(batch.position_ids[k] for k in kept)

    if not isinstance(sel.indicator, Tensor):
        out = batch.values[list(kept)]
        return TokenBatch(out, new_ids, new_cls)

    n_rows = len(kept)
    n_q, n_cols = value_of(sel.indicator).shape
    # hard part: one exact one-hot row per kept token
    hard_rows = np.zeros((n_rows, batch.length))
    hard_rows[np.arange(n_rows), list(kept)] = 1.0
    # route each query's soft term to the kept row of the token it picked
    row_of = {k: r for r, k in enumerate(kept)}
    routing = np.zeros((n_rows, n_q))
    for q, token in enumerate(sel.per_row_argmax):
        routing[row_of[token], q] = 1.0
    # map score columns back to sequence rows
    col_to_seq = np.zeros((n_cols, batch.length))
    col_to_seq[np.arange(n_cols), list(sel.column_ids)] = 1.0

    hard_indicator = _one_hot(np.asarray(sel.argmax_cols), n_cols)
    delta = sub(sel.indicator, hard_indicator)  # exact zeros forward
    weights = add(hard_rows, matmul(matmul(routing, delta), col_to_seq))
    out = matmul(weights, batch.embeddings)
    return TokenBatch(out, new_ids, new_cls)


def _values_only(batch: TokenBatch) -> TokenBatch:
    if isinstance(batch.embeddings, Tensor):
        return dataclasses.replace(batch, embeddings=batch.values)
    return batch


def prune(
    visual: TokenBatch,
    language: TokenBatch,
    mode: str,
    alpha: float = 0.0,
    rng: np.random.Generator | None = None,
    *,
    noise_kind: str = "uniform",
) -> tuple[TokenBatch, SelectionResult]:
    """Run the full pruning pipeline on one visual/language token pair.

    In train mode the retained embeddings carry straight-through gradient
    provenance; in infer mode everything runs on plain values with a
    noise-free argmax. Returns the pruned visual batch and the selection.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if mode == "infer":
        visual = _values_only(visual)
        language = _values_only(language)
    patches = patch_rows(visual)
    queries = _queries_from(patches, language)
    dim = visual.dim
    scores = mul(matmul(queries, transpose(patches)), 1.0 / math.sqrt(dim))
    if mode == "train":
        sel = select_train(
            scores,
            alpha,
            rng,
            column_ids=visual.patch_indices,
            cls_index=visual.cls_index,
            noise_kind=noise_kind,
        )
    else:
        sel = select_infer(
            scores, column_ids=visual.patch_indices, cls_index=visual.cls_index
        )
    return gather_tokens(visual, sel), sel

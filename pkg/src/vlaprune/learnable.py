"""Learnable-query token scoring.

Instead of deriving one query per patch token from the language tokens,
these variants keep a trainable bank of N_q query vectors. Both sides of
the score product are RMS-normalized (with trainable gains) before the
scaled dot product. The bank caps the retained set: N_q queries can keep
at most N_q distinct tokens, plus CLS.

Two scorers are provided. The encoder-side scorer uses the normalized
product alone. The decoder-side scorer additionally mixes in an aggregated
attention profile of the visual tokens, weighted by a trainable scalar,
for pruning at an early decoder layer where attention already hints at
token usefulness.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ShapeError,
    add,
    matmul,
    mul,
    rms_normalize,
    transpose,
    value_of,
)
from .pruning import TokenBatch, patch_rows

DEFAULT_QUERY_COUNT = 128
AGGREGATIONS = ("mean", "max")


@dataclass
class LearnableQueryBank:
    """Trainable query vectors plus the two normalization gain vectors.

    Fields may hold plain arrays (a stored bank) or recorded tensors (a
    bank lifted onto a gradient context for a training step). Query-side
    and token-side gains are separate parameters.
    """

    queries: object  # Matrix [n_q x dim]
    gain_query: object  # vector [dim]
    gain_token: object  # vector [dim]

    @property
    def n_q(self) -> int:
        return value_of(self.queries).shape[0]

    @property
    def dim(self) -> int:
        return value_of(self.queries).shape[1]


@dataclass
class AttentionSummary:
    """One aggregated attention value per scorable token, plus the mixing
    weight applied to it (trainable, initialized to 1)."""

    scores: np.ndarray  # vector, one entry per patch token
    zeta: object = 1.0

    def __post_init__(self):
        arr = np.asarray(self.scores, dtype=float)
        if arr.ndim != 1:
            raise ShapeError(f"attention summary must be 1-D, got {arr.shape}")
        self.scores = arr


def init_bank(n_q: int, dim: int, rng: np.random.Generator) -> LearnableQueryBank:
    """Fresh bank: queries i.i.d. normal with std 1/sqrt(dim), unit gains."""
    if n_q < 1 or dim < 1:
        raise ValueError(f"bank sizes must be positive, got n_q={n_q}, dim={dim}")
    queries = rng.normal(0.0, 1.0 / math.sqrt(dim), size=(n_q, dim))
    return LearnableQueryBank(queries, np.ones(dim), np.ones(dim))


def _normalized_product(bank: LearnableQueryBank, visual: TokenBatch):
    patches = patch_rows(visual)
    n_patches = value_of(patches).shape[0]
    if bank.dim != visual.dim:
        raise ShapeError(
            f"bank dimension {bank.dim} does not match token dimension {visual.dim}"
        )
    if bank.n_q > n_patches:
        raise ValueError(
            f"bank has {bank.n_q} queries but only {n_patches} tokens are scorable"
        )
    qn = rms_normalize(bank.queries, bank.gain_query)
    tn = rms_normalize(patches, bank.gain_token)
    return matmul(qn, transpose(tn))


def score_vision(bank: LearnableQueryBank, visual: TokenBatch):
    """Normalized query-to-token scores at the encoder output.

    Differentiable through the bank's queries and both gain vectors; rows
    are queries, columns are patch tokens.
    """
    product = _normalized_product(bank, visual)
    return mul(product, 1.0 / math.sqrt(bank.dim))


def score_llm(bank: LearnableQueryBank, visual: TokenBatch, attn: AttentionSummary):
    """Normalized scores with an aggregated-attention term mixed in.

    The attention profile (one value per patch token) is scaled by the
    trainable weight and broadcast-added to every query row before the
    1/sqrt(dim) scaling. With the weight at 0 this reduces exactly to
    :func:`score_vision`. The profile itself is treated as a given input
    and not differentiated.
    """
    product = _normalized_product(bank, visual)
    n_patches = value_of(product).shape[1]
    if attn.scores.shape[0] != n_patches:
        raise ShapeError(
            f"attention summary length {attn.scores.shape[0]} does not match "
            f"{n_patches} scorable tokens"
        )
    mixed = add(product, mul(attn.scores[None, :], attn.zeta))
    return mul(mixed, 1.0 / math.sqrt(bank.dim))


def aggregate_attention(raw: np.ndarray, how: str = "mean") -> AttentionSummary:
    """Collapse per-head, per-text-token attention onto the visual tokens.

    ``raw`` has shape [heads, text, visual] and every (head, text) row must
    be a distribution over the visual tokens. Aggregation is the mean over
    heads and text positions by default, or the max when ``how`` is "max".
    """
    arr = np.asarray(raw, dtype=float)
    if arr.ndim != 3:
        raise ShapeError(f"expected [heads, text, visual] attention, got {arr.shape}")
    if how not in AGGREGATIONS:
        raise ValueError(f"unknown aggregation {how!r}; known: {AGGREGATIONS}")
    if arr.min() < -1e-12:
        raise ValueError("attention rows must be non-negative")
    sums = arr.sum(axis=2)
    if not np.allclose(sums, 1.0, atol=1e-6):
        raise ValueError("attention rows must each sum to 1")
    if how == "mean":
        summary = arr.mean(axis=(0, 1))
    else:
        summary = arr.max(axis=(0, 1))
    return AttentionSummary(summary, 1.0)


# ---------------------------------------------------------------------------
# serialization: header (n_q, dim as 64-bit little-endian counts), then
# row-major doubles for queries, gain_query, gain_token, and the mixing
# weight, all little-endian.

_HEADER = struct.Struct("<QQ")


def save_bank(bank: LearnableQueryBank, path, zeta: float = 1.0) -> None:
    """Write the bank (and its mixing weight) in the flat binary layout."""
    queries = value_of(bank.queries)
    gq = value_of(bank.gain_query)
    gt = value_of(bank.gain_token)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(bank.n_q, bank.dim))
        fh.write(np.ascontiguousarray(queries, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(gq, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(gt, dtype="<f8").tobytes())
        fh.write(np.asarray(value_of(zeta), dtype="<f8").tobytes())


def load_bank(path) -> tuple[LearnableQueryBank, float]:
    """Read a bank written by :func:`save_bank`; returns (bank, zeta)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise ValueError(f"bank file {path} is truncated")
    n_q, dim = _HEADER.unpack_from(blob)
    expected = _HEADER.size + 8 * (n_q * dim + 2 * dim + 1)
    if len(blob) != expected:
        raise ValueError(
            f"bank file {path} has {len(blob)} bytes, expected {expected}"
        )
    doubles = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
    queries = doubles[: n_q * dim].reshape(n_q, dim).astype(float)
    gq = doubles[n_q * dim : n_q * dim + dim].astype(float)
    gt = doubles[n_q * dim + dim : n_q * dim + 2 * dim].astype(float)
    zeta = float(doubles[-1])
    return LearnableQueryBank(queries, gq, gt), zeta

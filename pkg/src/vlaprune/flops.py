"""Transformer FLOPs accounting and retention statistics.

Decoder cost is counted from first principles, one multiply-accumulate as
two FLOPs, in exact integer arithmetic. Per layer, for n tokens, hidden
dim d, feed-forward dim f:

    query + output projections   2 * n * d * d          MACs
    key + value projections      2 * n * d * d          MACs (full K/V)
                                 2 * n * d * (d/heads)  MACs (shared K/V head)
    attention products           2 * n * n * d          MACs (scores + mix)
    feed-forward                 3 * n * d * f          MACs (gated)
                                 2 * n * d * f          MACs (plain)

summed over layers and doubled into FLOPs. Costs that token pruning cannot
touch (vision encoder, action head) enter as fixed overhead terms; they
are calibrated once against a total-budget figure and then held fixed, so
reduction numbers test the pruning arithmetic rather than any particular
accounting convention for the rest of the stack.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

# Bench defaults, sized after a 7B-parameter language backbone fronted by a
# patch encoder: 512 visual tokens before pruning, 78 on average after, a
# 30-token instruction, and an 8.8 TFLOPs unpruned budget to calibrate the
# fixed overheads against.
DEFAULT_BASELINE_VISUAL = 512
DEFAULT_PRUNED_VISUAL = 78
DEFAULT_TEXT_TOKENS = 30
DEFAULT_TOTAL_BUDGET = 8.8e12

REPORT_HEADER = (
    "variant",
    "visual_tokens",
    "text_tokens",
    "total_tflops",
    "reduction",
    "retained_mean",
    "retained_std",
)


@dataclass(frozen=True)
class ArchSpec:
    """Transformer architecture constants plus fixed overhead FLOPs."""

    layers: int
    hidden: int
    ffn: int
    heads: int
    kv_full: bool = True  # full-width key/value projections vs one shared head
    gated_mlp: bool = True  # three feed-forward matrices vs two
    encoder_flops: float = 0.0
    head_flops: float = 0.0

    def __post_init__(self):
        if min(self.layers, self.hidden, self.ffn, self.heads) < 1:
            raise ValueError("architecture constants must be positive")
        if self.hidden % self.heads:
            raise ValueError(
                f"hidden dim {self.hidden} not divisible by {self.heads} heads"
            )
        if self.encoder_flops < 0 or self.head_flops < 0:
            raise ValueError("overhead terms must be non-negative")


@dataclass(frozen=True)
class CostReport:
    """FLOPs breakdown for one pipeline configuration."""

    total_flops: float
    decoder_flops: int
    attention_quadratic_flops: int
    reduction_vs_baseline: float


def llama7b_arch(encoder_flops: float = 0.0, head_flops: float = 0.0) -> ArchSpec:
    """Constants of a LLaMA-2-7B-shaped decoder (gated MLP, full K/V)."""
    return ArchSpec(
        layers=32,
        hidden=4096,
        ffn=11008,
        heads=32,
        kv_full=True,
        gated_mlp=True,
        encoder_flops=encoder_flops,
        head_flops=head_flops,
    )


def attention_quadratic_flops(n_tokens: int, arch: ArchSpec) -> int:
    """The n-squared attention component alone, across all layers."""
    return 2 * arch.layers * 2 * n_tokens * n_tokens * arch.hidden


def decoder_flops(n_tokens: int, arch: ArchSpec) -> int:
    """Exact decoder-stack FLOPs for a sequence of ``n_tokens``."""
    if n_tokens < 1:
        raise ValueError(f"token count must be positive, got {n_tokens}")
    n, d, f = int(n_tokens), arch.hidden, arch.ffn
    qo = 2 * n * d * d
    kv = 2 * n * d * d if arch.kv_full else 2 * n * d * (d // arch.heads)
    attn = 2 * n * n * d
    mlp = (3 if arch.gated_mlp else 2) * n * d * f
    return 2 * arch.layers * (qo + kv + attn + mlp)


def pipeline_cost(
    visual_tokens: int,
    text_tokens: int,
    arch: ArchSpec,
    baseline: CostReport | None = None,
) -> CostReport:
    """Total pipeline FLOPs for one (visual, text) token budget.

    Total is fixed overheads plus the decoder cost of the concatenated
    sequence. ``reduction_vs_baseline`` compares against a previously
    computed report (0 when none is given).
    """
    if visual_tokens < 0 or text_tokens < 0:
        raise ValueError("token counts must be non-negative")
    n = visual_tokens + text_tokens
    dec = decoder_flops(n, arch)
    total = arch.encoder_flops + dec + arch.head_flops
    reduction = 0.0 if baseline is None else 1.0 - total / baseline.total_flops
    return CostReport(
        total_flops=total,
        decoder_flops=dec,
        attention_quadratic_flops=attention_quadratic_flops(n, arch),
        reduction_vs_baseline=reduction,
    )


def calibrate_overhead(
    arch: ArchSpec,
    target_total: float = DEFAULT_TOTAL_BUDGET,
    visual_tokens: int = DEFAULT_BASELINE_VISUAL,
    text_tokens: int = DEFAULT_TEXT_TOKENS,
) -> ArchSpec:
    """Set the fixed overhead so the unpruned pipeline hits ``target_total``.

    All non-decoder cost lands in ``encoder_flops`` (the head term stays as
    given); the calibrated ``ArchSpec`` is then reused unchanged for pruned
    runs.
    """
    dec = decoder_flops(visual_tokens + text_tokens, arch)
    overhead = target_total - dec - arch.head_flops
    if overhead < 0:
        raise ValueError(
            f"decoder alone ({dec}) already exceeds the target ({target_total})"
        )
    return dataclasses.replace(arch, encoder_flops=overhead)


def retention_stats(selections: Sequence) -> tuple[float, float]:
    """Mean and population standard deviation of retained-token counts.

    Accepts SelectionResult-like objects (anything with ``retained_count``)
    or plain integer counts.
    """
    if len(selections) == 0:
        raise ValueError("retention_stats needs at least one selection")
    counts = np.array(
        [
            s.retained_count if hasattr(s, "retained_count") else int(s)
            for s in selections
        ],
        dtype=float,
    )
    return float(counts.mean()), float(counts.std(ddof=0))


@dataclass(frozen=True)
class ReportRow:
    """One line of the bench report CSV."""

    variant: str
    visual_tokens: int
    text_tokens: int
    total_tflops: float
    reduction: float
    retained_mean: float
    retained_std: float


def emit_report(rows: Sequence[ReportRow], path) -> None:
    """Write bench rows as CSV with the fixed header (header-only if empty)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        for row in rows:
            writer.writerow(
                [
                    row.variant,
                    row.visual_tokens,
                    row.text_tokens,
                    repr(float(row.total_tflops)),
                    repr(float(row.reduction)),
                    repr(float(row.retained_mean)),
                    repr(float(row.retained_std)),
                ]
            )


def format_cost_table(rows: Sequence[ReportRow]) -> str:
    """Fixed-width table of bench rows for printing."""
    lines = [
        f"{'variant':<16} {'visual':>6} {'text':>5} {'TFLOPs':>10} {'reduction':>9}"
    ]
    for row in rows:
        lines.append(
            f"{row.variant:<16} {row.visual_tokens:>6} {row.text_tokens:>5} "
            f"{row.total_tflops:>10.3f} {row.reduction:>9.3f}"
        )
    return "\n".join(lines)

"""Learnable query banks and the attention-mixing variant.

A trainable bank of N_q queries replaces the parameter-free construction;
the retained set can never exceed N_q plus CLS. The decoder-side variant
adds an aggregated attention profile, weighted by a trainable scalar, so
tokens the language already attends to get a boost.
"""

import tempfile

import numpy as np

from vlaprune.autodiff import value_of
from vlaprune.learnable import (
    AttentionSummary,
    aggregate_attention,
    init_bank,
    load_bank,
    save_bank,
    score_llm,
    score_vision,
)
from vlaprune.pruning import TokenBatch, select_infer

rng = np.random.default_rng(11)
visual = TokenBatch(rng.normal(size=(17, 8)), cls_index=0)

# --- the cap -------------------------------------------------------------
for n_q in (2, 4, 8):
    bank = init_bank(n_q, 8, rng)
    sel = select_infer(
        value_of(score_vision(bank, visual)),
        column_ids=visual.patch_indices,
        cls_index=0,
    )
    print(f"n_q={n_q}: kept {sel.retained_count:>2} tokens (cap {n_q + 1})")

# --- attention mixing ----------------------------------------------------
bank = init_bank(4, 8, rng)
raw = rng.dirichlet(np.ones(16), size=(2, 3))  # [heads, text, visual]
profile = aggregate_attention(raw, "mean")
print(f"\naggregated attention profile over 16 patches, mean mass "
      f"{profile.scores.mean():.3f}")

plain = select_infer(
    value_of(score_vision(bank, visual)),
    column_ids=visual.patch_indices,
    cls_index=0,
)
print(f"bank alone keeps        {plain.kept_indices}")
for zeta in (0.0, 5.0, 50.0):
    mixed = select_infer(
        value_of(score_llm(bank, visual, AttentionSummary(profile.scores, zeta))),
        column_ids=visual.patch_indices,
        cls_index=0,
    )
    note = "  (identical to the bank alone)" if zeta == 0.0 else ""
    print(f"zeta={zeta:<5} keeps       {mixed.kept_indices}{note}")
print("large zeta drags the choice toward the attention profile's peaks")

# --- serialization -------------------------------------------------------
with tempfile.NamedTemporaryFile(suffix=".bin") as fh:
    save_bank(bank, fh.name, zeta=2.5)
    loaded, zeta = load_bank(fh.name)
    same = np.array_equal(value_of(loaded.queries), value_of(bank.queries))
    print(f"\nsave/load roundtrip exact: {same}, zeta restored: {zeta}")

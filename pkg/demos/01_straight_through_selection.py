"""Walk through one noisy straight-through selection step.

A score matrix with one row per query picks one token per row. The
training-time indicator is bit-exactly the hard one-hot choice, yet
gradients flow through the row softmax, so upstream features learn from
a discrete decision. Noise widens the exploration early in training and
a schedule shrinks it away.
"""

import numpy as np

from vlaprune.autodiff import GradientContext, mean_all, mul, value_of
from vlaprune.pruning import (
    NoiseSchedule,
    alpha_at,
    select_infer,
    select_train,
)

rng = np.random.default_rng(7)

scores = np.array(
    [
        [2.0, 1.9, -1.0, 0.0],
        [0.1, 0.0, 0.2, -0.5],
        [2.0, 1.9, -1.0, 0.0],  # duplicate of row 0: dedup will merge them
    ]
)
print("scores (3 queries x 4 tokens):")
print(scores)

sel = select_infer(scores)
print(f"\ninference keeps columns {sel.kept_indices}")
print(f"per-row argmax {sel.per_row_argmax} -> duplicates collapse")

# --- the straight-through indicator -------------------------------------
ctx = GradientContext()
lifted = ctx.tensor(scores)
trained = select_train(lifted, 0.0)
print("\ntrain-mode indicator (forward value):")
print(value_of(trained.indicator))
print("exactly one-hot, no softmax blur in the forward pass")

downstream = rng.normal(size=scores.shape)
ctx.backward(mean_all(mul(trained.indicator, downstream)))
print("\ngradient reaching the scores (via the softmax surrogate):")
print(np.round(ctx.grad(lifted), 4))

# --- noise flips near-ties ----------------------------------------------
print("\nwith noise in [0, alpha), near-ties explore both columns:")
for alpha in (0.0, 0.2, 1.0):
    counts = {}
    for _ in range(200):
        s = select_train(scores, alpha, rng)
        counts[s.kept_indices] = counts.get(s.kept_indices, 0) + 1
    top = sorted(counts.items(), key=lambda kv: -kv[1])[:3]
    shown = ", ".join(f"{k}: {v}" for k, v in top)
    print(f"  alpha={alpha:<4} kept sets over 200 draws -> {shown}")

# --- the schedule --------------------------------------------------------
schedule = NoiseSchedule(alpha_start=1.0, alpha_end=0.0, decay_steps=75)
print("\nlinear decay over 75 of 100 steps:")
steps = [0, 25, 50, 74, 75, 99]
print("  " + "  ".join(f"t={t}: {alpha_at(t, schedule):.2f}" for t in steps))
print("after the decay window training runs noise-free, matching inference")

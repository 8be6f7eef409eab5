"""FLOPs accounting for a 7B-shaped pipeline under token pruning.

Decoder cost is exact integer arithmetic; everything pruning cannot touch
(vision encoder, action head) is one calibrated overhead. The sweep at the
end shows how the total budget falls as fewer visual tokens survive.
"""

from vlaprune.flops import (
    ArchSpec,
    calibrate_overhead,
    decoder_flops,
    llama7b_arch,
    pipeline_cost,
)

# --- a decoder small enough to check by hand ----------------------------
tiny = ArchSpec(layers=1, hidden=2, ffn=4, heads=1)
print("tiny decoder, one token: per-layer MACs are")
print("  q+o projections 8, k+v 8, attention 4, gated mlp 24 -> 44 MACs")
print(f"  decoder_flops(1) = {decoder_flops(1, tiny)} (44 MACs x 2)")

# --- the bench configuration --------------------------------------------
arch = calibrate_overhead(llama7b_arch())
print(f"\n7B-shaped decoder, overhead calibrated to an 8.8 TFLOPs baseline:")
print(f"  fixed overhead {arch.encoder_flops / 1e12:.3f} TFLOPs")

baseline = pipeline_cost(512, 30, arch)
pruned = pipeline_cost(78, 30, arch, baseline=baseline)
print(f"  512 visual tokens: {baseline.total_flops / 1e12:.3f} TFLOPs")
print(f"   78 visual tokens: {pruned.total_flops / 1e12:.3f} TFLOPs")
print(f"  reduction {pruned.reduction_vs_baseline:.1%}")

# --- reduction as a function of retained tokens -------------------------
print("\nretained  TFLOPs  reduction")
for kept in (512, 384, 256, 128, 78, 32, 8):
    cost = pipeline_cost(kept, 30, arch, baseline=baseline)
    bar = "#" * round(40 * cost.total_flops / baseline.total_flops)
    print(
        f"{kept:>8}  {cost.total_flops / 1e12:6.2f}  "
        f"{cost.reduction_vs_baseline:8.1%}  {bar}"
    )

print("\nthe floor is the overhead plus the text-only decoder cost:")
floor = pipeline_cost(0, 30, arch, baseline=baseline)
print(f"  0 visual tokens would still cost {floor.total_flops / 1e12:.3f} TFLOPs "
      f"({floor.reduction_vs_baseline:.1%} reduction)")

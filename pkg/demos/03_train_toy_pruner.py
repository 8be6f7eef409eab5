"""Train the toy pruner end to end, scaled down to finish in seconds.

The run shows the characteristic trajectory: noisy exploration keeps many
tokens early, the decay schedule sharpens the selection, and the final
inference pass retains a small set that still covers the planted tokens.
The full-size run behind the acceptance thresholds is
`vlaprune train` (64 tokens, 5000 steps, a few minutes).
"""

from vlaprune.seeding import stream_rng
from vlaprune.testbed import ToyConfig, evaluate_recovery, train_model

cfg = ToyConfig(
    l_visual=24,
    l_language=4,
    dim=24,
    n_informative=4,
    model_dim=24,
    ffn_dim=48,
    steps=1200,
    batch=16,
    eval_episodes=100,
)
print(
    f"training parameter-free pruner: {cfg.l_visual} visual tokens, "
    f"{cfg.n_informative} informative, {cfg.steps} steps"
)

model, report = train_model(cfg)

print("\n step   loss    kept(train)  alpha")
for record in report.steps[:: cfg.steps // 10]:
    print(
        f"{record.step:>5}  {record.loss:6.3f}  {record.retained_mean:>8.1f}"
        f"     {record.alpha:.2f}"
    )

final = report.final
print(f"\nafter training ({final.n_episodes} fresh episodes):")
print(f"  recall of planted tokens  {final.recall:.3f}")
print(f"  tokens kept               {final.retained_mean:.1f} of {cfg.l_visual}")
print(f"  task accuracy             {final.accuracy:.3f}")
print(f"  retained at convergence   {report.convergence_retained_mean():.1f} (train)")

# the same model, evaluated again on a different stream, for comparison
again = evaluate_recovery(model, 100, stream_rng(99, "eval"))
print(f"\nindependent eval stream: recall {again.recall:.3f}, "
      f"accuracy {again.accuracy:.3f}")

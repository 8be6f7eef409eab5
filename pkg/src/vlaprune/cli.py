"""Experiment runner: train / eval / bench-flops / demo-prune.

Configuration is a flat ``key = value`` text file plus command-line
overrides (flags win over the file, the file wins over defaults). Unknown
keys are rejected by name. Every subcommand is deterministic given its
configuration and seed: rerunning writes byte-identical report files.
"""

from __future__ import annotations

import argparse
import dataclasses
import pathlib
import sys
from dataclasses import dataclass

from . import flops as flops_mod
from .pruning import NOISE_KINDS, NOISE_MODES, NoiseSchedule
from .seeding import stream_rng
from .testbed import (
    VARIANTS,
    ToyConfig,
    TrainingDivergence,
    evaluate_recovery,
    forward,
    generate_sample,
    init_model,
    train_model,
    write_train_report,
)


class ConfigError(ValueError):
    """Bad or unknown configuration key/value."""


def _parse_optional_int(text: str):
    return None if text == "None" else int(text)


def _parse_bool(text: str):
    if text in ("true", "True"):
        return True
    if text in ("false", "False"):
        return False
    raise ValueError(f"expected true/false, got {text!r}")


@dataclass(frozen=True)
class RunConfig:
    """Settings for train / eval / demo-prune runs. All fields have
    defaults; ``layers``, ``noise_decay_steps``, ``n_q``, and ``out``
    resolve automatically when left unset."""

    variant: str = "parameter-free"
    l_visual: int = 64
    l_language: int = 8
    dim: int = 32
    n_informative: int = 8
    noise_scale: float = 0.5
    signal_strength: float = 2.0
    beacon_strength: float = 2.0
    model_dim: int = 32
    ffn_dim: int = 64
    layers: int | None = None  # None: 2 for llm-learnable, else 1
    n_q: int | None = None  # None: min(128, patch count)
    attn_aggregation: str = "mean"
    noise_mode: str = "linear-decay"
    noise_alpha_start: float = 1.0
    noise_alpha_end: float = 0.0
    noise_decay_steps: int | None = None  # None: three quarters of steps
    noise_kind: str = "uniform"
    steps: int = 5000
    batch: int = 32
    lr: float = 0.02
    momentum: float = 0.9
    lr_drop_frac: float = 0.75
    grad_clip: float | None = 5.0
    embed_lr_scale: float = 0.1
    seed: int = 0
    eval_episodes: int = 200
    accuracy_margin: float = 0.25
    jobs: int = 1
    out: str | None = None  # None: per-subcommand default file


_RUN_PARSERS = {
    "variant": str,
    "l_visual": int,
    "l_language": int,
    "dim": int,
    "n_informative": int,
    "noise_scale": float,
    "signal_strength": float,
    "beacon_strength": float,
    "model_dim": int,
    "ffn_dim": int,
    "layers": _parse_optional_int,
    "n_q": _parse_optional_int,
    "attn_aggregation": str,
    "noise_mode": str,
    "noise_alpha_start": float,
    "noise_alpha_end": float,
    "noise_decay_steps": _parse_optional_int,
    "noise_kind": str,
    "steps": int,
    "batch": int,
    "lr": float,
    "momentum": float,
    "lr_drop_frac": float,
    "grad_clip": lambda t: None if t == "None" else float(t),
    "embed_lr_scale": float,
    "seed": int,
    "eval_episodes": int,
    "accuracy_margin": float,
    "jobs": int,
    "out": str,
}


@dataclass(frozen=True)
class BenchConfig:
    """Settings for bench-flops."""

    layers: int = 32
    hidden: int = 4096
    ffn: int = 11008
    heads: int = 32
    kv_full: bool = True
    gated_mlp: bool = True
    overhead: float | None = None  # None: calibrate against target_total
    head_flops: float = 0.0
    target_total: float = flops_mod.DEFAULT_TOTAL_BUDGET
    text_tokens: int = flops_mod.DEFAULT_TEXT_TOKENS
    visual_baseline: int = flops_mod.DEFAULT_BASELINE_VISUAL
    visual_pruned: int = flops_mod.DEFAULT_PRUNED_VISUAL
    out: str = "bench_flops.csv"


_BENCH_PARSERS = {
    "layers": int,
    "hidden": int,
    "ffn": int,
    "heads": int,
    "kv_full": _parse_bool,
    "gated_mlp": _parse_bool,
    "overhead": lambda t: None if t == "None" else float(t),
    "head_flops": float,
    "target_total": float,
    "text_tokens": int,
    "visual_baseline": int,
    "visual_pruned": int,
    "out": str,
}


def parse_kv_text(text: str) -> dict[str, str]:
    """Flat key=value lines; '#' comments and [section] headers are skipped."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith("["):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _build_config(cls, parsers, file_text: str | None, overrides: dict):
    values: dict = {}
    if file_text is not None:
        for key, raw in parse_kv_text(file_text).items():
            if key not in parsers:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                values[key] = parsers[key](raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for key {key!r}: {exc}") from exc
    for key, val in overrides.items():
        if val is None:
            continue
        if key not in parsers:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = val
    try:
        return cls(**values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_run_config(path: str | None, overrides: dict) -> RunConfig:
    text = pathlib.Path(path).read_text() if path else None
    return _build_config(RunConfig, _RUN_PARSERS, text, overrides)


def load_bench_config(path: str | None, overrides: dict) -> BenchConfig:
    text = pathlib.Path(path).read_text() if path else None
    return _build_config(BenchConfig, _BENCH_PARSERS, text, overrides)


def resolve(rc: RunConfig, subcommand: str) -> RunConfig:
    """Fill the auto fields so the config echo re-parses to itself."""
    layers = rc.layers
    if layers is None:
        layers = 2 if rc.variant == "llm-learnable" else 1
    decay = rc.noise_decay_steps
    if decay is None:
        decay = max(1, (rc.steps * 3) // 4)
    out = rc.out
    if out is None:
        out = {
            "train": "train_report.csv",
            "eval": "eval_report.txt",
            "demo-prune": "demo_prune.txt",
        }[subcommand]
    return dataclasses.replace(rc, layers=layers, noise_decay_steps=decay, out=out)


def run_config_lines(rc: RunConfig) -> list[str]:
    fields = dataclasses.asdict(rc)
    return [f"{key} = {fields[key]}" for key in sorted(fields)]


def parse_run_config_echo(text: str) -> RunConfig:
    """Re-parse a config echo produced by :func:`run_config_lines`."""
    return _build_config(
        RunConfig,
        _RUN_PARSERS,
        None,
        {
            k: (None if raw == "None" else _RUN_PARSERS[k](raw))
            for k, raw in parse_kv_text(text).items()
            if k in _RUN_PARSERS
        },
    )


def to_toy_config(rc: RunConfig) -> ToyConfig:
    """A resolved RunConfig mapped onto the testbed's config type."""
    if rc.noise_mode not in NOISE_MODES:
        raise ConfigError(
            f"unknown noise_mode {rc.noise_mode!r}; known: {NOISE_MODES}"
        )
    if rc.noise_kind not in NOISE_KINDS:
        raise ConfigError(
            f"unknown noise_kind {rc.noise_kind!r}; known: {NOISE_KINDS}"
        )
    if rc.variant not in VARIANTS:
        raise ConfigError(f"unknown variant {rc.variant!r}; known: {VARIANTS}")
    schedule = NoiseSchedule(
        alpha_start=rc.noise_alpha_start,
        alpha_end=rc.noise_alpha_end,
        decay_steps=rc.noise_decay_steps,
        mode=rc.noise_mode,
    )
    try:
        return ToyConfig(
            l_visual=rc.l_visual,
            l_language=rc.l_language,
            dim=rc.dim,
            n_informative=rc.n_informative,
            noise_scale=rc.noise_scale,
            signal_strength=rc.signal_strength,
            beacon_strength=rc.beacon_strength,
            model_dim=rc.model_dim,
            ffn_dim=rc.ffn_dim,
            layers=rc.layers,
            variant=rc.variant,
            n_q=rc.n_q,
            attn_aggregation=rc.attn_aggregation,
            noise_kind=rc.noise_kind,
            steps=rc.steps,
            batch=rc.batch,
            lr=rc.lr,
            momentum=rc.momentum,
            lr_drop_frac=rc.lr_drop_frac,
            grad_clip=rc.grad_clip,
            embed_lr_scale=rc.embed_lr_scale,
            schedule=schedule,
            seed=rc.seed,
            eval_episodes=rc.eval_episodes,
            accuracy_margin=rc.accuracy_margin,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# subcommands


def _run_overrides(args) -> dict:
    keys = (
        "variant seed steps jobs out noise_mode noise_kind l_visual l_language "
        "dim n_informative n_q layers lr batch eval_episodes noise_scale "
        "signal_strength"
    ).split()
    return {k: getattr(args, k, None) for k in keys}


def cmd_train(args) -> int:
    rc = resolve(load_run_config(args.config, _run_overrides(args)), "train")
    cfg = to_toy_config(rc)
    model, report = train_model(cfg)
    del model
    extra = ["[run]"] + run_config_lines(rc)
    csv_path, summary_path = write_train_report(report, rc.out, extra_lines=extra)
    f = report.final
    print(f"trained {rc.variant} for {rc.steps} steps (seed {rc.seed})")
    print(
        f"recall {f.recall:.3f}  accuracy {f.accuracy:.3f}  "
        f"retained {f.retained_mean:.1f}±{f.retained_std:.1f} of {rc.l_visual}"
    )
    print(f"trace: {csv_path}")
    print(f"summary: {summary_path}")
    return 0


def cmd_eval(args) -> int:
    rc = resolve(load_run_config(args.config, _run_overrides(args)), "eval")
    cfg = to_toy_config(rc)
    # no checkpoints exist at this scale: rebuild the model deterministically
    # (same seed, same config) and evaluate a fresh episode stream
    if rc.steps > 0:
        model, _ = train_model(cfg)
    else:
        model = init_model(cfg)
    metrics = evaluate_recovery(
        model, rc.eval_episodes, stream_rng(rc.seed, "eval"), jobs=rc.jobs
    )
    lines = ["[run]"]
    lines += run_config_lines(rc)
    lines += [
        "[result]",
        f"episodes = {metrics.n_episodes}",
        f"recall = {metrics.recall!r}",
        f"accuracy = {metrics.accuracy!r}",
        f"retained_mean = {metrics.retained_mean!r}",
        f"retained_std = {metrics.retained_std!r}",
        f"retained_tokens = {metrics.retained_mean:.1f}±{metrics.retained_std:.1f} tokens",
    ]
    text = "\n".join(lines) + "\n"
    pathlib.Path(rc.out).write_text(text)
    print(text, end="")
    return 0


def cmd_bench_flops(args) -> int:
    overrides = {
        k: getattr(args, k, None)
        for k in (
            "layers hidden ffn heads overhead head_flops target_total "
            "text_tokens visual_baseline visual_pruned out"
        ).split()
    }
    bc = load_bench_config(args.config, overrides)
    try:
        arch = flops_mod.ArchSpec(
            layers=bc.layers,
            hidden=bc.hidden,
            ffn=bc.ffn,
            heads=bc.heads,
            kv_full=bc.kv_full,
            gated_mlp=bc.gated_mlp,
            head_flops=bc.head_flops,
        )
        if bc.overhead is None:
            arch = flops_mod.calibrate_overhead(
                arch, bc.target_total, bc.visual_baseline, bc.text_tokens
            )
        else:
            arch = dataclasses.replace(arch, encoder_flops=bc.overhead)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    baseline = flops_mod.pipeline_cost(bc.visual_baseline, bc.text_tokens, arch)
    pruned = flops_mod.pipeline_cost(bc.visual_pruned, bc.text_tokens, arch, baseline)
    rows = [
        flops_mod.ReportRow(
            "baseline",
            bc.visual_baseline,
            bc.text_tokens,
            baseline.total_flops / 1e12,
            0.0,
            float(bc.visual_baseline),
            0.0,
        ),
        flops_mod.ReportRow(
            "pruned",
            bc.visual_pruned,
            bc.text_tokens,
            pruned.total_flops / 1e12,
            pruned.reduction_vs_baseline,
            float(bc.visual_pruned),
            0.0,
        ),
    ]
    print(flops_mod.format_cost_table(rows))
    print(
        f"overhead: {arch.encoder_flops / 1e12:.4f} TFLOPs fixed "
        f"(decoder-only baseline {baseline.decoder_flops / 1e12:.4f} TFLOPs)"
    )
    print(f"reduction: {pruned.reduction_vs_baseline:.4f}")
    flops_mod.emit_report(rows, bc.out)
    print(f"report: {bc.out}")
    return 0


def cmd_demo_prune(args) -> int:
    rc = load_run_config(args.config, _run_overrides(args))
    if rc.steps == 5000 and args.steps is None and args.config is None:
        rc = dataclasses.replace(rc, steps=0)  # bare demo stays fast
    rc = resolve(rc, "demo-prune")
    cfg = to_toy_config(rc)
    if rc.steps > 0:
        model, _ = train_model(cfg)
    else:
        model = init_model(cfg)
    sample = generate_sample(cfg, stream_rng(rc.seed, "demo"))
    _, sel = forward(model, sample, "infer")
    kept = set(sel.kept_indices) if sel else set(range(cfg.l_visual))

    cells = []
    for i in range(cfg.l_visual):
        if i == 0:
            cells.append("C")
        elif i in sample.informative_set:
            cells.append("#" if i in kept else "!")
        else:
            cells.append("+" if i in kept else ".")
    grid = "".join(cells)
    hits = len(sample.informative_set & kept)
    recall = hits / len(sample.informative_set)
    lines = ["[run]"]
    lines += run_config_lines(rc)
    lines += [
        "[grid]",
        "legend = C cls, # informative kept, ! informative dropped, "
        "+ background kept, . background dropped",
        grid,
        "[result]",
        f"kept = {len(kept)}",
        f"informative_hit = {hits}/{len(sample.informative_set)}",
        f"recall = {recall!r}",
    ]
    text = "\n".join(lines) + "\n"
    pathlib.Path(rc.out).write_text(text)
    print(text, end="")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_run_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", metavar="PATH", help="flat key=value config file")
    sub.add_argument("--seed", type=int, help="master seed (default 0)")
    sub.add_argument("--variant", choices=VARIANTS, help="pruner variant")
    sub.add_argument("--noise-mode", dest="noise_mode", choices=NOISE_MODES)
    sub.add_argument("--noise-kind", dest="noise_kind", choices=NOISE_KINDS)
    sub.add_argument("--steps", type=int, help="training steps")
    sub.add_argument("--jobs", type=int, help="evaluation worker threads")
    sub.add_argument("--out", metavar="PATH", help="report output path")
    sub.add_argument("--l-visual", dest="l_visual", type=int)
    sub.add_argument("--l-language", dest="l_language", type=int)
    sub.add_argument("--dim", type=int)
    sub.add_argument("--k", dest="n_informative", type=int, help="informative tokens")
    sub.add_argument("--n-q", dest="n_q", type=int, help="learnable query count")
    sub.add_argument("--layers", type=int, help="decoder layers")
    sub.add_argument("--lr", type=float)
    sub.add_argument("--batch", type=int)
    sub.add_argument("--episodes", dest="eval_episodes", type=int)
    sub.add_argument("--noise-scale", dest="noise_scale", type=float)
    sub.add_argument("--signal-strength", dest="signal_strength", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vlaprune",
        description="Token-pruning experiment runner (toy testbed + FLOPs bench).",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p_train = subs.add_parser("train", help="train a toy model and write reports")
    _add_run_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = subs.add_parser(
        "eval", help="evaluate a deterministically retrained model"
    )
    _add_run_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_bench = subs.add_parser("bench-flops", help="transformer FLOPs accounting")
    p_bench.add_argument("--config", metavar="PATH")
    p_bench.add_argument("--layers", type=int)
    p_bench.add_argument("--hidden", type=int)
    p_bench.add_argument("--ffn", type=int)
    p_bench.add_argument("--heads", type=int)
    p_bench.add_argument("--overhead", type=float, help="fixed FLOPs; omit to calibrate")
    p_bench.add_argument("--head-flops", dest="head_flops", type=float)
    p_bench.add_argument("--target-total", dest="target_total", type=float)
    p_bench.add_argument("--text-tokens", dest="text_tokens", type=int)
    p_bench.add_argument("--visual-baseline", dest="visual_baseline", type=int)
    p_bench.add_argument("--visual-pruned", dest="visual_pruned", type=int)
    p_bench.add_argument("--out", metavar="PATH")
    p_bench.set_defaults(func=cmd_bench_flops)

    p_demo = subs.add_parser("demo-prune", help="print a kept/pruned token grid")
    _add_run_flags(p_demo)
    p_demo.set_defaults(func=cmd_demo_prune)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrainingDivergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

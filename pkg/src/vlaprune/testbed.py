"""Toy vision-language-action testbed for exercising the pruner end to end.

The synthetic task plants a handful of informative tokens in a field of
noise tokens. Informative token m carries one coordinate of the action
target along a fixed readout direction, a beacon component shared by all
planted tokens, and a component aligned with one language token so that
language-conditioned queries have something to find. Background tokens
and language rows live in the orthogonal complement of the readout frame:
they are pure noise with respect to the target, so a pruner that learns
the task can drop the background without losing accuracy.

The model is deliberately small: one linear projection shared by both
token streams (standing in for a pretrained connector, and training
slowly like one), an optional pruning stage, sinusoidal position
encodings indexed by original position IDs, a pre-norm attention + MLP
decoder stack, and a linear action head read out at the final language
position. Training is plain stochastic gradient descent with momentum,
with the exploration-noise bound decaying over the run.
"""

from __future__ import annotations

import dataclasses
import functools
import pathlib
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    GradientContext,
    add,
    concat_rows,
    matmul,
    mean_all,
    mul,
    rms_normalize,
    softmax_rows,
    sub,
    take_rows,
    tanh,
    transpose,
    value_of,
)
from .learnable import (
    DEFAULT_QUERY_COUNT,
    AttentionSummary,
    LearnableQueryBank,
    aggregate_attention,
    init_bank,
    score_llm,
    score_vision,
)
from .pruning import (
    NoiseSchedule,
    SelectionResult,
    TokenBatch,
    alpha_at,
    gather_tokens,
    generate_queries,
    score_tokens,
    select_infer,
    select_train,
)
from .seeding import stream_rng

VARIANTS = ("parameter-free", "vision-learnable", "llm-learnable", "none")


class TrainingDivergence(RuntimeError):
    """Raised when training produces non-finite values; carries the step."""

    def __init__(self, step: int, detail: str = ""):
        self.step = step
        msg = f"training diverged at step {step}"
        super().__init__(msg + (f": {detail}" if detail else ""))


def _default_schedule(steps: int) -> NoiseSchedule:
    # decay over the first three quarters of the run, then run noise-free
    return NoiseSchedule(
        alpha_start=1.0,
        alpha_end=0.0,
        decay_steps=max(1, (steps * 3) // 4),
        mode="linear-decay",
    )


@dataclass(frozen=True)
class ToyConfig:
    """Task, model, and optimizer settings for one training run."""

    l_visual: int = 64  # visual tokens including CLS at index 0
    l_language: int = 8
    dim: int = 32  # raw token dimension
    n_informative: int = 8  # planted tokens; also the action dimension
    noise_scale: float = 0.5  # background token standard deviation
    signal_strength: float = 2.0  # language-aligned component of planted tokens
    beacon_strength: float = 2.0  # shared fixed component of planted tokens
    model_dim: int = 32
    ffn_dim: int = 64
    layers: int = 1
    variant: str = "parameter-free"
    n_q: int | None = None  # learnable query count; None caps 128 at the patch count
    attn_aggregation: str = "mean"
    noise_kind: str = "uniform"
    steps: int = 5000
    batch: int = 32
    lr: float = 0.02
    momentum: float = 0.9
    lr_drop_frac: float = 0.75  # learning rate falls to a tenth here
    grad_clip: float | None = 5.0  # global gradient norm cap; None disables
    embed_lr_scale: float = 0.1  # shared projection trains this much slower
    schedule: NoiseSchedule | None = None
    seed: int = 0
    eval_episodes: int = 200
    accuracy_margin: float = 0.25  # |prediction - target| below this is a hit

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; known: {VARIANTS}")
        if self.l_visual < 2:
            raise ValueError("need at least CLS plus one patch token")
        if self.l_language < 1:
            raise ValueError("need at least one language token")
        if self.n_informative < 1:
            raise ValueError("need at least one informative token")
        if self.n_informative >= self.l_visual:
            raise ValueError(
                f"{self.n_informative} informative tokens do not fit in "
                f"{self.l_visual} visual tokens (CLS included)"
            )
        if self.n_informative + 1 > self.dim:
            raise ValueError(
                "informative directions plus the beacon must fit in the "
                "token dimension"
            )
        if self.steps < 0 or self.batch < 1:
            raise ValueError("steps must be >= 0 and batch >= 1")
        if self.embed_lr_scale < 0:
            raise ValueError("embed_lr_scale must be >= 0")
        if self.variant == "llm-learnable" and self.layers < 2:
            raise ValueError("decoder-side pruning needs at least two layers")
        if self.schedule is None:
            object.__setattr__(self, "schedule", _default_schedule(self.steps))

    @property
    def n_patches(self) -> int:
        return self.l_visual - 1

    @property
    def query_count(self) -> int:
        if self.n_q is not None:
            return self.n_q
        return min(DEFAULT_QUERY_COUNT, self.n_patches)


@dataclass(frozen=True)
class SyntheticSample:
    """One episode: tokens, which visual indices matter, and the target."""

    visual: TokenBatch
    language: TokenBatch
    informative_set: frozenset[int]
    target: np.ndarray


@functools.lru_cache(maxsize=32)
def _task_frame(seed: int, dim: int, k: int) -> np.ndarray:
    """Fixed orthonormal frame for a task seed, shape [k + 1, dim].

    The first k rows are the action readout directions; the extra row is a
    beacon common to every informative token, giving content attention a
    stable linear signature (the language anchors vary per episode).
    """
    rng = stream_rng(seed, "task")
    raw = rng.normal(size=(dim, k + 1))
    q, r = np.linalg.qr(raw)
    q = q * np.sign(np.diag(r))  # canonical sign, independent of QR convention
    return q.T.copy()


def task_directions(cfg: ToyConfig) -> np.ndarray:
    """Orthonormal action directions, shape [k, dim]."""
    return _task_frame(cfg.seed, cfg.dim, cfg.n_informative)[:-1]


def task_beacon(cfg: ToyConfig) -> np.ndarray:
    """Unit direction shared by all informative tokens, shape [dim]."""
    return _task_frame(cfg.seed, cfg.dim, cfg.n_informative)[-1]


def generate_sample(cfg: ToyConfig, rng: np.random.Generator) -> SyntheticSample:
    """Draw one episode.

    The target is the vector of planted coefficients; background tokens are
    sampled independently of it, so only the informative tokens (plus the
    language) determine the answer.
    """
    k = cfg.n_informative
    frame = _task_frame(cfg.seed, cfg.dim, k)
    directions, beacon = frame[:-1], frame[-1]
    span = frame.T @ frame  # projector onto directions plus beacon

    # the frame subspace is reserved for planted signal: language and
    # background live in its orthogonal complement, so the readout
    # directions carry the target and nothing else
    language = rng.normal(size=(cfg.l_language, cfg.dim))
    language = language - language @ span
    target = rng.uniform(-1.0, 1.0, size=k)
    positions = rng.choice(np.arange(1, cfg.l_visual), size=k, replace=False)
    visual = rng.normal(0.0, cfg.noise_scale, size=(cfg.l_visual, cfg.dim))
    visual = visual - visual @ span
    visual[0] = 0.0  # CLS carries no content in the toy task

    for slot, pos in enumerate(positions):
        anchor = language[slot % cfg.l_language]
        anchor = anchor / max(np.linalg.norm(anchor), 1e-12)
        visual[pos] = (
            cfg.signal_strength * anchor
            + cfg.beacon_strength * beacon
            + target[slot] * directions[slot]
        )

    visual_batch = TokenBatch(visual, tuple(range(cfg.l_visual)), cls_index=0)
    language_batch = TokenBatch(
        language, tuple(range(cfg.l_visual, cfg.l_visual + cfg.l_language))
    )
    return SyntheticSample(
        visual_batch, language_batch, frozenset(int(p) for p in positions), target
    )


# ---------------------------------------------------------------------------
# model


@dataclass
class ToyModel:
    """Parameter store plus the config that shaped it."""

    cfg: ToyConfig
    params: dict[str, np.ndarray]

    def bank(self, params=None) -> LearnableQueryBank:
        p = params if params is not None else self.params
        return LearnableQueryBank(
            p["bank.queries"], p["bank.gain_query"], p["bank.gain_token"]
        )


@functools.lru_cache(maxsize=8)
def sinusoidal_positions(n_positions: int, dim: int) -> np.ndarray:
    """Classic sine/cosine position table, shape [n_positions, dim]."""
    pos = np.arange(n_positions)[:, None]
    idx = np.arange(0, dim, 2)[None, :]
    angle = pos / np.power(10000.0, idx / dim)
    table = np.zeros((n_positions, dim))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : table[:, 1::2].shape[1]])
    return table


def init_model(cfg: ToyConfig) -> ToyModel:
    rng = stream_rng(cfg.seed, "init")
    d, md, ffn = cfg.dim, cfg.model_dim, cfg.ffn_dim

    def dense(fan_in, fan_out):
        return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))

    # one projection serves both streams, mirroring connectors that map
    # visual tokens into the language embedding space; identity warm start
    # stands in for a pretrained connector, keeping the planted
    # visual-language alignment visible to the query scorer from step one
    params: dict[str, np.ndarray] = {
        "embed.w": np.eye(d, md),
        "embed.b": np.zeros((1, md)),
        "head.w": dense(md, cfg.n_informative),
        "head.b": np.zeros((1, cfg.n_informative)),
    }
    for i in range(cfg.layers):
        prefix = f"layer{i}"
        params[f"{prefix}.attn.gain"] = np.ones(md)
        params[f"{prefix}.wq"] = dense(md, md)
        params[f"{prefix}.wk"] = dense(md, md)
        params[f"{prefix}.wv"] = dense(md, md)
        params[f"{prefix}.wo"] = dense(md, md)
        params[f"{prefix}.mlp.gain"] = np.ones(md)
        params[f"{prefix}.w1"] = dense(md, ffn)
        params[f"{prefix}.b1"] = np.zeros((1, ffn))
        params[f"{prefix}.w2"] = dense(ffn, md)
        params[f"{prefix}.b2"] = np.zeros((1, md))
    if cfg.variant in ("vision-learnable", "llm-learnable"):
        n_q = cfg.query_count
        if n_q > cfg.n_patches:
            raise ValueError(
                f"{n_q} learnable queries exceed the {cfg.n_patches} patch tokens"
            )
        bank = init_bank(n_q, md, rng)
        params["bank.queries"] = bank.queries
        params["bank.gain_query"] = bank.gain_query
        params["bank.gain_token"] = bank.gain_token
    if cfg.variant == "llm-learnable":
        params["zeta"] = np.asarray(1.0)
    return ToyModel(cfg, params)


def _decoder_layer(x, params, prefix, md):
    """One pre-norm attention + MLP block; also returns the attention
    logits so callers can build restricted attention profiles without
    renormalizing an underflow-prone probability slice."""
    xn = rms_normalize(x, params[f"{prefix}.attn.gain"])
    q = matmul(xn, params[f"{prefix}.wq"])
    k = matmul(xn, params[f"{prefix}.wk"])
    v = matmul(xn, params[f"{prefix}.wv"])
    logits = mul(matmul(q, transpose(k)), 1.0 / np.sqrt(md))
    attn = softmax_rows(logits)
    x = add(x, matmul(matmul(attn, v), params[f"{prefix}.wo"]))
    xn2 = rms_normalize(x, params[f"{prefix}.mlp.gain"])
    h = tanh(add(matmul(xn2, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    x = add(x, add(matmul(h, params[f"{prefix}.w2"]), params[f"{prefix}.b2"]))
    return x, logits


def _override_selection(visual: TokenBatch, kept) -> SelectionResult:
    """A selection imposed from outside (manipulation studies); CLS stays."""
    kept = sorted(set(int(i) for i in kept) | {0})
    indicator = np.zeros((len(kept), visual.length))
    indicator[np.arange(len(kept)), kept] = 1.0
    return SelectionResult(
        kept_indices=tuple(kept),
        per_row_argmax=tuple(kept),
        argmax_cols=tuple(kept),
        indicator=indicator,
        noise_alpha_used=0.0,
        column_ids=tuple(range(visual.length)),
        cls_index=0,
    )


def forward(
    model: ToyModel,
    sample: SyntheticSample,
    mode: str,
    *,
    alpha: float = 0.0,
    rng: np.random.Generator | None = None,
    params=None,
    kept_override=None,
):
    """One model pass; returns (prediction row [1 x k], selection or None).

    ``params`` may swap in tensors lifted onto a gradient context, in which
    case train mode records straight-through provenance end to end. With
    ``kept_override`` the scorer is bypassed and exactly the given visual
    indices (plus CLS) are consumed.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    cfg = model.cfg
    p = params if params is not None else model.params
    md = cfg.model_dim

    hv = add(matmul(sample.visual.values, p["embed.w"]), p["embed.b"])
    hl = add(matmul(sample.language.values, p["embed.w"]), p["embed.b"])
    table = sinusoidal_positions(cfg.l_visual + cfg.l_language, md)

    if cfg.variant == "llm-learnable":
        return _forward_llm_variant(
            model, sample, mode, p, hv, hl, table, alpha, rng, kept_override
        )

    visual_batch = TokenBatch(hv, sample.visual.position_ids, cls_index=0)
    sel: SelectionResult | None = None
    if kept_override is not None:
        sel = _override_selection(visual_batch, kept_override)
        pruned = gather_tokens(visual_batch, sel)
    elif cfg.variant == "none":
        pruned = visual_batch
    elif cfg.variant == "parameter-free":
        # score on unit-RMS rows (as the streams would enter an attention
        # block): keeps the score scale fixed as the shared projection
        # trains, so schedule noise stays competitive; gather from the raw
        # embeddings so the decoder sees unnormalized tokens
        unit = np.ones(md)
        norm_visual = TokenBatch(
            rms_normalize(hv, unit), sample.visual.position_ids, cls_index=0
        )
        norm_lang = TokenBatch(rms_normalize(hl, unit))
        queries = generate_queries(norm_visual, norm_lang)
        scores = score_tokens(queries, norm_visual)
        if mode == "train":
            sel = select_train(
                scores,
                alpha,
                rng,
                column_ids=visual_batch.patch_indices,
                cls_index=0,
                noise_kind=cfg.noise_kind,
            )
        else:
            sel = select_infer(
                value_of(scores),
                column_ids=visual_batch.patch_indices,
                cls_index=0,
            )
        pruned = gather_tokens(visual_batch, sel)
    else:  # vision-learnable
        scores = score_vision(model.bank(p), visual_batch)
        if mode == "train":
            sel = select_train(
                scores,
                alpha,
                rng,
                column_ids=visual_batch.patch_indices,
                cls_index=0,
                noise_kind=cfg.noise_kind,
            )
        else:
            sel = select_infer(
                value_of(scores),
                column_ids=visual_batch.patch_indices,
                cls_index=0,
            )
        pruned = gather_tokens(visual_batch, sel)

    seq = concat_rows(pruned.embeddings, hl)
    ids = list(pruned.position_ids) + list(sample.language.position_ids)
    x = add(seq, table[ids])
    for i in range(cfg.layers):
        x, _ = _decoder_layer(x, p, f"layer{i}", md)
    last = take_rows(x, [value_of(x).shape[0] - 1])
    prediction = add(matmul(last, p["head.w"]), p["head.b"])
    return prediction, sel


def _forward_llm_variant(
    model, sample, mode, p, hv, hl, table, alpha, rng, kept_override
):
    """Decoder-side pruning: run one layer on the full sequence, score the
    visual hidden states with the bank plus aggregated attention, prune,
    then run the remaining layers on the shortened sequence."""
    cfg = model.cfg
    md = cfg.model_dim
    n_vis = cfg.l_visual
    ids = list(sample.visual.position_ids) + list(sample.language.position_ids)
    x = add(concat_rows(hv, hl), table[ids])
    x, attn_logits = _decoder_layer(x, p, "layer0", md)

    hidden_visual = TokenBatch(
        take_rows(x, list(range(n_vis))), sample.visual.position_ids, cls_index=0
    )
    if kept_override is not None:
        sel = _override_selection(hidden_visual, kept_override)
    else:
        # language-to-patch attention restricted to the patch columns,
        # computed as a softmax over the sliced logits (identical to
        # renormalizing the probability slice but immune to underflow);
        # treated as a given profile, not a gradient path
        sliced = value_of(attn_logits)[n_vis:, 1:n_vis]
        shifted = np.exp(sliced - sliced.max(axis=1, keepdims=True))
        probs = shifted / shifted.sum(axis=1, keepdims=True)
        summary = aggregate_attention(probs[None, :, :], cfg.attn_aggregation)
        summary = AttentionSummary(summary.scores, p["zeta"])
        scores = score_llm(model.bank(p), hidden_visual, summary)
        if mode == "train":
            sel = select_train(
                scores,
                alpha,
                rng,
                column_ids=hidden_visual.patch_indices,
                cls_index=0,
                noise_kind=cfg.noise_kind,
            )
        else:
            sel = select_infer(
                value_of(scores),
                column_ids=hidden_visual.patch_indices,
                cls_index=0,
            )
    pruned = gather_tokens(hidden_visual, sel)
    x = concat_rows(pruned.embeddings, take_rows(x, list(range(n_vis, len(ids)))))
    for i in range(1, cfg.layers):
        x, _ = _decoder_layer(x, p, f"layer{i}", md)
    last = take_rows(x, [value_of(x).shape[0] - 1])
    prediction = add(matmul(last, p["head.w"]), p["head.b"])
    return prediction, sel


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class StepRecord:
    step: int
    loss: float
    retained_mean: float
    retained_std: float
    alpha: float


@dataclass(frozen=True)
class RecoveryMetrics:
    """Inference-time quality of a model over evaluation episodes."""

    recall: float
    retained_mean: float
    retained_std: float
    accuracy: float
    n_episodes: int


@dataclass
class TrainReport:
    steps: list[StepRecord]
    final: RecoveryMetrics
    config: ToyConfig
    seed: int

    def convergence_retained_mean(self, window: int = 100) -> float:
        """Mean train-time retained count over the last ``window`` steps."""
        if not self.steps:
            return float(self.config.l_visual)
        tail = self.steps[-window:]
        return float(np.mean([r.retained_mean for r in tail]))


def _accuracy(prediction: np.ndarray, target: np.ndarray, margin: float) -> float:
    return float(np.mean(np.abs(prediction - target) < margin))


def train_model(cfg: ToyConfig) -> tuple[ToyModel, TrainReport]:
    """Train a toy model from scratch and return it with its report."""
    model = init_model(cfg)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    data_rng = stream_rng(cfg.seed, "data")
    noise_rng = stream_rng(cfg.seed, "noise")
    lr_drop_step = int(cfg.steps * cfg.lr_drop_frac)
    prunes = cfg.variant != "none"
    records: list[StepRecord] = []

    for step in range(cfg.steps):
        alpha = alpha_at(step, cfg.schedule) if prunes else 0.0
        ctx = GradientContext()
        lifted = {k: ctx.tensor(v) for k, v in model.params.items()}
        total = None
        counts = []
        try:
            for _ in range(cfg.batch):
                sample = generate_sample(cfg, data_rng)
                pred, sel = forward(
                    model, sample, "train", alpha=alpha, rng=noise_rng, params=lifted
                )
                diff = sub(pred, sample.target[None, :])
                loss_i = mean_all(mul(diff, diff))
                total = loss_i if total is None else add(total, loss_i)
                counts.append(sel.retained_count if sel else cfg.l_visual)
            loss = mul(total, 1.0 / cfg.batch)
            loss_value = float(loss.value)
            if not np.isfinite(loss_value):
                raise TrainingDivergence(step, "loss is not finite")
            ctx.backward(loss)
        except FloatingPointError as exc:
            raise TrainingDivergence(step, str(exc)) from exc

        grads = {}
        for name in model.params:
            grad = lifted[name].grad
            if grad is None:
                raise RuntimeError(
                    f"parameter {name} received no gradient at step {step}"
                )
            grads[name] = grad
        if cfg.embed_lr_scale != 1.0:
            # the shared projection plays the role of a pretrained connector:
            # let it adapt, but slowly, or it rotates away the visual-language
            # alignment the parameter-free scorer reads before selection
            # stabilizes
            for name in grads:
                if name.startswith("embed."):
                    grads[name] = grads[name] * cfg.embed_lr_scale
        if cfg.grad_clip is not None:
            # global-norm clip: straight-through spikes otherwise feed the
            # momentum buffer and can run away within a handful of steps
            norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if norm > cfg.grad_clip:
                scale = cfg.grad_clip / norm
                grads = {k: g * scale for k, g in grads.items()}

        lr = cfg.lr * (0.1 if step >= lr_drop_step else 1.0)
        for name, value in model.params.items():
            vel = velocity[name]
            vel *= cfg.momentum
            vel += grads[name]
            value -= lr * vel
            if not np.isfinite(value).all():
                raise TrainingDivergence(step, f"parameter {name} is not finite")
        counts_arr = np.asarray(counts, dtype=float)
        records.append(
            StepRecord(
                step=step,
                loss=loss_value,
                retained_mean=float(counts_arr.mean()),
                retained_std=float(counts_arr.std(ddof=0)),
                alpha=float(alpha),
            )
        )

    final = evaluate_recovery(model, cfg.eval_episodes, stream_rng(cfg.seed, "eval"))
    report = TrainReport(steps=records, final=final, config=cfg, seed=cfg.seed)
    return model, report


def train(cfg: ToyConfig) -> TrainReport:
    """Train a toy model from scratch; see :class:`ToyConfig` for knobs."""
    _, report = train_model(cfg)
    return report


def evaluate_recovery(
    model: ToyModel,
    n_episodes: int,
    rng: np.random.Generator,
    jobs: int = 1,
) -> RecoveryMetrics:
    """Recall of the informative tokens, retention stats, and accuracy.

    Episodes draw from independently spawned generator streams, so results
    do not depend on evaluation order and parallel workers see identical
    data.
    """
    if n_episodes < 1:
        raise ValueError("need at least one evaluation episode")
    cfg = model.cfg
    streams = rng.spawn(n_episodes)

    def episode(ep_rng):
        sample = generate_sample(cfg, ep_rng)
        pred, sel = forward(model, sample, "infer")
        if sel is None:
            kept = set(range(cfg.l_visual))
        else:
            kept = set(sel.kept_indices)
        recall = len(sample.informative_set & kept) / len(sample.informative_set)
        acc = _accuracy(value_of(pred)[0], sample.target, cfg.accuracy_margin)
        return recall, len(kept), acc

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(episode, streams))
    else:
        results = [episode(s) for s in streams]

    recalls = np.array([r[0] for r in results])
    kept_counts = np.array([r[1] for r in results], dtype=float)
    accs = np.array([r[2] for r in results])
    return RecoveryMetrics(
        recall=float(recalls.mean()),
        retained_mean=float(kept_counts.mean()),
        retained_std=float(kept_counts.std(ddof=0)),
        accuracy=float(accs.mean()),
        n_episodes=n_episodes,
    )


@dataclass(frozen=True)
class ManipulationReport:
    """Paired accuracy deltas when the kept set is tampered with."""

    n_episodes: int
    base_accuracy: float
    add_accuracy: float
    remove_accuracy: float
    add_delta_mean: float
    add_delta_se: float
    remove_delta_mean: float
    remove_delta_se: float


def manipulation_study(
    model: ToyModel,
    n_episodes: int,
    rng: np.random.Generator,
    *,
    n_extra: int | None = None,
    removal_fraction: float = 0.1,
) -> ManipulationReport:
    """Paired comparison of the learned kept set against tampered versions.

    For each episode the model runs three times on the same sample: with
    its own selection, with extra random background tokens forced in, and
    with a fraction of its kept patches dropped.
    """
    cfg = model.cfg
    if n_extra is None:
        n_extra = cfg.n_informative
    streams = rng.spawn(n_episodes)
    base, added, removed = [], [], []
    for ep_rng in streams:
        sample = generate_sample(cfg, ep_rng)
        pred, sel = forward(model, sample, "infer")
        kept = set(sel.kept_indices) if sel else set(range(cfg.l_visual))
        base.append(_accuracy(value_of(pred)[0], sample.target, cfg.accuracy_margin))

        outside = sorted(set(range(1, cfg.l_visual)) - kept)
        extra = (
            ep_rng.choice(outside, size=min(n_extra, len(outside)), replace=False)
            if outside
            else []
        )
        with_extra = sorted(kept | set(int(i) for i in extra))
        pred_add, _ = forward(model, sample, "infer", kept_override=with_extra)
        added.append(
            _accuracy(value_of(pred_add)[0], sample.target, cfg.accuracy_margin)
        )

        patches = sorted(kept - {0})
        n_drop = max(1, round(removal_fraction * len(patches))) if patches else 0
        if n_drop:
            drop = set(
                int(i) for i in ep_rng.choice(patches, size=n_drop, replace=False)
            )
            kept_minus = sorted((kept - drop) | {0})
        else:
            kept_minus = sorted(kept)
        pred_rm, _ = forward(model, sample, "infer", kept_override=kept_minus)
        removed.append(
            _accuracy(value_of(pred_rm)[0], sample.target, cfg.accuracy_margin)
        )

    base_a = np.asarray(base)
    add_a = np.asarray(added)
    rm_a = np.asarray(removed)
    d_add = add_a - base_a
    d_rm = rm_a - base_a
    n = len(base_a)
    return ManipulationReport(
        n_episodes=n,
        base_accuracy=float(base_a.mean()),
        add_accuracy=float(add_a.mean()),
        remove_accuracy=float(rm_a.mean()),
        add_delta_mean=float(d_add.mean()),
        add_delta_se=float(d_add.std(ddof=0) / np.sqrt(n)),
        remove_delta_mean=float(d_rm.mean()),
        remove_delta_se=float(d_rm.std(ddof=0) / np.sqrt(n)),
    )


# ---------------------------------------------------------------------------
# report files


def config_lines(cfg: ToyConfig) -> list[str]:
    """Flat ``key = value`` echo of a config, schedule fields inlined."""
    fields = dataclasses.asdict(cfg)
    schedule = fields.pop("schedule")
    for key, val in schedule.items():
        fields[f"noise_{key}"] = val
    return [f"{key} = {fields[key]}" for key in sorted(fields)]


def write_train_report(report: TrainReport, path, extra_lines=()) -> tuple[str, str]:
    """Write the step trace as CSV and a text summary next to it.

    Floats are rendered with ``repr`` so identical runs produce identical
    bytes. ``extra_lines`` are appended verbatim to the summary (the
    runner uses this to echo its full invocation). Returns
    (csv_path, summary_path).
    """
    csv_path = pathlib.Path(path)
    summary_path = csv_path.with_suffix(".summary.txt")
    lines = ["step,loss,retained_mean,retained_std,alpha"]
    for r in report.steps:
        lines.append(
            f"{r.step},{r.loss!r},{r.retained_mean!r},{r.retained_std!r},{r.alpha!r}"
        )
    csv_path.write_text("\n".join(lines) + "\n")

    f = report.final
    out = ["[config]"]
    out.extend(config_lines(report.config))
    out.append("[result]")
    out.append(f"episodes = {f.n_episodes}")
    out.append(f"recall = {f.recall!r}")
    out.append(f"accuracy = {f.accuracy!r}")
    out.append(f"retained_mean = {f.retained_mean!r}")
    out.append(f"retained_std = {f.retained_std!r}")
    out.append(
        f"retained_tokens = {f.retained_mean:.1f}±{f.retained_std:.1f} tokens"
    )
    out.append(f"convergence_retained_mean = {report.convergence_retained_mean()!r}")
    out.extend(extra_lines)
    summary_path.write_text("\n".join(out) + "\n")
    return str(csv_path), str(summary_path)

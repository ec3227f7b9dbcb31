"""Dual-encoder contrastive trainer with model-based sub-batch selection.

Each step scores a super-batch of candidate pairs against cached reference
embeddings, selects a sub-batch under the configured policy, and applies one
Adam update on the contrastive loss of the selection.  Selection is
gradient-isolated: only the chosen indices flow into the update.

Encoders are single linear layers followed by row L2 normalization.  The
"approximate" resolution coarsens inputs by averaging adjacent feature
pairs and applies the matching coarsened (adjacent-pair-summed) weight
rows, giving a cheaper forward pass whose outputs stay correlated with the
full-resolution ones.  A feature-dropping variant (fixed even-index subset)
is available for comparing approximation strategies.  Only the image
pathway is ever approximated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .contrastive import (
    SIGMOID,
    SOFTMAX,
    ContrastiveParams,
    EmbeddingBatch,
    grad_sigmoid_nll_raw,
    grad_softmax_nll_raw,
    sigmoid_nll,
    sigmoid_nll_raw,
    softmax_nll_raw,
    unconditional_loss,
    unit_rows,
)
from .flops import COST_KINDS, FlopModel
from .sampling import (
    SelectionConfig,
    SubBatchSelection,
    independent_sample,
    jointly_sample_sigmoid,
    jointly_sample_softmax,
    resolve_sub_batch,
    softmax_pair_scores,
    uniform_sample,
)
from .scoring import (
    CHECKPOINT_MAGIC,
    ReferenceCache,
    build_scores,
    read_envelope,
    write_envelope,
)

RES_FULL = "full"
RES_APPROX = "approximate"
RESOLUTIONS = (RES_FULL, RES_APPROX)

APPROX_RESIZE = "resize"
APPROX_DROP = "drop"
APPROX_MODES = (APPROX_RESIZE, APPROX_DROP)

POLICY_JOINT = "joint"
POLICY_INDEPENDENT = "independent"
POLICY_UNIFORM = "uniform"
POLICIES = (POLICY_JOINT, POLICY_INDEPENDENT, POLICY_UNIFORM)


@dataclass(frozen=True)
class DualEncoderParams:
    """Linear image/text encoders plus the contrastive head."""

    image_weights: np.ndarray
    text_weights: np.ndarray
    head: ContrastiveParams

    def __post_init__(self) -> None:
        img = np.asarray(self.image_weights, dtype=np.float64)
        txt = np.asarray(self.text_weights, dtype=np.float64)
        if img.ndim != 2 or txt.ndim != 2:
            raise ValueError("encoder weights must be 2-D [input_dim, d]")
        if img.shape[1] != txt.shape[1]:
            raise ValueError(
                f"embedding dimension mismatch: {img.shape[1]} vs {txt.shape[1]}"
            )
        if not (np.isfinite(img).all() and np.isfinite(txt).all()):
            raise ValueError("encoder weights must be finite")
        object.__setattr__(self, "image_weights", img)
        object.__setattr__(self, "text_weights", txt)

    @property
    def embed_dim(self) -> int:
        return self.image_weights.shape[1]


def init_dual_encoder(
    input_dim: int,
    embed_dim: int,
    rng: np.random.Generator,
    head: ContrastiveParams | None = None,
) -> DualEncoderParams:
    """Random dual encoder with 1/sqrt(input_dim)-scaled weights."""
    scale = 1.0 / math.sqrt(input_dim)
    image_weights = rng.normal(0.0, scale, size=(input_dim, embed_dim))
    text_weights = rng.normal(0.0, scale, size=(input_dim, embed_dim))
    if head is None:
        head = ContrastiveParams(alpha=10.0, beta=-10.0, t=10.0)
    return DualEncoderParams(image_weights, text_weights, head)


def _coarsen_inputs(inputs: np.ndarray, approx_mode: str) -> np.ndarray:
    if inputs.shape[1] % 2 != 0:
        raise ValueError(
            f"approximate encoding needs an even input width, got {inputs.shape[1]}"
        )
    if approx_mode == APPROX_RESIZE:
        return 0.5 * (inputs[:, 0::2] + inputs[:, 1::2])
    if approx_mode == APPROX_DROP:
        return inputs[:, 0::2]
    raise ValueError(f"unknown approximation mode {approx_mode!r}")


def _coarsen_weights(weights: np.ndarray, approx_mode: str) -> np.ndarray:
    if weights.shape[0] % 2 != 0:
        raise ValueError(
            f"approximate encoding needs an even input width, got {weights.shape[0]}"
        )
    if approx_mode == APPROX_RESIZE:
        return weights[0::2] + weights[1::2]
    if approx_mode == APPROX_DROP:
        return weights[0::2]
    raise ValueError(f"unknown approximation mode {approx_mode!r}")


def encode_features(
    weights: np.ndarray,
    inputs: np.ndarray,
    resolution: str = RES_FULL,
    approx_mode: str = APPROX_RESIZE,
) -> np.ndarray:
    """Linear map plus row L2 normalization for one modality.

    At approximate resolution the inputs are coarsened to half width and the
    matching coarsened weights are applied.  All-zero rows normalize to the
    first basis vector rather than NaN.
    """
    weights = np.asarray(weights, dtype=np.float64)
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2:
        raise ValueError(f"inputs must be 2-D [n, input_dim], got {inputs.shape}")
    if resolution not in RESOLUTIONS:
        raise ValueError(f"unknown resolution {resolution!r}")
    if resolution == RES_APPROX:
        inputs = _coarsen_inputs(inputs, approx_mode)
        weights = _coarsen_weights(weights, approx_mode)
    if inputs.shape[1] != weights.shape[0]:
        raise ValueError(
            f"input width {inputs.shape[1]} does not match weight rows "
            f"{weights.shape[0]}"
        )
    return unit_rows(inputs @ weights)


def encode_features_vjp(
    weights: np.ndarray,
    inputs: np.ndarray,
    grad_embeds: np.ndarray,
    resolution: str = RES_FULL,
    approx_mode: str = APPROX_RESIZE,
) -> np.ndarray:
    """Gradient of encode_features with respect to the full-width weights.

    Backpropagates through the row normalization (zero-row guard rows get a
    zero gradient) and, at approximate resolution, expands the coarsened
    weight gradient back onto the full weight matrix.
    """
    weights = np.asarray(weights, dtype=np.float64)
    inputs = np.asarray(inputs, dtype=np.float64)
    grad_embeds = np.asarray(grad_embeds, dtype=np.float64)
    if resolution == RES_APPROX:
        inputs_eff = _coarsen_inputs(inputs, approx_mode)
        weights_eff = _coarsen_weights(weights, approx_mode)
    else:
        inputs_eff = inputs
        weights_eff = weights
    pre = inputs_eff @ weights_eff
    norms = np.linalg.norm(pre, axis=1)
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    unit = pre / safe[:, None]
    grad_pre = (grad_embeds - unit * np.sum(unit * grad_embeds, axis=1, keepdims=True))
    grad_pre /= safe[:, None]
    if np.any(zero):
        grad_pre[zero] = 0.0
    grad_eff = inputs_eff.T @ grad_pre
    if resolution == RES_FULL:
        return grad_eff
    if approx_mode == APPROX_RESIZE:
        return np.repeat(grad_eff, 2, axis=0)
    grad_full = np.zeros_like(weights)
    grad_full[0::2] = grad_eff
    return grad_full


def encode(
    params: DualEncoderParams,
    inputs: tuple[np.ndarray, np.ndarray],
    resolution: str = RES_FULL,
    approx_mode: str = APPROX_RESIZE,
) -> EmbeddingBatch:
    """Encode paired (image_inputs, text_inputs) into an EmbeddingBatch.

    The resolution applies to the image pathway; text is always encoded at
    full resolution.
    """
    image_inputs, text_inputs = inputs
    image_embeds = encode_features(
        params.image_weights, image_inputs, resolution, approx_mode
    )
    text_embeds = encode_features(params.text_weights, text_inputs, RES_FULL)
    return EmbeddingBatch(image_embeds, text_embeds)


# ---------------------------------------------------------------------------
# Adam with decoupled weight decay and global-norm clipping


@dataclass
class AdamState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]


def init_adam(params: dict[str, np.ndarray]) -> AdamState:
    zeros = {k: np.zeros_like(np.asarray(p, dtype=np.float64)) for k, p in params.items()}
    return AdamState(
        step=0,
        m=zeros,
        v={k: np.zeros_like(z) for k, z in zeros.items()},
    )


def global_norm(tensors: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g))) for g in tensors.values()))


def adam_update(
    params: dict[str, np.ndarray],
    state: AdamState,
    grads: dict[str, np.ndarray],
    learning_rate: float,
    beta1: float = 0.9,
    beta2: float = 0.95,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
    grad_clip_norm: float | None = 1.0,
) -> tuple[dict[str, np.ndarray], AdamState, bool]:
    """One Adam step; returns (new_params, new_state, skipped).

    Gradients are clipped to a maximum global norm before the moment
    updates; weight decay is decoupled from the moments.  Steps with any
    non-finite gradient are skipped (parameters and moments unchanged) and
    flagged via the returned bool.
    """
    if params.keys() != grads.keys():
        raise ValueError("parameter and gradient keys differ")
    for g in grads.values():
        if not np.isfinite(g).all():
            return params, state, True
    if grad_clip_norm is not None:
        norm = global_norm(grads)
        if norm > grad_clip_norm:
            scale = grad_clip_norm / norm
            grads = {k: g * scale for k, g in grads.items()}
    t = state.step + 1
    new_m = {}
    new_v = {}
    new_params = {}
    bias1 = 1.0 - beta1**t
    bias2 = 1.0 - beta2**t
    for key, p in params.items():
        g = np.asarray(grads[key], dtype=np.float64)
        m = beta1 * state.m[key] + (1.0 - beta1) * g
        v = beta2 * state.v[key] + (1.0 - beta2) * np.square(g)
        m_hat = m / bias1
        v_hat = v / bias2
        step_dir = m_hat / (np.sqrt(v_hat) + eps)
        if weight_decay != 0.0:
            step_dir = step_dir + weight_decay * np.asarray(p, dtype=np.float64)
        new_params[key] = np.asarray(p, dtype=np.float64) - learning_rate * step_dir
        new_m[key] = m
        new_v[key] = v
    return new_params, AdamState(step=t, m=new_m, v=new_v), False


def learning_rate_at(
    step: int, total_steps: int, base_rate: float, warmup_fraction: float
) -> float:
    """Linear warmup over the first warmup fraction, then cosine decay to 0."""
    if total_steps < 1:
        raise ValueError(f"total_steps must be >= 1, got {total_steps}")
    warmup_steps = int(round(warmup_fraction * total_steps)) if warmup_fraction > 0 else 0
    if warmup_steps > 0 and step < warmup_steps:
        return base_rate * (step + 1) / warmup_steps
    decay_span = max(1, total_steps - warmup_steps)
    progress = min(1.0, (step - warmup_steps) / decay_span)
    return 0.5 * base_rate * (1.0 + math.cos(math.pi * progress))


# ---------------------------------------------------------------------------
# Training configuration and per-step records


@dataclass(frozen=True)
class TrainConfig:
    """Everything one training run needs besides data and seeds."""

    steps: int
    super_batch_size: int
    sub_batch_size: int
    selection: SelectionConfig
    selection_policy: str = POLICY_JOINT
    loss_kind: str = SIGMOID
    approx_fraction: float = 0.0
    approx_factor: float = 0.28
    approx_scoring: bool = False
    approx_mode: str = APPROX_RESIZE
    cost_kind: str = "jest"
    learning_rate: float = 1e-3
    warmup_fraction: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.95
    weight_decay: float = 1e-4
    grad_clip_norm: float = 1.0
    train_head: bool = True
    reweight_selected: bool = False

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.sub_batch_size < 1 or self.sub_batch_size > self.super_batch_size:
            raise ValueError(
                f"need 1 <= sub_batch_size <= super_batch_size, got "
                f"{self.sub_batch_size} and {self.super_batch_size}"
            )
        if self.selection_policy not in POLICIES:
            raise ValueError(f"unknown selection policy {self.selection_policy!r}")
        if self.loss_kind not in (SIGMOID, SOFTMAX):
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")
        if not (0.0 <= self.approx_fraction <= 1.0):
            raise ValueError(
                f"approx_fraction must lie in [0, 1], got {self.approx_fraction}"
            )
        approx_count = self.approx_fraction * self.sub_batch_size
        if abs(approx_count - round(approx_count)) > 1e-9:
            raise ValueError(
                f"approx_fraction {self.approx_fraction} does not split "
                f"sub_batch_size {self.sub_batch_size} into whole items"
            )
        if self.approx_mode not in APPROX_MODES:
            raise ValueError(f"unknown approximation mode {self.approx_mode!r}")
        if self.cost_kind not in COST_KINDS:
            raise ValueError(f"unknown cost kind {self.cost_kind!r}")
        if self.selection_policy == POLICY_JOINT:
            # Fail configuration-time, not step-time, on bad chunking.
            resolve_sub_batch(self.effective_selection(), self.super_batch_size)

    def effective_selection(self) -> SelectionConfig:
        """Selection config with the trainer's explicit sub-batch size."""
        return replace(self.selection, sub_batch_size=self.sub_batch_size)

    @property
    def filter_ratio(self) -> float:
        return 1.0 - self.sub_batch_size / self.super_batch_size

    def flop_model(self) -> FlopModel:
        return FlopModel(
            super_batch_size=self.super_batch_size,
            sub_batch_size=self.sub_batch_size,
            approx_factor=self.approx_factor,
            approx_fraction=self.approx_fraction,
        )


@dataclass(frozen=True)
class TrainMetrics:
    """One row of the per-step training record."""

    step: int
    loss: float
    mean_selected_score: float
    eval_i2t_top1: float
    eval_t2i_top1: float
    cumulative_flops: float
    skipped: bool = False


@dataclass
class TrainState:
    """Optimizer state plus step/cost counters threaded through train_step."""

    adam: AdamState
    step: int = 0
    cumulative_flops: float = 0.0
    skipped_steps: int = 0


def _trainable_params(
    learner: DualEncoderParams, cfg: TrainConfig
) -> dict[str, np.ndarray]:
    params: dict[str, np.ndarray] = {
        "image_weights": learner.image_weights,
        "text_weights": learner.text_weights,
    }
    if cfg.train_head:
        if cfg.loss_kind == SIGMOID:
            # Temperature trained in log space so positivity is structural.
            params["log_alpha"] = np.array(math.log(learner.head.alpha))
            params["beta"] = np.array(learner.head.beta)
        else:
            params["log_t"] = np.array(math.log(learner.head.t))
    return params


def _rebuild_learner(
    learner: DualEncoderParams, params: dict[str, np.ndarray], cfg: TrainConfig
) -> DualEncoderParams:
    head = learner.head
    if cfg.train_head:
        if cfg.loss_kind == SIGMOID:
            head = replace(
                head,
                alpha=float(np.exp(params["log_alpha"])),
                beta=float(params["beta"]),
            )
        else:
            head = replace(head, t=float(np.exp(params["log_t"])))
    return DualEncoderParams(params["image_weights"], params["text_weights"], head)


def init_train_state(learner: DualEncoderParams, cfg: TrainConfig) -> TrainState:
    return TrainState(adam=init_adam(_trainable_params(learner, cfg)))


def approx_positions(sub_batch_size: int, approx_fraction: float) -> np.ndarray:
    """Positions within the selection routed to the approximate encoder.

    Spreads round(lambda * b) positions evenly (integer Bresenham); at
    lambda = 0.5 this is exactly the odd positions, so the full half is the
    even-position half.
    """
    b = sub_batch_size
    count = int(round(approx_fraction * b))
    ks = np.arange(b, dtype=np.int64)
    return np.flatnonzero(((ks + 1) * count) // b > (ks * count) // b)


def select_sub_batch(
    learner: DualEncoderParams,
    reference_cache: ReferenceCache | None,
    image_inputs: np.ndarray,
    text_inputs: np.ndarray,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> SubBatchSelection:
    """Score the super-batch and pick a sub-batch; no gradients flow here."""
    n = image_inputs.shape[0]
    if n != cfg.super_batch_size:
        raise ValueError(
            f"super-batch has {n} rows but config says {cfg.super_batch_size}"
        )
    if cfg.selection_policy == POLICY_UNIFORM:
        return uniform_sample(n, cfg.sub_batch_size, rng)
    if reference_cache is None:
        raise ValueError("prioritized selection requires a reference cache")
    if reference_cache.n != n:
        raise ValueError(
            f"reference cache covers {reference_cache.n} rows, batch has {n}"
        )
    if reference_cache.d != learner.embed_dim:
        raise ValueError(
            f"reference cache dimension {reference_cache.d} does not match "
            f"learner dimension {learner.embed_dim}"
        )
    scoring_resolution = RES_APPROX if cfg.approx_scoring else RES_FULL
    learner_batch = encode(
        learner, (image_inputs, text_inputs), scoring_resolution, cfg.approx_mode
    )
    reference_batch = reference_cache.to_batch()
    sel_cfg = cfg.effective_selection()
    if cfg.loss_kind == SIGMOID:
        _, learner_nll = sigmoid_nll(learner.head, learner_batch)
        _, reference_nll = sigmoid_nll(reference_cache.params, reference_batch)
        scores = build_scores(
            learner_nll, reference_nll, sel_cfg.method, sel_cfg.gain
        )
        if cfg.selection_policy == POLICY_INDEPENDENT:
            return independent_sample(scores, sel_cfg, rng)
        return jointly_sample_sigmoid(scores, sel_cfg, rng)
    if cfg.selection_policy == POLICY_INDEPENDENT:
        scores = softmax_pair_scores(
            learner_batch,
            reference_batch,
            learner.head,
            reference_cache.params,
            sel_cfg.gain,
        )
        return independent_sample(scores, sel_cfg, rng)
    return jointly_sample_softmax(
        learner_batch,
        reference_batch,
        learner.head,
        reference_cache.params,
        sel_cfg,
        rng,
    )


def _selection_weights(
    learner: DualEncoderParams,
    reference_cache: ReferenceCache,
    image_inputs: np.ndarray,
    text_inputs: np.ndarray,
    cfg: TrainConfig,
) -> np.ndarray:
    """Mean-one inverse-propensity weights from diagonal selection scores.

    Uses the first-chunk marginal (exp of the gain-scaled diagonal score) as
    the propensity.  Off by default; enabled by ``reweight_selected``.
    """
    batch = encode(learner, (image_inputs, text_inputs))
    learner_diag = unconditional_loss(batch, learner.head, cfg.loss_kind)
    reference_diag = unconditional_loss(
        reference_cache.to_batch(), reference_cache.params, cfg.loss_kind
    )
    method = cfg.selection.method
    if method == "learnability":
        diag = learner_diag - reference_diag
    elif method == "easy_ref":
        diag = -reference_diag
    else:
        diag = learner_diag
    logits = cfg.selection.gain * diag
    logits = logits - logits.max()
    propensity = np.exp(logits)
    propensity /= propensity.sum()
    weights = 1.0 / (propensity * propensity.size)
    return weights / weights.mean()


def train_on_selection(
    learner: DualEncoderParams,
    image_inputs: np.ndarray,
    text_inputs: np.ndarray,
    cfg: TrainConfig,
    adam_state: AdamState,
    learning_rate: float,
    weights: np.ndarray | None = None,
) -> tuple[DualEncoderParams, AdamState, float, bool]:
    """One Adam update on the contrastive loss of the given pairs.

    The image half routed to the approximate encoder is interleaved per
    ``approx_positions``; the loss is computed jointly over the concatenated
    embeddings (full half first, approximate half second).
    """
    b = image_inputs.shape[0]
    approx_pos = approx_positions(b, cfg.approx_fraction)
    full_mask = np.ones(b, dtype=bool)
    full_mask[approx_pos] = False
    full_pos = np.flatnonzero(full_mask)
    order = np.concatenate([full_pos, approx_pos])

    image_ordered = image_inputs[order]
    text_ordered = text_inputs[order]
    n_full = full_pos.size

    z_img_full = encode_features(learner.image_weights, image_ordered[:n_full])
    if approx_pos.size:
        z_img_approx = encode_features(
            learner.image_weights,
            image_ordered[n_full:],
            RES_APPROX,
            cfg.approx_mode,
        )
        z_img = np.concatenate([z_img_full, z_img_approx], axis=0)
    else:
        z_img = z_img_full
    z_txt = encode_features(learner.text_weights, text_ordered)

    ordered_weights = None if weights is None else np.asarray(weights)[order]
    if cfg.loss_kind == SIGMOID:
        loss, _ = sigmoid_nll_raw(learner.head, z_img, z_txt, ordered_weights)
        d_img, d_txt, d_alpha, d_beta = grad_sigmoid_nll_raw(
            learner.head, z_img, z_txt, ordered_weights
        )
        head_grads = {
            "log_alpha": np.array(d_alpha * learner.head.alpha),
            "beta": np.array(d_beta),
        }
    else:
        loss, _, _ = softmax_nll_raw(
            learner.head, z_img, z_txt, weights=ordered_weights
        )
        d_img, d_txt, d_t = grad_softmax_nll_raw(
            learner.head, z_img, z_txt, ordered_weights
        )
        head_grads = {"log_t": np.array(d_t * learner.head.t)}

    grad_img = encode_features_vjp(
        learner.image_weights, image_ordered[:n_full], d_img[:n_full]
    )
    if approx_pos.size:
        grad_img = grad_img + encode_features_vjp(
            learner.image_weights,
            image_ordered[n_full:],
            d_img[n_full:],
            RES_APPROX,
            cfg.approx_mode,
        )
    grad_txt = encode_features_vjp(learner.text_weights, text_ordered, d_txt)

    grads: dict[str, np.ndarray] = {
        "image_weights": grad_img,
        "text_weights": grad_txt,
    }
    params = _trainable_params(learner, cfg)
    if cfg.train_head:
        grads.update(head_grads)

    new_params, new_state, skipped = adam_update(
        params,
        adam_state,
        grads,
        learning_rate,
        beta1=cfg.adam_beta1,
        beta2=cfg.adam_beta2,
        weight_decay=cfg.weight_decay,
        grad_clip_norm=cfg.grad_clip_norm,
    )
    if skipped:
        return learner, new_state, float(loss), True
    return _rebuild_learner(learner, new_params, cfg), new_state, float(loss), False


def train_step(
    learner: DualEncoderParams,
    reference_cache: ReferenceCache | None,
    batch_inputs: tuple[np.ndarray, np.ndarray],
    cfg: TrainConfig,
    state: TrainState,
    rng: np.random.Generator,
) -> tuple[DualEncoderParams, TrainState, TrainMetrics]:
    """Score, select, and update once.

    Returns the updated learner, the advanced state, and a metrics row whose
    evaluation fields are zero placeholders (filled in by the caller after
    running retrieval evaluation).
    """
    image_inputs = np.asarray(batch_inputs[0], dtype=np.float64)
    text_inputs = np.asarray(batch_inputs[1], dtype=np.float64)
    if image_inputs.shape[0] != text_inputs.shape[0]:
        raise ValueError("image/text input row counts differ")
    selection = select_sub_batch(
        learner, reference_cache, image_inputs, text_inputs, cfg, rng
    )
    weights = None
    if (
        cfg.reweight_selected
        and cfg.selection_policy != POLICY_UNIFORM
        and reference_cache is not None
    ):
        weights = _selection_weights(
            learner, reference_cache, image_inputs, text_inputs, cfg
        )[selection.indices]
    learning_rate = learning_rate_at(
        state.step, cfg.steps, cfg.learning_rate, cfg.warmup_fraction
    )
    new_learner, new_adam, loss, skipped = train_on_selection(
        learner,
        image_inputs[selection.indices],
        text_inputs[selection.indices],
        cfg,
        state.adam,
        learning_rate,
        weights,
    )
    step_flops = cfg.flop_model().cost_per_step(cfg.cost_kind)
    new_state = TrainState(
        adam=new_adam,
        step=state.step + 1,
        cumulative_flops=state.cumulative_flops + step_flops,
        skipped_steps=state.skipped_steps + int(skipped),
    )
    metrics = TrainMetrics(
        step=state.step,
        loss=loss,
        mean_selected_score=selection.joint_score,
        eval_i2t_top1=0.0,
        eval_t2i_top1=0.0,
        cumulative_flops=new_state.cumulative_flops,
        skipped=skipped,
    )
    return new_learner, new_state, metrics


def evaluate(
    learner: DualEncoderParams, holdout_pairs: tuple[np.ndarray, np.ndarray]
) -> tuple[float, float]:
    """Top-1 retrieval in both directions on a held-out paired set."""
    image_inputs, text_inputs = holdout_pairs
    image_inputs = np.asarray(image_inputs, dtype=np.float64)
    if image_inputs.shape[0] < 1:
        raise ValueError("holdout set is empty")
    batch = encode(learner, (image_inputs, text_inputs))
    similarity = batch.image_embeds @ batch.text_embeds.T
    targets = np.arange(batch.n)
    i2t = float(np.mean(np.argmax(similarity, axis=1) == targets))
    t2i = float(np.mean(np.argmax(similarity, axis=0) == targets))
    return i2t, t2i


def save_checkpoint(params: DualEncoderParams, path) -> None:
    """Write encoder weights and head to the binary checkpoint envelope."""
    write_envelope(
        path,
        CHECKPOINT_MAGIC,
        params.image_weights,
        params.text_weights,
        (params.head.alpha, params.head.beta, params.head.t),
    )


def load_checkpoint(path) -> DualEncoderParams:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    img, txt, (alpha, beta, t) = read_envelope(path, CHECKPOINT_MAGIC)
    return DualEncoderParams(
        img.astype(np.float64),
        txt.astype(np.float64),
        ContrastiveParams(alpha=alpha, beta=beta, t=t),
    )

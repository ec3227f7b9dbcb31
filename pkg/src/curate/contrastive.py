"""Pairwise contrastive losses over image/text embedding batches.

Implements the sigmoid and softmax contrastive objectives on a pair of
row-aligned embedding matrices, the per-pair loss matrices whose sub-matrix
sums define batch-level selection scores, the diagonal-only (unconditional)
losses used to seed joint sub-batch sampling, and analytic gradients for the
linear dual-encoder trainer.

Conventions:

* Embeddings are L2-normalized at construction, so every raw dot product
  lies in [-1, 1] before temperature scaling.
* Sigmoid logits are ``alpha * <z_img, z_txt> + beta``.  The per-pair loss is
  ``-log sigmoid(m * logits)`` with ``m = +1`` on the diagonal (matched
  pairs) and ``-1`` elsewhere.
* Softmax logits are ``t * <z_img, z_txt>``.  The per-example loss averages
  the image-to-text and text-to-image cross-entropy halves; the negative
  sets may be restricted with a 0/1 mask, implemented as a ``-1e8`` additive
  penalty on masked-out entries.

All functions are pure; none mutate their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp, softmax

SIGMOID = "sigmoid"
SOFTMAX = "softmax"
LOSS_KINDS = (SIGMOID, SOFTMAX)

# Additive suppression for entries excluded from a negative set.  Large
# enough that exp(x - MASK_PENALTY) underflows to zero for any logit this
# module produces, small enough to stay finite in float64.
MASK_PENALTY = 1e8


def unit_rows(x: np.ndarray) -> np.ndarray:
    """L2-normalize the rows of ``x``.

    All-zero rows cannot be normalized; they are mapped to the first basis
    vector so downstream code never sees NaN.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {x.shape}")
    norms = np.linalg.norm(x, axis=1)
    zero = norms == 0.0
    out = x / np.where(zero, 1.0, norms)[:, None]
    if np.any(zero):
        out[zero] = 0.0
        out[zero, 0] = 1.0
    return out


def log_sigmoid(x: np.ndarray) -> np.ndarray:
    """log(sigmoid(x)), stable for |x| up to at least 1e4."""
    return -np.logaddexp(0.0, -np.asarray(x, dtype=np.float64))


def softplus(x: np.ndarray) -> np.ndarray:
    """log(1 + exp(x)), stable for |x| up to at least 1e4."""
    return np.logaddexp(0.0, np.asarray(x, dtype=np.float64))


@dataclass(frozen=True)
class EmbeddingBatch:
    """Row-aligned, unit-normalized image/text embeddings for one batch.

    Row i of ``image_embeds`` and row i of ``text_embeds`` form a matched
    pair.  Rows are L2-normalized at construction.
    """

    image_embeds: np.ndarray
    text_embeds: np.ndarray

    def __post_init__(self) -> None:
        img = np.asarray(self.image_embeds, dtype=np.float64)
        txt = np.asarray(self.text_embeds, dtype=np.float64)
        if img.ndim != 2 or txt.ndim != 2:
            raise ValueError("embeddings must be 2-D [n, d] matrices")
        if img.shape != txt.shape:
            raise ValueError(
                f"image/text embedding shape mismatch: {img.shape} vs {txt.shape}"
            )
        n, d = img.shape
        if n < 1 or d < 1:
            raise ValueError(f"batch requires n >= 1 and d >= 1, got n={n}, d={d}")
        if not (np.isfinite(img).all() and np.isfinite(txt).all()):
            raise ValueError("embeddings must be finite")
        object.__setattr__(self, "image_embeds", unit_rows(img))
        object.__setattr__(self, "text_embeds", unit_rows(txt))

    @property
    def n(self) -> int:
        return self.image_embeds.shape[0]

    @property
    def d(self) -> int:
        return self.image_embeds.shape[1]

    def take(self, indices: np.ndarray) -> "EmbeddingBatch":
        """Sub-batch restricted to ``indices`` (rows kept in the given order)."""
        idx = np.asarray(indices, dtype=np.int64)
        return EmbeddingBatch(self.image_embeds[idx], self.text_embeds[idx])


@dataclass(frozen=True)
class ContrastiveParams:
    """Temperature and bias of a contrastive head.

    ``alpha`` scales sigmoid logits and ``beta`` shifts them; ``t`` scales
    softmax logits.  Both temperatures must be positive.
    """

    alpha: float = 1.0
    beta: float = 0.0
    t: float = 1.0

    def __post_init__(self) -> None:
        for name in ("alpha", "beta", "t"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
        if self.alpha <= 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.t <= 0.0:
            raise ValueError(f"t must be positive, got {self.t}")


@dataclass(frozen=True)
class LossMatrix:
    """Per-pair loss matrix; entry (i, j) couples image i with text j."""

    values: np.ndarray
    loss_kind: str

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError(f"loss matrix must be square, got shape {values.shape}")
        if not np.isfinite(values).all():
            raise ValueError("loss matrix entries must be finite")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")
        if self.loss_kind == SIGMOID and np.any(values < 0.0):
            raise ValueError("sigmoid loss entries must be non-negative")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]


def _check_kind(kind: str) -> None:
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


def pairwise_logits_raw(
    params: ContrastiveParams,
    image_embeds: np.ndarray,
    text_embeds: np.ndarray,
    kind: str = SIGMOID,
) -> np.ndarray:
    """Logit matrix from raw embedding arrays (no normalization applied)."""
    _check_kind(kind)
    img = np.asarray(image_embeds, dtype=np.float64)
    txt = np.asarray(text_embeds, dtype=np.float64)
    if img.ndim != 2 or txt.ndim != 2 or img.shape != txt.shape:
        raise ValueError(
            f"image/text embedding shape mismatch: {img.shape} vs {txt.shape}"
        )
    dots = img @ txt.T
    if kind == SIGMOID:
        return params.alpha * dots + params.beta
    return params.t * dots


def pairwise_logits(
    batch: EmbeddingBatch, params: ContrastiveParams, kind: str = SIGMOID
) -> np.ndarray:
    """Logit matrix: entry (i, j) is alpha*<z_img_i, z_txt_j> + beta for the
    sigmoid kind and t*<z_img_i, z_txt_j> for the softmax kind."""
    return pairwise_logits_raw(params, batch.image_embeds, batch.text_embeds, kind)


def _sign_matrix(n: int) -> np.ndarray:
    sign = np.full((n, n), -1.0)
    np.fill_diagonal(sign, 1.0)
    return sign


def sigmoid_nll_raw(
    params: ContrastiveParams,
    image_embeds: np.ndarray,
    text_embeds: np.ndarray,
    weights: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Sigmoid contrastive loss on raw embedding arrays.

    Returns ``(scalar, nll_mat)`` where ``nll_mat[i, j] =
    -log sigmoid(m_ij * logits_ij)`` and the scalar is the mean over rows of
    the row sums.  ``weights``, if given, re-weights rows (mean of weighted
    row sums).
    """
    logits = pairwise_logits_raw(params, image_embeds, text_embeds, SIGMOID)
    n = logits.shape[0]
    nll_mat = -log_sigmoid(_sign_matrix(n) * logits)
    row_sums = nll_mat.sum(axis=-1)
    if weights is not None:
        row_sums = row_sums * np.asarray(weights, dtype=np.float64)
    return float(row_sums.mean()), nll_mat


def sigmoid_nll(
    params: ContrastiveParams, batch: EmbeddingBatch
) -> tuple[float, LossMatrix]:
    """Sigmoid contrastive loss of a batch.

    The row sum of row i is the conditional loss of example i given the
    batch; the scalar is the mean of the row sums.
    """
    scalar, nll_mat = sigmoid_nll_raw(params, batch.image_embeds, batch.text_embeds)
    return scalar, LossMatrix(nll_mat, SIGMOID)


def _validate_mask(mask: np.ndarray, n: int) -> np.ndarray:
    m = np.asarray(mask, dtype=np.float64).reshape(-1)
    if m.shape[0] != n:
        raise ValueError(f"mask length {m.shape[0]} does not match batch size {n}")
    if not np.all((m == 0.0) | (m == 1.0)):
        raise ValueError("mask must be 0/1-valued")
    if m.sum() < 1.0:
        raise ValueError("mask selects no entries: empty negative set")
    return m


def softmax_nll_raw(
    params: ContrastiveParams,
    image_embeds: np.ndarray,
    text_embeds: np.ndarray,
    sampled_mask: np.ndarray | None = None,
    weights: np.ndarray | None = None,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Softmax contrastive loss on raw embedding arrays.

    Per example i the loss is
    ``-0.5 * ((logit_ii - lse_col_i) + (logit_ii - lse_row_i))`` where the
    log-sum-exps run over the image axis (columns) and text axis (rows).
    When ``sampled_mask`` is given, entries with mask 0 are suppressed from
    the negative sets by an additive -1e8 penalty.

    Returns ``(scalar, neg_logits, neg_logit_matrix)`` with
    ``neg_logits[i] = 0.5 * (lse_col_i + lse_row_i)`` and the negated logit
    matrix as the last element.
    """
    logits = pairwise_logits_raw(params, image_embeds, text_embeds, SOFTMAX)
    n = logits.shape[0]
    if sampled_mask is not None:
        m = _validate_mask(sampled_mask, n)
        col_in = logits - (1.0 - m)[:, None] * MASK_PENALTY
        row_in = logits - (1.0 - m)[None, :] * MASK_PENALTY
    else:
        col_in = logits
        row_in = logits
    lse_col = logsumexp(col_in, axis=0)
    lse_row = logsumexp(row_in, axis=1)
    diag = np.diag(logits)
    per_example = -0.5 * ((diag - lse_col) + (diag - lse_row))
    if weights is not None:
        per_example = per_example * np.asarray(weights, dtype=np.float64)
    neg_logits = 0.5 * (lse_col + lse_row)
    return float(per_example.mean()), neg_logits, -logits


def softmax_nll(
    params: ContrastiveParams,
    batch: EmbeddingBatch,
    sampled_mask: np.ndarray | None = None,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Softmax contrastive loss of a batch; see :func:`softmax_nll_raw`."""
    return softmax_nll_raw(
        params, batch.image_embeds, batch.text_embeds, sampled_mask=sampled_mask
    )


def unconditional_loss(
    batch: EmbeddingBatch, params: ContrastiveParams, kind: str = SIGMOID
) -> np.ndarray:
    """Per-example loss with an empty negative set (self-similarity only).

    For the sigmoid kind this equals the diagonal of the sigmoid loss
    matrix: ``softplus(-(alpha * <z_img_i, z_txt_i> + beta))``.  For the
    softmax kind it is ``-t * <z_img_i, z_txt_i>``.
    """
    _check_kind(kind)
    self_dots = np.sum(batch.image_embeds * batch.text_embeds, axis=1)
    if kind == SIGMOID:
        return softplus(-(params.alpha * self_dots + params.beta))
    return -params.t * self_dots


def grad_sigmoid_nll_raw(
    params: ContrastiveParams,
    image_embeds: np.ndarray,
    text_embeds: np.ndarray,
    weights: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Analytic gradients of the scalar sigmoid loss.

    The embedding matrices are treated as free variables (no normalization
    Jacobian).  Returns gradients with respect to image embeddings, text
    embeddings, alpha, and beta.
    """
    img = np.asarray(image_embeds, dtype=np.float64)
    txt = np.asarray(text_embeds, dtype=np.float64)
    logits = pairwise_logits_raw(params, img, txt, SIGMOID)
    n = logits.shape[0]
    sign = _sign_matrix(n)
    # d(scalar)/d(logits): scalar = mean_i sum_j -log sigmoid(m * logits)
    d_logits = -(sign * expit(-sign * logits)) / n
    if weights is not None:
        d_logits = d_logits * np.asarray(weights, dtype=np.float64)[:, None]
    dots = img @ txt.T
    d_dots = params.alpha * d_logits
    d_img = d_dots @ txt
    d_txt = d_dots.T @ img
    d_alpha = float(np.sum(d_logits * dots))
    d_beta = float(np.sum(d_logits))
    return d_img, d_txt, d_alpha, d_beta


def grad_sigmoid_nll(
    params: ContrastiveParams, batch: EmbeddingBatch
) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Gradients of the scalar sigmoid loss of a batch; see the raw variant."""
    return grad_sigmoid_nll_raw(params, batch.image_embeds, batch.text_embeds)


def grad_softmax_nll_raw(
    params: ContrastiveParams,
    image_embeds: np.ndarray,
    text_embeds: np.ndarray,
    weights: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Analytic gradients of the scalar softmax loss (full negative set).

    Returns gradients with respect to image embeddings, text embeddings,
    and the temperature t.
    """
    img = np.asarray(image_embeds, dtype=np.float64)
    txt = np.asarray(text_embeds, dtype=np.float64)
    logits = pairwise_logits_raw(params, img, txt, SOFTMAX)
    n = logits.shape[0]
    p_col = softmax(logits, axis=0)
    p_row = softmax(logits, axis=1)
    if weights is None:
        d_logits = 0.5 * (p_col + p_row)
        d_logits[np.diag_indices(n)] -= 1.0
    else:
        w = np.asarray(weights, dtype=np.float64)
        d_logits = 0.5 * (p_col * w[None, :] + p_row * w[:, None])
        d_logits[np.diag_indices(n)] -= w
    d_logits /= n
    dots = img @ txt.T
    d_dots = params.t * d_logits
    d_img = d_dots @ txt
    d_txt = d_dots.T @ img
    d_t = float(np.sum(d_logits * dots))
    return d_img, d_txt, d_t


def grad_softmax_nll(
    params: ContrastiveParams, batch: EmbeddingBatch
) -> tuple[np.ndarray, np.ndarray, float]:
    """Gradients of the scalar softmax loss of a batch; see the raw variant."""
    return grad_softmax_nll_raw(params, batch.image_embeds, batch.text_embeds)

"""Sub-batch samplers over selection score matrices.

The joint samplers grow a sub-batch chunk by chunk.  The first chunk is
drawn from the diagonal (self-similarity) scores alone; each later chunk is
drawn in proportion to exp(conditional score), where the conditional score
of a candidate c given the already-sampled set S adds the interaction sums
``sum_{s in S} scores[s, c]`` and ``sum_{s in S} scores[c, s]`` to the
diagonal term.  Already-sampled items are excluded by an additive -1e8
penalty.

Within a chunk, items are drawn without replacement in proportion to
exp(logits) using Gumbel top-k, which draws from the same distribution as
sequential renormalized categorical sampling while staying in the log
domain (no overflow at large score gains).

Validation oracles live alongside: a Metropolis swap chain targeting
p(S) proportional to exp(sum of the sub-matrix), and exact enumeration of
that target for tiny problems.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np
from scipy.special import softmax

from .contrastive import (
    MASK_PENALTY,
    ContrastiveParams,
    EmbeddingBatch,
    softmax_nll,
)
from .scoring import DEFAULT_GAIN, LEARNABILITY, SCORE_METHODS, ScoreMatrix

ENUMERATION_LIMIT = 10**6


@dataclass(frozen=True)
class SelectionConfig:
    """How to carve a sub-batch out of a super-batch.

    The sub-batch size is either given explicitly (must divide evenly into
    ``n_chunks``) or derived from the filter ratio as
    ``n_chunks * floor(B * (1 - filter_ratio) / n_chunks)``, so each of the
    ``n_chunks`` chunks has integral size.
    """

    n_chunks: int = 16
    filter_ratio: float = 0.8
    method: str = LEARNABILITY
    gain: float = DEFAULT_GAIN
    seed: int = 0
    sub_batch_size: int | None = None

    def __post_init__(self) -> None:
        if self.n_chunks < 1:
            raise ValueError(f"n_chunks must be >= 1, got {self.n_chunks}")
        if not (0.0 <= self.filter_ratio < 1.0):
            raise ValueError(
                f"filter_ratio must lie in [0, 1), got {self.filter_ratio}"
            )
        if self.method not in SCORE_METHODS:
            raise ValueError(f"unknown scoring method {self.method!r}")
        if not (np.isfinite(self.gain) and self.gain > 0.0):
            raise ValueError(f"gain must be positive, got {self.gain}")
        if self.sub_batch_size is not None and self.sub_batch_size < 1:
            raise ValueError(
                f"sub_batch_size must be >= 1, got {self.sub_batch_size}"
            )


def resolve_sub_batch(cfg: SelectionConfig, super_batch_size: int) -> tuple[int, int]:
    """Return ``(sub_batch_size, chunk_size)`` for a super-batch of given size.

    Explicit sub-batch sizes that do not divide evenly into chunks are
    rejected rather than silently padded.
    """
    if super_batch_size < 1:
        raise ValueError(f"super batch must have size >= 1, got {super_batch_size}")
    if cfg.sub_batch_size is not None:
        b = int(cfg.sub_batch_size)
        if b > super_batch_size:
            raise ValueError(
                f"sub_batch_size {b} exceeds super-batch size {super_batch_size}"
            )
        if b % cfg.n_chunks != 0:
            raise ValueError(
                f"sub_batch_size {b} is not divisible by n_chunks {cfg.n_chunks}"
            )
        return b, b // cfg.n_chunks
    # The 1e-9 nudge absorbs float representation error in (1 - filter_ratio)
    # so e.g. B=640, f=0.9, N=16 resolves to chunk 4, not 3.
    chunk = int(super_batch_size * (1.0 - cfg.filter_ratio) / cfg.n_chunks + 1e-9)
    if chunk < 1:
        raise ValueError(
            f"filter_ratio {cfg.filter_ratio} with n_chunks {cfg.n_chunks} leaves "
            f"an empty chunk for super-batch size {super_batch_size}"
        )
    return chunk * cfg.n_chunks, chunk


@dataclass(frozen=True)
class SubBatchSelection:
    """Distinct indices of a selected sub-batch plus its joint score."""

    indices: np.ndarray
    joint_score: float

    def __post_init__(self) -> None:
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        if idx.size < 1:
            raise ValueError("selection must contain at least one index")
        if np.unique(idx).size != idx.size:
            raise ValueError("selection indices must be distinct")
        if np.any(idx < 0):
            raise ValueError("selection indices must be non-negative")
        object.__setattr__(self, "indices", idx)

    @property
    def size(self) -> int:
        return self.indices.size


def _score_values(scores: ScoreMatrix | np.ndarray) -> np.ndarray:
    values = scores.values if isinstance(scores, ScoreMatrix) else scores
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValueError(f"score matrix must be square, got shape {values.shape}")
    return values


def _checked_indices(indices: np.ndarray, n: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size < 1:
        raise ValueError("index set must be non-empty")
    if np.unique(idx).size != idx.size:
        raise ValueError("duplicate index in selection")
    if np.any(idx < 0) or np.any(idx >= n):
        raise ValueError(f"index out of range for matrix of size {n}")
    return idx


def joint_score(scores: ScoreMatrix | np.ndarray, indices: np.ndarray) -> float:
    """Mean-normalized sub-matrix sum: (1/b) * sum over the index block."""
    values = _score_values(scores)
    idx = _checked_indices(indices, values.shape[0])
    block = values[np.ix_(idx, idx)]
    return float(block.sum() / idx.size)


def gumbel_top_k(logits: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Draw k distinct indices with p proportional to exp(logits).

    Equivalent in distribution to k sequential renormalized categorical
    draws without replacement; returned in descending perturbed-key order.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if k < 1 or k > logits.size:
        raise ValueError(f"cannot draw {k} items from {logits.size}")
    keys = logits + rng.gumbel(size=logits.size)
    if k == logits.size:
        return np.argsort(-keys)
    top = np.argpartition(-keys, k - 1)[:k]
    return top[np.argsort(-keys[top])]


def _interaction_sums(values: np.ndarray, sampled: np.ndarray) -> np.ndarray:
    """Per-candidate sum of row plus column couplings with the sampled set."""
    incoming = values[sampled].sum(axis=0)  # sum_s values[s, c]
    outgoing = values[:, sampled].sum(axis=1)  # sum_s values[c, s]
    return incoming + outgoing


def jointly_sample_sigmoid(
    scores: ScoreMatrix, cfg: SelectionConfig, rng: np.random.Generator
) -> SubBatchSelection:
    """Chunked joint sampling from a precomputed score matrix.

    The sigmoid loss decomposes over pairs, so conditional scores are plain
    sub-matrix sums and the score matrix never needs recomputing.  When the
    sub-batch equals the super-batch the selection is the identity and no
    randomness is consumed.
    """
    values = _score_values(scores)
    if not np.isfinite(values).all():
        raise ValueError("score matrix entries must be finite")
    n = values.shape[0]
    b, chunk = resolve_sub_batch(cfg, n)
    if b == n:
        indices = np.arange(n, dtype=np.int64)
        return SubBatchSelection(indices, joint_score(values, indices))
    diag = np.diag(values).copy()
    indices = gumbel_top_k(diag, chunk, rng)
    for _ in range(cfg.n_chunks - 1):
        conditional = diag + _interaction_sums(values, indices)
        conditional[indices] -= MASK_PENALTY
        new = gumbel_top_k(conditional, chunk, rng)
        indices = np.concatenate([indices, new])
    return SubBatchSelection(indices, joint_score(values, indices))


def softmax_pair_scores(
    learner: EmbeddingBatch,
    reference: EmbeddingBatch,
    learner_params: ContrastiveParams,
    reference_params: ContrastiveParams,
    gain: float = DEFAULT_GAIN,
) -> ScoreMatrix:
    """Per-pair learnability scores for the softmax loss.

    Entry (i, j) is gain * (reference_logit - learner_logit); the diagonal
    equals the gain-scaled difference of unconditional softmax losses.
    """
    if learner.n != reference.n:
        raise ValueError(
            f"learner/reference batch size mismatch: {learner.n} vs {reference.n}"
        )
    _, _, learner_neg = softmax_nll(learner_params, learner)
    _, _, reference_neg = softmax_nll(reference_params, reference)
    return ScoreMatrix(
        gain * (learner_neg - reference_neg), method=LEARNABILITY, gain=gain
    )


def jointly_sample_softmax(
    learner: EmbeddingBatch,
    reference: EmbeddingBatch,
    learner_params: ContrastiveParams,
    reference_params: ContrastiveParams,
    cfg: SelectionConfig,
    rng: np.random.Generator,
) -> SubBatchSelection:
    """Chunked joint sampling under the softmax loss.

    The softmax loss does not decompose over pairs, so the conditional score
    of each candidate is recomputed per chunk from masked log-sum-exp
    negative terms restricted to the already-sampled set.  Only learnability
    scoring is defined for this path.
    """
    if cfg.method != LEARNABILITY:
        raise ValueError(
            f"softmax joint sampling supports learnability scoring only, "
            f"got {cfg.method!r}"
        )
    pair_scores = softmax_pair_scores(
        learner, reference, learner_params, reference_params, cfg.gain
    )
    values = pair_scores.values
    n = values.shape[0]
    b, chunk = resolve_sub_batch(cfg, n)
    if b == n:
        indices = np.arange(n, dtype=np.int64)
        return SubBatchSelection(indices, joint_score(values, indices))
    diag = np.diag(values).copy()
    indices = gumbel_top_k(diag, chunk, rng)
    for _ in range(cfg.n_chunks - 1):
        sampled = np.zeros(n)
        sampled[indices] = 1.0
        _, learner_neg, _ = softmax_nll(learner_params, learner, sampled_mask=sampled)
        _, reference_neg, _ = softmax_nll(
            reference_params, reference, sampled_mask=sampled
        )
        conditional = diag + cfg.gain * (learner_neg - reference_neg)
        conditional[indices] -= MASK_PENALTY
        new = gumbel_top_k(conditional, chunk, rng)
        indices = np.concatenate([indices, new])
    return SubBatchSelection(indices, joint_score(values, indices))


def independent_sample(
    scores: ScoreMatrix, cfg: SelectionConfig, rng: np.random.Generator
) -> SubBatchSelection:
    """Baseline: draw the whole sub-batch from diagonal scores only."""
    values = _score_values(scores)
    if not np.isfinite(values).all():
        raise ValueError("score matrix entries must be finite")
    n = values.shape[0]
    b, _ = resolve_sub_batch(cfg, n)
    if b == n:
        indices = np.arange(n, dtype=np.int64)
    else:
        indices = gumbel_top_k(np.diag(values).copy(), b, rng)
    return SubBatchSelection(indices, joint_score(values, indices))


def uniform_sample(
    super_batch_size: int,
    sub_batch_size: int,
    rng: np.random.Generator,
    scores: ScoreMatrix | np.ndarray | None = None,
) -> SubBatchSelection:
    """IID baseline: b distinct indices, all subsets equally likely.

    The joint score is computed against ``scores`` when given (for
    comparisons against prioritized samplers) and reported as 0.0 otherwise.
    """
    if sub_batch_size < 1:
        raise ValueError(f"sub_batch_size must be >= 1, got {sub_batch_size}")
    if sub_batch_size > super_batch_size:
        raise ValueError(
            f"sub_batch_size {sub_batch_size} exceeds super-batch "
            f"size {super_batch_size}"
        )
    if sub_batch_size == super_batch_size:
        indices = np.arange(super_batch_size, dtype=np.int64)
    else:
        indices = rng.choice(super_batch_size, size=sub_batch_size, replace=False)
        indices = indices.astype(np.int64)
    score = 0.0 if scores is None else joint_score(scores, indices)
    return SubBatchSelection(indices, score)


def _gibbs_members(
    values: np.ndarray,
    b: int,
    n_sweeps: int,
    n_chains: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Run Metropolis swap chains; returns members [n_chains, b].

    Target: p(S) proportional to exp(sum of the S x S sub-matrix).  Each
    step swaps a uniformly chosen member for a uniformly chosen non-member,
    accepting with probability min(1, exp(delta sub-matrix sum)); the
    proposal is symmetric, so this is a valid Metropolis kernel.  A sweep is
    b steps.
    """
    n = values.shape[0]
    if not (1 <= b <= n):
        raise ValueError(f"cannot select {b} items from {n}")
    if n_sweeps < 1:
        raise ValueError(f"n_sweeps must be >= 1, got {n_sweeps}")
    if b == n:
        return np.tile(np.arange(n, dtype=np.int64), (n_chains, 1))
    members = np.empty((n_chains, b), dtype=np.int64)
    others = np.empty((n_chains, n - b), dtype=np.int64)
    for c in range(n_chains):
        perm = rng.permutation(n)
        members[c] = perm[:b]
        others[c] = perm[b:]
    diag = np.diag(values)
    transposed = values.T
    # coupling[c, j] = sum over the chain's members s of values[s, j] + values[j, s]
    coupling = values[members].sum(axis=1) + transposed[members].sum(axis=1)
    chains = np.arange(n_chains)
    for _ in range(n_sweeps * b):
        member_pos = rng.integers(0, b, size=n_chains)
        other_pos = rng.integers(0, n - b, size=n_chains)
        old = members[chains, member_pos]
        new = others[chains, other_pos]
        gain_old = coupling[chains, old] - diag[old]
        gain_new = (
            coupling[chains, new] - values[old, new] - values[new, old] + diag[new]
        )
        delta = gain_new - gain_old
        with np.errstate(divide="ignore"):
            accept = np.log(rng.random(n_chains)) < delta
        hit = np.flatnonzero(accept)
        if hit.size:
            removed = old[hit]
            added = new[hit]
            coupling[hit] += (
                values[added]
                + transposed[added]
                - values[removed]
                - transposed[removed]
            )
            members[hit, member_pos[hit]] = added
            others[hit, other_pos[hit]] = removed
    return members


def gibbs_oracle(
    scores: ScoreMatrix | np.ndarray,
    sub_batch_size: int,
    n_sweeps: int,
    rng: np.random.Generator,
) -> SubBatchSelection:
    """Swap-chain oracle targeting p(S) proportional to exp(b * joint_score)."""
    values = _score_values(scores)
    members = _gibbs_members(values, sub_batch_size, n_sweeps, 1, rng)[0]
    return SubBatchSelection(members, joint_score(values, members))


def gibbs_chains(
    scores: ScoreMatrix | np.ndarray,
    sub_batch_size: int,
    n_sweeps: int,
    n_chains: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Final member sets of ``n_chains`` independent oracle chains."""
    if n_chains < 1:
        raise ValueError(f"n_chains must be >= 1, got {n_chains}")
    values = _score_values(scores)
    return _gibbs_members(values, sub_batch_size, n_sweeps, n_chains, rng)


def enumerate_exact(
    scores: ScoreMatrix | np.ndarray, sub_batch_size: int
) -> tuple[list[tuple[int, ...]], np.ndarray]:
    """Exact distribution p(S) proportional to exp(sub-matrix sum of S).

    Only feasible for tiny problems; refuses more than 10^6 subsets.
    Returns the subsets (sorted index tuples) and their probabilities,
    which sum to 1.
    """
    values = _score_values(scores)
    n = values.shape[0]
    if not (1 <= sub_batch_size <= n):
        raise ValueError(f"cannot select {sub_batch_size} items from {n}")
    total = comb(n, sub_batch_size)
    if total > ENUMERATION_LIMIT:
        raise ValueError(
            f"C({n}, {sub_batch_size}) = {total} subsets exceeds the "
            f"enumeration limit {ENUMERATION_LIMIT}"
        )
    subsets = list(combinations(range(n), sub_batch_size))
    log_weights = np.empty(total)
    for i, subset in enumerate(subsets):
        idx = np.asarray(subset)
        log_weights[i] = values[np.ix_(idx, idx)].sum()
    return subsets, softmax(log_weights)

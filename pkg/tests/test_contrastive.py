"""Loss-matrix semantics, closed-form cases, and gradient correctness."""

import math

import numpy as np
import pytest

from curate.contrastive import (
    ContrastiveParams,
    EmbeddingBatch,
    LossMatrix,
    grad_sigmoid_nll,
    grad_sigmoid_nll_raw,
    grad_softmax_nll_raw,
    pairwise_logits,
    sigmoid_nll,
    sigmoid_nll_raw,
    softmax_nll,
    softmax_nll_raw,
    unconditional_loss,
    unit_rows,
)

LN2 = math.log(2.0)


def random_batch(n, d, rng):
    return EmbeddingBatch(rng.normal(size=(n, d)), rng.normal(size=(n, d)))


def orthogonal_batch(n):
    """Shared orthonormal rows for both modalities: dot matrix = identity."""
    eye = np.eye(n)
    return EmbeddingBatch(eye, eye)


def sigmoid_loss_oracle(alpha, beta, zimg, ztxt):
    """Scalar-loop re-derivation of the per-example conditional losses.

    Example i pays softplus(-(alpha*g_ii + beta)) for its matched pair and
    softplus(alpha*g_ij + beta) for every unmatched pairing j != i.
    """
    n = zimg.shape[0]
    per_example = np.zeros(n)
    for i in range(n):
        for j in range(n):
            logit = alpha * float(np.dot(zimg[i], ztxt[j])) + beta
            if i == j:
                per_example[i] += math.log1p(math.exp(-logit))
            else:
                per_example[i] += math.log1p(math.exp(logit))
    return per_example


class TestEmbeddingBatch:
    def test_rows_are_normalized(self):
        rng = np.random.default_rng(0)
        batch = EmbeddingBatch(rng.normal(size=(5, 3)) * 7, rng.normal(size=(5, 3)))
        np.testing.assert_allclose(
            np.linalg.norm(batch.image_embeds, axis=1), 1.0, atol=1e-12
        )
        np.testing.assert_allclose(
            np.linalg.norm(batch.text_embeds, axis=1), 1.0, atol=1e-12
        )

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="mismatch"):
            EmbeddingBatch(np.ones((3, 4)), np.ones((3, 5)))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            EmbeddingBatch(np.ones((0, 4)), np.ones((0, 4)))

    def test_zero_row_guard(self):
        batch = EmbeddingBatch(np.zeros((2, 3)), np.ones((2, 3)))
        np.testing.assert_array_equal(batch.image_embeds[0], [1.0, 0.0, 0.0])


class TestContrastiveParams:
    @pytest.mark.parametrize("kwargs", [{"alpha": 0.0}, {"alpha": -1.0}, {"t": 0.0}])
    def test_positivity(self, kwargs):
        with pytest.raises(ValueError):
            ContrastiveParams(**kwargs)


class TestPairwiseLogits:
    def test_zero_dots_give_zero_matrix(self):
        # Disjoint supports: every image/text dot product is exactly zero.
        img = np.zeros((4, 8))
        txt = np.zeros((4, 8))
        img[np.arange(4), np.arange(4)] = 1.0
        txt[np.arange(4), 4 + np.arange(4)] = 1.0
        batch = EmbeddingBatch(img, txt)
        logits = pairwise_logits(batch, ContrastiveParams(alpha=1.0, beta=0.0))
        np.testing.assert_array_equal(logits, np.zeros((4, 4)))

    def test_identical_unit_vector(self):
        row = np.tile(unit_rows(np.array([[3.0, 4.0]])), (3, 1))
        batch = EmbeddingBatch(row, row)
        logits = pairwise_logits(batch, ContrastiveParams(alpha=2.0, beta=-1.0))
        np.testing.assert_allclose(logits, 1.0, atol=1e-12)

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(7)
        batch = random_batch(4, 4, rng)
        params = ContrastiveParams(alpha=1.7, beta=0.3, t=2.2)
        for kind in ("sigmoid", "softmax"):
            logits = pairwise_logits(batch, params, kind)
            expected = np.zeros((4, 4))
            for i in range(4):
                for j in range(4):
                    dot = float(np.dot(batch.image_embeds[i], batch.text_embeds[j]))
                    if kind == "sigmoid":
                        expected[i, j] = params.alpha * dot + params.beta
                    else:
                        expected[i, j] = params.t * dot
            np.testing.assert_allclose(logits, expected, atol=1e-12)

    def test_unknown_kind_rejected(self):
        batch = orthogonal_batch(2)
        with pytest.raises(ValueError, match="kind"):
            pairwise_logits(batch, ContrastiveParams(), "linear")


class TestSigmoidNll:
    def test_zero_logits_give_ln2(self):
        img = np.zeros((3, 6))
        txt = np.zeros((3, 6))
        img[np.arange(3), np.arange(3)] = 1.0
        txt[np.arange(3), 3 + np.arange(3)] = 1.0
        batch = EmbeddingBatch(img, txt)
        scalar, mat = sigmoid_nll(ContrastiveParams(alpha=1.0, beta=0.0), batch)
        np.testing.assert_allclose(mat.values, LN2, atol=1e-12)
        assert scalar == pytest.approx(3 * LN2, abs=1e-12)

    def test_saturated_correct_pairs(self):
        # alpha=30 with identity dot matrix: diagonal logit +30, off-diag 0...
        # use opposite-sign off-diagonals instead: z_txt_j = -z_img_j for j!=i
        # Simplest construction: orthonormal d=n rows give diag dot 1, off 0;
        # beta=-30 with alpha=60 puts diagonal at +30 and off-diagonal at -30.
        batch = orthogonal_batch(4)
        scalar, mat = sigmoid_nll(ContrastiveParams(alpha=60.0, beta=-30.0), batch)
        off_diag = mat.values[~np.eye(4, dtype=bool)]
        assert np.all(mat.values.diagonal() <= 1e-12)
        assert np.all(off_diag <= 1e-12)
        assert scalar <= 1e-12

    def test_matches_term_by_term_oracle(self):
        rng = np.random.default_rng(11)
        batch = random_batch(5, 3, rng)
        params = ContrastiveParams(alpha=2.5, beta=-0.7)
        scalar, mat = sigmoid_nll(params, batch)
        per_example = sigmoid_loss_oracle(
            params.alpha, params.beta, batch.image_embeds, batch.text_embeds
        )
        np.testing.assert_allclose(mat.values.sum(axis=1), per_example, atol=1e-10)
        assert scalar == pytest.approx(per_example.mean(), abs=1e-10)

    def test_scalar_is_mean_of_row_sums_bit_identical(self):
        rng = np.random.default_rng(3)
        batch = random_batch(6, 4, rng)
        scalar, mat = sigmoid_nll(ContrastiveParams(alpha=3.0, beta=0.2), batch)
        assert scalar == mat.values.sum(axis=-1).mean()

    def test_permutation_symmetry(self):
        rng = np.random.default_rng(5)
        batch = random_batch(7, 4, rng)
        params = ContrastiveParams(alpha=1.3, beta=-0.4)
        perm = rng.permutation(7)
        permuted = EmbeddingBatch(
            batch.image_embeds[perm], batch.text_embeds[perm]
        )
        s1, m1 = sigmoid_nll(params, batch)
        s2, m2 = sigmoid_nll(params, permuted)
        np.testing.assert_allclose(
            m2.values, m1.values[np.ix_(perm, perm)], atol=1e-12
        )
        assert s2 == pytest.approx(s1, abs=1e-12)

    def test_stable_at_huge_logits(self):
        batch = orthogonal_batch(3)
        scalar, mat = sigmoid_nll(ContrastiveParams(alpha=1e4, beta=0.0), batch)
        assert np.isfinite(mat.values).all()
        assert np.isfinite(scalar)
        scalar, mat = sigmoid_nll(ContrastiveParams(alpha=1e4, beta=-1e4), batch)
        assert np.isfinite(mat.values).all()


class TestSoftmaxNll:
    def test_single_pair_is_exactly_zero(self):
        batch = EmbeddingBatch(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]]))
        scalar, neg, neg_mat = softmax_nll(ContrastiveParams(t=3.0), batch)
        assert scalar == 0.0
        assert neg_mat.shape == (1, 1)

    def test_hand_computed_3x3(self):
        # Orthonormal shared rows with t=2 give the logit matrix 2*I.
        batch = orthogonal_batch(3)
        scalar, neg, neg_mat = softmax_nll(ContrastiveParams(t=2.0), batch)
        expected = -(2.0 - math.log(math.exp(2.0) + 2.0))
        assert scalar == pytest.approx(expected, abs=1e-12)
        np.testing.assert_allclose(neg_mat, -2.0 * np.eye(3), atol=1e-12)

    def test_masked_matches_deletion_oracle(self):
        rng = np.random.default_rng(13)
        batch = random_batch(6, 5, rng)
        params = ContrastiveParams(t=1.8)
        mask = np.zeros(6)
        mask[[0, 2]] = 1.0
        _, neg, neg_mat = softmax_nll(params, batch, sampled_mask=mask)
        logits = -neg_mat
        kept = np.array([0, 2])
        for i in range(6):
            lse_col = math.log(np.exp(logits[kept, i]).sum())
            lse_row = math.log(np.exp(logits[i, kept]).sum())
            assert neg[i] == pytest.approx(0.5 * (lse_col + lse_row), abs=1e-10)

    def test_mask_equivalence_with_extracted_sub_batch(self):
        rng = np.random.default_rng(17)
        batch = random_batch(8, 4, rng)
        params = ContrastiveParams(t=2.5)
        kept = np.array([1, 4, 6])
        mask = np.zeros(8)
        mask[kept] = 1.0
        _, neg_masked, neg_mat = softmax_nll(params, batch, sampled_mask=mask)
        sub = batch.take(kept)
        _, neg_sub, sub_neg_mat = softmax_nll(params, sub)
        logits = -neg_mat
        # Per-example losses at the kept indices match the extracted batch.
        masked_losses = neg_masked[kept] - logits[kept, kept]
        sub_losses = neg_sub - np.diag(-sub_neg_mat)
        np.testing.assert_allclose(masked_losses, sub_losses, atol=1e-8)

    def test_empty_mask_rejected(self):
        rng = np.random.default_rng(1)
        batch = random_batch(4, 3, rng)
        with pytest.raises(ValueError, match="negative set"):
            softmax_nll(ContrastiveParams(), batch, sampled_mask=np.zeros(4))

    def test_non_binary_mask_rejected(self):
        rng = np.random.default_rng(1)
        batch = random_batch(4, 3, rng)
        with pytest.raises(ValueError, match="0/1"):
            softmax_nll(ContrastiveParams(), batch, sampled_mask=np.full(4, 0.5))

    def test_stable_at_huge_logits(self):
        batch = orthogonal_batch(3)
        scalar, neg, neg_mat = softmax_nll(ContrastiveParams(t=1e4), batch)
        assert np.isfinite(scalar)
        assert np.isfinite(neg).all()


class TestUnconditionalLoss:
    def test_sigmoid_zero_dots(self):
        img = np.zeros((3, 6))
        txt = np.zeros((3, 6))
        img[np.arange(3), np.arange(3)] = 1.0
        txt[np.arange(3), 3 + np.arange(3)] = 1.0
        batch = EmbeddingBatch(img, txt)
        values = unconditional_loss(batch, ContrastiveParams(alpha=1.0, beta=0.0))
        np.testing.assert_allclose(values, LN2, atol=1e-12)

    def test_softmax_self_dot(self):
        batch = orthogonal_batch(4)
        values = unconditional_loss(
            batch, ContrastiveParams(alpha=1.0, t=1.0), "softmax"
        )
        np.testing.assert_allclose(values, -1.0, atol=1e-12)

    def test_sigmoid_equals_loss_matrix_diagonal(self):
        rng = np.random.default_rng(23)
        batch = random_batch(6, 5, rng)
        params = ContrastiveParams(alpha=4.0, beta=-2.0)
        values = unconditional_loss(batch, params)
        _, mat = sigmoid_nll(params, batch)
        np.testing.assert_allclose(values, np.diag(mat.values), atol=1e-12)


class TestLossMatrixType:
    def test_rejects_negative_sigmoid_entries(self):
        with pytest.raises(ValueError, match="non-negative"):
            LossMatrix(np.array([[0.5, -0.1], [0.2, 0.3]]), "sigmoid")

    def test_rejects_non_square(self):
        with pytest.raises(ValueError, match="square"):
            LossMatrix(np.ones((2, 3)), "softmax")

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="finite"):
            LossMatrix(np.array([[np.inf]]), "softmax")


def central_difference(f, x, h=1e-5):
    """Entrywise central finite differences of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        plus = x.copy()
        minus = x.copy()
        plus[idx] += h
        minus[idx] -= h
        grad[idx] = (f(plus) - f(minus)) / (2 * h)
        it.iternext()
    return grad


def assert_close_rel(actual, expected, rel=1e-5):
    scale = np.maximum(np.abs(expected), 1e-3)
    np.testing.assert_array_less(np.abs(actual - expected) / scale, rel)


class TestSigmoidGradients:
    def test_saturated_plateau_has_zero_gradients(self):
        batch = orthogonal_batch(4)
        params = ContrastiveParams(alpha=60.0, beta=-30.0)
        d_img, d_txt, d_alpha, d_beta = grad_sigmoid_nll(params, batch)
        assert np.max(np.abs(d_img)) <= 1e-10
        assert np.max(np.abs(d_txt)) <= 1e-10
        assert abs(d_alpha) <= 1e-10
        assert abs(d_beta) <= 1e-10

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(29)
        batch = random_batch(4, 3, rng)
        params = ContrastiveParams(alpha=1.9, beta=-0.5)
        zimg = batch.image_embeds
        ztxt = batch.text_embeds
        d_img, d_txt, d_alpha, d_beta = grad_sigmoid_nll_raw(params, zimg, ztxt)

        fd_img = central_difference(
            lambda z: sigmoid_nll_raw(params, z, ztxt)[0], zimg
        )
        fd_txt = central_difference(
            lambda z: sigmoid_nll_raw(params, zimg, z)[0], ztxt
        )
        assert_close_rel(d_img, fd_img)
        assert_close_rel(d_txt, fd_txt)

        h = 1e-5
        fd_alpha = (
            sigmoid_nll_raw(ContrastiveParams(params.alpha + h, params.beta), zimg, ztxt)[0]
            - sigmoid_nll_raw(ContrastiveParams(params.alpha - h, params.beta), zimg, ztxt)[0]
        ) / (2 * h)
        fd_beta = (
            sigmoid_nll_raw(ContrastiveParams(params.alpha, params.beta + h), zimg, ztxt)[0]
            - sigmoid_nll_raw(ContrastiveParams(params.alpha, params.beta - h), zimg, ztxt)[0]
        ) / (2 * h)
        assert d_alpha == pytest.approx(fd_alpha, rel=1e-5)
        assert d_beta == pytest.approx(fd_beta, rel=1e-5)

    def test_single_pair_beta_gradient(self):
        # n=1, matched unit vectors, alpha=1, beta=0: loss = softplus(-(1+b)),
        # so d loss / d beta at b=0 is -sigmoid(-1).
        batch = EmbeddingBatch(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]]))
        _, _, _, d_beta = grad_sigmoid_nll(ContrastiveParams(alpha=1.0, beta=0.0), batch)
        expected = -1.0 / (1.0 + math.exp(1.0))
        assert d_beta == pytest.approx(expected, abs=1e-12)

    def test_twenty_seed_sweep(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            n, d = int(rng.integers(2, 6)), int(rng.integers(2, 5))
            batch = random_batch(n, d, rng)
            params = ContrastiveParams(
                alpha=float(rng.uniform(0.5, 5.0)), beta=float(rng.uniform(-2, 2))
            )
            zimg, ztxt = batch.image_embeds, batch.text_embeds
            d_img, d_txt, _, _ = grad_sigmoid_nll_raw(params, zimg, ztxt)
            fd_img = central_difference(
                lambda z: sigmoid_nll_raw(params, z, ztxt)[0], zimg
            )
            fd_txt = central_difference(
                lambda z: sigmoid_nll_raw(params, zimg, z)[0], ztxt
            )
            assert_close_rel(d_img, fd_img)
            assert_close_rel(d_txt, fd_txt)


class TestSoftmaxGradients:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(31)
        batch = random_batch(5, 4, rng)
        params = ContrastiveParams(t=2.3)
        zimg, ztxt = batch.image_embeds, batch.text_embeds
        d_img, d_txt, d_t = grad_softmax_nll_raw(params, zimg, ztxt)
        fd_img = central_difference(
            lambda z: softmax_nll_raw(params, z, ztxt)[0], zimg
        )
        fd_txt = central_difference(
            lambda z: softmax_nll_raw(params, zimg, z)[0], ztxt
        )
        assert_close_rel(d_img, fd_img)
        assert_close_rel(d_txt, fd_txt)
        h = 1e-5
        fd_t = (
            softmax_nll_raw(ContrastiveParams(t=params.t + h), zimg, ztxt)[0]
            - softmax_nll_raw(ContrastiveParams(t=params.t - h), zimg, ztxt)[0]
        ) / (2 * h)
        assert d_t == pytest.approx(fd_t, rel=1e-5)

    def test_weighted_gradients_match_finite_differences(self):
        rng = np.random.default_rng(37)
        batch = random_batch(4, 3, rng)
        params = ContrastiveParams(t=1.4)
        weights = rng.uniform(0.5, 1.5, size=4)
        zimg, ztxt = batch.image_embeds, batch.text_embeds
        d_img, d_txt, _ = grad_softmax_nll_raw(params, zimg, ztxt, weights)
        fd_img = central_difference(
            lambda z: softmax_nll_raw(params, z, ztxt, weights=weights)[0], zimg
        )
        assert_close_rel(d_img, fd_img)
        d_img_s, _, _, _ = grad_sigmoid_nll_raw(
            ContrastiveParams(alpha=2.0, beta=-1.0), zimg, ztxt, weights
        )
        fd_img_s = central_difference(
            lambda z: sigmoid_nll_raw(
                ContrastiveParams(alpha=2.0, beta=-1.0), z, ztxt, weights
            )[0],
            zimg,
        )
        assert_close_rel(d_img_s, fd_img_s)

import math

import mpmath
import numpy as np
import pytest

from supcr.batch import TwoViewBatch
from supcr.errors import DomainError, NumericError
from supcr.losses import (
    bin_labels,
    canonical_distances,
    simclr_loss,
    similarity_backward,
    supcon_loss,
    supcon_loss_grad_s,
    supcr_hessian_rows,
    supcr_loss_fast,
    supcr_loss_grad,
    supcr_loss_grad_s,
    supcr_loss_naive,
    simclr_loss_grad_s,
)
from supcr.pairwise import PairwiseMatrices, distance_matrix, similarity_matrix

mpmath.mp.dps = 50


def mp_supcr(S, D):
    """High-precision triple loop, written straight from the definition."""
    n = len(S)
    total = mpmath.mpf(0)
    for i in range(n):
        for j in range(n):
            if j == i:
                continue
            denom = mpmath.fsum(mpmath.exp(mpmath.mpf(S[i][k])) for k in range(n) if k != i and D[i][k] >= D[i][j])
            total += mpmath.log(denom) - mpmath.mpf(S[i][j])
    return total / (n * (n - 1))


def pm_from(y, v, tau=1.0, kind="neg_l2"):
    v = np.asarray(v, dtype=float).reshape(len(y), -1)
    return PairwiseMatrices(similarity_matrix(v, kind) / tau, distance_matrix(np.asarray(y, float), "l1"), tau)


def test_two_rows_is_zero():
    pm = pm_from([0.0, 5.0], [1.0, -3.0])
    assert supcr_loss_naive(pm) == 0.0 and supcr_loss_fast(pm) == 0.0
    value, G = supcr_loss_grad_s(pm)
    assert value == 0.0 and not G.any()


def test_identical_embeddings_hand_value():
    pm = pm_from([0, 0, 1, 1], np.zeros(4))
    want = (math.log(3) + 2 * math.log(2)) / 3
    assert want == pytest.approx(0.82830, abs=5e-6)
    assert supcr_loss_naive(pm) == pytest.approx(want, abs=1e-14)
    assert supcr_loss_fast(pm) == pytest.approx(want, abs=1e-14)


def test_separated_embeddings_against_high_precision_oracle():
    pm = pm_from([0, 0, 1, 1], [0, 0, 10, 10], tau=1.0)
    oracle = mp_supcr(pm.S.tolist(), pm.D.tolist())
    closed = (2 * mpmath.log(2) + mpmath.log(1 + 2 * mpmath.exp(-10))) / 3
    assert abs(oracle - closed) < mpmath.mpf(10) ** -40
    # value frozen from the oracle; sits just above (2/3) ln 2
    assert float(oracle) == pytest.approx(0.46212838561911934, abs=1e-15)
    assert supcr_loss_naive(pm) == pytest.approx(float(oracle), abs=1e-14)
    assert supcr_loss_fast(pm) == pytest.approx(float(oracle), abs=1e-14)
    assert supcr_loss_fast(pm) > 2 / 3 * math.log(2)


def test_all_equal_labels_is_log_five_exactly():
    pm = pm_from(np.full(6, 2.5), np.ones(6))
    assert supcr_loss_fast(pm) == math.log(5)
    assert supcr_loss_naive(pm) == math.log(5)


@pytest.mark.parametrize("seed", range(5))
def test_fast_matches_oracle_on_random_batches(seed):
    rng = np.random.default_rng(seed)
    y = np.repeat(rng.integers(0, 4, 5), 2).astype(float)
    v = rng.normal(size=(10, 2)) * 3
    pm = pm_from(y, v, tau=2.0)
    oracle = float(mp_supcr(pm.S.tolist(), pm.D.tolist()))
    assert supcr_loss_fast(pm) == pytest.approx(oracle, abs=1e-13)
    assert supcr_loss_naive(pm) == pytest.approx(oracle, abs=1e-13)


def test_large_similarity_magnitudes_keep_precision():
    # a scale of 1e5 used to cost ~1e-11 absolute through cancellation
    pm = pm_from([0, 0, 1, 1, 3, 3], np.array([0, 0, 1, 1, 3, 3]) * 5e4)
    oracle = float(mp_supcr(pm.S.tolist(), pm.D.tolist()))
    assert supcr_loss_fast(pm) == pytest.approx(oracle, abs=1e-15)
    assert supcr_loss_naive(pm) == pytest.approx(oracle, abs=1e-15)


def test_tie_tolerance_merges_float_noise():
    y = np.array([0.1 + 0.2, 0.3, 1.0, 1.0])
    D = distance_matrix(y, "l1")
    Dc = canonical_distances(D)
    assert D[0, 1] > 0 and Dc[0, 1] == 0.0
    clean = pm_from([0.3, 0.3, 1.0, 1.0], np.arange(4.0))
    noisy = PairwiseMatrices(clean.S, D)
    assert supcr_loss_fast(noisy) == pytest.approx(supcr_loss_fast(clean), abs=1e-15)


def test_non_finite_inputs_rejected():
    pm = pm_from([0, 1], [0, 1])
    pm.S[0, 1] = np.nan
    with pytest.raises(NumericError):
        supcr_loss_fast(pm)
    with pytest.raises(DomainError):
        supcr_loss_fast(PairwiseMatrices(np.zeros((1, 1)), np.zeros((1, 1))))


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(11)
    y = np.repeat(rng.integers(0, 3, 4), 2).astype(float)
    S = similarity_matrix(rng.normal(size=(8, 3)), "neg_l2")
    D = distance_matrix(y, "l1")
    _, G = supcr_loss_grad_s(PairwiseMatrices(S, D))
    h = 1e-6
    for i in range(8):
        for k in range(8):
            if i == k:
                continue
            up, down = S.copy(), S.copy()
            up[i, k] += h
            down[i, k] -= h
            fd = (supcr_loss_naive(PairwiseMatrices(up, D)) - supcr_loss_naive(PairwiseMatrices(down, D))) / (2 * h)
            assert G[i, k] == pytest.approx(fd, abs=1e-8)


def test_row_hessian_matches_gradient_differences():
    rng = np.random.default_rng(12)
    y = np.repeat(rng.integers(0, 3, 3), 2).astype(float)
    S = similarity_matrix(rng.normal(size=(6, 2)), "neg_l1")
    D = distance_matrix(y, "l1")
    H = supcr_hessian_rows(PairwiseMatrices(S, D))
    h = 1e-6
    for i in range(6):
        for k in range(6):
            if i == k:
                continue
            up, down = S.copy(), S.copy()
            up[i, k] += h
            down[i, k] -= h
            col = (supcr_loss_grad_s(PairwiseMatrices(up, D))[1] - supcr_loss_grad_s(PairwiseMatrices(down, D))[1])[i] / (2 * h)
            assert np.allclose(H[i, :, k], col, atol=1e-8)


@pytest.mark.parametrize("kind", ["neg_l1", "neg_l2"])
def test_embedding_gradient_sums_to_zero(kind):
    rng = np.random.default_rng(3)
    labels = np.repeat(rng.normal(size=5), 2)[:, None]
    batch = TwoViewBatch(np.zeros((10, 1)), labels, np.repeat(np.arange(5), 2))
    out = supcr_loss_grad(batch, rng.normal(size=(10, 4)), kind, "l1", 2.0)
    assert np.abs(out.grad.sum(axis=0)).max() < 1e-14


def test_neg_l2_singular_pair_has_zero_contribution():
    v = np.array([[1.0, 2.0], [1.0, 2.0]])
    G = np.array([[0.0, 0.3], [0.2, 0.0]])
    assert not similarity_backward(v, G, "neg_l2", 2.0).any()


def test_two_row_embedding_gradient_is_zero():
    batch = TwoViewBatch(np.zeros((2, 1)), np.array([[1.0], [1.0]]), np.array([0, 0]))
    out = supcr_loss_grad(batch, np.array([[0.2, 0.1], [0.5, -1.0]]))
    assert out.value == 0.0 and not out.grad.any()


def test_supcon_identical_embeddings_log_three():
    pm = PairwiseMatrices(np.zeros((4, 4)), np.zeros((4, 4)))
    assert supcon_loss(pm, [0, 0, 1, 1]) == pytest.approx(math.log(3), abs=1e-15)


def test_supcon_separated_pairs_near_zero():
    v = np.repeat(np.arange(4.0) * 30, 2)[:, None]
    pm = PairwiseMatrices(similarity_matrix(v, "neg_l2"), np.zeros((8, 8)))
    value = supcon_loss(pm, [0, 0, 1, 1, 2, 2, 3, 3])
    oracle = float(mpmath.log(1 + 2 * mpmath.exp(-30)) * 6 / 8 + mpmath.log(1 + mpmath.exp(-30)) * 2 / 8)
    assert value == pytest.approx(oracle, rel=1e-9)
    assert value < 1e-12


def test_supcon_permutation_and_empty_positive():
    rng = np.random.default_rng(5)
    S = similarity_matrix(rng.normal(size=(6, 2)), "neg_l2")
    classes = np.array([0, 0, 1, 1, 1, 0])
    perm = rng.permutation(6)
    a = supcon_loss(PairwiseMatrices(S, S), classes)
    b = supcon_loss(PairwiseMatrices(S[np.ix_(perm, perm)], S), classes[perm])
    assert a == pytest.approx(b, abs=1e-14)
    with pytest.raises(DomainError):
        supcon_loss(PairwiseMatrices(S, S), [0, 0, 1, 1, 1, 2])


def test_simclr_examples():
    assert simclr_loss(PairwiseMatrices(np.zeros((4, 4)), np.zeros((4, 4)))) == pytest.approx(math.log(3), abs=1e-15)
    v = np.repeat(np.arange(3.0) * 40, 2)[:, None]
    S = similarity_matrix(v, "neg_l2")
    assert simclr_loss(PairwiseMatrices(S, S)) < 1e-15
    rng = np.random.default_rng(6)
    S = similarity_matrix(rng.normal(size=(6, 3)), "cosine")
    swap = np.arange(6) ^ 1
    assert simclr_loss(PairwiseMatrices(S, S)) == pytest.approx(
        simclr_loss(PairwiseMatrices(S[np.ix_(swap, swap)], S)), abs=1e-15
    )


@pytest.mark.parametrize("grad_fn", ["supcon", "simclr"])
def test_baseline_gradients(grad_fn):
    rng = np.random.default_rng(7)
    S = similarity_matrix(rng.normal(size=(6, 2)), "neg_l2")
    classes = np.array([0, 0, 1, 1, 0, 1])

    def f(x):
        pm = PairwiseMatrices(x, x)
        return supcon_loss_grad_s(pm, classes) if grad_fn == "supcon" else simclr_loss_grad_s(pm)

    _, G = f(S)
    h = 1e-6
    for i, k in [(0, 1), (2, 5), (4, 3), (5, 0)]:
        up, down = S.copy(), S.copy()
        up[i, k] += h
        down[i, k] -= h
        assert G[i, k] == pytest.approx((f(up)[0] - f(down)[0]) / (2 * h), abs=1e-8)


def test_bin_labels_examples():
    assert bin_labels([5.0], 10, (0, 100)).tolist() == [0]
    assert bin_labels([100.0], 10, (0, 100)).tolist() == [9]
    assert bin_labels([0, 0, 99, 99], 10, (0, 100)).tolist() == [0, 0, 9, 9]
    assert bin_labels([-5.0, 250.0], 10, (0, 100)).tolist() == [0, 9]
    with pytest.raises(DomainError):
        bin_labels([1.0], 1, (0, 1))

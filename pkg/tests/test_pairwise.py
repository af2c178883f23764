import numpy as np
import pytest

from supcr.batch import IDENTITY_AUGMENTATION, Dataset, build_two_view_batch
from supcr.errors import DomainError, NumericError
from supcr.pairwise import (
    EmbeddingBatch,
    LabelDistanceKind,
    SimilarityKind,
    distance_matrix,
    label_distance,
    pairwise_matrices,
    similarity,
    similarity_matrix,
)


def test_similarity_examples():
    assert similarity([1.5, -2.0], [1.5, -2.0], SimilarityKind.NEG_L2) == 0.0
    assert similarity([0.0], [3.0], SimilarityKind.NEG_L2) == -3.0
    assert similarity([1.0, 0.0], [0.0, 1.0], SimilarityKind.COSINE) == 0.0
    assert similarity([1.0, 2.0], [4.0, 0.0], SimilarityKind.NEG_L1) == -5.0


def test_cosine_zero_vector_is_an_error():
    with pytest.raises(DomainError):
        similarity([0.0, 0.0], [1.0, 0.0], "cosine")
    with pytest.raises(DomainError):
        similarity_matrix(np.array([[0.0, 0.0], [1.0, 0.0]]), "cosine")


def test_label_distance_examples():
    assert label_distance([5.0], [5.0], "l1") == 0.0
    assert label_distance([1.0, 2.0], [4.0, 0.0], "l1") == 5.0
    assert label_distance([0.0, 0.0], [0.0, 90.0], "angular") == pytest.approx(90.0, abs=1e-12)


def test_angular_needs_two_dims():
    with pytest.raises(DomainError):
        label_distance([1.0], [2.0], "angular")
    with pytest.raises(DomainError):
        distance_matrix(np.zeros((4, 3)), "angular")


def test_angular_pitch_only():
    # pure pitch rotation: angle equals the pitch difference
    assert label_distance([-30.0, 0.0], [10.0, 0.0], "angular") == pytest.approx(40.0, abs=1e-10)


def test_matrices_agree_with_scalar_functions():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(6, 3))
    y = rng.normal(size=(6, 2)) * 20
    for kind in SimilarityKind:
        S = similarity_matrix(v, kind)
        for i in range(6):
            for j in range(6):
                assert S[i, j] == pytest.approx(similarity(v[i], v[j], kind), abs=1e-12)
    for kind in LabelDistanceKind:
        D = distance_matrix(y, kind)
        for i in range(6):
            for j in range(6):
                want = 0.0 if i == j else label_distance(y[i], y[j], kind)
                assert D[i, j] == pytest.approx(want, abs=1e-9)


def test_pairwise_tau_scaling():
    pm = pairwise_matrices(np.array([[0.0], [0.0]]), EmbeddingBatch(np.array([[0.0], [4.0]])), "neg_l2", "l1", 2.0)
    assert pm.S[0, 1] == -2.0
    assert pm.tau == 2.0


def test_duplicated_labels_give_zero_partner_distance():
    ds = Dataset(np.eye(4), np.array([[1.0], [2.0], [3.0], [4.0]]))
    batch = build_two_view_batch(ds, [0, 1, 2, 3], IDENTITY_AUGMENTATION, np.random.default_rng(0))
    pm = pairwise_matrices(batch, batch.inputs)
    assert all(pm.D[2 * n, 2 * n + 1] == 0.0 for n in range(4))


def test_matrices_are_exactly_symmetric():
    rng = np.random.default_rng(1)
    v = rng.normal(size=(20, 5)) * 3
    y = rng.uniform(-40, 40, size=(20, 2))
    for kind in SimilarityKind:
        S = similarity_matrix(v, kind)
        assert np.array_equal(S, S.T)
    for kind in LabelDistanceKind:
        D = distance_matrix(y, kind)
        assert np.array_equal(D, D.T) and np.all(np.diag(D) == 0) and D.min() >= 0


def test_translation_and_shift_invariance():
    rng = np.random.default_rng(2)
    v = rng.normal(size=(10, 4))
    shift = rng.normal(size=4)
    for kind in ("neg_l1", "neg_l2"):
        a = similarity_matrix(v, kind)
        b = similarity_matrix(v + shift, kind)
        assert np.allclose(a, b, atol=1e-12, rtol=0)
    # quarter-integer labels keep every sum and difference exact in binary
    y = rng.integers(-40, 40, size=10) / 4.0
    assert np.array_equal(distance_matrix(y, "l1"), distance_matrix(y + 8.0, "l1"))


def test_positive_scaling_preserves_distance_order():
    y = np.random.default_rng(3).normal(size=12)
    D = distance_matrix(y, "l1")
    D2 = distance_matrix(3.5 * y, "l1")
    assert np.allclose(D2, 3.5 * D)
    assert np.array_equal(np.argsort(D, axis=1, kind="stable"), np.argsort(D2, axis=1, kind="stable"))


def test_pairwise_errors():
    with pytest.raises(DomainError):
        pairwise_matrices(np.zeros(3), np.zeros((2, 1)))
    with pytest.raises(DomainError):
        pairwise_matrices(np.zeros(2), np.zeros((2, 1)), tau=0.0)
    with pytest.raises(NumericError):
        pairwise_matrices(np.zeros(2), np.array([[np.nan], [0.0]]))


def test_embedding_batch_shape():
    e = EmbeddingBatch(np.arange(4.0))
    assert e.vectors.shape == (4, 1) and e.d_e == 1 and len(e) == 4

"""Temperature-scaled embedding similarities and label distances."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericError


class SimilarityKind(str, enum.Enum):
    COSINE = "cosine"
    NEG_L1 = "neg_l1"
    NEG_L2 = "neg_l2"


class LabelDistanceKind(str, enum.Enum):
    L1 = "l1"
    ANGULAR = "angular"


def similarity(v_i, v_j, kind: SimilarityKind) -> float:
    v_i = np.asarray(v_i, dtype=np.float64)
    v_j = np.asarray(v_j, dtype=np.float64)
    if v_i.shape != v_j.shape:
        raise DomainError(f"dimension mismatch {v_i.shape} vs {v_j.shape}")
    kind = SimilarityKind(kind)
    if kind is SimilarityKind.NEG_L2:
        return -float(np.sqrt(np.sum((v_i - v_j) ** 2)))
    if kind is SimilarityKind.NEG_L1:
        return -float(np.sum(np.abs(v_i - v_j)))
    ni, nj = np.linalg.norm(v_i), np.linalg.norm(v_j)
    if ni == 0 or nj == 0:
        raise DomainError("cosine similarity is undefined for a zero vector")
    return float(v_i @ v_j / (ni * nj))


def gaze_vectors(angles_deg: np.ndarray) -> np.ndarray:
    """(pitch, yaw) in degrees -> unit 3-D gaze directions."""
    a = np.radians(np.asarray(angles_deg, dtype=np.float64))
    pitch, yaw = a[..., 0], a[..., 1]
    return np.stack(
        [np.cos(pitch) * np.sin(yaw), np.sin(pitch), np.cos(pitch) * np.cos(yaw)], axis=-1
    )


def angular_error_deg(a_deg: np.ndarray, b_deg: np.ndarray) -> np.ndarray:
    """Angle in degrees between matching gaze rows of ``a`` and ``b``."""
    cos = np.sum(gaze_vectors(a_deg) * gaze_vectors(b_deg), axis=-1)
    return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))


def label_distance(y_i, y_j, kind: LabelDistanceKind) -> float:
    y_i = np.atleast_1d(np.asarray(y_i, dtype=np.float64))
    y_j = np.atleast_1d(np.asarray(y_j, dtype=np.float64))
    if y_i.shape != y_j.shape:
        raise DomainError(f"dimension mismatch {y_i.shape} vs {y_j.shape}")
    kind = LabelDistanceKind(kind)
    if kind is LabelDistanceKind.L1:
        return float(np.sum(np.abs(y_i - y_j)))
    if y_i.shape != (2,):
        raise DomainError("angular distance needs (pitch, yaw) labels, d_t = 2")
    return float(angular_error_deg(y_i, y_j))


def _mirror_upper(m: np.ndarray) -> np.ndarray:
    return np.triu(m) + np.triu(m, 1).T


def similarity_matrix(v: np.ndarray, kind: SimilarityKind) -> np.ndarray:
    """Unscaled ``sim(v_i, v_j)`` for all pairs; exactly symmetric."""
    v = np.asarray(v, dtype=np.float64)
    kind = SimilarityKind(kind)
    if kind is SimilarityKind.COSINE:
        norms = np.linalg.norm(v, axis=1)
        if np.any(norms == 0):
            raise DomainError("cosine similarity is undefined for a zero embedding")
        u = v / norms[:, None]
        sim = u @ u.T
    else:
        diff = v[:, None, :] - v[None, :, :]
        if kind is SimilarityKind.NEG_L2:
            sim = -np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        else:
            sim = -np.abs(diff).sum(axis=2)
    return _mirror_upper(sim)


def distance_matrix(y: np.ndarray, kind: LabelDistanceKind) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    kind = LabelDistanceKind(kind)
    if kind is LabelDistanceKind.L1:
        d = np.abs(y[:, None, :] - y[None, :, :]).sum(axis=2)
    else:
        if y.shape[1] != 2:
            raise DomainError("angular distance needs (pitch, yaw) labels, d_t = 2")
        g = gaze_vectors(y)
        d = np.degrees(np.arccos(np.clip(g @ g.T, -1.0, 1.0)))
    d = _mirror_upper(d)
    np.fill_diagonal(d, 0.0)
    return d


@dataclass
class EmbeddingBatch:
    """Encoder outputs for a batch, one row per view (``2N x d_e``)."""

    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim == 1:
            self.vectors = self.vectors[:, None]

    @property
    def d_e(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.vectors)


@dataclass
class PairwiseMatrices:
    """``S[i, j] = sim(v_i, v_j) / tau`` and ``D[i, j] = d(y_i, y_j)``."""

    S: np.ndarray
    D: np.ndarray
    tau: float = 1.0

    @property
    def size(self) -> int:
        return self.S.shape[0]


def pairwise_matrices(
    batch,
    emb,
    sim_kind: SimilarityKind = SimilarityKind.NEG_L2,
    dist_kind: LabelDistanceKind = LabelDistanceKind.L1,
    tau: float = 2.0,
) -> PairwiseMatrices:
    """``batch`` is a TwoViewBatch or a label matrix; ``emb`` the ``2N x d_e`` embeddings."""
    labels = getattr(batch, "labels", batch)
    v = np.asarray(getattr(emb, "vectors", emb), dtype=np.float64)
    if v.ndim == 1:
        v = v[:, None]
    if tau <= 0:
        raise DomainError(f"temperature must be positive, got {tau}")
    if len(v) != len(labels):
        raise DomainError(f"{len(v)} embeddings for {len(labels)} labels")
    if not np.all(np.isfinite(v)):
        raise NumericError("non-finite embeddings")
    S = similarity_matrix(v, sim_kind) / tau
    D = distance_matrix(labels, dist_kind)
    return PairwiseMatrices(S, D, float(tau))

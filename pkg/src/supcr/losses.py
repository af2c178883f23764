"""Supervised contrastive regression loss, its gradient, and contrastive baselines.

All losses are written against a :class:`PairwiseMatrices` (row ``i`` of ``S``
holds the anchor-``i`` similarities). The ``*_grad_s`` variants return the
gradient with respect to ``S`` viewed as independent row entries;
:func:`similarity_backward` folds the two entries of every symmetric pair and
chains through the similarity measure down to the embeddings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericError
from .pairwise import (
    LabelDistanceKind,
    PairwiseMatrices,
    SimilarityKind,
    pairwise_matrices,
)

TIE_RTOL = 1e-9
NORM_EPS = 1e-12


@dataclass
class LossOutput:
    value: float
    grad: np.ndarray | None = None


def _check(pm: PairwiseMatrices) -> tuple[np.ndarray, np.ndarray]:
    S = np.asarray(pm.S, dtype=np.float64)
    D = np.asarray(pm.D, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape != D.shape:
        raise DomainError(f"S and D must be matching square matrices, got {S.shape}, {D.shape}")
    if S.shape[0] < 2:
        raise DomainError("need at least two batch rows")
    if not (np.all(np.isfinite(S)) and np.all(np.isfinite(D))):
        raise NumericError("non-finite similarities or distances")
    return S, D


def canonical_distances(D: np.ndarray) -> np.ndarray:
    """Snap near-equal distances in each row to their group's smallest member.

    Consecutive sorted values ``a <= b`` fall in one group when
    ``b - a <= 1e-9 * max(1, a)``; the loss compares group representatives so
    that float noise in label arithmetic never splits a true tie.
    """
    D = np.asarray(D, dtype=np.float64)
    order = np.argsort(D, axis=1, kind="stable")
    srt = np.take_along_axis(D, order, axis=1)
    step = np.diff(srt, axis=1)
    tol = TIE_RTOL * np.maximum(1.0, srt[:, :-1])
    is_start = np.ones_like(srt, dtype=bool)
    is_start[:, 1:] = step > tol
    pos = np.where(is_start, np.arange(srt.shape[1]), 0)
    start = np.maximum.accumulate(pos, axis=1)
    rep = np.take_along_axis(srt, start, axis=1)
    out = np.empty_like(D)
    np.put_along_axis(out, order, rep, axis=1)
    return out


def _mean(terms: np.ndarray) -> float:
    """Accurate mean that returns ``x`` exactly when every term equals ``x``."""
    terms = np.asarray(terms, dtype=np.float64).ravel()
    shift = terms[0]
    return shift + math.fsum(terms - shift) / terms.size


def _running_lse(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise prefix log-sum-exp, split as ``(shift, log_sum)``.

    The prefix value is ``shift + log_sum`` with ``log_sum`` in ``[0, log n]``;
    callers subtract ``s`` from ``shift`` first so large similarities do not
    cancel. Rows whose spread stays clear of underflow are summed in the exp
    domain under the row max (exact for equal entries); the rest use an
    online running-max scan.
    """
    peak = s.max(axis=1, keepdims=True)
    z = s - peak
    safe = z.min(axis=1) > -600.0
    shift = np.broadcast_to(peak, s.shape).copy()
    log_sum = np.empty_like(s)
    log_sum[safe] = np.log(np.cumsum(np.exp(z[safe]), axis=1))
    if not safe.all():
        rows = s[~safe]
        m = rows[:, 0].copy()
        acc = np.ones(len(rows))
        shift[~safe, 0] = m
        log_sum[~safe, 0] = 0.0
        for t in range(1, rows.shape[1]):
            col = rows[:, t]
            new_m = np.maximum(m, col)
            acc = acc * np.exp(m - new_m) + np.exp(col - new_m)
            m = new_m
            shift[~safe, t] = m
            log_sum[~safe, t] = np.log(acc)
    return shift, log_sum


def supcr_loss_naive(pm: PairwiseMatrices) -> float:
    """Direct evaluation: one masked log-sum-exp per (anchor, partner) pair."""
    S, D = _check(pm)
    n = S.shape[0]
    Dc = canonical_distances(D)
    not_self = ~np.eye(n, dtype=bool)
    # mask[i, j, k]: k contributes to the denominator of pair (i, j)
    mask = (Dc[:, None, :] >= Dc[:, :, None]) & not_self[:, None, :]
    logits = np.where(mask, S[:, None, :], -np.inf)
    peak = logits.max(axis=2, keepdims=True)
    terms = (peak[..., 0] - S) + np.log(np.exp(logits - peak).sum(axis=2))
    terms = terms[not_self]
    return _mean(terms)


def _sorted_rows(S: np.ndarray, D: np.ndarray):
    """Per-anchor view sorted by label distance, descending, diagonal removed.

    Tie grouping matches :func:`canonical_distances`; groups are found on the
    ascending sort and the order is then reversed.
    """
    n = S.shape[0]
    width = n - 1
    D = np.array(D, dtype=np.float64)
    np.fill_diagonal(D, -np.inf)  # sorts first ascending, dropped after reversal
    order = np.argsort(D, axis=1, kind="stable")[:, :0:-1]
    d = np.take_along_axis(D, order, axis=1)[:, ::-1]  # ascending, diagonal removed
    step = np.diff(d, axis=1)
    same = step <= TIE_RTOL * np.maximum(1.0, d[:, :-1])
    # back to descending: position t and t+1 tie iff same[width - 2 - t]
    same = same[:, ::-1]
    s = np.take_along_axis(S, order, axis=1)
    cols = order

    is_end = np.ones((n, width), dtype=bool)
    is_end[:, :-1] = ~same
    is_start = np.ones((n, width), dtype=bool)
    is_start[:, 1:] = is_end[:, :-1]
    idx = np.arange(width)
    end = np.minimum.accumulate(np.where(is_end, idx, width)[:, ::-1], axis=1)[:, ::-1]
    start = np.maximum.accumulate(np.where(is_start, idx, 0), axis=1)
    return s, cols, is_end, start, end


def _supcr_core(pm: PairwiseMatrices, with_grad: bool):
    S, D = _check(pm)
    n = S.shape[0]
    s, cols, is_end, start, end = _sorted_rows(S, D)
    # running log-sum-exp over the farthest-first order; a tie group's
    # denominator is the running value at the group's last member
    shift, log_sum = _running_lse(s)
    shift = np.take_along_axis(shift, end, axis=1)
    log_sum = np.take_along_axis(log_sum, end, axis=1)
    terms = (shift - s) + log_sum
    denom = shift + log_sum
    value = _mean(terms)
    if not with_grad:
        return value, None

    # d(value)/d s_ik = (sum over groups g no farther than k of
    #   n_g * softmax_g(k) - 1) / (n (n-1)); accumulated in log space
    count = (end - start + 1).astype(np.float64)
    marker = np.where(is_end, np.log(count) - denom, -np.inf)
    acc = np.logaddexp.accumulate(marker[:, ::-1], axis=1)[:, ::-1]
    g_sorted = (np.exp(s + acc) - 1.0) / (n * (n - 1))
    G = np.zeros_like(S)
    np.put_along_axis(G, cols, g_sorted, axis=1)
    return value, G


def supcr_hessian_rows(pm: PairwiseMatrices) -> np.ndarray:
    """Per-anchor Hessian of the loss in the row entries of ``S``.

    Returns ``H`` of shape ``(n, n, n)`` with ``H[i]`` the Hessian of anchor
    ``i``'s terms with respect to ``S[i, :]`` (zero row/column at ``i``).
    Each tie group contributes ``n_g (diag(p_g) - p_g p_g^T)`` with ``p_g``
    the softmax over its denominator set.
    """
    S, D = _check(pm)
    n = S.shape[0]
    s, cols, is_end, start, end = _sorted_rows(S, D)
    shift, log_sum = _running_lse(s)
    running = shift + log_sum
    width = n - 1
    weight = np.where(is_end, (end - start + 1).astype(np.float64), 0.0)
    inside = np.tri(width, dtype=bool)  # [t, c]: column c within the set closing at t
    P = np.exp(np.where(inside[None], s[:, None, :] - running[:, :, None], -np.inf))
    P *= is_end[:, :, None]
    diag = np.einsum("it,itc->ic", weight, P)
    H_sorted = -np.einsum("it,itc,itd->icd", weight, P, P)
    idx = np.arange(width)
    H_sorted[:, idx, idx] += diag
    H = np.zeros((n, n, n))
    rows = np.arange(n)[:, None, None]
    H[rows, cols[:, :, None], cols[:, None, :]] = H_sorted
    return H / (n * (n - 1))


def supcr_loss_fast(pm: PairwiseMatrices) -> float:
    """Same value as :func:`supcr_loss_naive` in ``O(n^2 log n)``."""
    return _supcr_core(pm, with_grad=False)[0]


def supcr_loss_grad_s(pm: PairwiseMatrices) -> tuple[float, np.ndarray]:
    """Loss value and its gradient with respect to each row entry of ``S``."""
    return _supcr_core(pm, with_grad=True)


def similarity_backward(
    v: np.ndarray, G: np.ndarray, kind: SimilarityKind, tau: float
) -> np.ndarray:
    """Chain a row-entry gradient on ``S`` back to the embeddings ``v``.

    ``S`` is symmetric, so entry ``(a, b)`` and ``(b, a)`` are the same
    function of ``(v_a, v_b)``; both contributions are summed.
    """
    v = np.asarray(v, dtype=np.float64)
    Gs = G + G.T
    np.fill_diagonal(Gs, 0.0)
    kind = SimilarityKind(kind)
    if kind is SimilarityKind.NEG_L2:
        diff = v[:, None, :] - v[None, :, :]
        r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        singular = r < NORM_EPS
        W = np.where(singular, 0.0, Gs / np.maximum(r, NORM_EPS))
        grad = -(W.sum(axis=1)[:, None] * v - W @ v)
    elif kind is SimilarityKind.NEG_L1:
        sign = np.sign(v[:, None, :] - v[None, :, :])
        grad = -np.einsum("ab,abk->ak", Gs, sign)
    else:
        norms = np.linalg.norm(v, axis=1)
        if np.any(norms == 0):
            raise DomainError("cosine similarity is undefined for a zero embedding")
        u = v / norms[:, None]
        cos = u @ u.T
        grad = (Gs @ u - (Gs * cos).sum(axis=1)[:, None] * u) / norms[:, None]
    return grad / tau


def supcr_loss_grad(
    batch,
    emb,
    sim_kind: SimilarityKind = SimilarityKind.NEG_L2,
    dist_kind: LabelDistanceKind = LabelDistanceKind.L1,
    tau: float = 2.0,
) -> LossOutput:
    """Loss and ``dL/dv`` for embeddings ``emb`` of a two-view batch."""
    v = np.asarray(getattr(emb, "vectors", emb), dtype=np.float64)
    if v.ndim == 1:
        v = v[:, None]
    pm = pairwise_matrices(batch, v, sim_kind, dist_kind, tau)
    value, G = supcr_loss_grad_s(pm)
    grad = similarity_backward(v, G, sim_kind, tau)
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite SupCR gradient")
    return LossOutput(value, grad)


def _row_lse(S: np.ndarray) -> np.ndarray:
    """Log-sum-exp of each row over off-diagonal entries."""
    off = np.where(np.eye(len(S), dtype=bool), -np.inf, S)
    peak = off.max(axis=1, keepdims=True)
    return peak[:, 0] + np.log(np.exp(off - peak).sum(axis=1))


def supcon_loss_grad_s(pm: PairwiseMatrices, class_ids) -> tuple[float, np.ndarray]:
    S, _ = _check(pm)
    n = len(S)
    class_ids = np.asarray(class_ids)
    if class_ids.shape != (n,):
        raise DomainError(f"need {n} class ids, got shape {class_ids.shape}")
    pos = (class_ids[:, None] == class_ids[None, :]) & ~np.eye(n, dtype=bool)
    n_pos = pos.sum(axis=1)
    if np.any(n_pos == 0):
        raise DomainError(f"anchor {int(np.argmin(n_pos))} has no positive")
    lse = _row_lse(S)
    per_anchor = np.where(pos, lse[:, None] - S, 0.0).sum(axis=1) / n_pos
    value = math.fsum(per_anchor) / n
    soft = np.exp(S - lse[:, None])
    np.fill_diagonal(soft, 0.0)
    G = (soft - pos / n_pos[:, None]) / n
    return value, G


def supcon_loss(pm: PairwiseMatrices, class_ids) -> float:
    """SupCon with positives averaged outside the log ("out" form)."""
    return supcon_loss_grad_s(pm, class_ids)[0]


def view_partners(n: int) -> np.ndarray:
    if n % 2:
        raise DomainError("two-view layout needs an even number of rows")
    return np.arange(n) ^ 1


def simclr_loss_grad_s(pm: PairwiseMatrices) -> tuple[float, np.ndarray]:
    S, _ = _check(pm)
    n = len(S)
    partner = view_partners(n)
    lse = _row_lse(S)
    rows = np.arange(n)
    value = math.fsum(lse - S[rows, partner]) / n
    soft = np.exp(S - lse[:, None])
    np.fill_diagonal(soft, 0.0)
    soft[rows, partner] -= 1.0
    return value, soft / n


def simclr_loss(pm: PairwiseMatrices) -> float:
    """NT-Xent: each row's only positive is its augmentation partner."""
    return simclr_loss_grad_s(pm)[0]


def bin_labels(labels, num_bins: int, value_range) -> np.ndarray:
    """Equal-width bin index of the first label dimension.

    Values outside ``value_range`` are clamped into the boundary bins; the
    right edge belongs to the last bin.
    """
    if num_bins < 2:
        raise DomainError("need at least two bins")
    y = np.asarray(labels, dtype=np.float64)
    if y.ndim > 1:
        y = y[:, 0]
    lo, hi = (float(r) for r in value_range)
    if not hi > lo:
        raise DomainError("empty binning range")
    idx = np.floor((y - lo) / (hi - lo) * num_bins).astype(np.int64)
    return np.clip(idx, 0, num_bins - 1)

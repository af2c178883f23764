"""Executable lower bound, tightness construction and delta-ordering checks.

Everything works on a label-distance matrix ``D`` and a similarity matrix
``S`` (already divided by the temperature). Ties in ``D`` are grouped with the
same tolerance as the loss (:func:`supcr.losses.canonical_distances`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError
from .losses import (
    TIE_RTOL,
    _mean,
    canonical_distances,
    supcr_hessian_rows,
    supcr_loss_fast,
    supcr_loss_grad_s,
)
from .pairwise import PairwiseMatrices


@dataclass
class DistanceProfile:
    """Per-anchor sorted distinct distances and their multiplicities."""

    distances: list[np.ndarray]
    counts: list[np.ndarray]
    matrix: np.ndarray  # tie-canonicalized D

    @property
    def size(self) -> int:
        return len(self.counts)

    @property
    def groups(self) -> list[int]:
        return [len(c) for c in self.counts]

    def min_count(self) -> int:
        return int(min(c.min() for c in self.counts))


@dataclass
class TheoryReport:
    lower_bound: float
    epsilon: float
    gamma: float
    delta: float | None = None
    achieved_loss: float | None = None
    is_delta_ordered: bool | None = None
    first_violation: tuple[int, int, int] | None = None
    steps: int = 0
    converged: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def excess(self) -> float | None:
        return None if self.achieved_loss is None else self.achieved_loss - self.lower_bound


def distance_profile(D) -> DistanceProfile:
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != D.shape[1] or D.shape[0] < 2:
        raise DomainError(f"need a square distance matrix with >= 2 rows, got {D.shape}")
    if not np.allclose(D, D.T, rtol=TIE_RTOL, atol=0.0):
        raise DomainError("distance matrix is not symmetric")
    if np.any(D < 0) or np.any(np.diag(D) != 0):
        raise DomainError("distances must be nonnegative with a zero diagonal")
    Dc = canonical_distances(D)
    n = len(D)
    off = ~np.eye(n, dtype=bool)
    distances, counts = [], []
    for row, keep in zip(Dc, off):
        vals, cnt = np.unique(row[keep], return_counts=True)
        distances.append(vals)
        counts.append(cnt)
    return DistanceProfile(distances, counts, Dc)


def lower_bound(profile: DistanceProfile) -> float:
    """``(1 / (n (n-1))) * sum_i sum_m n_im log n_im``.

    Summed as one ``log n_im`` per (anchor, partner) pair so that the
    single-group case reproduces the loss's own reduction bit for bit.
    """
    per_pair = np.concatenate([np.repeat(np.log(c.astype(np.float64)), c) for c in profile.counts])
    return _mean(per_pair)


def epsilon_for_delta(profile: DistanceProfile, delta: float) -> float:
    """Loss slack below which the similarities must be delta-ordered."""
    if not 0 < delta < 1:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    n = profile.size
    max_count = max(int(c.max()) for c in profile.counts)
    # log(1 + 1/(n_im e^(delta + 1/delta))) is smallest at the largest group
    order_term = math.log1p(math.exp(-(delta + 1.0 / delta) - math.log(max_count)))
    tie_term = 2.0 * math.log((1.0 + math.exp(delta)) / 2.0) - delta
    return min(order_term, tie_term) / (n * (n - 1))


def smallest_delta(profile: DistanceProfile, excess: float) -> float | None:
    """Smallest delta in (0, 1) with ``epsilon_for_delta > excess``, if any."""
    if excess <= 0:
        excess = 0.0
    hi = 1.0 - 1e-12
    if epsilon_for_delta(profile, hi) <= excess:
        return None
    lo = 1e-3
    if epsilon_for_delta(profile, lo) > excess:
        return lo
    root = brentq(lambda d: epsilon_for_delta(profile, d) - excess, lo, hi, xtol=1e-12)
    # nudge past the root so the strict inequality holds
    for _ in range(60):
        if epsilon_for_delta(profile, root) > excess:
            return root
        root = min(hi, root * (1 + 1e-9) + 1e-12)
    return root


def _relations(D: np.ndarray):
    Dc = canonical_distances(D)
    n = len(Dc)
    valid = np.ones((n, n, n), dtype=bool)
    idx = np.arange(n)
    valid[idx, idx, :] = False
    valid[idx, :, idx] = False
    valid[:, idx, idx] = False  # j == k carries no constraint
    closer = (Dc[:, :, None] < Dc[:, None, :]) & valid
    tied = (Dc[:, :, None] == Dc[:, None, :]) & valid
    return closer, tied


def ordering_gaps(S, D) -> tuple[np.ndarray, np.ndarray]:
    """Per anchor: smallest ``s_ij - s_ik`` over ``d_ij < d_ik`` and widest tie spread.

    Anchors without a closer/farther pair get ``+inf`` gap; without ties,
    ``0`` spread.
    """
    S = np.asarray(S, dtype=np.float64)
    closer, tied = _relations(D)
    diff = S[:, :, None] - S[:, None, :]
    gap = np.where(closer, diff, np.inf).min(axis=(1, 2))
    spread = np.where(tied, np.abs(diff), 0.0).max(axis=(1, 2))
    return gap, spread


def delta_ordered(S, D, delta: float) -> tuple[bool, tuple[int, int, int] | None]:
    """Check the delta-ordering conditions for every (anchor, j, k) triple.

    Returns ``(True, None)`` or ``(False, (i, j, k))`` for the first violating
    triple in row-major order.
    """
    if not 0 < delta < 1:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    S = np.asarray(S, dtype=np.float64)
    closer, tied = _relations(D)
    diff = S[:, :, None] - S[:, None, :]
    # d_ij > d_ik is the transpose of the closer case and needs no separate test
    farther = np.swapaxes(closer, 1, 2)
    bad = (closer & ~(diff > 1.0 / delta)) | (tied & ~(np.abs(diff) < delta))
    bad |= farther & ~(diff < -1.0 / delta)
    hits = np.argwhere(bad)
    if len(hits) == 0:
        return True, None
    i, j, k = (int(t) for t in hits[0])
    return False, (i, j, k)


def gamma_for_epsilon(profile: DistanceProfile, epsilon: float) -> float:
    if epsilon <= 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    return math.log(profile.size / (profile.min_count() * epsilon))


def _global_groups(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distinct values of ``values`` under the tie tolerance and each entry's rank."""
    uniq = np.unique(values)
    is_start = np.ones(len(uniq), dtype=bool)
    is_start[1:] = np.diff(uniq) > TIE_RTOL * np.maximum(1.0, uniq[:-1])
    reps = uniq[is_start]
    rank_of_uniq = np.cumsum(is_start) - 1
    ranks = rank_of_uniq[np.searchsorted(uniq, values)]
    return reps, ranks


def tight_similarities(profile: DistanceProfile, epsilon: float) -> np.ndarray:
    """Similarity matrix whose loss lies in ``[L*, L* + epsilon)``.

    ``s_ij = -(gamma + 1) * r(d_ij)`` where ``r`` ranks the distinct distance
    values of the whole batch. Ranking globally (rather than per anchor)
    keeps ``S`` symmetric for any metric ``D`` while every anchor still sees
    equal similarities for equal distances and gaps of at least
    ``gamma + 1`` between distinct ones.
    """
    gamma = gamma_for_epsilon(profile, epsilon)
    Dc = profile.matrix
    n = len(Dc)
    off = ~np.eye(n, dtype=bool)
    sym = np.minimum(Dc, Dc.T)  # row-wise canonicalization may differ by < tol
    _, ranks = _global_groups(sym[off])
    S = np.zeros((n, n))
    S[off] = -(gamma + 1.0) * ranks
    gap, spread = ordering_gaps(S, Dc)
    if np.any(spread > 0) or np.any(gap <= gamma):
        raise DomainError("distance ties are inconsistent across anchors; cannot build a tight S")
    return S


def tight_embeddings_1d(labels, epsilon: float, tau: float) -> np.ndarray:
    """1-D embeddings ``c * y`` whose NEG_L2 loss lies in ``[L*, L* + epsilon)``.

    ``c = tau * (gamma + 1) / gap`` with ``gap`` the smallest difference between
    distinct label distances in the batch. Returns zeros when all distances
    coincide.
    """
    from .pairwise import distance_matrix

    y = np.asarray(labels, dtype=np.float64)
    if y.ndim == 2:
        if y.shape[1] != 1:
            raise DomainError("coordinate construction needs scalar labels")
        y = y[:, 0]
    if tau <= 0:
        raise DomainError("temperature must be positive")
    D = distance_matrix(y, "l1")
    profile = distance_profile(D)
    n = len(y)
    reps, _ = _global_groups(profile.matrix[~np.eye(n, dtype=bool)])
    if len(reps) < 2:
        return np.zeros((n, 1))
    gamma = gamma_for_epsilon(profile, epsilon)
    c = tau * (gamma + 1.0) / np.diff(reps).min()
    return (c * y)[:, None]


def _report(profile: DistanceProfile, epsilon: float) -> TheoryReport:
    return TheoryReport(
        lower_bound=lower_bound(profile),
        epsilon=epsilon,
        gamma=gamma_for_epsilon(profile, epsilon),
    )


def _symmetric_hessian(S: np.ndarray, D: np.ndarray, upper: tuple) -> np.ndarray:
    """Hessian of the loss in the free upper-triangle entries of ``S``."""
    H = supcr_hessian_rows(PairwiseMatrices(S, D))
    a, b = upper
    # entry u_ab sits at (a, b) and (b, a); couple pairs that share a row
    ends = ((a, b), (b, a))
    out = np.zeros((len(a), len(a)))
    for r1, c1 in ends:
        for r2, c2 in ends:
            same_row = r1[:, None] == r2[None, :]
            out += np.where(same_row, H[r1[:, None], c1[:, None], c2[None, :]], 0.0)
    return out


def optimize_similarities(
    D,
    target_epsilon: float,
    max_steps: int | None = None,
    step_size: float = 1.0,
    delta: float | None = None,
    init: np.ndarray | None = None,
    method: str = "newton",
    trace: list | None = None,
) -> tuple[np.ndarray, TheoryReport]:
    """Descend the loss over the free symmetric entries of ``S``.

    The loss is convex in ``S`` but has no finite minimizer when some anchor
    sees two distinct distances: the excess over ``L*`` decays like
    ``exp(-gap)``. Plain gradient steps (``method="gd"``, fixed
    ``step_size`` on the pair-count normalized objective) therefore shrink
    the excess only like ``1/steps``. The default damped Newton method
    (backtracking from ``step_size``) widens gaps by ``O(1)`` per step and
    reaches small targets in tens of steps. Both methods never accept a step
    that raises the loss.

    Descent stops once the excess drops below ``target_epsilon``. On success
    the report carries the delta-ordering verdict for ``delta`` or, if not
    given, for the smallest delta whose epsilon exceeds the achieved excess.
    When the budget runs out ``is_delta_ordered`` stays ``None``.
    """
    if method not in ("newton", "gd"):
        raise DomainError(f"unknown method {method!r}")
    if max_steps is None:
        max_steps = 200 if method == "newton" else 20000
    D = np.asarray(D, dtype=np.float64)
    profile = distance_profile(D)
    report = _report(profile, target_epsilon)
    bound = report.lower_bound
    n = len(D)
    scale = n * (n - 1)
    S = np.zeros((n, n)) if init is None else np.array(init, dtype=np.float64)
    if S.shape != (n, n):
        raise DomainError("initial similarities have the wrong shape")
    np.fill_diagonal(S, 0.0)
    if not np.allclose(S, S.T):
        raise DomainError("initial similarities must be symmetric")
    upper = np.triu_indices(n, 1)

    def evaluate(x):
        value, G = supcr_loss_grad_s(PairwiseMatrices(x, D))
        return value, (G + G.T)[upper]

    def unpack(u):
        x = np.zeros((n, n))
        x[upper] = u
        return x + x.T

    u = S[upper].copy()
    value, g = evaluate(S)
    if trace is not None:
        trace.append(value)
    steps = 0
    while value - bound >= target_epsilon and steps < max_steps:
        steps += 1
        if method == "gd":
            direction = -scale * g
        else:
            H = _symmetric_hessian(unpack(u), D, upper)
            w, V = np.linalg.eigh(H)
            floor = max(w.max(), 0.0) * 1e-10 + 1e-300
            direction = -V @ ((V.T @ g) / np.maximum(w, floor))
            longest = np.abs(direction).max()
            if longest > 10.0:  # keep a near-singular solve from jumping far
                direction *= 10.0 / longest
        t = step_size
        slope = float(g @ direction)
        while True:
            cand = u + t * direction
            cand_value, cand_g = evaluate(unpack(cand))
            if method == "gd" or cand_value <= value + 1e-4 * t * slope:
                break
            t *= 0.5
            if t < 1e-12:
                break
        if cand_value > value:
            break  # no descent possible at working precision
        u, value, g = cand, cand_value, cand_g
        if trace is not None:
            trace.append(value)

    S = unpack(u)
    report.achieved_loss = value
    report.steps = steps
    report.converged = value - bound < target_epsilon
    if report.converged:
        d = delta if delta is not None else smallest_delta(profile, value - bound)
        report.delta = d
        if d is not None:
            report.is_delta_ordered, report.first_violation = delta_ordered(S, D, d)
    else:
        report.delta = delta
    return S, report


def supcr_value(S, D) -> float:
    return supcr_loss_fast(PairwiseMatrices(np.asarray(S, dtype=np.float64), np.asarray(D)))

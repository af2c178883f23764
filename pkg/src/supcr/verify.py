"""Self-generating verification suites for the loss theory and the gradients.

Each suite returns a list of :class:`CaseResult`; a run passes when every case
passes. The loss and backward functions are injectable so that a deliberately
broken variant can be shown to fail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .losses import (
    similarity_backward,
    supcr_loss_fast,
    supcr_loss_grad_s,
    supcr_loss_naive,
)
from .model import init_mlp, mlp_backward, mlp_forward
from .pairwise import PairwiseMatrices, SimilarityKind, distance_matrix, similarity_matrix
from .theory import (
    delta_ordered,
    distance_profile,
    epsilon_for_delta,
    gamma_for_epsilon,
    lower_bound,
    optimize_similarities,
    tight_embeddings_1d,
    tight_similarities,
)

LossFn = Callable[[PairwiseMatrices], float]

# rounding allowance below L*; both sides are sums of O(n^2) logs
BOUND_SLACK = 1e-12


@dataclass
class CaseResult:
    name: str
    passed: bool
    detail: str = ""
    fields: dict = field(default_factory=dict)


@dataclass
class TheorySettings:
    seed: int = 0
    bound_batches: int = 10000
    bound_max_n: int = 64
    tight_batches: int = 100
    tight_max_n: int = 32
    epsilons: tuple = (0.1, 0.01, 0.001)
    ordering_batches: int = 30
    ordering_max_n: int = 16
    deltas: tuple = (0.3, 0.5, 0.9)
    min_success_rate: float = 0.9


def random_labels(rng: np.random.Generator, n_pairs: int, ties: bool) -> np.ndarray:
    """Duplicated scalar labels; with ``ties`` drawn from a few integers."""
    if ties:
        base = rng.integers(0, max(2, n_pairs // 2 + 1), n_pairs).astype(np.float64)
    else:
        base = rng.normal(size=n_pairs)
    return np.repeat(base, 2)


def random_batch(rng: np.random.Generator, max_n: int, ties: bool | None = None):
    """Labels and a symmetric similarity matrix from random embeddings."""
    n_pairs = int(rng.integers(1, max_n // 2 + 1))
    if ties is None:
        ties = bool(rng.integers(2))
    y = random_labels(rng, n_pairs, ties)
    d_e = int(rng.integers(1, 17))
    v = rng.normal(size=(2 * n_pairs, d_e)) * rng.uniform(0.1, 5.0)
    kind = list(SimilarityKind)[int(rng.integers(3))]
    S = similarity_matrix(v, kind) / rng.uniform(0.5, 3.0)
    return y, S


def _theory_fields(profile, epsilon, delta, loss) -> dict:
    return {
        "lower_bound": lower_bound(profile),
        "epsilon": epsilon,
        "gamma": gamma_for_epsilon(profile, epsilon),
        "delta": delta,
        "achieved_loss": loss,
    }


def check_lower_bound(settings: TheorySettings, loss_fn: LossFn = supcr_loss_fast) -> CaseResult:
    rng = np.random.default_rng([settings.seed, 100])
    worst = None
    for b in range(settings.bound_batches):
        y, S = random_batch(rng, settings.bound_max_n)
        D = distance_matrix(y, "l1")
        profile = distance_profile(D)
        L_star = lower_bound(profile)
        loss = loss_fn(PairwiseMatrices(S, D))
        excess = loss - L_star
        if excess < -BOUND_SLACK:
            f = _theory_fields(profile, epsilon_for_delta(profile, 0.5), 0.5, loss)
            return CaseResult("lower_bound", False, f"bound violated in batch {b}: excess {excess:.3e}", f)
        if max(profile.groups) >= 2 and not excess > 0:
            f = _theory_fields(profile, epsilon_for_delta(profile, 0.5), 0.5, loss)
            return CaseResult("lower_bound", False, f"zero excess with distinct distances in batch {b}", f)
        if worst is None or excess < worst[0]:
            worst = (excess, profile, loss)
    excess, profile, loss = worst
    f = _theory_fields(profile, epsilon_for_delta(profile, 0.5), 0.5, loss)
    return CaseResult("lower_bound", True, f"{settings.bound_batches} batches, min excess {excess:.3e}", f)


def check_tightness(settings: TheorySettings, loss_fn: LossFn = supcr_loss_fast) -> CaseResult:
    rng = np.random.default_rng([settings.seed, 101])
    worst = None
    for eps in settings.epsilons:
        for b in range(settings.tight_batches):
            n_pairs = int(rng.integers(1, settings.tight_max_n // 2 + 1))
            y = random_labels(rng, n_pairs, bool(rng.integers(2)))
            D = distance_matrix(y, "l1")
            profile = distance_profile(D)
            L_star = lower_bound(profile)
            tau = float(rng.uniform(0.5, 3.0))
            v = tight_embeddings_1d(y, eps, tau)
            S_emb = similarity_matrix(v, SimilarityKind.NEG_L2) / tau
            for label, S in (("matrix", tight_similarities(profile, eps)), ("embedding", S_emb)):
                loss = loss_fn(PairwiseMatrices(S, D))
                ratio = (loss - L_star) / eps
                if not (L_star - BOUND_SLACK <= loss < L_star + eps):
                    f = _theory_fields(profile, eps, 0.5, loss)
                    return CaseResult(
                        "tightness", False, f"{label} construction at eps={eps} batch {b}: excess ratio {ratio:.3g}", f
                    )
                if worst is None or ratio > worst[0]:
                    worst = (ratio, profile, eps, loss)
    ratio, profile, eps, loss = worst
    f = _theory_fields(profile, eps, 0.5, loss)
    return CaseResult("tightness", True, f"max excess/eps {ratio:.3g}", f)


def check_ordering(settings: TheorySettings) -> list[CaseResult]:
    results = []
    for delta in settings.deltas:
        rng = np.random.default_rng([settings.seed, 102, int(round(delta * 1000))])
        success = ordered = 0
        last = None
        for b in range(settings.ordering_batches):
            n_pairs = int(rng.integers(2, settings.ordering_max_n // 2 + 1))
            y = random_labels(rng, n_pairs, bool(rng.integers(2)))
            D = distance_matrix(y, "l1")
            profile = distance_profile(D)
            eps = epsilon_for_delta(profile, delta)
            S, report = optimize_similarities(D, eps, delta=delta)
            if report.converged:
                success += 1
                ordered += bool(report.is_delta_ordered)
            last = (profile, eps, report)
        profile, eps, report = last
        rate = success / settings.ordering_batches
        passed = ordered == success and rate >= settings.min_success_rate
        detail = f"delta={delta}: {success}/{settings.ordering_batches} reached eps, {ordered} delta-ordered"
        results.append(
            CaseResult(f"ordering_delta_{delta}", passed, detail, _theory_fields(profile, eps, delta, report.achieved_loss))
        )
    return results


def check_degenerate(loss_fn: LossFn = supcr_loss_fast, sizes=(2, 4, 6, 16)) -> CaseResult:
    for n in sizes:
        y = np.full(n, 3.0)
        S = np.zeros((n, n))
        D = distance_matrix(y, "l1")
        profile = distance_profile(D)
        loss = loss_fn(PairwiseMatrices(S, D))
        L_star = lower_bound(profile)
        if not (loss == L_star == math.log(n - 1)):
            f = _theory_fields(profile, 0.01, 0.5, loss)
            return CaseResult("degenerate", False, f"2N={n}: loss {float(loss)!r}, L* {float(L_star)!r}, log(2N-1) {math.log(n - 1)!r}", f)
    ok, _ = delta_ordered(np.zeros((2, 2)), np.zeros((2, 2)), 0.5)
    f = _theory_fields(profile, 0.01, 0.5, loss)
    return CaseResult("degenerate", ok, f"equality loss = L* = log(2N-1) for 2N in {sizes}", f)


def run_theory_suite(settings: TheorySettings | None = None, loss_fn: LossFn = supcr_loss_fast):
    settings = settings or TheorySettings()
    results = [check_lower_bound(settings, loss_fn), check_degenerate(loss_fn), check_tightness(settings, loss_fn)]
    results += check_ordering(settings)
    return results


def fault_tie_excluding_loss(pm: PairwiseMatrices) -> float:
    """Deliberately wrong SupCR: drops tied samples (other than j) from denominators."""
    S, D = np.asarray(pm.S), np.asarray(pm.D)
    n = len(S)
    total = 0.0
    for i in range(n):
        for j in range(n):
            if j == i:
                continue
            keep = [k for k in range(n) if k != i and (D[i, k] > D[i, j] or k == j)]
            total += np.logaddexp.reduce(S[i, keep]) - S[i, j]
    return total / (n * (n - 1))


# gradient checks

@dataclass
class GradSettings:
    seed: int = 0
    configs: int = 100
    max_n: int = 16
    max_d: int = 8
    h: float = 1e-5
    tol: float = 1e-4
    e2e_configs: int = 10
    e2e_tol: float = 1e-3


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max-norm error relative to the larger gradient's max-norm (floored at 1e-8)."""
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-8)
    return float(np.abs(analytic - numeric).max() / scale)


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, h: float) -> np.ndarray:
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f(x)
        x[idx] = old - h
        down = f(x)
        x[idx] = old
        grad[idx] = (up - down) / (2 * h)
    return grad


def _kink_free_embeddings(rng, n, d, kind):
    while True:
        v = rng.normal(size=(n, d))
        if kind is SimilarityKind.NEG_L1:
            gaps = np.abs(v[:, None, :] - v[None, :, :])
            gaps[np.arange(n), np.arange(n)] = np.inf
            if gaps.min() < 1e-3:
                continue
        if kind is SimilarityKind.COSINE and np.linalg.norm(v, axis=1).min() < 1e-2:
            continue
        return v


def loss_and_embedding_grad(y, v, kind, tau, backward=similarity_backward):
    D = distance_matrix(y, "l1")
    S = similarity_matrix(v, kind) / tau
    value, G = supcr_loss_grad_s(PairwiseMatrices(S, D, tau))
    return value, backward(v, G, kind, tau)


def check_loss_gradients(settings: GradSettings, backward=similarity_backward) -> list[CaseResult]:
    results = []
    for kind in SimilarityKind:
        rng = np.random.default_rng([settings.seed, 200, list(SimilarityKind).index(kind)])
        worst = 0.0
        for _ in range(settings.configs):
            n = 2 * int(rng.integers(1, settings.max_n // 2 + 1))
            d = int(rng.integers(1, settings.max_d + 1))
            y = random_labels(rng, n // 2, bool(rng.integers(2)))
            v = _kink_free_embeddings(rng, n, d, kind)
            tau = float(rng.uniform(0.5, 3.0))
            _, grad = loss_and_embedding_grad(y, v, kind, tau, backward)
            D = distance_matrix(y, "l1")
            fd = central_difference(
                lambda x: supcr_loss_naive(PairwiseMatrices(similarity_matrix(x, kind) / tau, D)), v.copy(), settings.h
            )
            worst = max(worst, relative_error(grad, fd))
        results.append(
            CaseResult(f"loss_grad_{kind.value}", worst < settings.tol, f"max rel err {worst:.3e}", {"max_rel_err": worst})
        )
    return results


def check_mlp_backward(settings: GradSettings) -> CaseResult:
    rng = np.random.default_rng([settings.seed, 201])
    worst = 0.0
    for _ in range(settings.e2e_configs):
        widths = [int(rng.integers(1, 6)), int(rng.integers(2, 8)), int(rng.integers(1, 4))]
        net = init_mlp(widths, rng)
        x = rng.normal(size=(int(rng.integers(1, 6)), widths[0]))
        coef = rng.normal(size=(len(x), widths[-1]))
        out, cache = mlp_forward(net, x)
        grads, dx = mlp_backward(net, cache, coef)

        def f(_):
            return float(np.sum(mlp_forward(net, x)[0] * coef))

        numeric = [central_difference(f, p, settings.h).ravel() for p in net.params() + [x]]
        analytic = [g.ravel() for g in grads + [dx]]
        worst = max(worst, relative_error(np.concatenate(analytic), np.concatenate(numeric)))
    return CaseResult("mlp_backward", worst < settings.tol, f"max rel err {worst:.3e}", {"max_rel_err": worst})


def check_end_to_end(settings: GradSettings, backward=similarity_backward) -> CaseResult:
    """d(SupCR)/d(MLP params) through the similarity chain, 2N = 8, d_e = 4."""
    rng = np.random.default_rng([settings.seed, 202])
    worst = 0.0
    for _ in range(settings.e2e_configs):
        net = init_mlp([3, 6, 4], rng)
        x = rng.normal(size=(8, 3))
        y = random_labels(rng, 4, bool(rng.integers(2)))
        tau = 2.0
        D = distance_matrix(y, "l1")
        v, cache = mlp_forward(net, x)
        _, dv = loss_and_embedding_grad(y, v, SimilarityKind.NEG_L2, tau, backward)
        grads, _ = mlp_backward(net, cache, dv)

        def f(_):
            out = mlp_forward(net, x)[0]
            return supcr_loss_naive(PairwiseMatrices(similarity_matrix(out, "neg_l2") / tau, D))

        # one norm over all parameters: a dead ReLU unit has an exactly zero
        # gradient block where per-tensor normalisation only measures noise
        numeric = [central_difference(f, p, settings.h).ravel() for p in net.params()]
        analytic = [g.ravel() for g in grads]
        worst = max(worst, relative_error(np.concatenate(analytic), np.concatenate(numeric)))
    return CaseResult("end_to_end", worst < settings.e2e_tol, f"max rel err {worst:.3e}", {"max_rel_err": worst})


def run_grad_suite(settings: GradSettings | None = None, backward=similarity_backward):
    settings = settings or GradSettings()
    return check_loss_gradients(settings, backward) + [
        check_mlp_backward(settings),
        check_end_to_end(settings, backward),
    ]


def fault_halved_backward(v, G, kind, tau):
    """Deliberately wrong chain rule: averages the two symmetric entries instead of summing."""
    return 0.5 * similarity_backward(v, G, kind, tau)

"""Training schemes (linear probing, fine-tuning, regularization, direct) and metrics."""

from __future__ import annotations

import enum
import hashlib
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import spearmanr

from .batch import AugmentationSpec, Dataset, build_two_view_batch, feature_std
from .errors import ConfigError, DomainError, TrainingError
from .losses import (
    bin_labels,
    similarity_backward,
    simclr_loss_grad_s,
    supcon_loss_grad_s,
    supcr_loss_grad_s,
)
from .model import (
    MLP,
    LinearPredictor,
    OptimizerState,
    RegressionLossKind,
    init_linear_predictor,
    init_mlp,
    init_projection_head,
    mlp_backward,
    mlp_forward,
    regression_loss,
    sgd_step,
)
from .pairwise import (
    LabelDistanceKind,
    PairwiseMatrices,
    SimilarityKind,
    angular_error_deg,
    distance_matrix,
    similarity_matrix,
)

log = logging.getLogger(__name__)


class Scheme(str, enum.Enum):
    LINEAR_PROBING = "linear_probing"
    FINE_TUNING = "fine_tuning"
    REGULARIZATION = "regularization"
    DIRECT = "direct"


class EncoderLoss(str, enum.Enum):
    SUPCR = "supcr"
    SUPCON = "supcon"
    SIMCLR = "simclr"


@dataclass
class TrainConfig:
    scheme: Scheme = Scheme.LINEAR_PROBING
    encoder_loss: EncoderLoss = EncoderLoss.SUPCR
    regression_loss: RegressionLossKind = RegressionLossKind.L1
    huber_beta: float = 1.0
    tau: float = 2.0
    lam: float = 1.0
    epochs_encoder: int = 200
    epochs_predictor: int = 100
    epochs_finetune: int = 100
    batch_size: int = 128
    sim_kind: SimilarityKind = SimilarityKind.NEG_L2
    dist_kind: LabelDistanceKind = LabelDistanceKind.L1
    augmentation: AugmentationSpec = field(default_factory=AugmentationSpec)
    seed: int = 0
    num_bins: int = 10
    hidden: tuple = (64, 64, 64)
    d_e: int = 16
    projection_dim: int = 0
    lr_encoder: float = 0.05
    lr_predictor: float = 0.05
    lr_min: float = 0.0
    momentum: float = 0.9
    weight_decay: float = 1e-4

    def __post_init__(self):
        self.scheme = Scheme(self.scheme)
        self.encoder_loss = EncoderLoss(self.encoder_loss)
        self.regression_loss = RegressionLossKind(self.regression_loss)
        self.sim_kind = SimilarityKind(self.sim_kind)
        self.dist_kind = LabelDistanceKind(self.dist_kind)
        self.hidden = tuple(int(h) for h in self.hidden)

    def validate(self) -> None:
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.lam < 0:
            raise ConfigError("lam must be >= 0")
        if min(self.epochs_encoder, self.epochs_predictor) < 1 or self.epochs_finetune < 0:
            raise ConfigError("epoch counts must be >= 1 (fine-tune >= 0)")
        if self.batch_size < 2:
            raise ConfigError("batch_size (N) must be >= 2")
        if self.num_bins < 2:
            raise ConfigError("num_bins must be >= 2")
        if self.huber_beta <= 0:
            raise ConfigError("huber_beta must be positive")
        self.augmentation.validate()

    def to_dict(self) -> dict:
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, enum.Enum):
                out[k] = v.value
        out["hidden"] = list(self.hidden)
        return out


@dataclass
class Metrics:
    mae: float
    r2: float | None
    angular_deg: float | None
    spearman: float

    def to_dict(self) -> dict:
        return {"mae": self.mae, "r2": self.r2, "angular_deg": self.angular_deg, "spearman": self.spearman}


@dataclass
class TrainResult:
    encoder: MLP
    predictor: LinearPredictor
    head: MLP | None = None
    history: list[dict] = field(default_factory=list)


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


def _batches(n: int, size: int, rng: np.random.Generator):
    """Shuffled index chunks of ``size``; a trailing chunk smaller than 2 is dropped."""
    perm = rng.permutation(n)
    size = min(size, n)
    for start in range(0, n, size):
        chunk = perm[start : start + size]
        if len(chunk) >= 2:
            yield chunk


def _steps_per_epoch(n: int, size: int) -> int:
    size = min(size, n)
    full, rest = divmod(n, size)
    return full + (rest >= 2)


def param_hash(net: MLP) -> str:
    h = hashlib.sha256()
    for p in net.params():
        h.update(np.ascontiguousarray(p).tobytes())
    return h.hexdigest()


def contrastive_loss_grad(v: np.ndarray, labels: np.ndarray, config: TrainConfig, class_range=None):
    """Configured contrastive loss on embeddings ``v`` and its gradient ``dL/dv``."""
    S = similarity_matrix(v, config.sim_kind) / config.tau
    if config.encoder_loss is EncoderLoss.SUPCR:
        D = distance_matrix(labels, config.dist_kind)
        value, G = supcr_loss_grad_s(PairwiseMatrices(S, D, config.tau))
    elif config.encoder_loss is EncoderLoss.SUPCON:
        classes = bin_labels(labels, config.num_bins, class_range)
        value, G = supcon_loss_grad_s(PairwiseMatrices(S, S, config.tau), classes)
    else:
        value, G = simclr_loss_grad_s(PairwiseMatrices(S, S, config.tau))
    return value, similarity_backward(v, G, config.sim_kind, config.tau)


def _label_range(dataset: Dataset):
    y = dataset.labels[:, 0]
    lo, hi = float(y.min()), float(y.max())
    return (lo, hi) if hi > lo else (lo - 0.5, hi + 0.5)


def _check_finite(value: float, step: int, what: str):
    if not np.isfinite(value):
        raise TrainingError(f"{what} became non-finite", step=step)


def _forward(net: MLP, x: np.ndarray, step: int, what: str):
    with np.errstate(over="ignore", invalid="ignore"):
        out, cache = mlp_forward(net, x)
    if not np.all(np.isfinite(out)):
        raise TrainingError(f"{what} outputs became non-finite", step=step)
    return out, cache


def _update(params, grads, state: OptimizerState, what: str):
    """One SGD step; non-finite parameters afterwards abort with the step index."""
    step = state.step
    with np.errstate(over="ignore", invalid="ignore"):
        sgd_step(params, grads, state)
    if not all(np.isfinite(p).all() for p in params):
        raise TrainingError(f"{what} parameters became non-finite", step=step)


def _optimizer(config: TrainConfig, lr: float, total: int) -> OptimizerState:
    return OptimizerState(
        lr_base=lr,
        lr_min=config.lr_min,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
        total_steps=max(total, 1),
    )


def _build_encoder(dataset: Dataset, config: TrainConfig) -> MLP:
    rng = _rng(config.seed, 10)
    return init_mlp([dataset.d_in, *config.hidden, config.d_e], rng)


def train_encoder(dataset: Dataset, config: TrainConfig, encoder: MLP | None = None):
    """Contrastive pretraining on two-view batches.

    Returns ``(encoder, head, history)``; ``head`` is ``None`` unless
    ``projection_dim > 0``. The head only ever sees training batches.
    """
    config.validate()
    if encoder is None:
        encoder = _build_encoder(dataset, config)
    head = None
    if config.projection_dim > 0:
        head = init_projection_head(config.d_e, config.projection_dim, _rng(config.seed, 14))
    rng = _rng(config.seed, 11)
    std = feature_std(dataset)
    class_range = _label_range(dataset)
    per_epoch = _steps_per_epoch(len(dataset), config.batch_size)
    state = _optimizer(config, config.lr_encoder, config.epochs_encoder * per_epoch)
    params = encoder.params() + (head.params() if head is not None else [])
    history = []
    for epoch in range(config.epochs_encoder):
        losses = []
        for idx in _batches(len(dataset), config.batch_size, rng):
            batch = build_two_view_batch(dataset, idx, config.augmentation, rng, std)
            v, cache = _forward(encoder, batch.inputs, state.step, "encoder")
            if head is not None:
                z, head_cache = _forward(head, v, state.step, "projection head")
                value, dz = contrastive_loss_grad(z, batch.labels, config, class_range)
                head_grads, dv = mlp_backward(head, head_cache, dz)
            else:
                value, dv = contrastive_loss_grad(v, batch.labels, config, class_range)
                head_grads = []
            _check_finite(value, state.step, "encoder loss")
            enc_grads, _ = mlp_backward(encoder, cache, dv)
            _update(params, enc_grads + head_grads, state, "encoder")
            losses.append(value)
        history.append({"phase": "encoder", "epoch": epoch, "loss": float(np.mean(losses))})
        log.debug("encoder epoch %d loss %.6f", epoch, history[-1]["loss"])
    return encoder, head, history


def _target_stats(dataset: Dataset):
    mu = dataset.labels.mean(axis=0)
    sigma = dataset.labels.std(axis=0)
    return mu, np.where(sigma > 0, sigma, 1.0)


def _fold_output(predictor: LinearPredictor, mu, sigma) -> LinearPredictor:
    """Turn a predictor of standardized targets into one of raw targets."""
    return LinearPredictor([predictor.weight * sigma], [predictor.bias * sigma + mu])


def train_predictor(encoder: MLP, dataset: Dataset, config: TrainConfig):
    """Linear regressor on frozen, non-augmented encoder outputs.

    Inputs and targets are standardized during optimization; the scaling is
    folded back so the returned predictor maps raw embeddings to raw labels.
    Returns ``(predictor, history)``.
    """
    config.validate()
    emb = encoder(dataset.features)
    e_mu = emb.mean(axis=0)
    e_sd = emb.std(axis=0)
    e_sd = np.where(e_sd > 0, e_sd, 1.0)
    x = (emb - e_mu) / e_sd
    y_mu, y_sd = _target_stats(dataset)
    t = (dataset.labels - y_mu) / y_sd

    pred = init_linear_predictor(config.d_e, dataset.d_t, _rng(config.seed, 12))
    rng = _rng(config.seed, 13)
    per_epoch = _steps_per_epoch(len(dataset), config.batch_size)
    state = _optimizer(config, config.lr_predictor, config.epochs_predictor * per_epoch)
    history = []
    for epoch in range(config.epochs_predictor):
        losses = []
        for idx in _batches(len(dataset), config.batch_size, rng):
            out, cache = mlp_forward(pred, x[idx])
            value, g = regression_loss(out, t[idx], config.regression_loss, config.huber_beta)
            _check_finite(value, state.step, "predictor loss")
            grads, _ = mlp_backward(pred, cache, g)
            _update(pred.params(), grads, state, "predictor")
            losses.append(value)
        history.append({"phase": "predictor", "epoch": epoch, "loss": float(np.mean(losses))})

    w = pred.weight / e_sd[:, None]
    b = pred.bias - (e_mu / e_sd) @ pred.weight
    return _fold_output(LinearPredictor([w], [b]), y_mu, y_sd), history


def _joint_training(
    encoder: MLP,
    predictor: LinearPredictor,
    dataset: Dataset,
    config: TrainConfig,
    epochs: int,
    lam: float,
    stream: int,
    phase: str,
):
    """Regression on both views (+ ``lam`` x contrastive) through encoder and predictor."""
    rng = _rng(config.seed, stream)
    std = feature_std(dataset)
    class_range = _label_range(dataset)
    y_mu, y_sd = _target_stats(dataset)
    per_epoch = _steps_per_epoch(len(dataset), config.batch_size)
    state = _optimizer(config, config.lr_encoder, epochs * per_epoch)
    params = encoder.params() + predictor.params()
    history = []
    for epoch in range(epochs):
        losses = []
        for idx in _batches(len(dataset), config.batch_size, rng):
            batch = build_two_view_batch(dataset, idx, config.augmentation, rng, std)
            v, cache = _forward(encoder, batch.inputs, state.step, "encoder")
            out, p_cache = _forward(predictor, v, state.step, "predictor")
            t = (batch.labels - y_mu) / y_sd
            value, g = regression_loss(out, t, config.regression_loss, config.huber_beta)
            p_grads, dv = mlp_backward(predictor, p_cache, g)
            if lam > 0:
                c_value, c_dv = contrastive_loss_grad(v, batch.labels, config, class_range)
                value = value + lam * c_value
                dv = dv + lam * c_dv
            _check_finite(value, state.step, f"{phase} loss")
            e_grads, _ = mlp_backward(encoder, cache, dv)
            _update(params, e_grads + p_grads, state, phase)
            losses.append(value)
        history.append({"phase": phase, "epoch": epoch, "loss": float(np.mean(losses))})
    return history


def train_full(dataset: Dataset, config: TrainConfig):
    """End-to-end schemes. Returns ``(encoder, predictor, history)``.

    FINE_TUNING pretrains the encoder contrastively, then trains encoder and
    a fresh predictor jointly on the regression loss for ``epochs_finetune``
    epochs. REGULARIZATION minimizes regression + ``lam`` x contrastive in a
    single phase of ``epochs_encoder`` epochs; DIRECT is the same with no
    contrastive term.
    """
    config.validate()
    if config.scheme is Scheme.LINEAR_PROBING:
        raise ConfigError("train_full does not handle linear probing; use train_encoder + train_predictor")
    y_mu, y_sd = _target_stats(dataset)
    if config.scheme is Scheme.FINE_TUNING:
        encoder, _, history = train_encoder(dataset, config)
        predictor = init_linear_predictor(config.d_e, dataset.d_t, _rng(config.seed, 12))
        history += _joint_training(
            encoder, predictor, dataset, config, config.epochs_finetune, 0.0, 15, "finetune"
        )
    else:
        encoder = _build_encoder(dataset, config)
        predictor = init_linear_predictor(config.d_e, dataset.d_t, _rng(config.seed, 12))
        lam = config.lam if config.scheme is Scheme.REGULARIZATION else 0.0
        history = _joint_training(
            encoder, predictor, dataset, config, config.epochs_encoder, lam, 11, config.scheme.value
        )
    return encoder, _fold_output(predictor, y_mu, y_sd), history


def train(dataset: Dataset, config: TrainConfig) -> TrainResult:
    """Run whichever scheme ``config`` selects."""
    config.validate()
    if config.scheme is Scheme.LINEAR_PROBING:
        encoder, head, history = train_encoder(dataset, config)
        predictor, p_history = train_predictor(encoder, dataset, config)
        return TrainResult(encoder, predictor, head, history + p_history)
    encoder, predictor, history = train_full(dataset, config)
    return TrainResult(encoder, predictor, None, history)


SPEARMAN_PAIRS = 500


def embedding_label_spearman(emb: np.ndarray, labels: np.ndarray, dist_kind, seed: int = 0) -> float:
    """Rank correlation of embedding L2 distances with label distances over a fixed pair sample."""
    n = len(emb)
    if n < 3:
        raise DomainError("need at least three samples for a rank correlation")
    i, j = np.triu_indices(n, 1)
    if len(i) > SPEARMAN_PAIRS:
        pick = np.sort(_rng(seed, 20).choice(len(i), SPEARMAN_PAIRS, replace=False))
        i, j = i[pick], j[pick]
    e = np.linalg.norm(emb[i] - emb[j], axis=1)
    y = np.asarray(labels, dtype=np.float64).reshape(n, -1)
    if LabelDistanceKind(dist_kind) is LabelDistanceKind.L1:
        d = np.abs(y[i] - y[j]).sum(axis=1)
    else:
        d = angular_error_deg(y[i], y[j])
    rho = spearmanr(e, d).statistic
    return float(rho) if np.isfinite(rho) else 0.0


def regression_metrics(pred: np.ndarray, target: np.ndarray, dist_kind=LabelDistanceKind.L1):
    """``(mae, r2, angular)``; ``r2`` is ``None`` when a label dimension is constant."""
    pred = np.asarray(pred, dtype=np.float64).reshape(len(target), -1)
    target = np.asarray(target, dtype=np.float64).reshape(len(target), -1)
    mae = float(np.abs(pred - target).mean())
    ss_res = ((target - pred) ** 2).sum(axis=0)
    ss_tot = ((target - target.mean(axis=0)) ** 2).sum(axis=0)
    r2 = None if np.any(ss_tot == 0) else float(np.mean(1.0 - ss_res / ss_tot))
    angular = None
    if LabelDistanceKind(dist_kind) is LabelDistanceKind.ANGULAR:
        angular = float(angular_error_deg(pred, target).mean())
    return mae, r2, angular


def evaluate(encoder: MLP, predictor: LinearPredictor, dataset: Dataset, dist_kind=LabelDistanceKind.L1) -> Metrics:
    emb = encoder(dataset.features)
    pred = predictor(emb)
    mae, r2, angular = regression_metrics(pred, dataset.labels, dist_kind)
    rho = embedding_label_spearman(emb, dataset.labels, dist_kind)
    return Metrics(mae, r2, angular, rho)


def predict(encoder: MLP, predictor: LinearPredictor, features: np.ndarray) -> np.ndarray:
    return predictor(encoder(features))


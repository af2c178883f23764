import dataclasses

import numpy as np
import pytest

from supcr.batch import IDENTITY_AUGMENTATION, Dataset, GeneratorKind, GeneratorSpec, generate_synthetic_dataset
from supcr.errors import ConfigError, DomainError, TrainingError
from supcr.model import MLP, LinearPredictor
from supcr.pairwise import distance_matrix
from supcr.theory import distance_profile, lower_bound
from supcr.training import (
    EncoderLoss,
    Metrics,
    Scheme,
    TrainConfig,
    _batches,
    embedding_label_spearman,
    evaluate,
    param_hash,
    regression_metrics,
    train,
    train_encoder,
    train_full,
    train_predictor,
)

TINY = dict(hidden=(16,), d_e=4, batch_size=32, epochs_encoder=3, epochs_predictor=3, epochs_finetune=2)


def data(size=120, seed=0, **kw):
    return generate_synthetic_dataset(GeneratorSpec(size=size, d_in=kw.pop("d_in", 6), **kw), seed)


@pytest.mark.parametrize(
    "kw", [{"tau": 0.0}, {"lam": -1.0}, {"epochs_encoder": 0}, {"batch_size": 1}, {"num_bins": 1}]
)
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw).validate()


def test_config_defaults():
    c = TrainConfig()
    assert (c.tau, c.lam, c.epochs_encoder, c.epochs_predictor) == (2.0, 1.0, 200, 100)
    assert c.scheme is Scheme.LINEAR_PROBING and c.sim_kind.value == "neg_l2"
    assert c.to_dict()["scheme"] == "linear_probing"


@pytest.mark.parametrize("loss", list(EncoderLoss))
def test_encoder_training_is_deterministic(loss):
    ds = data()
    cfg = TrainConfig(encoder_loss=loss, seed=3, **TINY)
    a, _, ha = train_encoder(ds, cfg)
    b, _, hb = train_encoder(ds, cfg)
    assert param_hash(a) == param_hash(b) and ha == hb


def test_projection_head_used_only_in_training():
    ds = data()
    cfg = TrainConfig(projection_dim=3, **TINY)
    enc, head, _ = train_encoder(ds, cfg)
    assert head is not None and head.widths == [4, 4, 3]
    res = train(ds, cfg)
    assert res.encoder.widths[-1] == 4 and res.predictor.weight.shape == (4, 1)


def test_simclr_identity_augmentation_plateaus_above_zero():
    ds = data(size=64)
    cfg = TrainConfig(encoder_loss="simclr", augmentation=IDENTITY_AUGMENTATION, **{**TINY, "epochs_encoder": 80})
    _, _, hist = train_encoder(ds, cfg)
    losses = np.array([h["loss"] for h in hist])
    # identical views make the partner term exp(0); the other rows keep the denominator above 1
    late, later = losses[-20:-10].mean(), losses[-10:].mean()
    assert later > 0.02
    assert abs(later - late) < 0.05 * (losses[0] - later)


@pytest.mark.xfail(strict=True, reason="bound is approached only as similarity gaps diverge; see ledger")
def test_supcr_training_loss_near_batch_lower_bound():
    ds = data(size=500, d_in=16)
    cfg = TrainConfig(seed=0)
    _, _, hist = train_encoder(ds, cfg)
    bounds = []
    for idx in _batches(len(ds), cfg.batch_size, np.random.default_rng(1)):
        y = np.repeat(ds.labels[idx], 2, axis=0)
        bounds.append(lower_bound(distance_profile(distance_matrix(y, "l1"))))
    # recorded outcome: final loss ~3.94 against a batch-averaged bound ~0.69
    assert abs(hist[-1]["loss"] - np.mean(bounds)) < 0.05


def test_divergence_raises_with_step():
    ds = data()
    cfg = TrainConfig(lr_encoder=1e200, **TINY)
    with pytest.raises(TrainingError) as err:
        train_encoder(ds, cfg)
    assert err.value.step is not None


def test_identity_encoder_linear_labels():
    spec = GeneratorSpec(GeneratorKind.LINEAR, d_in=1, noise=0.0, size=400, weight=((2.0,),), bias=(0.5,))
    ds = generate_synthetic_dataset(spec, 0)
    test = generate_synthetic_dataset(spec, 1)
    enc = MLP([np.eye(1)], [np.zeros(1)])
    cfg = TrainConfig(d_e=1, epochs_predictor=50, batch_size=32)
    pred, _ = train_predictor(enc, ds, cfg)
    m = evaluate(enc, pred, test)
    assert m.r2 > 0.99


def test_constant_encoder_predicts_the_mean():
    ds = data(size=400, noise=0.0)
    test = data(size=400, seed=5, noise=0.0)
    enc = MLP([np.zeros((6, 3))], [np.array([1.0, -2.0, 0.5])])
    pred, _ = train_predictor(enc, ds, TrainConfig(d_e=3, epochs_predictor=30))
    m = evaluate(enc, pred, test)
    assert abs(m.r2) < 0.05


def test_predictor_training_leaves_encoder_untouched():
    ds = data()
    enc, _, _ = train_encoder(ds, TrainConfig(**TINY))
    before = param_hash(enc)
    train_predictor(enc, ds, TrainConfig(**TINY))
    assert param_hash(enc) == before


def test_direct_l1_beats_twice_noise():
    ds = data(size=1200, d_in=16, seed=2)
    train_set = ds.subset(np.arange(1000))
    test_set = ds.subset(np.arange(1000, 1200))
    cfg = TrainConfig(scheme="direct", epochs_encoder=100)
    enc, pred, hist = train_full(train_set, cfg)
    assert {h["phase"] for h in hist} == {"direct"}
    assert evaluate(enc, pred, test_set).mae < 2 * 0.1


def test_regularization_with_zero_lambda_is_direct():
    ds = data()
    a = train_full(ds, TrainConfig(scheme="regularization", lam=0.0, **TINY))
    b = train_full(ds, TrainConfig(scheme="direct", **TINY))
    assert param_hash(a[0]) == param_hash(b[0]) and param_hash(a[1]) == param_hash(b[1])
    assert [h["loss"] for h in a[2]] == [h["loss"] for h in b[2]]


def test_regularization_differs_with_positive_lambda():
    ds = data()
    a = train_full(ds, TrainConfig(scheme="regularization", lam=1.0, **TINY))
    b = train_full(ds, TrainConfig(scheme="direct", **TINY))
    assert param_hash(a[0]) != param_hash(b[0])


def test_zero_finetune_epochs_matches_probing_encoder():
    ds = data()
    ft = train_full(ds, TrainConfig(scheme="fine_tuning", **{**TINY, "epochs_finetune": 0}))
    lp = train(ds, TrainConfig(scheme="linear_probing", **TINY))
    assert param_hash(ft[0]) == param_hash(lp.encoder)


def test_train_full_rejects_probing():
    with pytest.raises(ConfigError):
        train_full(data(), TrainConfig(**TINY))


@pytest.mark.parametrize("scheme", list(Scheme))
def test_every_scheme_is_deterministic(scheme):
    ds = data()
    cfg = TrainConfig(scheme=scheme, **TINY)
    a, b = train(ds, cfg), train(ds, dataclasses.replace(cfg))
    assert param_hash(a.encoder) == param_hash(b.encoder)
    assert param_hash(a.predictor) == param_hash(b.predictor)


def test_two_phase_history():
    res = train(data(), TrainConfig(**TINY))
    phases = [h["phase"] for h in res.history]
    assert phases == ["encoder"] * 3 + ["predictor"] * 3


def test_metrics_examples():
    y = np.array([[0.0], [1.0], [2.0]])
    assert regression_metrics(y, y)[:2] == (0.0, 1.0)
    mae, r2, ang = regression_metrics(np.array([[0.0], [1.0], [1.0]]), y)
    assert mae == pytest.approx(1 / 3, abs=1e-15) and r2 == pytest.approx(0.5, abs=1e-15) and ang is None
    assert regression_metrics(np.full((3, 1), 1.0), y)[1] == pytest.approx(0.0, abs=1e-15)
    assert regression_metrics(y, np.ones((3, 1)))[1] is None


def test_multidim_r2_is_averaged_and_angular_reported():
    y = np.array([[0.0, 10.0], [1.0, 20.0], [2.0, 30.0]])
    p = np.array([[0.0, 10.0], [1.0, 20.0], [1.0, 30.0]])
    mae, r2, ang = regression_metrics(p, y, "angular")
    assert r2 == pytest.approx((0.5 + 1.0) / 2, abs=1e-15)
    assert mae == pytest.approx(1 / 6, abs=1e-15)
    assert ang == pytest.approx(1 / 3, abs=1e-6)


def test_spearman_of_ordered_embeddings():
    y = np.random.default_rng(1).uniform(size=(60, 1))
    assert embedding_label_spearman(3 * y, y, "l1") == pytest.approx(1.0, abs=1e-12)
    assert -1 <= embedding_label_spearman(np.random.default_rng(0).normal(size=(60, 2)), y, "l1") <= 1
    with pytest.raises(DomainError):
        embedding_label_spearman(y[:2], y[:2], "l1")


def test_metrics_to_dict():
    m = Metrics(0.1, None, None, 0.5)
    assert m.to_dict() == {"mae": 0.1, "r2": None, "angular_deg": None, "spearman": 0.5}


def test_angular_dataset_pipeline():
    ds = generate_synthetic_dataset(GeneratorSpec(GeneratorKind.ANGULAR, d_in=6, d_t=2, size=120), 0)
    res = train(ds, TrainConfig(dist_kind="angular", **TINY))
    m = evaluate(res.encoder, res.predictor, ds, "angular")
    assert m.angular_deg is not None and m.angular_deg >= 0
    assert isinstance(res.predictor, LinearPredictor)


def test_label_free_dataset_guard():
    ds = Dataset(np.zeros((4, 2)), np.zeros((4, 1)))
    res = train(ds, TrainConfig(**{**TINY, "batch_size": 4}))
    assert evaluate(res.encoder, res.predictor, ds).r2 is None

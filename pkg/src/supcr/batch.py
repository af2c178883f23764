"""Synthetic regression data, vector augmentations and two-view batches.

Every function here is a pure function of its inputs and an explicit
``numpy.random.Generator``; nothing keeps global state.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BatchSizeError, ConfigError

PITCH_RANGE = (-40.0, 10.0)
YAW_RANGE = (-45.0, 45.0)


class GeneratorKind(str, enum.Enum):
    LINEAR = "linear"
    NORM = "norm"
    ANGULAR = "angular"


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: np.ndarray


@dataclass
class Dataset:
    """Row-aligned feature and label matrices.

    ``features`` is ``(n, d_in)`` and ``labels`` is ``(n, d_t)``. ``metadata``
    records how the set was produced (generator spec, seed, split).
    """

    features: np.ndarray
    labels: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        labels = np.asarray(self.labels, dtype=np.float64)
        self.labels = labels.reshape(len(labels), -1) if labels.ndim == 1 else labels
        if len(self.features) == 0:
            raise ConfigError("dataset must be nonempty")
        if len(self.features) != len(self.labels):
            raise ConfigError(
                f"features have {len(self.features)} rows but labels have {len(self.labels)}"
            )
        if self.labels.shape[1] < 1:
            raise ConfigError("labels need at least one dimension")
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.labels))):
            raise ConfigError("dataset contains non-finite values")

    def __len__(self) -> int:
        return len(self.features)

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.features[i], self.labels[i])

    @property
    def d_in(self) -> int:
        return self.features.shape[1]

    @property
    def d_t(self) -> int:
        return self.labels.shape[1]

    def subset(self, indices, **extra_metadata) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.features[indices].copy(),
            self.labels[indices].copy(),
            {**self.metadata, **extra_metadata},
        )


@dataclass(frozen=True)
class GeneratorSpec:
    """What to synthesize.

    ``weight``/``bias`` pin the LINEAR map; when omitted the weight is drawn
    from N(0, 1/d_in) so labels have roughly unit variance, and the bias is 0.
    """

    kind: GeneratorKind = GeneratorKind.LINEAR
    d_in: int = 16
    d_t: int = 1
    noise: float = 0.1
    size: int = 1000
    weight: tuple | None = None
    bias: tuple | None = None

    def validate(self) -> None:
        kind = GeneratorKind(self.kind)
        if self.size < 4:
            raise ConfigError(f"size must be >= 4, got {self.size}")
        if self.noise < 0:
            raise ConfigError(f"noise must be >= 0, got {self.noise}")
        if self.d_in < 1 or self.d_t < 1:
            raise ConfigError(f"invalid dims d_in={self.d_in}, d_t={self.d_t}")
        if kind is GeneratorKind.NORM and self.d_t != 1:
            raise ConfigError("NORM generator produces scalar labels (d_t = 1)")
        if kind is GeneratorKind.ANGULAR and self.d_t != 2:
            raise ConfigError("ANGULAR generator produces (pitch, yaw) labels (d_t = 2)")
        if self.weight is not None and np.shape(self.weight) != (self.d_t, self.d_in):
            raise ConfigError(f"weight must have shape ({self.d_t}, {self.d_in})")
        if self.bias is not None and np.shape(self.bias) != (self.d_t,):
            raise ConfigError(f"bias must have shape ({self.d_t},)")

    def to_dict(self) -> dict:
        return {
            "kind": GeneratorKind(self.kind).value,
            "d_in": self.d_in,
            "d_t": self.d_t,
            "noise": self.noise,
            "size": self.size,
        }


def linear_parameters(spec: GeneratorSpec, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """The (W, b) used by the LINEAR generator for ``(spec, seed)``."""
    rng = np.random.default_rng([seed, 1])
    if spec.weight is not None:
        weight = np.asarray(spec.weight, dtype=np.float64)
    else:
        weight = rng.normal(0.0, 1.0 / np.sqrt(spec.d_in), size=(spec.d_t, spec.d_in))
    bias = np.zeros(spec.d_t) if spec.bias is None else np.asarray(spec.bias, dtype=np.float64)
    return weight, bias


def generate_synthetic_dataset(
    spec: GeneratorSpec, seed: int, features: np.ndarray | None = None
) -> Dataset:
    """Draw a dataset; ``features`` overrides the sampled inputs (size is then ignored)."""
    spec.validate()
    kind = GeneratorKind(spec.kind)
    rng = np.random.default_rng([seed, 0])
    if features is None:
        x = rng.standard_normal((spec.size, spec.d_in))
    else:
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if x.shape[1] != spec.d_in:
            raise ConfigError(f"features have width {x.shape[1]}, expected {spec.d_in}")
    n = len(x)
    noise = spec.noise * rng.standard_normal((n, spec.d_t))

    if kind is GeneratorKind.LINEAR:
        weight, bias = linear_parameters(spec, seed)
        y = x @ weight.T + bias + noise
    elif kind is GeneratorKind.NORM:
        y = np.linalg.norm(x, axis=1, keepdims=True) + noise
    else:
        # smooth squashing of two random projections into the pitch/yaw box
        proj = np.random.default_rng([seed, 2]).normal(0.0, 1.0 / np.sqrt(spec.d_in), (2, spec.d_in))
        z = np.tanh(x @ proj.T)
        lo = np.array([PITCH_RANGE[0], YAW_RANGE[0]])
        hi = np.array([PITCH_RANGE[1], YAW_RANGE[1]])
        y = (lo + hi) / 2 + (hi - lo) / 2 * z + noise
        y = np.clip(y, lo, hi)

    meta = {"generator": spec.to_dict(), "seed": seed}
    return Dataset(x, y, meta)


@dataclass(frozen=True)
class AugmentationSpec:
    gaussian_sigma: float = 0.1
    dropout_prob: float = 0.1
    scale_range: tuple[float, float] = (0.9, 1.1)

    def validate(self) -> None:
        a, b = self.scale_range
        if self.gaussian_sigma < 0:
            raise ConfigError("gaussian_sigma must be >= 0")
        if not 0 <= self.dropout_prob < 1:
            raise ConfigError("dropout_prob must lie in [0, 1)")
        if not 0 < a <= b:
            raise ConfigError("scale_range must satisfy 0 < a <= b")


IDENTITY_AUGMENTATION = AugmentationSpec(0.0, 0.0, (1.0, 1.0))


def augment(
    sample: Sample | np.ndarray,
    spec: AugmentationSpec,
    rng: np.random.Generator,
    feature_std: np.ndarray | float = 1.0,
) -> np.ndarray:
    """Jitter, drop and rescale one feature vector.

    Gaussian noise is ``gaussian_sigma * feature_std`` per feature, then each
    feature is zeroed with probability ``dropout_prob``, then the whole vector
    is multiplied by a scalar drawn uniformly from ``scale_range``.
    """
    x = np.array(sample.features if isinstance(sample, Sample) else sample, dtype=np.float64)
    x = x + spec.gaussian_sigma * np.asarray(feature_std) * rng.standard_normal(x.shape)
    keep = rng.random(x.shape) >= spec.dropout_prob
    a, b = spec.scale_range
    return x * keep * rng.uniform(a, b)


def augment_rows(
    x: np.ndarray, spec: AugmentationSpec, rng: np.random.Generator, feature_std=1.0
) -> np.ndarray:
    """Row-wise ``augment`` with one draw stream for the whole matrix."""
    x = np.asarray(x, dtype=np.float64)
    out = x + spec.gaussian_sigma * np.asarray(feature_std) * rng.standard_normal(x.shape)
    out *= rng.random(x.shape) >= spec.dropout_prob
    a, b = spec.scale_range
    return out * rng.uniform(a, b, size=(len(x), 1))


@dataclass
class TwoViewBatch:
    """``2N`` augmented rows; rows ``2n`` and ``2n+1`` (0-based) share sample ``n``."""

    inputs: np.ndarray
    labels: np.ndarray
    source_indices: np.ndarray

    @property
    def n_pairs(self) -> int:
        return len(self.inputs) // 2


def feature_std(dataset: Dataset) -> np.ndarray:
    std = dataset.features.std(axis=0)
    return np.where(std > 0, std, 1.0)


def build_two_view_batch(
    dataset: Dataset,
    indices,
    spec: AugmentationSpec,
    rng: np.random.Generator,
    std: np.ndarray | None = None,
) -> TwoViewBatch:
    """Augment each indexed sample twice with independent draws and interleave."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.ndim != 1 or len(indices) < 2:
        raise BatchSizeError(f"a two-view batch needs N >= 2 samples, got {indices.size}")
    if indices.min() < 0 or indices.max() >= len(dataset):
        raise ConfigError("batch indices out of range")
    spec.validate()
    if std is None:
        std = feature_std(dataset)
    src = np.repeat(indices, 2)
    x = dataset.features[src]
    inputs = augment_rows(x, spec, rng, std)
    labels = dataset.labels[src].copy()
    return TwoViewBatch(inputs, labels, src)


def split_dataset(dataset: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Shuffle and cut into (train, val, test)."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) <= 0 or not np.isclose(sum(fractions), 1.0):
        raise ConfigError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    n = len(dataset)
    n_val = int(round(fractions[1] * n))
    n_test = int(round(fractions[2] * n))
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise ConfigError(f"split of {n} samples by {fractions} leaves an empty part")
    perm = np.random.default_rng([seed, 3]).permutation(n)
    cuts = np.split(perm, [n_train, n_train + n_val])
    return tuple(dataset.subset(c, split=name) for c, name in zip(cuts, ("train", "val", "test")))


def dataset_to_csv(dataset: Dataset, path) -> None:
    header = [f"f{i}" for i in range(dataset.d_in)] + [f"y{i}" for i in range(dataset.d_t)]
    data = np.hstack([dataset.features, dataset.labels])
    np.savetxt(path, data, delimiter=",", header=",".join(header), comments="", fmt="%.17g")


def dataset_from_csv(path) -> Dataset:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    n_feat = sum(1 for h in header if h.startswith("f"))
    n_lab = sum(1 for h in header if h.startswith("y"))
    expected = [f"f{i}" for i in range(n_feat)] + [f"y{i}" for i in range(n_lab)]
    if header != expected or n_lab == 0:
        raise ConfigError(f"{path}: malformed header {','.join(header)}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return Dataset(data[:, :n_feat], data[:, n_feat:], {"source": str(path)})

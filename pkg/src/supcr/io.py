"""File formats: run configs, model files, metrics JSON, reports, embedding CSVs.

Every float written here uses ``%.17g`` so a text diff between two runs is a
bit-level comparison.
"""

from __future__ import annotations

import dataclasses
import enum
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .batch import GeneratorSpec
from .errors import ConfigError
from .model import MLP, LinearPredictor
from .pairwise import LabelDistanceKind
from .training import Metrics, TrainConfig
from .verify import CaseResult, GradSettings, TheorySettings

SEED_ENV = "SUPCR_SEED"
MODEL_MAGIC = "supcr-model"
MODEL_VERSION = 1


def fmt(x) -> str:
    return "%.17g" % x


@dataclass
class Split:
    """Hold-out rule when no separate test file is given: the last ``test_fraction`` of rows."""

    test_fraction: float = 0.2

    def validate(self) -> None:
        if not 0 < self.test_fraction < 1:
            raise ConfigError("split.test_fraction must lie in (0, 1)")


@dataclass
class DataPaths:
    train: str = ""
    test: str = ""


@dataclass
class RunConfig:
    seed: int = 0
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    split: Split = field(default_factory=Split)
    paths: DataPaths = field(default_factory=DataPaths)
    theory: TheorySettings = field(default_factory=TheorySettings)
    grad: GradSettings = field(default_factory=GradSettings)

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, seed=self.seed)

    def theory_settings(self) -> TheorySettings:
        return dataclasses.replace(self.theory, seed=self.seed)

    def grad_settings(self) -> GradSettings:
        return dataclasses.replace(self.grad, seed=self.seed)

    def validate(self) -> None:
        self.generator.validate()
        self.train_config().validate()
        self.split.validate()


# section name -> (attribute on RunConfig, nested attribute or None, excluded fields)
_SECTIONS = {
    "data": ("generator", None, {"weight", "bias"}),
    "augment": ("train", "augmentation", set()),
    "train": ("train", None, {"augmentation", "seed"}),
    "split": ("split", None, set()),
    "paths": ("paths", None, set()),
    "theory": ("theory", None, {"seed"}),
    "grad": ("grad", None, {"seed"}),
}


def _target(cfg: RunConfig, section: str):
    attr, nested, _ = _SECTIONS[section]
    obj = getattr(cfg, attr)
    return getattr(obj, nested) if nested else obj


def _convert(raw: str, default):
    """Parse ``raw`` to the type of ``default``."""
    if isinstance(default, bool):
        low = raw.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"expected a boolean, got {raw!r}")
        return low in ("true", "1", "yes")
    if isinstance(default, enum.Enum):
        return type(default)(raw.lower())
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        items = [p.strip() for p in raw.split(",") if p.strip()]
        elem = default[0] if default else float
        return tuple(_convert(p, elem) for p in items)
    return raw


def _fields(obj, excluded) -> dict:
    return {f.name: f for f in dataclasses.fields(obj) if f.name not in excluded}


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Flat ``section.key = value`` lines; ``#`` starts a comment.

    Unknown sections or keys, duplicates and unparsable values raise
    :class:`ConfigError` naming the line.
    """
    cfg = RunConfig()
    updates: dict[str, dict] = {}
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'section.key = value'")
        key, raw = (p.strip() for p in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        seen.add(key)
        if key == "run.seed":
            try:
                cfg.seed = int(raw)
            except ValueError as exc:
                raise ConfigError(f"{where}: run.seed: {exc}") from None
            continue
        section, _, name = key.partition(".")
        if section not in _SECTIONS or not name:
            raise ConfigError(f"{where}: unknown key {key!r}")
        obj = _target(cfg, section)
        known = _fields(obj, _SECTIONS[section][2])
        if name not in known:
            raise ConfigError(f"{where}: unknown key {key!r}")
        try:
            value = _convert(raw, getattr(obj, name))
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value for {key}: {exc}") from None
        updates.setdefault(section, {})[name] = value

    for section in ("augment", "data", "train", "split", "paths", "theory", "grad"):
        if section not in updates:
            continue
        attr, nested, _ = _SECTIONS[section]
        obj = _target(cfg, section)
        new = dataclasses.replace(obj, **updates[section])
        if nested:
            setattr(getattr(cfg, attr), nested, new)
        else:
            setattr(cfg, attr, new)
    try:
        cfg.validate()
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cfg


def load_config(path=None, env=None) -> RunConfig:
    """Read a config file (or defaults when ``path`` is None); ``SUPCR_SEED`` overrides ``run.seed``."""
    env = os.environ if env is None else env
    if path is None:
        cfg = parse_config("")
    else:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        cfg = parse_config(text, str(path))
    if env.get(SEED_ENV):
        try:
            cfg.seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
    return cfg


def dump_config(cfg: RunConfig) -> str:
    """Inverse of :func:`parse_config` for every exposed key."""
    lines = [f"run.seed = {cfg.seed}"]
    for section in _SECTIONS:
        obj = _target(cfg, section)
        for name in _fields(obj, _SECTIONS[section][2]):
            value = getattr(obj, name)
            if isinstance(value, enum.Enum):
                value = value.value
            elif isinstance(value, tuple):
                value = ",".join(fmt(v) if isinstance(v, float) else str(v) for v in value)
            elif isinstance(value, float):
                value = fmt(value)
            lines.append(f"{section}.{name} = {value}")
    return "\n".join(lines) + "\n"


# model files ---------------------------------------------------------------


@dataclass
class ModelBundle:
    """What inference needs: encoder, predictor and the label distance used for metrics."""

    encoder: MLP
    predictor: LinearPredictor
    dist_kind: LabelDistanceKind = LabelDistanceKind.L1

    def __post_init__(self):
        self.dist_kind = LabelDistanceKind(self.dist_kind)


def _write_matrix(lines: list, name: str, m: np.ndarray):
    m = np.atleast_2d(m)
    lines.append(f"{name} {m.shape[0]} {m.shape[1]}")
    lines.extend(" ".join(fmt(x) for x in row) for row in m)


def save_model(bundle: ModelBundle, path) -> None:
    """Text format unless ``path`` ends in ``.npz``."""
    path = Path(path)
    if path.suffix == ".npz":
        arrays = {"version": np.array(MODEL_VERSION), "dist_kind": np.array(bundle.dist_kind.value)}
        for tag, net in (("encoder", bundle.encoder), ("predictor", bundle.predictor)):
            arrays[f"{tag}_layers"] = np.array(len(net.weights))
            for l, (w, b) in enumerate(zip(net.weights, net.biases)):
                arrays[f"{tag}_w{l}"] = w
                arrays[f"{tag}_b{l}"] = b
        with path.open("wb") as fh:
            np.savez(fh, **arrays)
        return
    lines = [f"{MODEL_MAGIC} {MODEL_VERSION}", f"dist_kind {bundle.dist_kind.value}"]
    for tag, net in (("encoder", bundle.encoder), ("predictor", bundle.predictor)):
        lines.append(f"{tag} {len(net.weights)} " + " ".join(str(w) for w in net.widths))
        for l, (w, b) in enumerate(zip(net.weights, net.biases)):
            _write_matrix(lines, f"w{l}", w)
            _write_matrix(lines, f"b{l}", b[None, :])
    path.write_text("\n".join(lines) + "\n")


def _read_text_model(path: Path) -> ModelBundle:
    lines = iter(path.read_text().splitlines())

    def expect(prefix):
        try:
            parts = next(lines).split()
        except StopIteration:
            raise ConfigError(f"{path}: truncated model file") from None
        if not parts or parts[0] != prefix:
            raise ConfigError(f"{path}: expected {prefix!r}, got {' '.join(parts)!r}")
        return parts[1:]

    version = expect(MODEL_MAGIC)
    if version != [str(MODEL_VERSION)]:
        raise ConfigError(f"{path}: unsupported model version {version}")
    dist_kind = LabelDistanceKind(expect("dist_kind")[0])

    def matrix(name):
        rows, cols = map(int, expect(name))
        data = [list(map(float, next(lines).split())) for _ in range(rows)]
        m = np.array(data, dtype=np.float64).reshape(rows, cols)
        return m

    nets = []
    for tag, cls in (("encoder", MLP), ("predictor", LinearPredictor)):
        head = expect(tag)
        n_layers = int(head[0])
        weights, biases = [], []
        for l in range(n_layers):
            weights.append(matrix(f"w{l}"))
            biases.append(matrix(f"b{l}")[0])
        nets.append(cls(weights, biases))
    return ModelBundle(nets[0], nets[1], dist_kind)


def load_model(path) -> ModelBundle:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"model file {path} not found")
    if path.suffix != ".npz":
        try:
            return _read_text_model(path)
        except (ValueError, StopIteration) as exc:
            raise ConfigError(f"{path}: malformed model file ({exc})") from None
    with np.load(path) as z:
        if int(z["version"]) != MODEL_VERSION:
            raise ConfigError(f"{path}: unsupported model version {int(z['version'])}")
        nets = []
        for tag, cls in (("encoder", MLP), ("predictor", LinearPredictor)):
            n = int(z[f"{tag}_layers"])
            nets.append(cls([z[f"{tag}_w{l}"] for l in range(n)], [z[f"{tag}_b{l}"] for l in range(n)]))
        return ModelBundle(nets[0], nets[1], LabelDistanceKind(str(z["dist_kind"])))


# metrics, reports, embeddings ---------------------------------------------


def _json_number(x) -> str:
    if x is None:
        return "null"
    if not np.isfinite(x):
        raise ValueError("metrics must be finite")
    return fmt(float(x))


def metrics_json(metrics: Metrics) -> str:
    """``{"mae", "r2", "angular_deg", "spearman"}`` with 17 significant digits; undefined values are null."""
    d = metrics.to_dict()
    body = ", ".join(f'"{k}": {_json_number(d[k])}' for k in ("mae", "r2", "angular_deg", "spearman"))
    return "{" + body + "}\n"


def write_metrics(metrics: Metrics, path) -> None:
    Path(path).write_text(metrics_json(metrics))


def _report_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return fmt(v)
    return str(v)


def report_text(title: str, results: list[CaseResult]) -> str:
    """``key: value`` lines, one block per case, followed by an overall status."""
    lines = [f"suite: {title}", f"cases: {len(results)}"]
    for r in results:
        lines.append(f"case: {r.name}")
        lines.append(f"  passed: {_report_value(r.passed)}")
        lines.append(f"  detail: {r.detail}")
        for k, v in r.fields.items():
            lines.append(f"  {k}: {_report_value(v)}")
    failed = [r for r in results if not r.passed]
    lines.append(f"status: {'pass' if not failed else 'fail'}")
    if failed:
        lines.append(f"first_failure: {failed[0].name}: {failed[0].detail}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict:
    """Read back :func:`report_text` as ``{"suite", "count", "status", "cases": {name: {key: str}}}``."""
    out: dict = {"cases": {}}
    current = None
    for line in text.splitlines():
        key, _, value = line.strip().partition(": ")
        if line.startswith("case: "):
            current = out["cases"].setdefault(value, {})
        elif line.startswith("  ") and current is not None:
            current[key] = value
        elif key == "cases":
            out["count"] = int(value)
        else:
            out[key] = value
    return out


def write_embeddings(path, emb: np.ndarray, labels: np.ndarray) -> None:
    """CSV ``id,e0,...,y0,...`` with one row per sample."""
    emb = np.asarray(emb, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64).reshape(len(emb), -1)
    header = ["id"] + [f"e{i}" for i in range(emb.shape[1])] + [f"y{i}" for i in range(labels.shape[1])]
    with Path(path).open("w") as fh:
        fh.write(",".join(header) + "\n")
        for i, (e, y) in enumerate(zip(emb, labels)):
            fh.write(",".join([str(i), *map(fmt, e), *map(fmt, y)]) + "\n")

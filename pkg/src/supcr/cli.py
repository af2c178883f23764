"""``supcr`` command line: data generation, training, evaluation, verification, export, timing.

Exit codes: 0 success, 2 configuration or input error, 3 verification
failure, 4 runtime or numeric error.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .batch import Dataset, dataset_from_csv, dataset_to_csv, generate_synthetic_dataset
from .errors import ConfigError, SupCRError, TrainingError
from .io import (
    ModelBundle,
    dump_config,
    fmt,
    load_config,
    load_model,
    report_text,
    save_model,
    write_embeddings,
    write_metrics,
    metrics_json,
)
from .losses import supcr_loss_fast, supcr_loss_naive
from .pairwise import PairwiseMatrices, distance_matrix, similarity_matrix
from .training import evaluate, train
from .verify import fault_halved_backward, fault_tie_excluding_loss, run_grad_suite, run_theory_suite

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY, EXIT_RUNTIME = 0, 2, 3, 4


def _read_dataset(path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"dataset {path} not found")
    return dataset_from_csv(path)


def _tail_split(data: Dataset, fraction: float):
    n_test = int(round(len(data) * fraction))
    if n_test < 3 or len(data) - n_test < 2:
        raise ConfigError(f"cannot hold out {fraction} of {len(data)} rows")
    cut = len(data) - n_test
    return data.subset(np.arange(cut)), data.subset(np.arange(cut, len(data)))


def _train_test(args, cfg):
    train_path = args.data or cfg.paths.train
    test_path = args.test or cfg.paths.test
    if train_path:
        data = _read_dataset(train_path)
    else:
        data = generate_synthetic_dataset(cfg.generator, cfg.seed)
    if test_path:
        return data, _read_dataset(test_path)
    return _tail_split(data, cfg.split.test_fraction)


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    data = generate_synthetic_dataset(cfg.generator, cfg.seed)
    out = Path(args.out)
    try:
        dataset_to_csv(data, out)
    except OSError as exc:
        raise ConfigError(f"cannot write {out}: {exc}") from None
    print(f"wrote {len(data)} rows to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    config = cfg.train_config()
    train_set, test_set = _train_test(args, cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = train(train_set, config)
    log_lines = []
    for h in result.history:
        log_lines.append(f"{h['phase']} epoch {h['epoch']} loss {fmt(h['loss'])}")
    metrics = evaluate(result.encoder, result.predictor, test_set, config.dist_kind)
    model_path = out / ("model.npz" if args.binary else "model.txt")
    save_model(ModelBundle(result.encoder, result.predictor, config.dist_kind), model_path)
    write_metrics(metrics, out / "metrics.json")
    (out / "train_log.txt").write_text("\n".join(log_lines) + "\n")
    (out / "config.txt").write_text(dump_config(cfg))
    phases = []
    for h in result.history:
        if not phases or phases[-1] != h["phase"]:
            phases.append(h["phase"])
    for phase in phases:
        last = [h for h in result.history if h["phase"] == phase][-1]
        print(f"{phase}: {last['epoch'] + 1} epochs, final loss {last['loss']:.6f}")
    print(metrics_json(metrics), end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    bundle = load_model(args.model)
    data = _read_dataset(args.data)
    metrics = evaluate(bundle.encoder, bundle.predictor, data, bundle.dist_kind)
    if args.out:
        write_metrics(metrics, args.out)
    print(metrics_json(metrics), end="")
    return EXIT_OK


def _finish_suite(title, results, out, started) -> int:
    text = report_text(title, results)
    if out:
        Path(out).write_text(text)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    print(f"{title} finished in {time.perf_counter() - started:.1f} s", file=sys.stderr)
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"first failure: {failed[0].name}: {failed[0].detail}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_verify_theory(args) -> int:
    cfg = load_config(args.config)
    started = time.perf_counter()
    loss_fn = fault_tie_excluding_loss if args.inject_fault else supcr_loss_fast
    results = run_theory_suite(cfg.theory_settings(), loss_fn)
    return _finish_suite("verify-theory", results, args.out, started)


def cmd_grad_check(args) -> int:
    cfg = load_config(args.config)
    started = time.perf_counter()
    kwargs = {"backward": fault_halved_backward} if args.inject_fault else {}
    results = run_grad_suite(cfg.grad_settings(), **kwargs)
    return _finish_suite("grad-check", results, args.out, started)


def cmd_export_embeddings(args) -> int:
    bundle = load_model(args.model)
    data = _read_dataset(args.data)
    d_in = bundle.encoder.weights[0].shape[0]
    if data.d_in != d_in:
        raise ConfigError(f"model expects {d_in} features, dataset has {data.d_in}")
    write_embeddings(args.out, bundle.encoder(data.features), data.labels)
    print(f"wrote {len(data)} embeddings to {args.out}")
    return EXIT_OK


def _time(f, repeats):
    best = float("inf")
    for _ in range(repeats):
        t = time.perf_counter()
        value = f()
        best = min(best, time.perf_counter() - t)
    return best, value


def cmd_bench(args) -> int:
    rng = np.random.default_rng(args.seed)
    rows = ["size,naive_ms,fast_ms,abs_diff"]
    for n in args.sizes:
        y = np.repeat(rng.integers(0, max(2, n // 4), n // 2), 2).astype(np.float64)
        v = rng.normal(size=(n, 16))
        pm = PairwiseMatrices(similarity_matrix(v, "neg_l2") / 2.0, distance_matrix(y, "l1"), 2.0)
        t_naive, a = _time(lambda: supcr_loss_naive(pm), args.repeats)
        t_fast, b = _time(lambda: supcr_loss_fast(pm), args.repeats)
        rows.append(f"{n},{t_naive * 1e3:.3f},{t_fast * 1e3:.3f},{abs(a - b):.3e}")
    text = "\n".join(rows) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


def _sizes(text: str) -> list[int]:
    sizes = [int(s) for s in text.split(",") if s.strip()]
    if not sizes or min(sizes) < 2 or any(s % 2 for s in sizes):
        raise argparse.ArgumentTypeError("sizes must be even integers >= 2")
    return sizes


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="supcr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset CSV")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the configured scheme; write model, metrics and log")
    p.add_argument("--config")
    p.add_argument("--data", help="training CSV (default: paths.train, else generate from data.*)")
    p.add_argument("--test", help="test CSV (default: paths.test, else hold out the tail)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--binary", action="store_true", help="write model.npz instead of model.txt")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics of a saved model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    for name, func, fault in (
        ("verify-theory", cmd_verify_theory, "use a loss that drops tied samples from denominators"),
        ("grad-check", cmd_grad_check, "use a similarity backward that halves the gradient"),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config")
        p.add_argument("--out", help="report file (key: value lines)")
        p.add_argument("--inject-fault", action="store_true", help=fault)
        p.set_defaults(func=func)

    p = sub.add_parser("export-embeddings", help="encoder outputs for every sample as CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_embeddings)

    p = sub.add_parser("bench", help="time the fast loss against the direct evaluation")
    p.add_argument("--sizes", type=_sizes, default=[16, 64, 256])
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        import logging

        logging.basicConfig(level=logging.DEBUG, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingError as exc:
        print(f"training error at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (SupCRError, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: train, eval, synth, ablate, sweep.

Exit codes: 0 ok, 1 usage, 2 data/format/config error, 3 numeric failure.
Progress goes to stderr; machine-readable output goes to files named in
flags or to stdout (train emits its epoch logs as JSON lines on stdout).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import statistics
import sys

from .data import (
    Dataset,
    LabelVocab,
    assemble_dataset,
    load_embeddings,
    load_labels,
    make_benchmark,
    save_embeddings,
    save_labels,
    split_scheme,
    synth_clusters,
)
from .errors import ConfigError, DataError, FormatError, NumericError
from .evaluation import emit_report
from .training import (
    INFER,
    MODES,
    TrainingConfig,
    evaluate,
    load_checkpoint,
    train_run,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; route through our own
    # exception so usage problems map to exit 1 instead
    def error(self, message):
        raise _UsageError(message)


def _fraction(text: str) -> float:
    value = float(text)
    if not 0.0 < value <= 1.0:
        raise argparse.ArgumentTypeError(f"fraction must be in (0, 1], got {text}")
    return value


def _int_at_least(minimum: int):
    def convert(text: str) -> int:
        value = int(text)
        if value < minimum:
            raise argparse.ArgumentTypeError(f"must be >= {minimum}, got {text}")
        return value
    return convert


def _positive_float(text: str) -> float:
    value = float(text)
    if value <= 0.0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _nonneg_float(text: str) -> float:
    value = float(text)
    if value < 0.0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return value


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints: {text}")


def _fraction_list(text: str) -> list[float]:
    parts = [part for part in text.split(",") if part != ""]
    if not parts:
        raise argparse.ArgumentTypeError("expected comma-separated fractions")
    return [_fraction(part) for part in parts]


# --- shared plumbing ---------------------------------------------------------


def _scan_vocab(labels_path) -> LabelVocab:
    """Class names are whatever the labels file uses; indices follow sorted
    name order so separate train and eval invocations agree without any
    shared side file."""
    names: set[str] = set()
    with open(labels_path, "r", encoding="utf-8", newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if i == 0 or len(row) != 2:
                continue  # header/odd rows; load_labels validates strictly
            if row[1] != "":
                names.add(row[1])
    if not names:
        raise DataError(f"{labels_path}: no class names found")
    return LabelVocab(tuple(sorted(names)))


def _load_dataset(emb_path, labels_path) -> Dataset:
    vocab = _scan_vocab(labels_path)
    vectors = load_embeddings(emb_path)
    labels = load_labels(labels_path, vocab)
    return assemble_dataset(vectors, labels, vocab)


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})")
    if not isinstance(raw, dict):
        raise FormatError(f"{path}: config must be a JSON object")
    return raw


def _build_config(args, dataset: Dataset, **overrides) -> TrainingConfig:
    """File < flags precedence; dim/k fall back to what the data defines."""
    merged = _load_config_file(getattr(args, "config", None))
    if getattr(args, "labeled_fraction", None) is not None:
        merged["labeled_fraction"] = args.labeled_fraction
    merged.setdefault("dim", dataset.dim)
    merged.setdefault("k", dataset.k)
    merged.update(overrides)
    return TrainingConfig.from_dict(merged)


def _maybe_split(dataset: Dataset, config: TrainingConfig,
                 explicit_fraction: bool) -> Dataset:
    fully_labeled = not dataset.unlabeled()
    if not fully_labeled:
        if explicit_fraction:
            raise ConfigError("labels file already has unlabeled rows; "
                              "remove --labeled-fraction or relabel the data")
        return dataset
    if config.labeled_fraction >= 1.0:
        return dataset
    return split_scheme(dataset, config.labeled_fraction, seed=config.seed)


def _note(message: str) -> None:
    print(message, file=sys.stderr)


# --- commands ----------------------------------------------------------------


def cmd_train(args) -> int:
    dataset = _load_dataset(args.embeddings, args.labels)
    config = _build_config(args, dataset)
    train_set = _maybe_split(dataset, config,
                             args.labeled_fraction is not None)
    _note(f"training mode={config.mode} on {len(train_set)} samples "
          f"({len(train_set.labeled())} labeled), {config.epochs} epochs")
    _, logs = train_run(train_set, config, checkpoint_path=args.out)
    for log in logs:
        print(json.dumps(log.as_dict()))
    _note(f"wrote checkpoint {args.out}")
    return 0


def cmd_eval(args) -> int:
    models = load_checkpoint(args.model)
    dataset = _load_dataset(args.embeddings, args.labels)
    report = evaluate(models, dataset, infer=args.infer)
    emit_report(report, args.report, args.format)
    print("balanced_accuracy", repr(report.balanced_accuracy))
    print("macro_f_score", repr(report.macro_f_score))
    _note(f"wrote report {args.report}")
    return 0


def _write_pair(dataset: Dataset, emb_path, labels_path) -> None:
    save_embeddings(emb_path, [s.embedding for s in dataset.samples])
    save_labels(labels_path, [s.label for s in dataset.samples], dataset.vocab)
    _note(f"wrote {len(dataset)} rows to {emb_path} and {labels_path}")


def cmd_synth(args) -> int:
    test_flags = (args.test_per_class, args.test_out, args.test_labels_out)
    want_test = any(v is not None for v in test_flags)
    if want_test and None in test_flags:
        raise _UsageError("--test-per-class, --test-out and --test-labels-out "
                          "must be given together")
    try:
        if want_test:
            # held-out rows share the training cluster means (independent
            # noise), so a model trained on one file is testable on the other
            dataset, test_set = make_benchmark(
                args.classes, args.dim, args.per_class, args.test_per_class,
                args.separation, args.noise_sd, args.seed)
        else:
            dataset = synth_clusters(args.classes, args.dim, args.per_class,
                                     args.separation, args.noise_sd, args.seed)
    except ValueError as exc:  # argument combinations, e.g. dim < classes
        raise _UsageError(str(exc))
    _write_pair(dataset, args.out, args.labels_out)
    if want_test:
        _write_pair(test_set, args.test_out, args.test_labels_out)
    return 0


def _run_arm(pool: Dataset, test_set: Dataset, base: dict, mode: str,
             fraction: float, seeds: list[int]) -> dict:
    """Train+eval one configuration across seeds; medians plus total
    numeric-error count."""
    accs, fs, errors = [], [], 0
    for seed in seeds:
        config = TrainingConfig.from_dict(
            {**base, "mode": mode, "seed": seed, "labeled_fraction": fraction})
        train_set = _maybe_split(pool, config, explicit_fraction=False)
        models, logs = train_run(train_set, config)
        report = evaluate(models, test_set, infer=config.infer)
        accs.append(report.balanced_accuracy)
        fs.append(report.macro_f_score)
        errors += sum(log.numeric_error_count for log in logs)
    return {"balanced_accuracy": statistics.median(accs),
            "macro_f_score": statistics.median(fs),
            "numeric_error_count": errors}


def _write_table(path, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def _comparison_inputs(args):
    pool = _load_dataset(args.embeddings, args.labels)
    test_set = _load_dataset(args.test_embeddings, args.test_labels)
    base = _load_config_file(args.config)
    base.setdefault("dim", pool.dim)
    base.setdefault("k", pool.k)
    fraction = args.labeled_fraction if getattr(args, "labeled_fraction", None) \
        else base.get("labeled_fraction", 0.5)
    base.pop("labeled_fraction", None)
    base.pop("mode", None)
    base.pop("seed", None)
    return pool, test_set, base, fraction


def cmd_ablate(args) -> int:
    pool, test_set, base, fraction = _comparison_inputs(args)
    rows = []
    for mode in ("full", args.mode):
        _note(f"ablate arm mode={mode} fraction={fraction} seeds={args.seeds}")
        arm = _run_arm(pool, test_set, base, mode, fraction, args.seeds)
        rows.append([mode, repr(fraction), arm["balanced_accuracy"],
                     arm["macro_f_score"], arm["numeric_error_count"]])
    _write_table(args.report,
                 ["mode", "labeled_fraction", "balanced_accuracy",
                  "macro_f_score", "numeric_error_count"], rows)
    _note(f"wrote comparison {args.report}")
    return 0


def cmd_sweep(args) -> int:
    pool, test_set, base, _ = _comparison_inputs(args)
    rows = []
    for fraction in args.fractions:
        _note(f"sweep arm mode={args.mode} fraction={fraction} seeds={args.seeds}")
        arm = _run_arm(pool, test_set, base, args.mode, fraction, args.seeds)
        rows.append([repr(fraction), arm["balanced_accuracy"],
                     arm["macro_f_score"], arm["numeric_error_count"]])
    _write_table(args.report,
                 ["labeled_fraction", "balanced_accuracy", "macro_f_score",
                  "numeric_error_count"], rows)
    _note(f"wrote sweep {args.report}")
    return 0


# --- wiring -------------------------------------------------------------------


def _add_comparison_flags(sub) -> None:
    sub.add_argument("--embeddings", required=True)
    sub.add_argument("--labels", required=True)
    sub.add_argument("--test-embeddings", required=True)
    sub.add_argument("--test-labels", required=True)
    sub.add_argument("--config", default=None)
    sub.add_argument("--report", required=True)
    sub.add_argument("--seeds", type=_int_list, default=[0])


def build_parser() -> _Parser:
    parser = _Parser(prog="cssda", description=__doc__)
    commands = parser.add_subparsers(dest="command", parser_class=_Parser)

    train = commands.add_parser("train", help="train a model from embeddings")
    train.add_argument("--embeddings", required=True)
    train.add_argument("--labels", required=True)
    train.add_argument("--labeled-fraction", type=_fraction, default=None)
    train.add_argument("--config", default=None)
    train.add_argument("--out", required=True)
    train.set_defaults(func=cmd_train)

    evl = commands.add_parser("eval", help="evaluate a checkpoint")
    evl.add_argument("--model", required=True)
    evl.add_argument("--embeddings", required=True)
    evl.add_argument("--labels", required=True)
    evl.add_argument("--report", required=True)
    evl.add_argument("--format", choices=("json", "csv"), default="json")
    evl.add_argument("--infer", choices=INFER, default="generator")
    evl.set_defaults(func=cmd_eval)

    synth = commands.add_parser("synth", help="write a synthetic benchmark")
    synth.add_argument("--classes", type=_int_at_least(2), default=3)
    synth.add_argument("--dim", type=_int_at_least(2), default=64)
    synth.add_argument("--per-class", type=_int_at_least(1), default=200)
    synth.add_argument("--separation", type=_positive_float, default=10.0)
    synth.add_argument("--noise-sd", type=_nonneg_float, default=1.0)
    synth.add_argument("--seed", type=int, default=7)
    synth.add_argument("--out", required=True)
    synth.add_argument("--labels-out", required=True)
    synth.add_argument("--test-per-class", type=_int_at_least(1), default=None)
    synth.add_argument("--test-out", default=None)
    synth.add_argument("--test-labels-out", default=None)
    synth.set_defaults(func=cmd_synth)

    ablate = commands.add_parser("ablate",
                                 help="compare full wiring against an ablation")
    ablate.add_argument("--mode", required=True,
                        choices=[m for m in MODES if m != "full"])
    ablate.add_argument("--labeled-fraction", type=_fraction, default=None)
    _add_comparison_flags(ablate)
    ablate.set_defaults(func=cmd_ablate)

    sweep = commands.add_parser("sweep",
                                help="train/eval across labeled fractions")
    sweep.add_argument("--fractions", type=_fraction_list, required=True)
    sweep.add_argument("--mode", choices=MODES, default="full")
    _add_comparison_flags(sweep)
    sweep.set_defaults(func=cmd_sweep)
    return parser


def entry(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            raise _UsageError("a command is required (train, eval, synth, "
                              "ablate, sweep)")
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, DataError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(entry())

"""``costrel`` command line: gen-data, train, eval, compare, calibrate.

Exit codes: 0 success, 1 usage error, 2 runtime or data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import data_io
from .metrics import DegenerateVarianceError, TTestResult, expected_calibration_error, reliability_table, \
    score_histogram, welch_t_test
from .model import MODES, NonFiniteLossError, TrainConfig, load_checkpoint, save_checkpoint
from .pipeline import DEFAULT_K, DEFAULT_THETA, eval_indices, evaluate_model, fit, score_pairs
from .predict import FilterRule, rank_predictions

METRICS = ("recall", "mpcr", "precision", "f1", "ece", "zero_recall_fraction")
# Reference training schedule: minibatch SGD sized for ~10^6 pairs on one core.
DEFAULT_LR = {False: 0.5, True: 0.25}
DEFAULT_EPOCHS = 5
DEFAULT_BATCH = 512


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # exit code 1 instead of argparse's 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {val}")
    return val


def _fraction(text: str) -> float:
    val = float(text)
    if not 0 < val <= 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1], got {val}")
    return val


def _unit(text: str) -> float:
    val = float(text)
    if not 0 <= val <= 1:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {val}")
    return val


def _positive_float(text: str) -> float:
    val = float(text)
    if not val > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {val}")
    return val


def _echo(command: str, resolved: dict) -> None:
    print(json.dumps({"command": command, **resolved}, sort_keys=True, default=str))


def _train_config(args, mode: str, seed: int) -> TrainConfig:
    lr = args.lr if args.lr is not None else DEFAULT_LR[args.hidden > 0]
    try:
        return TrainConfig(mode=mode, learning_rate=lr, epochs=args.epochs, batch_size=args.batch_size,
                           seed=seed, hidden=args.hidden)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lr", type=_positive_float, default=None,
                   help="learning rate (default 0.5 linear, 0.25 with a hidden layer)")
    p.add_argument("--epochs", type=_positive_int, default=DEFAULT_EPOCHS)
    p.add_argument("--batch-size", type=int, default=DEFAULT_BATCH, help="0 = full batch")
    p.add_argument("--hidden", type=int, default=0, help="hidden width, 0 = linear")


def cmd_gen_data(args) -> int:
    try:
        cfg = data_io.SynthConfig(
            num_classes=args.classes, zipf_s=args.zipf_s, images=args.images,
            pairs_per_image=args.pairs_per_image, fg_fraction=args.fg_fraction, dim=args.dim,
            separation=args.separation, noise=args.noise, seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _echo("gen-data", {"config": asdict(cfg), "out": args.out})
    ds = data_io.generate_synthetic(cfg)
    data_io.write_dataset(ds, args.out)
    counts = ds.class_counts()
    print(f"pairs={len(ds)} foreground={int(counts[1:].sum())} background={int(counts[0])}")
    print("predicate,count")
    for j in sorted(range(1, ds.num_classes + 1), key=lambda j: (-counts[j], j)):
        print(f"{j},{counts[j]}")
    return 0


def cmd_train(args) -> int:
    config = _train_config(args, args.mode, args.seed)
    history_path = args.history or f"{args.out_model}.history.csv"
    _echo("train", {"config": asdict(config), "data": args.data, "out_model": args.out_model,
                    "history": history_path})
    ds = data_io.load_dataset(args.data)
    params, history = fit(ds, config)
    save_checkpoint(args.out_model, params, config,
                    extra={"num_classes": ds.num_classes, "background": ds.has_background})
    data_io.atomic_write_text(history_path, history.to_csv())
    print(f"final loss={history.loss[-1]!r} heldout_mpcr={history.heldout_mpcr[-1]!r} "
          f"heldout_recall={history.heldout_recall[-1]!r}")
    if config.mode == "softmax":
        report = evaluate_model(params, ds, eval_indices(ds, config.seed), DEFAULT_K, None)
        print(f"heldout ece={report.ece!r}")
    return 0


def _load_model_and_data(args):
    params, config, _ = load_checkpoint(args.model)
    ds = data_io.load_dataset(args.data)
    idx = eval_indices(ds, config.seed, args.split)
    return params, config, ds, idx


def cmd_eval(args) -> int:
    theta = args.theta if args.nrf else None
    _echo("eval", {"model": args.model, "data": args.data, "k": args.k, "theta": theta, "nrf": args.nrf,
                   "bins": args.bins, "split": args.split, "out_report": args.out_report,
                   "out_predictions": args.out_predictions})
    params, _, ds, idx = _load_model_and_data(args)
    report = evaluate_model(params, ds, idx, args.k, theta, args.bins)
    data_io.write_report(report, args.out_report)
    if args.out_predictions:
        scores = score_pairs(params, ds, idx)
        rule = None if theta is None else FilterRule(theta)
        ranked = rank_predictions(ds.image[idx], ds.subject[idx], ds.object[idx], scores, rule, args.k)
        data_io.write_relations(args.out_predictions, [r for img in sorted(ranked) for r in ranked[img]])
    print("Recall  mPCR  Precision  F1")
    print(report.table_row())
    return 0


def _ttest(a: list[float], b: list[float]) -> TTestResult:
    try:
        return welch_t_test(a, b)
    except DegenerateVarianceError:
        if np.mean(a) == np.mean(b):
            return TTestResult(0.0, float("nan"), False, 1.0)
        return TTestResult(float("inf") * np.sign(np.mean(a) - np.mean(b)), float("nan"), True, 0.0)


def _parse_mode(token: str) -> tuple[str, bool]:
    base, _, suffix = token.partition("-")
    if base not in MODES or suffix not in ("", "nrf"):
        raise UsageError(f"unknown mode {token!r}; use bce, csl or softmax, optionally with -nrf")
    return base, suffix == "nrf"


def cmd_compare(args) -> int:
    if args.seeds < 2:
        raise UsageError("compare needs at least 2 seeds for the t-test")
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    parsed = [_parse_mode(m) for m in modes]
    seeds = list(range(args.seeds))
    configs = {base: asdict(_train_config(args, base, 0)) for base, _ in parsed}
    _echo("compare", {"data": args.data, "modes": modes, "seeds": seeds, "k": args.k, "theta": args.theta,
                      "bins": args.bins, "train": configs, "out": args.out})
    ds = data_io.load_dataset(args.data)

    models = {}
    results: dict[str, dict[str, list[float]]] = {m: {name: [] for name in METRICS} for m in modes}
    for seed in seeds:
        for token, (base, nrf) in zip(modes, parsed):
            if (base, seed) not in models:
                models[base, seed] = fit(ds, _train_config(args, base, seed))[0]
            report = evaluate_model(models[base, seed], ds, eval_indices(ds, seed), args.k,
                                    args.theta if nrf else None, args.bins)
            for name in METRICS:
                results[token][name].append(getattr(report, name))

    baseline = modes[0]
    lines = ["mode,metric,mean,std,delta,t,dof,significant"]
    for token in modes:
        for name in METRICS:
            vals = results[token][name]
            ref = results[baseline][name]
            test = _ttest(vals, ref)
            delta = float(np.mean(vals) - np.mean(ref))
            lines.append(f"{token},{name},{float(np.mean(vals))!r},{float(np.std(vals, ddof=1))!r},{delta!r},"
                         f"{test.statistic!r},{test.dof!r},{int(test.significant)}")
    table = "\n".join(lines) + "\n"
    if args.out:
        data_io.atomic_write_text(args.out, table)
    print(f"baseline: {baseline}; '*' marks deltas that are not significant at 95%")
    print(f"{'mode':<14}" + "".join(f"{name:>12}" for name in ("recall", "mpcr", "precision", "f1")))
    for token in modes:
        cells = []
        for name in ("recall", "mpcr", "precision", "f1"):
            vals = results[token][name]
            star = "" if token == baseline or _ttest(vals, results[baseline][name]).significant else "*"
            cells.append(f"{100 * np.mean(vals):.2f}{star}")
        print(f"{token:<14}" + "".join(f"{c:>12}" for c in cells))
    return 0


def cmd_calibrate(args) -> int:
    prefix = args.out_prefix or str(Path(args.model).with_suffix(""))
    _echo("calibrate", {"model": args.model, "data": args.data, "bins": args.bins, "k": args.k,
                        "split": args.split, "out_prefix": prefix})
    params, _, ds, idx = _load_model_and_data(args)
    scores = score_pairs(params, ds, idx)
    ranked = rank_predictions(ds.image[idx], ds.subject[idx], ds.object[idx], scores, None, args.k)
    retained = [r for img in ranked for r in ranked[img]]
    if not retained:
        raise ValueError("no predictions to calibrate")
    truth = {(i, s, o): p for i, s, o, p in zip(ds.image[idx], ds.subject[idx], ds.object[idx], ds.labels[idx])}
    conf = np.array([r.score for r in retained])
    correct = np.array([truth[r.key] == r.predicate for r in retained])
    ece = expected_calibration_error(conf, correct, args.bins)
    table = reliability_table(conf, correct, args.bins)
    data_io.atomic_write_text(f"{prefix}.reliability.csv", data_io.reliability_csv(table))
    data_io.atomic_write_text(f"{prefix}.histogram.csv", data_io.histogram_csv(score_histogram(conf, args.bins)))
    print(f"ece={ece!r} predictions={conf.size}")
    print("bin_lower,bin_upper,count,mean_confidence,accuracy")
    for b in table:
        print(f"{b.lower:.2f},{b.upper:.2f},{b.count},{b.confidence:.4f},{b.accuracy:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="costrel", description="Train and evaluate cost-sensitive relationship classifiers.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic long-tail relationship dataset")
    defaults = data_io.SynthConfig()
    p.add_argument("--classes", type=int, default=defaults.num_classes)
    p.add_argument("--zipf-s", type=_positive_float, default=defaults.zipf_s)
    p.add_argument("--images", type=_positive_int, default=defaults.images)
    p.add_argument("--pairs-per-image", type=_positive_int, default=defaults.pairs_per_image)
    p.add_argument("--fg-fraction", type=_fraction, default=defaults.fg_fraction)
    p.add_argument("--dim", type=_positive_int, default=defaults.dim)
    p.add_argument("--separation", type=_positive_float, default=defaults.separation)
    p.add_argument("--noise", type=_positive_float, default=defaults.noise)
    p.add_argument("--seed", type=int, default=defaults.seed)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a classifier head")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=MODES, default="csl")
    _add_train_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-model", required=True)
    p.add_argument("--history", default=None, help="per-epoch CSV (default <out-model>.history.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="rank, filter and score a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=_positive_int, default=DEFAULT_K)
    p.add_argument("--theta", type=_unit, default=DEFAULT_THETA)
    p.add_argument("--nrf", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--bins", type=_positive_int, default=10)
    p.add_argument("--split", choices=("heldout", "all"), default="heldout")
    p.add_argument("--out-report", required=True)
    p.add_argument("--out-predictions", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="multi-seed comparison of training modes with Welch t-tests")
    p.add_argument("--data", required=True)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--modes", default="bce,csl,csl-nrf")
    p.add_argument("--k", type=_positive_int, default=DEFAULT_K)
    p.add_argument("--theta", type=_unit, default=DEFAULT_THETA)
    p.add_argument("--bins", type=_positive_int, default=10)
    _add_train_flags(p)
    p.add_argument("--out", default=None, help="CSV with one row per (mode, metric)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("calibrate", help="eCE, reliability table and score histogram")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--bins", type=_positive_int, default=10)
    p.add_argument("--k", type=_positive_int, default=DEFAULT_K)
    p.add_argument("--split", choices=("heldout", "all"), default="heldout")
    p.add_argument("--out-prefix", default=None)
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, or a usage error already reported by argparse
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"costrel: error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, NonFiniteLossError, KeyError) as exc:
        print(f"costrel: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

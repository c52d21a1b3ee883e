"""Command-line entry point: dataset building, training, evaluation,
ablations, gradient checking and graph rendering."""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .checks import model_grad_check
from .config import RunConfig
from .dataset import (TweetRecord, build_lag_windows, chronological_split,
                      load_dataset, save_dataset, split_by_dates, truncate_lag)
from .errors import ConfigError, ContractError, DatasetFormatError, NumericError
from .fusion import MeantModel, ModelConfig
from .graphs import GraphSpec, encode_graph_blob, render_macd_graph, write_ppm
from .indicators import compute_macd, load_prices_csv
from .tensor import Tensor, grad_check, gelu, layer_norm, matmul, softmax_last_dim
from .tokenizer import TokenizerSpec, build_vocab
from .training import (evaluate, restore_model,
                       save_checkpoint, train, windows_to_arrays)

log = logging.getLogger("meant")


def _json_dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", "utf-8")


def _load_tweets_jsonl(path) -> list[TweetRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                records.append(TweetRecord(
                    ticker=row["ticker"],
                    date=dt.date.fromisoformat(row["date"]),
                    text=row["text"]))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ContractError(f"{path}:{lineno}: bad tweet row: {exc}") from exc
    return records


def cmd_build_dataset(args) -> int:
    prices = load_prices_csv(args.prices)
    tweets = _load_tweets_jsonl(args.tweets)
    tokenizer = build_vocab((t.text for t in tweets),
                            max_size=args.vocab_size, max_len=args.seq_len)
    graph = GraphSpec(window_days=args.window_days,
                      width=args.graph_size, height=args.graph_size)
    windows, stats = build_lag_windows(
        prices, tweets, lag=args.lag, tokenizer=tokenizer, graph=graph,
        label_mode=args.label_mode, min_tweets_per_day=args.min_tweets,
        fold_nontrading=args.fold_nontrading, workers=args.workers)
    save_dataset(windows, args.out, tokenizer=tokenizer)
    summary = {
        "windows": len(windows),
        "label_counts": {str(k): v for k, v in stats.label_counts.items()},
        "candidates": stats.candidates,
        "discarded_no_signal": stats.discarded_no_signal,
        "discarded_no_tweets": stats.discarded_no_tweets,
        "skipped_tickers": stats.skipped_tickers,
    }
    print(json.dumps(summary, sort_keys=True, indent=2))
    return 0


def _model_config(run: RunConfig, manifest: dict, lag: int | None = None) -> ModelConfig:
    overrides = dict(run.model)
    tok = manifest.get("tokenizer")
    derived = {
        "seq_len": manifest["seq_len"],
        "lag": lag if lag is not None else manifest["lag"],
    }
    if tok is not None:
        derived["vocab_size"] = TokenizerSpec.from_dict(tok).vocab_size
        derived["pad_id"] = tok["pad_id"]
    shape = manifest.get("image_shape")
    if shape:
        derived["channels"], derived["image_height"], derived["image_width"] = shape
    derived.update(overrides)
    return ModelConfig.from_dict(derived)


def _prepare_splits(run: RunConfig, data_dir):
    windows, manifest = load_dataset(data_dir)
    if run.data.split_dates is not None:
        train_end, val_end = (dt.date.fromisoformat(d)
                              for d in run.data.split_dates)
        splits = split_by_dates(windows, train_end, val_end)
    else:
        splits = chronological_split(windows, run.data.split_fractions)
    return windows, manifest, splits


def cmd_train(args) -> int:
    run = RunConfig.from_file(args.config)
    _, manifest, (tr, va, te) = _prepare_splits(run, args.data)
    config = _model_config(run, manifest)
    model = MeantModel(config, seed=run.train.seed)
    norm = manifest["normalization"]
    best, log_records = train(model,
                              windows_to_arrays(tr, norm),
                              windows_to_arrays(va, norm), run.train)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "model.ckpt", config, best)
    with open(out / "training_log.jsonl", "w", encoding="utf-8") as fh:
        for rec in log_records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    _json_dump(run.effective_dict(), out / "config.json")
    report = evaluate(model, windows_to_arrays(te, norm), run.train.batch_size)
    _json_dump(report.to_dict(), out / "test_metrics.json")
    print(f"trained {config.to_dict()['lag']}-lag model; "
          f"test macro-F1 {report.macro_f1:.4f}")
    return 0


def cmd_eval(args) -> int:
    model = restore_model(args.checkpoint)
    windows, manifest = load_dataset(args.data)
    splits = dict(zip(("train", "val", "test"),
                      chronological_split(windows)))
    chosen = splits[args.split]
    if model.config.lag < chosen[0].lag:
        chosen = truncate_lag(chosen, model.config.lag)
    data = windows_to_arrays(chosen, manifest["normalization"])
    report = evaluate(model, data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _json_dump(report.to_dict(), out / "metrics.json")
    with open(out / "confusion.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\pred", "0", "1"])
        for cls, row in enumerate(report.confusion):
            writer.writerow([cls, *row])
    print(json.dumps(report.to_dict(), sort_keys=True, indent=2))
    return 0


ABLATION_VARIANTS = {
    "full": {},
    "tweet-price": {"use_image": False},
    "vision-price": {"use_text": False},
    "price-only": {"use_text": False, "use_image": False},
    "tweet-only": {"use_image": False, "use_price": False},
    "vision-only": {"use_text": False, "use_price": False},
    "meanpool": {"pooling": "mean_pool"},
    "seqproj": {"pooling": "seq_proj"},
    "lag1": {"__lag__": 1},
    "lag5": {"__lag__": 5},
    "lag10": {"__lag__": 10},
}


def cmd_ablate(args) -> int:
    run = RunConfig.from_file(args.config)
    names = [v.strip() for v in args.variants.split(",") if v.strip()]
    bad = [n for n in names if n not in ABLATION_VARIANTS]
    if bad:
        raise ConfigError(f"unknown variants {bad}; "
                          f"valid: {sorted(ABLATION_VARIANTS)}")
    windows, manifest, (tr, va, te) = _prepare_splits(run, args.data)
    norm = manifest["normalization"]
    rows = {}
    for name in names:
        overrides = dict(ABLATION_VARIANTS[name])
        lag = overrides.pop("__lag__", None)
        run_model = dict(run.model)
        run_model.update(overrides)
        variant_run = RunConfig.from_dict({**run.effective_dict(),
                                           "model": run_model})
        trn, val, tst = tr, va, te
        if lag is not None:
            trn, val, tst = (truncate_lag(s, lag) for s in (tr, va, te))
        config = _model_config(variant_run, manifest, lag=lag)
        model = MeantModel(config, seed=run.train.seed)
        train(model, windows_to_arrays(trn, norm),
              windows_to_arrays(val, norm), run.train)
        report = evaluate(model, windows_to_arrays(tst, norm),
                          run.train.batch_size)
        rows[name] = {
            "parameters": model.parameter_count(),
            "macro_precision": report.macro_precision,
            "macro_recall": report.macro_recall,
            "macro_f1": report.macro_f1,
            "accuracy": report.accuracy,
        }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _json_dump(rows, out / "ablation.json")
    header = f"{'variant':<14}{'params':>10}{'macro-P':>10}{'macro-R':>10}{'macro-F1':>10}"
    print(header)
    for name in names:
        r = rows[name]
        print(f"{name:<14}{r['parameters']:>10}{r['macro_precision']:>10.4f}"
              f"{r['macro_recall']:>10.4f}{r['macro_f1']:>10.4f}")
    return 0


def _toy_batch(config: ModelConfig, rng) -> dict:
    b = 2
    return {
        "ids": rng.integers(0, config.vocab_size, size=(b, config.lag, config.seq_len)),
        "macd": rng.normal(size=(b, config.lag, 5)),
        "images": rng.random((b, config.lag, config.channels,
                              config.image_height, config.image_width)),
        "labels": np.array([0, 1]),
    }


def cmd_gradcheck(args) -> int:
    overrides = {}
    if args.config:
        overrides = RunConfig.from_file(args.config).model
    base = {
        "vocab_size": 12, "seq_len": 4, "lag": 2, "d_l": 8, "d_p": 8,
        "heads": 2, "lang_depth": 1, "vision_depth": 1,
        "image_height": 8, "image_width": 8, "patch_size": 4,
    }
    base.update(overrides)
    rng = np.random.default_rng(7)
    failures = []

    def op_checks():
        yield "matmul", grad_check(
            lambda x: matmul(x, Tensor(rng_fixed)).sum(), Tensor(rng.normal(size=(3, 4))))
        yield "softmax", grad_check(
            lambda x: (softmax_last_dim(x) * Tensor(probe)).sum(),
            Tensor(rng.normal(size=(2, 5))))
        yield "gelu", grad_check(lambda x: gelu(x).sum(),
                                 Tensor(rng.normal(size=(8,))))
        yield "layer_norm", grad_check(
            lambda x: (layer_norm(x, Tensor(np.ones(6)), Tensor(np.zeros(6)))
                       * Tensor(probe6)).sum(),
            Tensor(rng.normal(size=(3, 6))))

    rng_fixed = rng.normal(size=(4, 2))
    probe = rng.normal(size=(2, 5))
    probe6 = rng.normal(size=(3, 6))
    for name, err in op_checks():
        status = "ok" if err < 1e-6 else "FAIL"
        print(f"op {name:<12} max rel err {err:.3e}  {status}")
        if err >= 1e-6:
            failures.append(name)

    for pooling in ("mean_pool", "seq_proj"):
        config = ModelConfig.from_dict({**base, "pooling": pooling})
        model = MeantModel(config, seed=1)
        batch = _toy_batch(config, np.random.default_rng(3))
        errors = model_grad_check(model, batch, max_coords=10)
        worst = max(errors.values())
        status = "ok" if worst < 1e-4 else "FAIL"
        print(f"model ({pooling:<9}) max rel err {worst:.3e}  {status}")
        if worst >= 1e-4:
            failures.append(pooling)
    if failures:
        print(f"gradient check FAILED: {failures}")
        return 2
    print("all gradient checks passed")
    return 0


def cmd_render_graphs(args) -> int:
    prices = load_prices_csv(args.prices)
    if args.ticker not in prices:
        raise ContractError(f"ticker {args.ticker!r} not in {args.prices}")
    series = prices[args.ticker]
    ind = compute_macd(series)
    spec = GraphSpec(window_days=args.window_days,
                     width=args.graph_size, height=args.graph_size)
    if args.date:
        dates = [dt.date.fromisoformat(d) for d in args.date]
        days = []
        for d in dates:
            if d not in series.dates:
                raise ContractError(f"{d} is not a trading day for {args.ticker}")
            days.append(series.dates.index(d))
    else:
        days = [len(series) - 1]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for day in days:
        img = render_macd_graph(ind, day, spec)
        stem = f"{args.ticker}_{series.dates[day].isoformat()}"
        (out / f"{stem}.bin").write_bytes(encode_graph_blob(img))
        write_ppm(img, out / f"{stem}.ppm")
        print(f"wrote {stem}.bin / {stem}.ppm")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meant",
        description="Multimodal temporal-attention pipeline and model")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-dataset", help="build a labeled lag-window dataset")
    p.add_argument("--prices", required=True)
    p.add_argument("--tweets", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lag", type=int, default=5)
    p.add_argument("--label-mode", choices=("crossover", "stocknet"),
                   default="crossover")
    p.add_argument("--seq-len", type=int, default=128)
    p.add_argument("--vocab-size", type=int, default=4096)
    p.add_argument("--graph-size", type=int, default=224)
    p.add_argument("--window-days", type=int, default=26)
    p.add_argument("--min-tweets", type=int, default=1)
    p.add_argument("--fold-nontrading", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train/evaluate named model variants")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--variants", required=True)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--config")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("render-graphs", help="render indicator graphs to disk")
    p.add_argument("--prices", required=True)
    p.add_argument("--ticker", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--date", action="append",
                   help="ISO date to render (repeatable; default: last day)")
    p.add_argument("--graph-size", type=int, default=224)
    p.add_argument("--window-days", type=int, default=26)
    p.set_defaults(func=cmd_render_graphs)
    return parser


def main(argv=None) -> int:
    level = {"error": logging.ERROR, "info": logging.INFO,
             "debug": logging.DEBUG}.get(os.environ.get("MEANT_LOG", "info"),
                                         logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ContractError, DatasetFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

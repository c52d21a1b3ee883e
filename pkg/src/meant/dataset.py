"""Labeled lag-window construction and deterministic persistence.

A window bundles, for the ``lag`` trading days before a target day: the
5-wide MACD vectors M, tokenized per-day tweet concatenations X, and the
rendered indicator graphs G, plus the binary label for the target day.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DatasetFormatError
from .graphs import GraphSpec, decode_graph_blob, encode_graph_blob, render_macd_graph
from .indicators import (CrossSignal, PriceSeries, classify_crossover,
                         compute_macd, macd_vector)
from .tokenizer import SEP_TOKEN, TokenizerSpec, tokenize

log = logging.getLogger("meant.dataset")

DATASET_VERSION = 1


@dataclass(frozen=True)
class TweetRecord:
    ticker: str
    date: dt.date
    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise ContractError("tweet text must be non-empty")


@dataclass
class LagWindow:
    ticker: str
    target_date: dt.date
    lag: int
    M: np.ndarray              # lag x 5, oldest day first
    X: list[list[int]]         # lag token-id sequences
    G: list[np.ndarray]        # lag images, channels x H x W
    label: int

    def validate(self) -> None:
        if self.M.shape != (self.lag, 5):
            raise ContractError(f"M shape {self.M.shape} != ({self.lag}, 5)")
        if len(self.X) != self.lag or len(self.G) != self.lag:
            raise ContractError("X and G must have one entry per lag day")
        if len({g.shape for g in self.G}) > 1:
            raise ContractError("all images in a window must share a shape")

    def __eq__(self, other) -> bool:
        if not isinstance(other, LagWindow):
            return NotImplemented
        return (self.ticker == other.ticker
                and self.target_date == other.target_date
                and self.lag == other.lag
                and self.label == other.label
                and np.array_equal(self.M, other.M)
                and self.X == other.X
                and all(np.array_equal(a, b) for a, b in zip(self.G, other.G)))


def concat_day_tweets(tweets: list[TweetRecord]) -> str:
    """Join one day's tweets with the literal separator token."""
    if not tweets:
        return ""
    keys = {(t.ticker, t.date) for t in tweets}
    if len(keys) > 1:
        raise ContractError(f"mixed ticker/date in day concat: {sorted(keys)}")
    return f" {SEP_TOKEN} ".join(t.text for t in tweets)


def stocknet_label(p_prev: float, p_target: float) -> int | None:
    """Movement-ratio label; None means the window is discarded.

    The discard band is -0.5% < r <= 0.55%.
    """
    if p_prev <= 0:
        raise ContractError(f"previous close must be positive, got {p_prev}")
    r = (p_target - p_prev) / p_prev
    if -0.005 < r <= 0.0055:
        return None
    return 1 if p_target > p_prev else 0


@dataclass
class BuildStats:
    candidates: int = 0
    discarded_no_signal: int = 0
    discarded_no_tweets: int = 0
    skipped_tickers: list[str] = field(default_factory=list)
    label_counts: dict[int, int] = field(default_factory=lambda: {0: 0, 1: 0})


def _group_tweets(tweets, price_dates: dict[str, set], fold_nontrading: bool):
    """Index tweets by (ticker, trading date), dropping or folding others."""
    sorted_dates = {t: sorted(ds) for t, ds in price_dates.items()}
    by_day: dict[tuple[str, dt.date], list[TweetRecord]] = {}
    for rec in tweets:
        dates = price_dates.get(rec.ticker)
        if dates is None:
            continue
        date = rec.date
        if date not in dates:
            if not fold_nontrading:
                continue
            later = [d for d in sorted_dates[rec.ticker] if d > date]
            if not later:
                continue
            date = later[0]
            rec = TweetRecord(rec.ticker, date, rec.text)
        by_day.setdefault((rec.ticker, date), []).append(rec)
    return by_day


def _windows_for_ticker(ticker: str, prices: PriceSeries, by_day, lag: int,
                        tokenizer: TokenizerSpec, graph: GraphSpec,
                        label_mode: str, min_tweets: int):
    ind = compute_macd(prices)
    stats = BuildStats()
    windows: list[LagWindow] = []
    first_target = max(1, lag + graph.window_days - 1)
    graph_cache: dict[int, np.ndarray] = {}
    for t in range(first_target, len(prices)):
        stats.candidates += 1
        if label_mode == "crossover":
            sig = classify_crossover(ind, t)
            if sig is CrossSignal.NONE:
                stats.discarded_no_signal += 1
                continue
            label = 1 if sig is CrossSignal.POSITIVE else 0
        elif label_mode == "stocknet":
            label = stocknet_label(prices.closes[t - 1], prices.closes[t])
            if label is None:
                stats.discarded_no_signal += 1
                continue
        else:
            raise ContractError(f"unknown label mode {label_mode!r}")

        lag_days = range(t - lag, t)
        day_tweets = [by_day.get((ticker, prices.dates[d]), []) for d in lag_days]
        if any(len(dts) < min_tweets for dts in day_tweets):
            stats.discarded_no_tweets += 1
            continue

        M = np.stack([macd_vector(ind, d) for d in lag_days])
        X = [tokenize(concat_day_tweets(dts), tokenizer) for dts in day_tweets]
        G = []
        for d in lag_days:
            if d not in graph_cache:
                img = render_macd_graph(ind, d, graph)
                # quantize to the on-disk f32 precision so that in-memory
                # windows round-trip bitwise through save/load
                graph_cache[d] = img.astype("<f4").astype(np.float64)
            G.append(graph_cache[d])
        w = LagWindow(ticker=ticker, target_date=prices.dates[t], lag=lag,
                      M=M, X=X, G=G, label=label)
        w.validate()
        windows.append(w)
        stats.label_counts[label] += 1
    return windows, stats


def build_lag_windows(prices: dict[str, PriceSeries], tweets: list[TweetRecord],
                      lag: int = 5, tokenizer: TokenizerSpec | None = None,
                      graph: GraphSpec | None = None,
                      label_mode: str = "crossover",
                      min_tweets_per_day: int = 1,
                      fold_nontrading: bool = False,
                      workers: int = 1) -> tuple[list[LagWindow], BuildStats]:
    """Build the labeled window list for every covered ticker.

    Windows whose target day has no signal (or a filtered movement ratio)
    and windows with a tweetless lag day are discarded. The output order
    is (ticker, target_date), independent of worker count.
    """
    if tokenizer is None:
        raise ContractError("a tokenizer spec is required")
    if graph is None:
        graph = GraphSpec()
    if lag < 1:
        raise ContractError("lag must be >= 1")

    stats = BuildStats()
    covered = set(prices)
    for ticker in sorted({t.ticker for t in tweets} - covered):
        log.warning("no price coverage for ticker %s; skipping", ticker)
        stats.skipped_tickers.append(ticker)

    price_dates = {t: set(p.dates) for t, p in prices.items()}
    by_day = _group_tweets(tweets, price_dates, fold_nontrading)

    tickers = sorted(prices)
    jobs = [(t, prices[t], by_day, lag, tokenizer, graph, label_mode,
             min_tweets_per_day) for t in tickers]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda a: _windows_for_ticker(*a), jobs))
    else:
        results = [_windows_for_ticker(*a) for a in jobs]

    windows: list[LagWindow] = []
    for wlist, tstats in results:
        windows.extend(wlist)
        stats.candidates += tstats.candidates
        stats.discarded_no_signal += tstats.discarded_no_signal
        stats.discarded_no_tweets += tstats.discarded_no_tweets
        for k in (0, 1):
            stats.label_counts[k] += tstats.label_counts[k]
    windows.sort(key=lambda w: (w.ticker, w.target_date))
    return windows, stats


def chronological_split(windows: list[LagWindow],
                        fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)):
    """Date-contiguous train/val/test slices with no shared target dates."""
    if any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ContractError(f"fractions must be positive and sum to 1: {fractions}")
    ordered = sorted(windows, key=lambda w: (w.target_date, w.ticker))
    n = len(ordered)

    def cut(idx: int) -> int:
        # move every window sharing the boundary date into the later split
        if idx <= 0 or idx >= n:
            return idx
        date = ordered[idx].target_date
        while idx > 0 and ordered[idx - 1].target_date == date:
            idx -= 1
        return idx

    i1 = cut(int(n * fractions[0]))
    i2 = cut(i1 + int(n * fractions[1]) if int(n * fractions[1]) else i1 + 1)
    i2 = max(i2, i1)
    train, val, test = ordered[:i1], ordered[i1:i2], ordered[i2:]
    if not train or not val or not test:
        raise ContractError(
            f"cannot populate all splits: sizes {len(train)}/{len(val)}/{len(test)}")
    return train, val, test


def split_by_dates(windows: list[LagWindow], train_end: dt.date,
                   val_end: dt.date):
    """Date-bounded split: train runs through ``train_end`` inclusive, val
    through ``val_end``, test takes the rest."""
    if train_end >= val_end:
        raise ContractError(
            f"train end {train_end} must precede val end {val_end}")
    ordered = sorted(windows, key=lambda w: (w.target_date, w.ticker))
    train = [w for w in ordered if w.target_date <= train_end]
    val = [w for w in ordered if train_end < w.target_date <= val_end]
    test = [w for w in ordered if w.target_date > val_end]
    if not train or not val or not test:
        raise ContractError(
            f"cannot populate all splits: sizes {len(train)}/{len(val)}/{len(test)}")
    return train, val, test


def truncate_lag(windows: list[LagWindow], lag: int) -> list[LagWindow]:
    """Keep only the most recent ``lag`` days of each window."""
    if not windows:
        return []
    if lag < 1 or lag > windows[0].lag:
        raise ContractError(
            f"cannot truncate lag {windows[0].lag} windows to {lag}")
    out = []
    for w in windows:
        out.append(LagWindow(ticker=w.ticker, target_date=w.target_date,
                             lag=lag, M=w.M[-lag:], X=w.X[-lag:],
                             G=w.G[-lag:], label=w.label))
    return out


# -- persistence -------------------------------------------------------


def _normalization_stats(windows: list[LagWindow],
                         train_fraction: float) -> dict:
    ordered = sorted(windows, key=lambda w: (w.target_date, w.ticker))
    head = ordered[:max(1, int(len(ordered) * train_fraction))] or ordered
    if not head:
        return {"mean": [0.0] * 5, "std": [1.0] * 5}
    stacked = np.concatenate([w.M for w in head], axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std[std == 0] = 1.0
    return {"mean": mean.tolist(), "std": std.tolist()}


def _json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_dataset(windows: list[LagWindow], out_dir,
                 tokenizer: TokenizerSpec | None = None,
                 train_fraction: float = 0.8) -> None:
    """Write manifest.json, windows.jsonl and per-day graph blobs."""
    from pathlib import Path
    out = Path(out_dir)
    (out / "graphs").mkdir(parents=True, exist_ok=True)

    image_shape = list(windows[0].G[0].shape) if windows else None
    seq_len = len(windows[0].X[0]) if windows else (
        tokenizer.max_len if tokenizer else None)
    manifest = {
        "version": DATASET_VERSION,
        "lag": windows[0].lag if windows else None,
        "seq_len": seq_len,
        "image_shape": image_shape,
        "normalization": _normalization_stats(windows, train_fraction) if windows
        else {"mean": [0.0] * 5, "std": [1.0] * 5},
        "label_counts": {str(k): sum(1 for w in windows if w.label == k)
                         for k in (0, 1)},
        "count": len(windows),
    }
    if tokenizer is not None:
        manifest["tokenizer"] = tokenizer.to_dict()
    (out / "manifest.json").write_bytes(_json_bytes(manifest) + b"\n")

    lines = []
    for w in sorted(windows, key=lambda x: (x.ticker, x.target_date)):
        names = []
        for i, img in enumerate(w.G):
            name = f"{w.ticker}_{w.target_date.isoformat()}_{i}.bin"
            (out / "graphs" / name).write_bytes(encode_graph_blob(img))
            names.append(name)
        lines.append(_json_bytes({
            "ticker": w.ticker,
            "target_date": w.target_date.isoformat(),
            "lag": w.lag,
            "label": w.label,
            "M": [list(row) for row in w.M.tolist()],
            "X": w.X,
            "graphs": names,
        }))
    (out / "windows.jsonl").write_bytes(b"\n".join(lines) + (b"\n" if lines else b""))


def load_dataset(in_dir) -> tuple[list[LagWindow], dict]:
    """Read a dataset directory back; returns (windows, manifest)."""
    from pathlib import Path
    src = Path(in_dir)
    try:
        manifest = json.loads((src / "manifest.json").read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetFormatError(f"cannot read manifest: {exc}") from exc
    if manifest.get("version") != DATASET_VERSION:
        raise DatasetFormatError(
            f"dataset version {manifest.get('version')} != {DATASET_VERSION}")
    windows = []
    text = (src / "windows.jsonl").read_text("utf-8")
    for lineno, line in enumerate(filter(None, text.split("\n")), start=1):
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(
                f"windows.jsonl:{lineno}: bad JSON: {exc}") from exc
        G = [decode_graph_blob((src / "graphs" / name).read_bytes())
             for name in row["graphs"]]
        w = LagWindow(ticker=row["ticker"],
                      target_date=dt.date.fromisoformat(row["target_date"]),
                      lag=row["lag"],
                      M=np.array(row["M"], dtype=np.float64),
                      X=[list(map(int, seq)) for seq in row["X"]],
                      G=G, label=int(row["label"]))
        w.validate()
        windows.append(w)
    if len(windows) != manifest.get("count"):
        raise DatasetFormatError(
            f"manifest count {manifest.get('count')} != {len(windows)} windows")
    return windows, manifest


def normalize_macd(windows: list[LagWindow], manifest: dict) -> list[np.ndarray]:
    """Z-scored M matrices using the manifest's training-split stats."""
    mean = np.asarray(manifest["normalization"]["mean"])
    std = np.asarray(manifest["normalization"]["std"])
    return [(w.M - mean) / std for w in windows]

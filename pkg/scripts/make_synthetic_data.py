#!/usr/bin/env python3
"""Write a synthetic prices CSV and tweets JSONL for quick experiments.

The price series is sinusoidal over weekdays, so the indicator lines cross
repeatedly and both label classes appear.
"""

import argparse
import json
from pathlib import Path

from meant.synthetic import make_sine_prices, make_tweets


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data", help="output directory")
    parser.add_argument("--tickers", default="AAA,BBB",
                        help="comma-separated ticker names")
    parser.add_argument("--days", type=int, default=300)
    parser.add_argument("--period", type=float, default=40.0,
                        help="sine period in trading days")
    parser.add_argument("--tweets-per-day", type=int, default=2)
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tickers = [t.strip() for t in args.tickers.split(",") if t.strip()]

    price_rows = ["ticker,date,close"]
    tweet_rows = []
    for i, ticker in enumerate(tickers):
        # stagger periods a little so tickers do not move in lockstep
        series = make_sine_prices(ticker=ticker, days=args.days,
                                  period=args.period * (1.0 + 0.15 * i))
        price_rows += [f"{ticker},{d.isoformat()},{c:.6f}"
                       for d, c in zip(series.dates, series.closes)]
        for rec in make_tweets(series, per_day=args.tweets_per_day):
            tweet_rows.append(json.dumps({"ticker": rec.ticker,
                                          "date": rec.date.isoformat(),
                                          "text": rec.text}))

    (out / "prices.csv").write_text("\n".join(price_rows) + "\n")
    (out / "tweets.jsonl").write_text("\n".join(tweet_rows) + "\n")
    print(f"wrote {out / 'prices.csv'} ({len(price_rows) - 1} rows) and "
          f"{out / 'tweets.jsonl'} ({len(tweet_rows)} tweets)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

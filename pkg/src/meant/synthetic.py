"""Synthetic fixtures: sinusoidal price series and templated tweets.

Used by the test suite and the demo scripts; a 300-day sine with a 40-day
period crosses its own signal line repeatedly, giving both label classes.
"""

from __future__ import annotations

import datetime as dt
import math

from .dataset import TweetRecord
from .indicators import PriceSeries

_WORDS = ("buy", "sell", "hold", "breakout", "dip", "rally", "earnings",
          "guidance", "upgrade", "downgrade", "momentum", "volume")


def trading_dates(start: dt.date, count: int) -> list[dt.date]:
    """``count`` consecutive weekdays starting at or after ``start``."""
    out = []
    day = start
    while len(out) < count:
        if day.weekday() < 5:
            out.append(day)
        day += dt.timedelta(days=1)
    return out


def make_sine_prices(ticker: str = "SINE", days: int = 300,
                     period: float = 40.0, base: float = 100.0,
                     amplitude: float = 10.0,
                     start: dt.date = dt.date(2022, 1, 3)) -> PriceSeries:
    dates = trading_dates(start, days)
    closes = tuple(base + amplitude * math.sin(2 * math.pi * i / period)
                   for i in range(days))
    return PriceSeries(ticker=ticker, dates=tuple(dates), closes=closes)


def make_tweets(prices: PriceSeries, per_day: int = 2) -> list[TweetRecord]:
    """Deterministic tweets for every trading day of a price series."""
    out = []
    for i, date in enumerate(prices.dates):
        for j in range(per_day):
            words = [_WORDS[(i + j + k) % len(_WORDS)] for k in range(4)]
            out.append(TweetRecord(ticker=prices.ticker, date=date,
                                   text=f"{prices.ticker} {' '.join(words)}"))
    return out

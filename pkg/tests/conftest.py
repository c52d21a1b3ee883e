import numpy as np
import pytest

from meant.dataset import build_lag_windows
from meant.fusion import MeantModel, ModelConfig
from meant.graphs import GraphSpec
from meant.indicators import compute_macd
from meant.synthetic import make_sine_prices, make_tweets
from meant.tokenizer import build_vocab

TOY_MODEL = dict(vocab_size=12, seq_len=4, lag=2, d_l=8, d_p=8, heads=2,
                 image_height=8, image_width=8, patch_size=4)


@pytest.fixture(scope="session")
def sine_prices():
    return make_sine_prices()


@pytest.fixture(scope="session")
def sine_indicators(sine_prices):
    return compute_macd(sine_prices)


@pytest.fixture(scope="session")
def small_graph_spec():
    return GraphSpec(window_days=26, width=32, height=32)


@pytest.fixture(scope="session")
def sine_dataset(sine_prices, small_graph_spec):
    """Windows built from the sinusoidal fixture with 2 tweets per day."""
    tweets = make_tweets(sine_prices)
    tokenizer = build_vocab((t.text for t in tweets), max_size=64, max_len=16)
    windows, stats = build_lag_windows(
        {sine_prices.ticker: sine_prices}, tweets, lag=5,
        tokenizer=tokenizer, graph=small_graph_spec)
    return windows, stats, tokenizer


def toy_model(seed=1, **overrides) -> MeantModel:
    cfg = ModelConfig(**{**TOY_MODEL, **overrides})
    return MeantModel(cfg, seed=seed)


def toy_batch(config: ModelConfig, b=2, seed=0) -> dict:
    rng = np.random.default_rng(seed)
    return {
        "ids": rng.integers(0, config.vocab_size,
                            size=(b, config.lag, config.seq_len)),
        "macd": rng.normal(size=(b, config.lag, 5)),
        "images": rng.random((b, config.lag, config.channels,
                              config.image_height, config.image_width)),
        "labels": rng.integers(0, 2, size=b),
    }

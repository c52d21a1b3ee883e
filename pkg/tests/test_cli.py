import csv
import json
from pathlib import Path

import numpy as np
import pytest

from meant.cli import ABLATION_VARIANTS, main
from meant.config import RunConfig
from meant.errors import ConfigError
from meant.synthetic import make_sine_prices, make_tweets

MODEL_OVERRIDES = {"d_l": 8, "d_p": 8, "heads": 2, "lang_depth": 1,
                   "vision_depth": 1, "patch_size": 16}


def write_inputs(root: Path) -> tuple[Path, Path]:
    prices = make_sine_prices(days=160)
    rows = ["ticker,date,close"]
    rows += [f"{prices.ticker},{d.isoformat()},{c:.6f}"
             for d, c in zip(prices.dates, prices.closes)]
    prices_csv = root / "prices.csv"
    prices_csv.write_text("\n".join(rows) + "\n")
    tweets_jsonl = root / "tweets.jsonl"
    with open(tweets_jsonl, "w") as fh:
        for rec in make_tweets(prices):
            fh.write(json.dumps({"ticker": rec.ticker,
                                 "date": rec.date.isoformat(),
                                 "text": rec.text}) + "\n")
    return prices_csv, tweets_jsonl


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Inputs plus a built dataset and a run config, shared per module."""
    root = tmp_path_factory.mktemp("cli")
    prices_csv, tweets_jsonl = write_inputs(root)
    data_dir = root / "dataset"
    rc = main(["build-dataset", "--prices", str(prices_csv),
               "--tweets", str(tweets_jsonl), "--out", str(data_dir),
               "--lag", "3", "--seq-len", "8", "--vocab-size", "32",
               "--graph-size", "32"])
    assert rc == 0
    config = root / "config.json"
    config.write_text(json.dumps({
        "model": MODEL_OVERRIDES,
        "train": {"epochs": 2, "batch_size": 8, "lr": 1e-3, "patience": 3,
                  "seed": 5},
    }))
    return {"root": root, "prices": prices_csv, "tweets": tweets_jsonl,
            "data": data_dir, "config": config}


class TestBuildDataset:
    def test_artifacts_exist(self, workspace):
        data = workspace["data"]
        assert (data / "manifest.json").exists()
        assert (data / "windows.jsonl").exists()
        assert any((data / "graphs").iterdir())
        manifest = json.loads((data / "manifest.json").read_text())
        assert manifest["lag"] == 3
        assert manifest["seq_len"] == 8
        assert manifest["image_shape"] == [3, 32, 32]

    def test_summary_printed(self, workspace, capsys):
        out_dir = workspace["root"] / "dataset2"
        rc = main(["build-dataset", "--prices", str(workspace["prices"]),
                   "--tweets", str(workspace["tweets"]), "--out", str(out_dir),
                   "--lag", "3", "--seq-len", "8", "--vocab-size", "32",
                   "--graph-size", "32"])
        assert rc == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["windows"] > 0
        assert set(summary["label_counts"]) == {"0", "1"}

    def test_rebuild_is_byte_identical(self, workspace):
        a, b = workspace["data"], workspace["root"] / "dataset2"
        assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()
        assert (a / "windows.jsonl").read_bytes() == (b / "windows.jsonl").read_bytes()
        for blob in (a / "graphs").iterdir():
            assert blob.read_bytes() == (b / "graphs" / blob.name).read_bytes()

    def test_missing_input_file(self, workspace, capsys):
        rc = main(["build-dataset", "--prices", "nope.csv",
                   "--tweets", str(workspace["tweets"]), "--out", "x"])
        assert rc == 1


@pytest.fixture(scope="module")
def trained(workspace):
    out = workspace["root"] / "run"
    rc = main(["train", "--config", str(workspace["config"]),
               "--data", str(workspace["data"]), "--out", str(out)])
    assert rc == 0
    return out


class TestTrain:
    def test_artifacts(self, trained):
        assert (trained / "model.ckpt").exists()
        assert (trained / "test_metrics.json").exists()
        assert (trained / "config.json").exists()
        log_lines = (trained / "training_log.jsonl").read_text().splitlines()
        assert 1 <= len(log_lines) <= 2
        first = json.loads(log_lines[0])
        assert {"epoch", "lr", "train_loss", "val"} <= set(first)

    def test_metrics_file_well_formed(self, trained):
        metrics = json.loads((trained / "test_metrics.json").read_text())
        assert 0.0 <= metrics["accuracy"] <= 1.0
        assert np.array(metrics["confusion"]).shape == (2, 2)

    def test_config_echo_round_trips(self, trained):
        echoed = json.loads((trained / "config.json").read_text())
        again = RunConfig.from_dict(echoed)
        assert again.train.epochs == 2
        assert again.model["d_l"] == 8

    def test_bad_config_exits_one(self, workspace, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"model": {"wings": 2}}))
        rc = main(["train", "--config", str(bad),
                   "--data", str(workspace["data"]), "--out", str(tmp_path)])
        assert rc == 1

    def test_zero_modality_config_exits_one(self, workspace, tmp_path):
        bad = tmp_path / "nomod.json"
        bad.write_text(json.dumps({"model": {
            **MODEL_OVERRIDES, "use_text": False, "use_image": False,
            "use_price": False}}))
        rc = main(["train", "--config", str(bad),
                   "--data", str(workspace["data"]), "--out", str(tmp_path)])
        assert rc == 1


class TestEval:
    def test_eval_matches_training_metrics(self, workspace, trained, tmp_path):
        rc = main(["eval", "--checkpoint", str(trained / "model.ckpt"),
                   "--data", str(workspace["data"]), "--split", "test",
                   "--out", str(tmp_path)])
        assert rc == 0
        got = json.loads((tmp_path / "metrics.json").read_text())
        want = json.loads((trained / "test_metrics.json").read_text())
        assert got == want

    def test_confusion_csv(self, workspace, trained, tmp_path):
        rc = main(["eval", "--checkpoint", str(trained / "model.ckpt"),
                   "--data", str(workspace["data"]), "--out", str(tmp_path)])
        assert rc == 0
        with open(tmp_path / "confusion.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["true\\pred", "0", "1"]
        assert len(rows) == 3

    def test_missing_checkpoint(self, workspace, tmp_path, capsys):
        rc = main(["eval", "--checkpoint", str(tmp_path / "none.ckpt"),
                   "--data", str(workspace["data"]), "--out", str(tmp_path)])
        assert rc != 0


class TestAblate:
    def test_variant_table_and_param_ordering(self, workspace, tmp_path,
                                              capsys):
        rc = main(["ablate", "--config", str(workspace["config"]),
                   "--data", str(workspace["data"]),
                   "--variants", "full,price-only,lag1",
                   "--out", str(tmp_path)])
        assert rc == 0
        rows = json.loads((tmp_path / "ablation.json").read_text())
        assert set(rows) == {"full", "price-only", "lag1"}
        # dropping modalities sheds parameters; shortening lag only
        # shrinks the patch-axis reduction weight, by (lag-1) * n_p = 8
        assert rows["price-only"]["parameters"] < rows["full"]["parameters"]
        assert rows["full"]["parameters"] - rows["lag1"]["parameters"] == 8
        table = capsys.readouterr().out
        assert "variant" in table and "macro-F1" in table

    def test_unknown_variant_exits_one(self, workspace, tmp_path, capsys):
        rc = main(["ablate", "--config", str(workspace["config"]),
                   "--data", str(workspace["data"]),
                   "--variants", "full,quantum", "--out", str(tmp_path)])
        assert rc == 1
        assert "quantum" in capsys.readouterr().err

    def test_variant_catalog_complete(self):
        assert {"full", "tweet-price", "vision-price", "price-only",
                "tweet-only", "vision-only", "meanpool", "seqproj",
                "lag1", "lag5", "lag10"} == set(ABLATION_VARIANTS)


class TestGradcheckCommand:
    def test_passes_and_prints_lines(self, capsys):
        rc = main(["gradcheck"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "all gradient checks passed" in out
        assert out.count("ok") >= 6


class TestRenderGraphs:
    def test_writes_bin_and_ppm(self, workspace, tmp_path):
        rc = main(["render-graphs", "--prices", str(workspace["prices"]),
                   "--ticker", "SINE", "--out", str(tmp_path),
                   "--graph-size", "64"])
        assert rc == 0
        bins = list(tmp_path.glob("*.bin"))
        ppms = list(tmp_path.glob("*.ppm"))
        assert len(bins) == 1 and len(ppms) == 1
        from meant.graphs import decode_graph_blob
        img = decode_graph_blob(bins[0].read_bytes())
        assert img.shape == (3, 64, 64)

    def test_specific_dates(self, workspace, tmp_path):
        rc = main(["render-graphs", "--prices", str(workspace["prices"]),
                   "--ticker", "SINE", "--out", str(tmp_path),
                   "--graph-size", "32",
                   "--date", "2022-04-01", "--date", "2022-05-02"])
        assert rc == 0
        assert len(list(tmp_path.glob("*.bin"))) == 2

    def test_non_trading_date_exits_one(self, workspace, tmp_path, capsys):
        rc = main(["render-graphs", "--prices", str(workspace["prices"]),
                   "--ticker", "SINE", "--out", str(tmp_path),
                   "--date", "2022-04-02"])  # a Saturday
        assert rc == 1

    def test_unknown_ticker_exits_one(self, workspace, tmp_path):
        rc = main(["render-graphs", "--prices", str(workspace["prices"]),
                   "--ticker", "NOPE", "--out", str(tmp_path)])
        assert rc == 1


class TestRunConfig:
    def test_defaults(self):
        run = RunConfig.from_dict({})
        assert run.data.lag == 5
        assert run.train.epochs == 15
        assert run.train.lr == 5e-5
        assert run.train.t0 == 7.0
        assert run.model == {}

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="sections"):
            RunConfig.from_dict({"optimizer": {}})

    def test_unknown_key_in_section(self):
        with pytest.raises(ConfigError, match="momentum"):
            RunConfig.from_dict({"train": {"momentum": 0.9}})

    def test_unknown_model_key(self):
        with pytest.raises(ConfigError, match="dropout"):
            RunConfig.from_dict({"model": {"dropout": 0.1}})

    def test_split_dates_parsed(self):
        run = RunConfig.from_dict(
            {"data": {"split_dates": ["2022-05-01", "2022-06-01"]}})
        assert run.data.split_dates == ("2022-05-01", "2022-06-01")
        assert RunConfig.from_dict({}).data.split_dates is None

    def test_effective_dict_round_trip(self):
        run = RunConfig.from_dict({"train": {"epochs": 3},
                                   "model": {"d_l": 16}})
        again = RunConfig.from_dict(run.effective_dict())
        assert again.effective_dict() == run.effective_dict()

    def test_bad_file(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{nope")
        with pytest.raises(ConfigError):
            RunConfig.from_file(path)
        path.write_text("[1, 2]")
        with pytest.raises(ConfigError, match="object"):
            RunConfig.from_file(path)

"""Loss, AdamW, cosine warm-restart schedule, metrics and the train loop."""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .dataset import LagWindow
from .errors import ContractError, DatasetFormatError, NumericError
from .fusion import MeantModel, ModelConfig
from .tensor import Tensor, no_grad

CHECKPOINT_MAGIC = b"MEAN"
CHECKPOINT_VERSION = 1


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-softmax of the true class, log-sum-exp stabilized."""
    labels = np.asarray(labels)
    b = logits.shape[0]
    if labels.shape != (b,):
        raise ContractError(f"labels shape {labels.shape} != ({b},)")
    if not np.isin(labels, (0, 1)).all():
        raise ContractError("labels must be 0 or 1")
    shift = logits.data.max(axis=-1, keepdims=True)
    lse = Tensor(shift.squeeze(-1)) + ((logits - Tensor(shift)).exp()
                                       .sum(axis=-1)).log()
    true_logit = logits[np.arange(b), labels]
    return (lse - true_logit).mean()


class AdamW:
    """Decoupled-weight-decay Adam over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient in parameter {name!r}")
            p.data *= 1.0 - lr * self.weight_decay
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


@dataclass
class CosineWarmRestarts:
    """eta(t) = eta_min + (eta_max-eta_min)/2 * (1 + cos(pi * T_cur / T_i))."""

    eta_max: float = 5e-5
    eta_min: float = 0.0
    t0: float = 7.0
    t_mult: float = 1.0

    def __post_init__(self):
        if self.t0 < 1:
            raise ContractError("t0 must be >= 1")

    def lr(self, progress: float) -> float:
        if progress < 0:
            raise ContractError("progress must be >= 0")
        t_i = float(self.t0)
        t_cur = float(progress)
        while t_cur >= t_i:
            t_cur -= t_i
            t_i *= self.t_mult
        return self.eta_min + 0.5 * (self.eta_max - self.eta_min) * (
            1.0 + math.cos(math.pi * t_cur / t_i))


@dataclass
class MetricsReport:
    accuracy: float
    per_class: dict[int, dict[str, float]]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: list[list[int]]    # rows = true class

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class": {str(k): v for k, v in self.per_class.items()},
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "confusion": self.confusion,
        }


def compute_metrics(preds: np.ndarray, labels: np.ndarray) -> MetricsReport:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.size == 0:
        raise ContractError("cannot compute metrics on an empty split")
    if preds.shape != labels.shape:
        raise ContractError("preds and labels must have equal length")
    if not (np.isin(preds, (0, 1)).all() and np.isin(labels, (0, 1)).all()):
        raise ContractError("preds and labels must be binary")
    confusion = [[int(((labels == t) & (preds == p)).sum()) for p in (0, 1)]
                 for t in (0, 1)]
    per_class = {}
    for cls in (0, 1):
        tp = confusion[cls][cls]
        fp = confusion[1 - cls][cls]
        fn = confusion[cls][1 - cls]
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall else 0.0)
        per_class[cls] = {"precision": precision, "recall": recall, "f1": f1}
    return MetricsReport(
        accuracy=float((preds == labels).mean()),
        per_class=per_class,
        macro_precision=sum(c["precision"] for c in per_class.values()) / 2,
        macro_recall=sum(c["recall"] for c in per_class.values()) / 2,
        macro_f1=sum(c["f1"] for c in per_class.values()) / 2,
        confusion=confusion,
    )


# -- data marshalling --------------------------------------------------


def windows_to_arrays(windows: list[LagWindow],
                      normalization: dict | None = None) -> dict[str, np.ndarray]:
    """Stack windows into batch arrays; optionally z-score the MACD lanes."""
    if not windows:
        raise ContractError("empty window list")
    M = np.stack([w.M for w in windows])
    if normalization is not None:
        mean = np.asarray(normalization["mean"])
        std = np.asarray(normalization["std"])
        M = (M - mean) / std
    return {
        "ids": np.array([w.X for w in windows], dtype=np.int64),
        "macd": M,
        "images": np.stack([np.stack(w.G) for w in windows]),
        "labels": np.array([w.label for w in windows], dtype=np.int64),
    }


def _batch(data: dict, idx: np.ndarray) -> dict:
    # disabled modalities travel as None and stay None per batch
    return {k: (None if v is None else v[idx]) for k, v in data.items()}


# -- train / eval ------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 16
    lr: float = 5e-5
    eta_min: float = 0.0
    t0: float = 7.0
    t_mult: float = 1.0
    schedule_unit: str = "epoch"   # {epoch, step}
    patience: int = 3
    weight_decay: float = 0.01
    seed: int = 42

    def __post_init__(self):
        if self.schedule_unit not in ("epoch", "step"):
            raise ContractError(f"unknown schedule unit {self.schedule_unit!r}")


def evaluate(model: MeantModel, data: dict[str, np.ndarray],
             batch_size: int = 16) -> MetricsReport:
    n = len(data["labels"])
    if n == 0:
        raise ContractError("cannot evaluate an empty split")
    preds = []
    with no_grad():
        for start in range(0, n, batch_size):
            batch = _batch(data, np.arange(start, min(start + batch_size, n)))
            logits = model(batch["ids"], batch["macd"], batch["images"])
            preds.append(np.argmax(logits.data, axis=-1))
    return compute_metrics(np.concatenate(preds), data["labels"])


def train(model: MeantModel, train_data: dict, val_data: dict,
          cfg: TrainConfig) -> tuple[dict[str, np.ndarray], list[dict]]:
    """Seeded epoch loop with early stopping on validation macro-F1.

    Returns the best-validation parameter snapshot and the per-epoch log.
    """
    if len(train_data["labels"]) == 0 or len(val_data["labels"]) == 0:
        raise ContractError("train and validation splits must be non-empty")
    params = model.params()
    opt = AdamW(params, weight_decay=cfg.weight_decay)
    schedule = CosineWarmRestarts(eta_max=cfg.lr, eta_min=cfg.eta_min,
                                  t0=cfg.t0, t_mult=cfg.t_mult)
    rng = np.random.default_rng(cfg.seed)
    n = len(train_data["labels"])
    steps_per_epoch = max(1, math.ceil(n / cfg.batch_size))

    best_f1 = -1.0
    best_snapshot = {k: p.data.copy() for k, p in params.items()}
    stale = 0
    log: list[dict] = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        last_lr = schedule.lr(epoch if cfg.schedule_unit == "epoch"
                              else step / steps_per_epoch)
        for start in range(0, n, cfg.batch_size):
            lr = schedule.lr(epoch if cfg.schedule_unit == "epoch"
                             else step / steps_per_epoch)
            last_lr = lr
            batch = _batch(train_data, order[start:start + cfg.batch_size])
            opt.zero_grad()
            logits = model(batch["ids"], batch["macd"], batch["images"])
            loss = cross_entropy(logits, batch["labels"])
            if not np.isfinite(loss.data).all():
                for k, p in params.items():
                    p.data = best_snapshot[k].copy()
                log.append({"epoch": epoch, "event": "diverged"})
                return best_snapshot, log
            loss.backward()
            opt.step(lr)
            losses.append(loss.item())
            step += 1
        report = evaluate(model, val_data, cfg.batch_size)
        log.append({
            "epoch": epoch,
            "lr": last_lr,
            "train_loss": float(np.mean(losses)),
            "val": report.to_dict(),
        })
        if report.macro_f1 > best_f1:
            best_f1 = report.macro_f1
            best_snapshot = {k: p.data.copy() for k, p in params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    for k, p in params.items():
        p.data = best_snapshot[k].copy()
    return best_snapshot, log


# -- checkpoints -------------------------------------------------------


def save_checkpoint(path, config: ModelConfig,
                    params: dict[str, np.ndarray]) -> None:
    body = bytearray()
    body += CHECKPOINT_MAGIC
    body += struct.pack("<I", CHECKPOINT_VERSION)
    cfg_json = json.dumps(config.to_dict(), sort_keys=True,
                          separators=(",", ":")).encode("utf-8")
    body += struct.pack("<I", len(cfg_json)) + cfg_json
    body += struct.pack("<I", len(params))
    for name in sorted(params):
        data = np.ascontiguousarray(params[name], dtype="<f8")
        encoded = name.encode("utf-8")
        body += struct.pack("<I", len(encoded)) + encoded
        body += struct.pack("<Q", data.size) + data.tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)))
    with open(path, "wb") as fh:
        fh.write(bytes(body))


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != CHECKPOINT_MAGIC:
        raise DatasetFormatError("not a checkpoint file")
    crc_stored, = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) != crc_stored:
        raise DatasetFormatError("checkpoint checksum mismatch")
    off = 4
    version, = struct.unpack_from("<I", blob, off); off += 4
    if version != CHECKPOINT_VERSION:
        raise DatasetFormatError(f"unsupported checkpoint version {version}")
    cfg_len, = struct.unpack_from("<I", blob, off); off += 4
    config = ModelConfig.from_dict(json.loads(blob[off:off + cfg_len])); off += cfg_len
    count, = struct.unpack_from("<I", blob, off); off += 4
    params = {}
    for _ in range(count):
        name_len, = struct.unpack_from("<I", blob, off); off += 4
        name = blob[off:off + name_len].decode("utf-8"); off += name_len
        size, = struct.unpack_from("<Q", blob, off); off += 8
        params[name] = np.frombuffer(blob, dtype="<f8", count=size,
                                     offset=off).copy(); off += 8 * size
    return config, params


def restore_model(path, seed: int = 42) -> MeantModel:
    """Rebuild a model from a checkpoint, shape-checking every tensor."""
    config, flat = load_checkpoint(path)
    model = MeantModel(config, seed=seed)
    params = model.params()
    if set(params) != set(flat):
        missing = sorted(set(params) ^ set(flat))
        raise DatasetFormatError(f"checkpoint/model parameter mismatch: {missing}")
    for name, p in params.items():
        if flat[name].size != p.size:
            raise DatasetFormatError(
                f"checkpoint tensor {name!r} has {flat[name].size} elements, "
                f"model expects {p.size}")
        p.data = flat[name].reshape(p.shape).copy()
    return model

"""Per-day pooling, price fusion, target-day temporal attention, and the
classification head, assembled into the full model.

The temporal attention builds its query from the final lag day only while
keys and values span the whole window, so the output is a target-focused
summary of the lag period.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .embeddings import PatchSpec, apply_rotary
from .encoders import (INIT_STD, EncoderConfig, FeedForward, LanguagePipeline,
                       LayerNorm, Linear, VisionPipeline, _merge)
from .errors import ContractError, DimensionError
from .tensor import Tensor, concat, gelu, matmul, softmax_last_dim

MACD_WIDTH = 5


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 64
    seq_len: int = 16
    lag: int = 5
    d_l: int = 32
    d_p: int = 32
    lang_depth: int = 1
    vision_depth: int = 1
    heads: int = 2
    temporal_heads: int = 1
    mlp_ratio: int = 4
    norm_mode: str = "standard"
    lang_pos: str = "xpos"
    temporal_pos: str = "none"       # {none, rotary}
    axial_literal: bool = False
    pooling: str = "mean_pool"       # {mean_pool, seq_proj}
    pool_mask_aware: bool = False
    use_text: bool = True
    use_image: bool = True
    use_price: bool = True
    use_pad_mask: bool = True
    temporal_residual: bool = True
    temporal_ffn: bool = True
    image_height: int = 32
    image_width: int = 32
    channels: int = 3
    patch_size: int = 16
    pad_id: int = 0

    def __post_init__(self):
        if not (self.use_text or self.use_image or self.use_price):
            raise ContractError("at least one modality must be enabled")
        if self.pooling not in ("mean_pool", "seq_proj"):
            raise ContractError(f"unknown pooling {self.pooling!r}")

    @property
    def d_t(self) -> int:
        """Fused temporal width: language dim plus the 5 MACD lanes."""
        return self.d_l * self.use_text + MACD_WIDTH * self.use_price

    @property
    def patch_count(self) -> int:
        spec = PatchSpec(self.patch_size, self.channels, self.d_p)
        return spec.patch_count(self.image_height, self.image_width)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(d) - {f for f in known}
        if unknown:
            raise ContractError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# -- pooling -----------------------------------------------------------


def mean_pool(l_out: Tensor, pad_mask: np.ndarray | None = None) -> Tensor:
    """Average over the token axis of (b, l, s, d).

    With ``pad_mask`` (b, l, s boolean, True = real token) only non-pad
    positions contribute; otherwise every position counts, matching the
    plain 1/s formulation.
    """
    if pad_mask is None:
        return l_out.mean(axis=2)
    counts = np.maximum(1, pad_mask.sum(axis=-1, keepdims=True))
    weights = pad_mask.astype(np.float64) / counts
    return (l_out * Tensor(weights[..., None])).sum(axis=2)


class SequenceProjection:
    """Learned s -> 1 reduction followed by layer norm and GELU."""

    def __init__(self, rng, seq_len: int, dim: int, name: str,
                 norm_mode: str = "standard"):
        self.seq_len = seq_len
        self.weight = Tensor(rng.normal(0.0, INIT_STD, size=(seq_len, 1)),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(1), requires_grad=True)
        self.norm = LayerNorm(dim, f"{name}.norm", norm_mode)
        self.name = name

    def __call__(self, l_out: Tensor) -> Tensor:
        if l_out.shape[-2] != self.seq_len:
            raise DimensionError(
                f"expected sequence axis {self.seq_len}, got {l_out.shape[-2]}")
        x = l_out.swapaxes(-1, -2)                     # (b, l, d, s)
        projected = matmul(x, self.weight) + self.bias  # (b, l, d, 1)
        squeezed = projected.reshape(*l_out.shape[:-2], l_out.shape[-1])
        return gelu(self.norm(squeezed))

    def params(self) -> dict[str, Tensor]:
        out = {f"{self.name}.weight": self.weight, f"{self.name}.bias": self.bias}
        out.update(self.norm.params())
        return out


def fuse_price(l_seq: Tensor | None, macd: Tensor | None) -> Tensor:
    """Concatenate language features and MACD lanes on the last axis."""
    if l_seq is None and macd is None:
        raise ContractError("fusion needs at least one input")
    if l_seq is None:
        return macd
    if macd is None:
        return l_seq
    if l_seq.shape[:-1] != macd.shape[:-1]:
        raise DimensionError(
            f"batch/lag mismatch: {l_seq.shape} vs {macd.shape}")
    return concat([l_seq, macd], axis=-1)


# -- temporal attention ------------------------------------------------


class QueryTargetAttention:
    """Attention whose query comes from the final (target-adjacent) day."""

    def __init__(self, rng, dim: int, heads: int = 1, name: str = "temporal",
                 pos_encoding: str = "none", residual: bool = True,
                 use_ffn: bool = True, mlp_ratio: int = 4,
                 norm_mode: str = "standard"):
        if dim % heads:
            raise DimensionError(f"temporal dim {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.pos_encoding = pos_encoding
        self.residual = residual
        self.wq = Linear(rng, dim, dim, f"{name}.wq", bias=False)
        self.wk = Linear(rng, dim, dim, f"{name}.wk", bias=False)
        self.wv = Linear(rng, dim, dim, f"{name}.wv", bias=False)
        self.wo = Linear(rng, dim, dim, f"{name}.wo", bias=False)
        self.ffn = None
        if use_ffn:
            self.ffn_norm = LayerNorm(dim, f"{name}.ffn_norm", norm_mode)
            self.ffn = FeedForward(rng, dim, mlp_ratio, f"{name}.ffn", norm_mode)

    def __call__(self, fused: Tensor) -> Tensor:
        b, l, d = fused.shape
        if l < 1:
            raise ContractError("temporal attention needs at least one lag day")
        target = fused[:, l - 1:l, :]                  # (b, 1, d)
        q = self.wq(target).reshape(b, 1, self.heads, self.head_dim).transpose(0, 2, 1, 3)
        k = self.wk(fused).reshape(b, l, self.heads, self.head_dim).transpose(0, 2, 1, 3)
        v = self.wv(fused).reshape(b, l, self.heads, self.head_dim).transpose(0, 2, 1, 3)
        if self.pos_encoding == "rotary":
            positions = np.arange(l)
            q, _ = apply_rotary(q, q, positions[l - 1:l])
            _, k = apply_rotary(k, k, positions)
        logits = matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(self.head_dim))
        attn = softmax_last_dim(logits)                # (b, heads, 1, l)
        out = matmul(attn, v).transpose(0, 2, 1, 3).reshape(b, 1, d)
        out = self.wo(out)
        if self.residual:
            out = out + target
        if self.ffn is not None:
            out = out + self.ffn(self.ffn_norm(out))
        return out.reshape(b, d)

    def attention_weights(self, fused: Tensor) -> np.ndarray:
        """The softmax row over lag days (diagnostics and tests)."""
        b, l, d = fused.shape
        target = fused[:, l - 1:l, :]
        q = self.wq(target).reshape(b, 1, self.heads, self.head_dim).transpose(0, 2, 1, 3)
        k = self.wk(fused).reshape(b, l, self.heads, self.head_dim).transpose(0, 2, 1, 3)
        logits = matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(self.head_dim))
        return softmax_last_dim(logits).data

    def params(self) -> dict[str, Tensor]:
        out = _merge(self.wq, self.wk, self.wv, self.wo)
        if self.ffn is not None:
            out.update(self.ffn_norm.params())
            out.update(self.ffn.params())
        return out


class ImageSequenceProjection(SequenceProjection):
    """Patch-axis reduction of I_out; mean pooling is never used here."""

    def __call__(self, i_out: Tensor) -> Tensor:
        if i_out.shape[-2] != self.seq_len:
            raise DimensionError(
                f"expected {self.seq_len} patches, got {i_out.shape[-2]}")
        x = i_out.swapaxes(-1, -2)                     # (b, d, p)
        projected = matmul(x, self.weight) + self.bias
        squeezed = projected.reshape(i_out.shape[0], i_out.shape[-1])
        return gelu(self.norm(squeezed))


class ClassifierHead:
    def __init__(self, rng, dim: int, name: str = "head", classes: int = 2):
        self.fc1 = Linear(rng, dim, dim, f"{name}.fc1")
        self.fc2 = Linear(rng, dim, classes, f"{name}.fc2")

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))

    def params(self) -> dict[str, Tensor]:
        return _merge(self.fc1, self.fc2)


# -- full model --------------------------------------------------------


class MeantModel:
    """Dual-encoder model with query-targeted temporal fusion."""

    def __init__(self, config: ModelConfig, seed: int = 42):
        self.config = config
        rng = np.random.default_rng(seed)
        c = config

        self.language = None
        self.pool = None
        if c.use_text:
            lang_cfg = EncoderConfig(depth=c.lang_depth, dim=c.d_l,
                                     heads=c.heads, mlp_ratio=c.mlp_ratio,
                                     norm_mode=c.norm_mode,
                                     pos_encoding=c.lang_pos)
            self.language = LanguagePipeline(rng, c.vocab_size, lang_cfg,
                                             pad_id=c.pad_id,
                                             use_pad_mask=c.use_pad_mask)
            if c.pooling == "seq_proj":
                self.pool = SequenceProjection(rng, c.seq_len, c.d_l,
                                               "pool.seq", c.norm_mode)

        self.vision = None
        self.image_proj = None
        if c.use_image:
            vis_cfg = EncoderConfig(depth=c.vision_depth, dim=c.d_p,
                                    heads=c.heads, mlp_ratio=c.mlp_ratio,
                                    norm_mode=c.norm_mode)
            patch = PatchSpec(c.patch_size, c.channels, c.d_p)
            self.vision = VisionPipeline(rng, vis_cfg, patch,
                                         (c.image_height, c.image_width),
                                         axial_literal=c.axial_literal)
            total_patches = c.lag * self.vision.n_p
            self.image_proj = ImageSequenceProjection(rng, total_patches,
                                                      c.d_p, "pool.img",
                                                      c.norm_mode)

        self.temporal = None
        if c.use_text or c.use_price:
            self.temporal = QueryTargetAttention(
                rng, c.d_t, heads=c.temporal_heads,
                pos_encoding=c.temporal_pos, residual=c.temporal_residual,
                use_ffn=c.temporal_ffn, mlp_ratio=c.mlp_ratio,
                norm_mode=c.norm_mode)

        final_dim = (c.d_t if self.temporal is not None else 0) \
            + (c.d_p if c.use_image else 0)
        self.head = ClassifierHead(rng, final_dim)

    def forward(self, ids: np.ndarray | None, macd: np.ndarray | None,
                images: np.ndarray | None) -> Tensor:
        c = self.config
        parts: list[Tensor] = []

        t_lang = None
        if self.temporal is not None:
            l_seq = None
            if c.use_text:
                if ids is None:
                    raise ContractError("text modality enabled but no token ids")
                l_out = self.language(ids)
                if self.pool is not None:
                    l_seq = self.pool(l_out)
                else:
                    pad_mask = (np.asarray(ids) != c.pad_id) if c.pool_mask_aware else None
                    l_seq = mean_pool(l_out, pad_mask)
            m_in = None
            if c.use_price:
                if macd is None:
                    raise ContractError("price modality enabled but no MACD input")
                m_in = Tensor(np.asarray(macd, dtype=np.float64))
            fused = fuse_price(l_seq, m_in)
            t_lang = self.temporal(fused)
            parts.append(t_lang)

        if c.use_image:
            if images is None:
                raise ContractError("image modality enabled but no images")
            i_out = self.vision(images)
            parts.append(self.image_proj(i_out))

        final = parts[0] if len(parts) == 1 else concat(parts, axis=-1)
        return self.head(final)

    __call__ = forward

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for mod in (self.language, self.pool, self.vision, self.image_proj,
                    self.temporal, self.head):
            if mod is not None:
                out.update(mod.params())
        return out

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params().values())

    def zero_grad(self) -> None:
        for p in self.params().values():
            p.zero_grad()

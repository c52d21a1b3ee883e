"""Attention blocks and the language / vision encoder pipelines.

The language stack is an interleaved-layernorm transformer encoder run
independently per lag day; the vision stack alternates temporal attention
(same patch across frames) and spatial attention (patches within a frame)
before a feed-forward sub-layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .embeddings import (PatchSpec, apply_axial_rotary_2d, apply_rotary,
                         apply_xpos, patch_embed, token_embed)
from .errors import ContractError, DimensionError, NumericError
from .tensor import Tensor, gelu, layer_norm, matmul, softmax_last_dim

INIT_STD = 0.02
MASK_NEG = -1e30


@dataclass(frozen=True)
class EncoderConfig:
    depth: int = 1
    dim: int = 32
    heads: int = 2
    mlp_ratio: int = 4
    norm_mode: str = "standard"
    pos_encoding: str = "xpos"   # language: {xpos, rotary, none}

    def __post_init__(self):
        if self.depth < 1:
            raise ContractError("depth must be >= 1")
        if self.dim % self.heads:
            raise DimensionError(
                f"dim {self.dim} not divisible by heads {self.heads}")


class Linear:
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int,
                 name: str, scale: float = 1.0, bias: bool = True):
        self.name = name
        w = rng.normal(0.0, INIT_STD * scale, size=(d_in, d_out))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = matmul(x, self.weight)
        return out if self.bias is None else out + self.bias

    def params(self) -> dict[str, Tensor]:
        out = {f"{self.name}.weight": self.weight}
        if self.bias is not None:
            out[f"{self.name}.bias"] = self.bias
        return out


class LayerNorm:
    def __init__(self, d: int, name: str, mode: str = "standard"):
        self.name = name
        self.mode = mode
        self.gain = Tensor(np.ones(d), requires_grad=True)
        self.bias = Tensor(np.zeros(d), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, mode=self.mode)

    def params(self) -> dict[str, Tensor]:
        return {f"{self.name}.gain": self.gain, f"{self.name}.bias": self.bias}


def _merge(*modules) -> dict[str, Tensor]:
    out: dict[str, Tensor] = {}
    for m in modules:
        out.update(m.params())
    return out


class MultiHeadAttention:
    """Scaled dot-product attention with optional rope and key masking."""

    def __init__(self, rng, dim: int, heads: int, name: str,
                 out_scale: float = 1.0):
        if dim % heads:
            raise DimensionError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        # no biases on the projections: a key bias is a flat direction of
        # the softmax, and rotary-family encodings assume unshifted q/k
        self.wq = Linear(rng, dim, dim, f"{name}.wq", bias=False)
        self.wk = Linear(rng, dim, dim, f"{name}.wk", bias=False)
        self.wv = Linear(rng, dim, dim, f"{name}.wv", bias=False)
        self.wo = Linear(rng, dim, dim, f"{name}.wo", scale=out_scale, bias=False)

    def _split(self, x: Tensor, b: int, n: int) -> Tensor:
        return x.reshape(b, n, self.heads, self.head_dim).transpose(0, 2, 1, 3)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None,
                 rope=None) -> Tensor:
        b, n, _ = x.shape
        q = self._split(self.wq(x), b, n)
        k = self._split(self.wk(x), b, n)
        v = self._split(self.wv(x), b, n)
        if rope is not None:
            q, k = rope(q, k)
        logits = matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(self.head_dim))
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if (~mask).all(axis=-1).any():
                raise NumericError("attention row with every key masked")
            bias = np.where(mask, 0.0, MASK_NEG)[:, None, None, :]
            logits = logits + Tensor(bias)
        attn = softmax_last_dim(logits)
        out = matmul(attn, v).transpose(0, 2, 1, 3).reshape(b, n, self.dim)
        return self.wo(out)

    def params(self) -> dict[str, Tensor]:
        return _merge(self.wq, self.wk, self.wv, self.wo)


class FeedForward:
    """Linear -> interleaved layer norm -> GELU -> Linear."""

    def __init__(self, rng, dim: int, ratio: int, name: str,
                 norm_mode: str, out_scale: float = 1.0):
        hidden = dim * ratio
        self.fc1 = Linear(rng, dim, hidden, f"{name}.fc1")
        self.inner_norm = LayerNorm(hidden, f"{name}.inner_norm", norm_mode)
        self.fc2 = Linear(rng, hidden, dim, f"{name}.fc2", scale=out_scale)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.inner_norm(self.fc1(x))))

    def params(self) -> dict[str, Tensor]:
        return _merge(self.fc1, self.inner_norm, self.fc2)


class LanguageEncoderBlock:
    """Pre-norm attention and FFN sub-layers with residuals."""

    def __init__(self, rng, cfg: EncoderConfig, name: str, out_scale: float):
        self.cfg = cfg
        self.norm1 = LayerNorm(cfg.dim, f"{name}.norm1", cfg.norm_mode)
        self.attn = MultiHeadAttention(rng, cfg.dim, cfg.heads,
                                       f"{name}.attn", out_scale)
        self.norm2 = LayerNorm(cfg.dim, f"{name}.norm2", cfg.norm_mode)
        self.ffn = FeedForward(rng, cfg.dim, cfg.mlp_ratio, f"{name}.ffn",
                               cfg.norm_mode, out_scale)

    def __call__(self, x: Tensor, mask=None, rope=None) -> Tensor:
        x = x + self.attn(self.norm1(x), mask=mask, rope=rope)
        return x + self.ffn(self.norm2(x))

    def params(self) -> dict[str, Tensor]:
        return _merge(self.norm1, self.attn, self.norm2, self.ffn)


class DividedSpaceTimeBlock:
    """Temporal attention across frames, spatial within a frame, then FFN."""

    def __init__(self, rng, cfg: EncoderConfig, name: str, out_scale: float,
                 axial_literal: bool = False):
        self.cfg = cfg
        self.axial_literal = axial_literal
        self.norm_t = LayerNorm(cfg.dim, f"{name}.norm_t", cfg.norm_mode)
        self.attn_t = MultiHeadAttention(rng, cfg.dim, cfg.heads,
                                         f"{name}.attn_t", out_scale)
        self.norm_s = LayerNorm(cfg.dim, f"{name}.norm_s", cfg.norm_mode)
        self.attn_s = MultiHeadAttention(rng, cfg.dim, cfg.heads,
                                         f"{name}.attn_s", out_scale)
        self.norm_f = LayerNorm(cfg.dim, f"{name}.norm_f", cfg.norm_mode)
        self.ffn = FeedForward(rng, cfg.dim, cfg.mlp_ratio, f"{name}.ffn",
                               cfg.norm_mode, out_scale)

    def __call__(self, x: Tensor, grid: tuple[int, int]) -> Tensor:
        b, l, n_p, d = x.shape
        gh, gw = grid
        if gh * gw != n_p:
            raise DimensionError(f"grid {grid} does not tile {n_p} patches")

        frames = np.arange(l)
        rope_t = (lambda q, k: apply_rotary(q, k, frames))
        y = x.transpose(0, 2, 1, 3).reshape(b * n_p, l, d)
        y = y + self.attn_t(self.norm_t(y), rope=rope_t)
        x = y.reshape(b, n_p, l, d).transpose(0, 2, 1, 3)

        idx = np.arange(n_p)
        rows, cols = idx // gw, idx % gw
        if d // self.cfg.heads % 4 == 0:
            rope_s = (lambda q, k: apply_axial_rotary_2d(
                q, k, rows, cols, literal=self.axial_literal))
        else:
            rope_s = None
        z = x.reshape(b * l, n_p, d)
        z = z + self.attn_s(self.norm_s(z), rope=rope_s)
        z = z + self.ffn(self.norm_f(z))
        return z.reshape(b, l, n_p, d)

    def params(self) -> dict[str, Tensor]:
        return _merge(self.norm_t, self.attn_t, self.norm_s, self.attn_s,
                      self.norm_f, self.ffn)


class LanguagePipeline:
    """Token embedding plus per-lag-day encoder blocks -> L_out."""

    def __init__(self, rng, vocab_size: int, cfg: EncoderConfig,
                 pad_id: int = 0, use_pad_mask: bool = True):
        self.cfg = cfg
        self.pad_id = pad_id
        self.use_pad_mask = use_pad_mask
        self.table = Tensor(rng.normal(0.0, INIT_STD, size=(vocab_size, cfg.dim)),
                            requires_grad=True)
        out_scale = 1.0 / math.sqrt(2.0 * cfg.depth)
        self.blocks = [LanguageEncoderBlock(rng, cfg, f"lang.block{i}", out_scale)
                       for i in range(cfg.depth)]

    def __call__(self, ids: np.ndarray) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        b, l, s = ids.shape
        x = token_embed(ids, self.table).reshape(b * l, s, self.cfg.dim)
        mask = None
        if self.use_pad_mask:
            mask = (ids != self.pad_id).reshape(b * l, s)
            # a fully padded day would starve attention; let PAD attend to
            # itself in that case
            dead = ~mask.any(axis=-1)
            if dead.any():
                mask = mask.copy()
                mask[dead, 0] = True
        positions = np.arange(s)
        if self.cfg.pos_encoding == "xpos":
            rope = lambda q, k: apply_xpos(q, k, positions)
        elif self.cfg.pos_encoding == "rotary":
            rope = lambda q, k: apply_rotary(q, k, positions)
        elif self.cfg.pos_encoding == "none":
            rope = None
        else:
            raise ContractError(f"unknown pos encoding {self.cfg.pos_encoding!r}")
        for block in self.blocks:
            x = block(x, mask=mask, rope=rope)
        return x.reshape(b, l, s, self.cfg.dim)

    def params(self) -> dict[str, Tensor]:
        out = {"lang.embed.table": self.table}
        for blk in self.blocks:
            out.update(blk.params())
        return out


class VisionPipeline:
    """Patch embedding plus divided space-time blocks -> I_out."""

    def __init__(self, rng, cfg: EncoderConfig, patch: PatchSpec,
                 image_hw: tuple[int, int], axial_literal: bool = False):
        if patch.dim != cfg.dim:
            raise DimensionError(
                f"patch dim {patch.dim} must equal encoder dim {cfg.dim}")
        self.cfg = cfg
        self.patch = patch
        h, w = image_hw
        self.grid = (h // patch.patch_size, w // patch.patch_size)
        self.n_p = patch.patch_count(h, w)
        self.proj_w = Tensor(rng.normal(0.0, INIT_STD,
                                        size=(patch.flat_size, cfg.dim)),
                             requires_grad=True)
        self.proj_b = Tensor(np.zeros(cfg.dim), requires_grad=True)
        out_scale = 1.0 / math.sqrt(2.0 * cfg.depth)
        self.blocks = [DividedSpaceTimeBlock(rng, cfg, f"vision.block{i}",
                                             out_scale, axial_literal)
                       for i in range(cfg.depth)]

    def __call__(self, images: np.ndarray) -> Tensor:
        b, l = images.shape[:2]
        x = patch_embed(images, self.proj_w, self.proj_b, self.patch)
        for block in self.blocks:
            x = block(x, self.grid)
        return x.reshape(b, l * self.n_p, self.cfg.dim)

    def params(self) -> dict[str, Tensor]:
        out = {"vision.patch.weight": self.proj_w, "vision.patch.bias": self.proj_b}
        for blk in self.blocks:
            out.update(blk.params())
        return out

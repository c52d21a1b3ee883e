"""Token/patch embedding and rotary-family positional encodings.

All rotations are applied through differentiable tensor ops, so gradients
flow through q and k; the angle tables themselves are constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .tensor import Tensor, concat, embedding_lookup, matmul

ROTARY_BASE = 10000.0
XPOS_GAMMA = 0.4


@dataclass(frozen=True)
class PatchSpec:
    patch_size: int = 16
    channels: int = 3
    dim: int = 768

    def patch_count(self, height: int, width: int) -> int:
        if height % self.patch_size or width % self.patch_size:
            raise DimensionError(
                f"image {height}x{width} not divisible by patch {self.patch_size}")
        return (height // self.patch_size) * (width // self.patch_size)

    @property
    def flat_size(self) -> int:
        return self.channels * self.patch_size * self.patch_size


def token_embed(ids: np.ndarray, table: Tensor) -> Tensor:
    """Row lookup producing a trailing embedding axis."""
    return embedding_lookup(table, np.asarray(ids, dtype=np.int64))


def extract_patches(images: np.ndarray, spec: PatchSpec) -> np.ndarray:
    """(..., c, H, W) -> (..., n_p, c*P*P), channel-major within a patch."""
    p = spec.patch_size
    *lead, c, h, w = images.shape
    if h % p or w % p:
        raise DimensionError(f"image {h}x{w} not divisible by patch {p}")
    gh, gw = h // p, w // p
    x = images.reshape(*lead, c, gh, p, gw, p)
    nl = len(lead)
    x = x.transpose(*range(nl), nl + 1, nl + 3, nl, nl + 2, nl + 4)
    return x.reshape(*lead, gh * gw, c * p * p)


def patch_embed(images: np.ndarray, weight: Tensor, bias: Tensor,
                spec: PatchSpec) -> Tensor:
    """Linear projection of non-overlapping patches into token vectors."""
    flat = extract_patches(np.asarray(images, dtype=np.float64), spec)
    if weight.shape[0] != flat.shape[-1]:
        raise DimensionError(
            f"patch weight rows {weight.shape[0]} != flat patch {flat.shape[-1]}")
    return matmul(Tensor(flat), weight) + bias


# -- rotary family -----------------------------------------------------


def _pair_freqs(d: int, base: float = ROTARY_BASE) -> np.ndarray:
    return base ** (-2.0 * np.arange(d // 2) / d)


def _rotate_half(x: Tensor) -> Tensor:
    """Per pair (x1, x2) -> (-x2, x1)."""
    shape = x.shape
    d = shape[-1]
    pairs = x.reshape(*shape[:-1], d // 2, 2)
    x1 = pairs[..., 0:1]
    x2 = pairs[..., 1:2]
    return concat([-x2, x1], axis=-1).reshape(*shape)


def _apply_rotation(x: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    return x * Tensor(cos) + _rotate_half(x) * Tensor(sin)


def _angles(positions: np.ndarray, freqs: np.ndarray) -> np.ndarray:
    theta = np.asarray(positions, dtype=np.float64)[:, None] * freqs[None, :]
    return np.repeat(theta, 2, axis=-1)


def apply_rotary(q: Tensor, k: Tensor, positions) -> tuple[Tensor, Tensor]:
    """Standard rotary embedding over the second-to-last (position) axis."""
    d = q.shape[-1]
    if d % 2:
        raise DimensionError(f"rotary needs an even head dim, got {d}")
    theta = _angles(positions, _pair_freqs(d))
    cos, sin = np.cos(theta), np.sin(theta)
    return _apply_rotation(q, cos, sin), _apply_rotation(k, cos, sin)


def xpos_scales(positions, d: int, gamma: float = XPOS_GAMMA) -> np.ndarray:
    zeta = (np.arange(d // 2) / (d / 2) + gamma) / (1.0 + gamma)
    pos = np.asarray(positions, dtype=np.float64)[:, None]
    return np.repeat(zeta[None, :] ** pos, 2, axis=-1)


def apply_xpos(q: Tensor, k: Tensor, positions) -> tuple[Tensor, Tensor]:
    """Rotary rotation plus the xPos exponential decay on q and 1/decay on k."""
    d = q.shape[-1]
    if d % 2:
        raise DimensionError(f"xpos needs an even head dim, got {d}")
    theta = _angles(positions, _pair_freqs(d))
    cos, sin = np.cos(theta), np.sin(theta)
    scale = xpos_scales(positions, d)
    q_rot = _apply_rotation(q, cos, sin) * Tensor(scale)
    k_rot = _apply_rotation(k, cos, sin) * Tensor(1.0 / scale)
    return q_rot, k_rot


def apply_axial_rotary_2d(q: Tensor, k: Tensor, rows, cols,
                          literal: bool = False) -> tuple[Tensor, Tensor]:
    """2-D rotary: the first half of dims follows the row index, the second
    the column index.

    ``literal`` swaps in per-pair angles theta_i = i * floor(d/2) * pi
    (kept for fidelity experiments; every rotation degenerates to entries
    in {-1, 0, 1}).
    """
    d = q.shape[-1]
    if d % 4:
        raise DimensionError(f"axial rotary needs d divisible by 4, got {d}")
    rows = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)
    half = d // 2
    if literal:
        pair_theta = np.arange(d // 2) * (d // 2) * np.pi
        theta = np.empty((rows.size, d // 2))
        theta[:, :half // 2] = rows[:, None] * pair_theta[None, :half // 2]
        theta[:, half // 2:] = cols[:, None] * pair_theta[None, half // 2:]
    else:
        freqs = _pair_freqs(half)
        theta = np.empty((rows.size, d // 2))
        theta[:, :half // 2] = rows[:, None] * freqs[None, :]
        theta[:, half // 2:] = cols[:, None] * freqs[None, :]
    theta = np.repeat(theta, 2, axis=-1)
    cos, sin = np.cos(theta), np.sin(theta)
    return _apply_rotation(q, cos, sin), _apply_rotation(k, cos, sin)

"""Windowed multi-head self-attention with patch shift and 3D position bias.

Attention always runs inside non-overlapping spatial windows of a single
frame; temporal mixing comes entirely from shifting patches across frames
before the windows are cut.  Each token keeps its source-frame coordinate,
and the relative position bias is looked up with (dt, dr, dc) displacements
between source coordinates, so the bias follows shifted patches around.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .patterns import ShiftPattern, tile_offsets
from .shifts import ShiftDirection, patch_shift
from .tensor import (
    Tape,
    Tensor,
    add,
    gather,
    matmul,
    reshape,
    scale,
    softmax,
    stack,
    swap_last,
    transpose,
)

__all__ = [
    "WindowLayout",
    "AttentionParams",
    "relpos_index",
    "window_mhsa",
    "patch_shift_attention",
]


@dataclass(frozen=True)
class WindowLayout:
    """Spatial window extents; windows tile the patch grid exactly."""

    height: int
    width: int

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ShapeError(f"window extents must be positive, got {self.height}x{self.width}")

    @property
    def tokens(self) -> int:
        return self.height * self.width

    def check_divides(self, grid_h: int, grid_w: int) -> None:
        if grid_h % self.height or grid_w % self.width:
            raise ShapeError(
                f"window {self.height}x{self.width} does not tile patch grid {grid_h}x{grid_w}"
            )


@dataclass
class AttentionParams:
    """Projection weights and the per-head (dt, dr, dc) bias table.

    Projection weights are stored (in, out) and applied as x @ w.  The bias
    table covers displacements dt in [-(t_max-1), t_max-1], dr in
    [-(wh-1), wh-1], dc in [-(ww-1), ww-1], one table per head.
    """

    heads: int
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_out: Tensor
    bias_table: Tensor

    def __post_init__(self):
        d = self.w_q.shape[-1]
        for name in ("w_q", "w_k", "w_v", "w_out"):
            w = getattr(self, name)
            if w.shape != (d, d):
                raise ShapeError(f"{name} must be square (D, D), got {w.shape}")
        if self.heads <= 0 or d % self.heads:
            raise ShapeError(f"heads {self.heads} must divide model dim {d}")
        bt = self.bias_table.shape
        if len(bt) != 4 or bt[0] != self.heads:
            raise ShapeError(
                f"bias table must be (heads, 2T-1, 2wh-1, 2ww-1), got {bt}"
            )
        if any(extent % 2 == 0 for extent in bt[1:]):
            raise ShapeError(f"bias table displacement extents must be odd, got {bt}")

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def t_max(self) -> int:
        return (self.bias_table.shape[1] + 1) // 2


def relpos_index(layout: WindowLayout, src_frames: np.ndarray, t_max: int) -> np.ndarray:
    """Flat bias-table indices for every (query, key) pair in one window.

    Tokens are ordered row-major within the window; the temporal coordinate
    of each token is its source frame, which is what makes the bias follow
    shifted patches.
    """
    wh, ww = layout.height, layout.width
    src = np.asarray(src_frames, dtype=np.int64).ravel()
    if src.size != layout.tokens:
        raise ShapeError(f"{src.size} source frames for a {wh}x{ww} window")
    if src.size and (src.min() < 0 or src.max() >= t_max):
        raise ContractError(f"source frames must lie in [0, {t_max})")
    rows = np.arange(layout.tokens) // ww
    cols = np.arange(layout.tokens) % ww
    dt = src[None, :] - src[:, None]
    dr = rows[None, :] - rows[:, None]
    dc = cols[None, :] - cols[:, None]
    if np.abs(dt).max(initial=0) > t_max - 1:
        raise ContractError("temporal displacement outside bias table")
    return ((dt + t_max - 1) * (2 * wh - 1) + (dr + wh - 1)) * (2 * ww - 1) + (dc + ww - 1)


def window_mhsa(tape: Tape | None, x: Tensor, params: AttentionParams, index: np.ndarray) -> Tensor:
    """Multi-head self-attention over one window of n tokens.

    scores = (x W_q)(x W_k)^T / sqrt(d) + bias[index]; the softmax rows are
    convex weights over the window's values.
    """
    if x.ndim != 2:
        raise ShapeError(f"window tokens must be (n, D), got {x.shape}")
    n, d = x.shape
    if d != params.dim:
        raise ShapeError(f"token dim {d} != params dim {params.dim}")
    index = np.asarray(index, dtype=np.int64)
    if index.shape != (n, n):
        raise ShapeError(f"bias index map must be ({n}, {n}), got {index.shape}")
    heads, hd = params.heads, params.head_dim
    table_size = params.bias_table.size // heads
    if index.size and (index.min() < 0 or index.max() >= table_size):
        raise ContractError("bias index outside table")

    def split(t: Tensor) -> Tensor:
        return transpose(tape, reshape(tape, t, (n, heads, hd)), (1, 0, 2))

    q = split(matmul(tape, x, params.w_q, label="proj"))
    k = split(matmul(tape, x, params.w_k, label="proj"))
    v = split(matmul(tape, x, params.w_v, label="proj"))

    scores = scale(tape, matmul(tape, q, swap_last(tape, k), label="score"), 1.0 / math.sqrt(hd))
    flat_idx = (np.arange(heads)[:, None, None] * table_size + index[None]).ravel()
    bias = gather(tape, params.bias_table, flat_idx, (heads, n, n))
    weights = softmax(tape, add(tape, scores, bias), axis=-1)
    ctx = matmul(tape, weights, v, label="agg")
    merged = reshape(tape, transpose(tape, ctx, (1, 0, 2)), (n, d))
    return matmul(tape, merged, params.w_out, label="proj")


def _window_token_indices(
    t: int, r0: int, c0: int, layout: WindowLayout, grid_h: int, grid_w: int, dim: int
) -> np.ndarray:
    rows = r0 + np.arange(layout.height)
    cols = c0 + np.arange(layout.width)
    site = (t * grid_h + rows)[:, None] * grid_w + cols[None, :]
    return (site.reshape(-1, 1) * dim + np.arange(dim)[None, :]).ravel()


def patch_shift_attention(
    tape: Tape | None,
    z: Tensor,
    pattern: ShiftPattern,
    layout: WindowLayout,
    params: AttentionParams,
) -> Tensor:
    """Shift patches, attend inside spatial windows, shift back.

    The pattern must tile the window so every window sees the same offset
    layout; the caller owns the residual connection.
    """
    if z.ndim != 4:
        raise ShapeError(f"token tensor must be (T, H, W, D), got {z.shape}")
    t_len, grid_h, grid_w, d = z.shape
    layout.check_divides(grid_h, grid_w)
    if layout.height % pattern.height or layout.width % pattern.width:
        raise ShapeError(
            f"pattern {pattern.height}x{pattern.width} does not tile "
            f"window {layout.height}x{layout.width}"
        )
    if d != params.dim:
        raise ShapeError(f"token dim {d} != params dim {params.dim}")
    if params.t_max < t_len:
        raise ContractError(
            f"bias table covers {params.t_max} frames, tokens have {t_len}"
        )

    grid = tile_offsets(pattern, grid_h, grid_w)
    shifted = patch_shift(tape, z, grid, ShiftDirection.FORWARD)

    # Window-local source frames: identical for every window at a given t
    # because the pattern tiles the window.
    local = tile_offsets(pattern, layout.height, layout.width)
    outputs = []
    for t in range(t_len):
        src = (t + local) % t_len
        index = relpos_index(layout, src, params.t_max)
        for r0 in range(0, grid_h, layout.height):
            for c0 in range(0, grid_w, layout.width):
                idx = _window_token_indices(t, r0, c0, layout, grid_h, grid_w, d)
                xw = gather(tape, shifted, idx, (layout.tokens, d))
                outputs.append(window_mhsa(tape, xw, params, index))

    # Reassemble (stacked windows, token, channel) back into (T, H, W, D).
    piled = stack(tape, outputs)
    n_wc = grid_w // layout.width
    tt, rr, cc = np.meshgrid(
        np.arange(t_len), np.arange(grid_h), np.arange(grid_w), indexing="ij"
    )
    w_idx = (tt * (grid_h // layout.height) + rr // layout.height) * n_wc + cc // layout.width
    k_idx = (rr % layout.height) * layout.width + cc % layout.width
    src_flat = ((w_idx * layout.tokens + k_idx)[..., None] * d + np.arange(d)).ravel()
    merged = gather(tape, piled, src_flat, (t_len, grid_h, grid_w, d))

    return patch_shift(tape, merged, grid, ShiftDirection.INVERSE)

"""Graph attention and global-attention pooling built from autodiff primitives."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch
from . import autodiff as ad
from .autodiff import Tensor


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, int],
                   dtype=np.float64) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def graph_attention_layer(h: Tensor, mask: np.ndarray, W: Tensor, a: Tensor,
                          slope: float = 0.2) -> Tensor:
    """Single-head additive graph attention.

    score(i, j) = leaky_relu(a^T [W h_i ; W h_j]), softmax over the row's
    mask-neighbors plus i itself, output relu of the attention-weighted sum
    of transformed neighbor features.

    h: (n, d) node features; mask: (n, n) boolean adjacency pattern;
    W: (d, d_out); a: (2 d_out, 1).
    """
    n = h.shape[0]
    if mask.shape != (n, n):
        raise ShapeMismatch(f"mask {mask.shape} does not match {n} nodes")
    d_out = W.shape[1]
    if a.shape != (2 * d_out, 1):
        raise ShapeMismatch(f"attention vector must be ({2 * d_out}, 1), got {a.shape}")
    hw = ad.matmul(h, W)
    a_src = ad.gather_rows(a, np.arange(d_out))
    a_dst = ad.gather_rows(a, np.arange(d_out, 2 * d_out))
    s_src = ad.matmul(hw, a_src)                      # (n, 1)
    s_dst = ad.matmul(hw, a_dst)                      # (n, 1)
    scores = ad.leaky_relu(ad.add(s_src, ad.transpose(s_dst)), slope)
    att_mask = np.asarray(mask, dtype=bool) | np.eye(n, dtype=bool)
    return ad.relu(ad.masked_neighbor_weighted_sum(scores, att_mask, hw))


def row_normalized_propagation(h: Tensor, a_hat, W: Tensor) -> Tensor:
    """Plain propagation variant: relu(A_hat @ h @ W) with a fixed matrix."""
    dense = a_hat.toarray() if hasattr(a_hat, "toarray") else np.asarray(a_hat)
    mixed = ad.matmul(Tensor(dense.astype(np.float64)), h)
    return ad.relu(ad.matmul(mixed, W))


def global_attention(rows: Tensor, W: Tensor, u: Tensor) -> tuple[Tensor, Tensor]:
    """Context-vector attention pooling over the rows of a matrix.

    z_i = tanh(W^T x_i) done row-wise as tanh(rows @ W), s_i = z_i . u,
    weights = softmax(s), pooled = sum_i weights_i x_i.

    rows: (m, d); W: (d, a); u: (a, 1).  Returns (weights (m, 1), pooled (1, d)).
    """
    if rows.shape[1] != W.shape[0]:
        raise ShapeMismatch(f"rows {rows.shape} vs W {W.shape}")
    z = ad.tanh(ad.matmul(rows, W))                   # (m, a)
    scores = ad.matmul(z, u)                          # (m, 1)
    weights_row = ad.row_softmax(ad.transpose(scores))  # (1, m)
    pooled = ad.matmul(weights_row, rows)             # (1, d)
    return ad.transpose(weights_row), pooled

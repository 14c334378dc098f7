"""Composite differentiable operations: softmax, layer norm, attention."""

from __future__ import annotations

import math

from .tensor import Tensor


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return x.softmax(axis=axis)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if x.shape[-1] == 0:
        raise ValueError("layer_norm over a zero-length axis")
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    xhat = centered / (var + eps).sqrt()
    return xhat * gain + bias


def attention(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    """Multi-head scaled dot-product attention on (T, D) sequences.

    Input/output projections live with the caller; this is the bare
    softmax(QK^T / sqrt(d_h)) V per head, heads re-concatenated.
    """
    tq, d = q.shape
    tk = k.shape[0]
    if d % heads != 0:
        raise ValueError(f"model dim {d} not divisible by {heads} heads")
    if k.shape[1] != d or v.shape != (tk, d):
        raise ValueError("q/k/v dimension mismatch")
    dh = d // heads
    q3 = q.reshape(tq, heads, dh).transpose(1, 0, 2)
    k3 = k.reshape(tk, heads, dh).transpose(1, 2, 0)
    v3 = v.reshape(tk, heads, dh).transpose(1, 0, 2)
    scores = (q3 @ k3) * (1.0 / math.sqrt(dh))
    weights = scores.softmax(axis=-1)
    out = weights @ v3
    return out.transpose(1, 0, 2).reshape(tq, d)

"""Hot numeric kernels with a numba JIT path and a pure-numpy fallback.

The two genuinely loop-shaped inner loops of the engine live here: the
stride-2 1-D convolution that builds the temporal feature pyramid (forward
and backward) and greedy temporal NMS. Everything matmul-shaped stays on
numpy/BLAS.

Backend selection: the environment variable ``VILCO_NUMBA`` picks the path
at import time: "0" forces the numpy fallback, anything else (or unset)
uses numba when it is importable. ``benchmarks/bench_kernels.py`` times the
two paths against each other; both are exposed unconditionally with
``_np`` / ``_nb`` suffixes so the benchmark needs no env juggling.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    _HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAS_NUMBA = False

    def njit(*args, **kwargs):
        def dec(f):
            return f

        return dec if not (args and callable(args[0])) else args[0]


USE_NUMBA = _HAS_NUMBA and os.environ.get("VILCO_NUMBA", "1") != "0"


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"


# -----------------------------------------------------------------------------
# Strided 1-D convolution (pyramid downsampling)
#
# x: (T, D_in), weight: (K, D_in, D_out), bias: (D_out,), padding p, stride s.
# out[t, o] = bias[o] + sum_k sum_i xpad[t*s + k, i] * weight[k, i, o]
# -----------------------------------------------------------------------------


def conv1d_out_len(t: int, kernel: int, stride: int, padding: int) -> int:
    return (t + 2 * padding - kernel) // stride + 1


def _pad_rows(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((padding, padding), (0, 0)))


def conv1d_forward_np(x, weight, bias, stride, padding):
    k = weight.shape[0]
    out_len = conv1d_out_len(x.shape[0], k, stride, padding)
    xpad = _pad_rows(x, padding)
    out = np.tile(bias, (out_len, 1))
    for tap in range(k):
        out += xpad[tap : tap + stride * out_len : stride] @ weight[tap]
    return out


def conv1d_backward_np(grad_out, x, weight, stride, padding):
    """Returns (grad_x, grad_weight, grad_bias) for conv1d_forward."""
    k = weight.shape[0]
    out_len = grad_out.shape[0]
    xpad = _pad_rows(x, padding)
    grad_xpad = np.zeros_like(xpad)
    grad_w = np.zeros_like(weight)
    for tap in range(k):
        sl = slice(tap, tap + stride * out_len, stride)
        grad_w[tap] = xpad[sl].T @ grad_out
        grad_xpad[sl] += grad_out @ weight[tap].T
    grad_x = grad_xpad[padding : padding + x.shape[0]] if padding else grad_xpad
    return grad_x, grad_w, grad_out.sum(axis=0)


@njit(cache=True)
def _gather_taps(xpad, tap, stride, out_len, gather):  # pragma: no cover - jit
    for t in range(out_len):
        row = t * stride + tap
        for i in range(gather.shape[1]):
            gather[t, i] = xpad[row, i]


@njit(cache=True)
def _conv1d_forward_jit(xpad, weight, bias, stride, out):  # pragma: no cover - jit
    # gather the strided rows per tap, then hand the contraction to BLAS
    out_len, d_out = out.shape
    k, d_in, _ = weight.shape
    for t in range(out_len):
        for o in range(d_out):
            out[t, o] = bias[o]
    gather = np.empty((out_len, d_in))
    for tap in range(k):
        _gather_taps(xpad, tap, stride, out_len, gather)
        out += np.dot(gather, weight[tap])
    return out


@njit(cache=True)
def _conv1d_backward_jit(grad_out, xpad, weight, stride, grad_xpad, grad_w, grad_b):  # pragma: no cover - jit
    out_len, d_out = grad_out.shape
    k, d_in, _ = weight.shape
    for t in range(out_len):
        for o in range(d_out):
            grad_b[o] += grad_out[t, o]
    gather = np.empty((out_len, d_in))
    for tap in range(k):
        _gather_taps(xpad, tap, stride, out_len, gather)
        grad_w[tap] += np.dot(gather.T.copy(), grad_out)
        scatter = np.dot(grad_out, weight[tap].T.copy())
        for t in range(out_len):
            row = t * stride + tap
            for i in range(d_in):
                grad_xpad[row, i] += scatter[t, i]


def conv1d_forward_nb(x, weight, bias, stride, padding):
    out_len = conv1d_out_len(x.shape[0], weight.shape[0], stride, padding)
    xpad = np.ascontiguousarray(_pad_rows(x, padding))
    out = np.empty((out_len, weight.shape[2]))
    return _conv1d_forward_jit(xpad, np.ascontiguousarray(weight), bias, stride, out)


def conv1d_backward_nb(grad_out, x, weight, stride, padding):
    xpad = np.ascontiguousarray(_pad_rows(x, padding))
    grad_xpad = np.zeros_like(xpad)
    grad_w = np.zeros_like(weight)
    grad_b = np.zeros(weight.shape[2])
    _conv1d_backward_jit(
        np.ascontiguousarray(grad_out), xpad, np.ascontiguousarray(weight),
        stride, grad_xpad, grad_w, grad_b,
    )
    grad_x = grad_xpad[padding : padding + x.shape[0]] if padding else grad_xpad
    return grad_x, grad_w, grad_b


# -----------------------------------------------------------------------------
# Greedy temporal NMS
#
# Candidates sorted by descending score outside; returns indices kept, in
# score order. A candidate is suppressed when its IoU with any already-kept
# window is >= iou_thresh.
# -----------------------------------------------------------------------------


def _interval_iou_scalar(s1, e1, s2, e2):
    inter = min(e1, e2) - max(s1, s2)
    if inter <= 0.0:
        return 0.0
    union = max(e1, e2) - min(s1, s2)
    return inter / union


def _nms_np(starts, ends, order, iou_thresh):
    keep = []
    for idx in order:
        ok = True
        for j in keep:
            if _interval_iou_scalar(starts[idx], ends[idx], starts[j], ends[j]) >= iou_thresh:
                ok = False
                break
        if ok:
            keep.append(idx)
    return np.asarray(keep, dtype=np.int64)


@njit(cache=True)
def _nms_jit(starts, ends, order, iou_thresh):  # pragma: no cover - jit
    n = order.shape[0]
    keep = np.empty(n, dtype=np.int64)
    nkeep = 0
    for oi in range(n):
        idx = order[oi]
        ok = True
        for ki in range(nkeep):
            j = keep[ki]
            inter = min(ends[idx], ends[j]) - max(starts[idx], starts[j])
            if inter > 0.0:
                union = max(ends[idx], ends[j]) - min(starts[idx], starts[j])
                if inter / union >= iou_thresh:
                    ok = False
                    break
        if ok:
            keep[nkeep] = idx
            nkeep += 1
    return keep[:nkeep]


def greedy_nms(starts: np.ndarray, ends: np.ndarray, scores: np.ndarray, iou_thresh: float) -> np.ndarray:
    """Indices of windows surviving greedy NMS, highest score first.

    Ties in score break by ascending index (stable sort) for determinism.
    """
    order = np.argsort(-scores, kind="stable").astype(np.int64)
    starts = np.ascontiguousarray(starts, dtype=np.float64)
    ends = np.ascontiguousarray(ends, dtype=np.float64)
    if USE_NUMBA:
        return _nms_jit(starts, ends, order, float(iou_thresh))
    return _nms_np(starts, ends, order, float(iou_thresh))


# Public conv entry points honoring the backend flag.

def conv1d_forward(x, weight, bias, stride=2, padding=1):
    if USE_NUMBA:
        return conv1d_forward_nb(x, weight, bias, stride, padding)
    return conv1d_forward_np(x, weight, bias, stride, padding)


def conv1d_backward(grad_out, x, weight, stride=2, padding=1):
    if USE_NUMBA:
        return conv1d_backward_nb(grad_out, x, weight, stride, padding)
    return conv1d_backward_np(grad_out, x, weight, stride, padding)

"""Anchor-free localization loss: focal classification + IoU regression.

Ground-truth windows are assigned to pyramid timesteps by center sampling:
a timestep t at level stride s is positive for a window when t*s lies inside
the window and within ``center_radius * s`` of its center. Positives get the
window's category as classification target and (dl, dr) stride-unit offsets
as regression target; when two windows claim one timestep the shorter wins.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..numkit import Tensor
from .model import DenseOutputs


def _focal_sum(logits: Tensor, targets: np.ndarray, alpha: float, gamma: float) -> Tensor:
    """Sum of focal BCE terms over one (T, C) logit grid."""
    p = logits.sigmoid()
    # log p = -softplus(-z), log(1-p) = -softplus(z): stays finite at any z
    pos = ((1.0 - p) ** gamma) * (-logits).softplus() * alpha
    neg = (p**gamma) * logits.softplus() * (1.0 - alpha)
    tgt = Tensor(targets)
    return (pos * tgt + neg * (1.0 - tgt)).sum()


def assign_targets(
    dense: DenseOutputs,
    gt: Sequence[tuple[float, float, int]],
    center_radius: float = 1.5,
) -> tuple[list[np.ndarray], dict[int, tuple[list[int], list[float], list[float]]], list[int]]:
    """Center-sampling assignment of gt windows to pyramid timesteps.

    Returns per-level 0/1 class targets, per-level regression targets
    (timesteps, dl, dr), and the indices of gt windows that produced no
    positive timestep at any level (too long or too short for the grid).
    """
    cls_tgts = [np.zeros(lg.shape) for lg in dense.logits]
    claims: dict[tuple[int, int], tuple[float, float, float]] = {}
    covered = [False] * len(gt)
    for gi, (gs, ge, cat) in enumerate(gt):
        if not gs < ge:
            raise ValueError(f"degenerate window ({gs}, {ge})")
        if not 0 <= cat < dense.num_classes:
            raise ValueError(f"category {cat} outside [0, {dense.num_classes})")
        center = 0.5 * (gs + ge)
        length = ge - gs
        for lvl, s in enumerate(dense.strides_s):
            times = np.arange(cls_tgts[lvl].shape[0]) * s
            ok = (times >= gs) & (times <= ge) & (np.abs(times - center) <= center_radius * s)
            for t in np.nonzero(ok)[0]:
                covered[gi] = True
                cls_tgts[lvl][t, cat] = 1.0
                key = (lvl, int(t))
                if key not in claims or length < claims[key][0]:
                    claims[key] = (length, t - gs / s, ge / s - t)
    reg: dict[int, tuple[list[int], list[float], list[float]]] = {}
    for (lvl, t), (_, dl, dr) in sorted(claims.items()):
        reg.setdefault(lvl, ([], [], []))
        reg[lvl][0].append(t)
        reg[lvl][1].append(dl)
        reg[lvl][2].append(dr)
    skipped = [gi for gi, c in enumerate(covered) if not c]
    return cls_tgts, reg, skipped


def loss_localization(
    dense: DenseOutputs,
    gt: Sequence[tuple[float, float, int]],
    alpha: float = 0.25,
    gamma: float = 2.0,
    center_radius: float = 1.5,
) -> tuple[Tensor, dict]:
    """Focal + IoU loss over dense outputs; returns (scalar loss, aux info).

    Both terms are normalized by the number of positive timesteps (at least
    1, so an empty ground-truth list yields a pure background loss). aux
    reports the positive count, per-term values, and skipped window indices.
    """
    cls_tgts, reg, skipped = assign_targets(dense, gt, center_radius)
    n_pos = sum(len(ts) for ts, _, _ in reg.values())
    norm = 1.0 / max(1, n_pos)
    cls_loss = None
    for logits, tgt in zip(dense.logits, cls_tgts):
        term = _focal_sum(logits, tgt, alpha, gamma)
        cls_loss = term if cls_loss is None else cls_loss + term
    cls_loss = cls_loss * norm
    reg_loss = None
    for lvl, (ts, dl, dr) in reg.items():
        pred = dense.offsets[lvl][np.asarray(ts)]
        dl = np.asarray(dl)
        dr = np.asarray(dr)
        inter = pred[:, 0].minimum(dl) + pred[:, 1].minimum(dr)
        union = pred[:, 0].maximum(dl) + pred[:, 1].maximum(dr)
        term = (1.0 - inter / union).sum()
        reg_loss = term if reg_loss is None else reg_loss + term
    total = cls_loss if reg_loss is None else cls_loss + reg_loss * norm
    aux = {
        "num_pos": n_pos,
        "skipped": skipped,
        "cls": float(cls_loss.data),
        "reg": 0.0 if reg_loss is None else float(reg_loss.data) * norm,
    }
    return total, aux

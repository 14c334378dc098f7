"""Turn dense head outputs into ranked moment predictions.

A candidate at level l, timestep t with offsets (dl, dr) decodes to the
window [(t - dl) * s_l, (t + dr) * s_l] in seconds, clamped to the video.
Candidates below the score threshold are dropped, survivors run through
greedy per-category NMS pooled across levels, and the final list is sorted
by descending score and truncated to top_k.
"""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from .. import kernels
from .model import DenseOutputs, MomentPrediction


def decode_windows(
    dense: DenseOutputs,
    threshold: float = 0.2,
    nms_iou: float = 0.5,
    top_k: int = 5,
) -> list[MomentPrediction]:
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    if not 0.0 < nms_iou <= 1.0:
        raise ValueError("nms_iou must lie in (0, 1]")
    per_cat: dict[int, list[tuple[float, float, float]]] = defaultdict(list)
    for logits, offsets, s in zip(dense.logits, dense.offsets, dense.strides_s):
        scores = 1.0 / (1.0 + np.exp(-logits.data))
        off = offsets.data
        for t, c in zip(*np.nonzero(scores >= threshold)):
            start = max(0.0, (t - off[t, 0]) * s)
            end = min(dense.duration_s, (t + off[t, 1]) * s)
            if start < end:
                per_cat[int(c)].append((start, end, float(scores[t, c])))
    out: list[MomentPrediction] = []
    for c in sorted(per_cat):
        starts, ends, sc = (np.asarray(col) for col in zip(*per_cat[c]))
        for i in kernels.greedy_nms(starts, ends, sc, nms_iou):
            out.append(MomentPrediction((float(starts[i]), float(ends[i])), c, float(sc[i])))
    out.sort(key=lambda pred: -pred.score)
    return out[: max(0, top_k)]

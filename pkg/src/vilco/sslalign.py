"""Self-supervised narration alignment.

Bidirectional contrastive loss over (video, narration) pairs: each video is
scored against every narration and vice versa, with cosine similarity over
temperature; entries sampled from short-term memory act as extra negatives
in both denominators but never as positives.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .epimem.shortterm import ShortTermMemory, st_sample_negatives
from .numkit import Tensor, stack


@dataclass
class AlignmentBatch:
    video: list[Tensor]  # B embeddings, one space after projection
    text: list[Tensor]  # B narration embeddings, same space
    neg_video: list[Tensor] = field(default_factory=list)
    neg_text: list[Tensor] = field(default_factory=list)
    temperature: float = 1.0
    skipped: int = 0  # current items dropped for missing narrations
    refs: list = field(default_factory=list)


def _normalized(rows: Tensor) -> Tensor:
    sq = (rows * rows).sum(axis=1, keepdims=True)
    if np.any(sq.data < 1e-24):
        raise ValueError("zero-norm embedding in alignment batch")
    return rows / sq.sqrt()


def ssl_loss(batch: AlignmentBatch) -> Tensor:
    """Sum of video-to-text and text-to-video InfoNCE terms."""
    b = len(batch.video)
    if b < 1:
        raise ValueError("alignment batch is empty")
    if len(batch.text) != b:
        raise ValueError("video/text pair count mismatch")
    if batch.temperature <= 0:
        raise ValueError("temperature must be positive")
    inv_t = 1.0 / batch.temperature
    v = _normalized(stack(batch.video))
    t = _normalized(stack(batch.text))
    t_all = _normalized(stack(batch.text + batch.neg_text)) if batch.neg_text else t
    v_all = _normalized(stack(batch.video + batch.neg_video)) if batch.neg_video else v
    diag = np.arange(b)
    sim_vt = (v @ t_all.transpose(1, 0)) * inv_t
    l_v2t = (sim_vt.logsumexp(axis=1) - sim_vt[diag, diag]).mean()
    sim_tv = (t @ v_all.transpose(1, 0)) * inv_t
    l_t2v = (sim_tv.logsumexp(axis=1) - sim_tv[diag, diag]).mean()
    return l_v2t + l_t2v


def build_alignment_batch(
    current: list[tuple],
    mem: ShortTermMemory | None,
    neg_count: int,
    rng: np.random.Generator | None = None,
    video_map=Tensor,
    text_map=Tensor,
    temperature: float = 1.0,
) -> AlignmentBatch:
    """Positives from current (ref, video_emb, narration_emb) triples plus
    memory negatives.

    Items whose narration embedding is None are skipped and counted.
    video_map/text_map lift raw vectors into the training space (the model's
    encoders during training; plain Tensor wrapping by default). Each map is
    called once per side with all rows stacked (N, d), so encoders that
    batch row-wise pay one graph instead of N.
    """
    refs, v_raw, t_raw = [], [], []
    skipped = 0
    for ref, v, t in current:
        if t is None:
            skipped += 1
            continue
        refs.append(ref)
        v_raw.append(np.asarray(v, dtype=np.float64))
        t_raw.append(np.asarray(t, dtype=np.float64))
    negs = []
    if mem is not None and neg_count > 0 and len(mem) > 0:
        negs = st_sample_negatives(mem, neg_count, exclude=set(refs), rng=rng)
    vids, txts, neg_v, neg_t = [], [], [], []
    if refs:
        vmat = video_map(np.stack(v_raw))
        tmat = text_map(np.stack(t_raw))
        vids = [vmat[i] for i in range(len(refs))]
        txts = [tmat[i] for i in range(len(refs))]
    if negs:
        nvmat = video_map(np.stack([e.video_emb for e in negs]))
        ntmat = text_map(np.stack([e.text_emb for e in negs]))
        neg_v = [nvmat[i] for i in range(len(negs))]
        neg_t = [ntmat[i] for i in range(len(negs))]
    return AlignmentBatch(
        video=vids,
        text=txts,
        neg_video=neg_v,
        neg_text=neg_t,
        temperature=temperature,
        skipped=skipped,
        refs=refs,
    )

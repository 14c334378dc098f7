"""Synthetic task streams with known ground truth.

Each category owns an orthonormal latent prototype in feature space;
planted windows add the prototype on top of background noise that lives in
the orthogonal complement of the prototype span, so at noise_sigma=0 a
matched filter recovers every window exactly. Query and narration
embeddings cluster by task (task center + per-category offset), which makes
prompt-key retrieval measurable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import FeatureSequence
from .manifest import Manifest, QueryRecord, VideoEntry
from .stream import TaskStream, build_task_stream
from .templates import template_text


@dataclass
class SynthConfig:
    num_tasks: int = 5
    cats_per_task: int = 22
    videos_per_task: int = 8  # train videos per task
    val_videos_per_task: int = 4
    queries_per_video: int = 3
    windows_per_query: int = 1
    num_steps: int = 48  # T
    d_video: int = 128
    d_text: int = 32
    noise_sigma: float = 0.03
    bg_sigma: float = 0.5
    clip_stride_s: float = 1.0
    min_window_steps: int = 4
    max_window_steps: int = 8
    task_kind: str = "MQ"
    seed: int = 0

    def validate(self) -> None:
        counts = (
            self.num_tasks,
            self.cats_per_task,
            self.videos_per_task,
            self.queries_per_video,
            self.windows_per_query,
            self.num_steps,
            self.d_video,
            self.d_text,
        )
        if any(c < 1 for c in counts):
            raise ValueError("all synthesis counts must be >= 1")
        total = self.num_tasks * self.cats_per_task
        if self.d_video < total:
            raise ValueError(
                f"d_video={self.d_video} cannot host {total} orthogonal prototypes"
            )
        if self.d_text < self.num_tasks:
            raise ValueError("d_text must be at least num_tasks for task centers")
        if not 1 <= self.min_window_steps <= self.max_window_steps <= self.num_steps:
            raise ValueError("window step bounds inconsistent with num_steps")
        if self.queries_per_video > self.cats_per_task:
            raise ValueError("queries_per_video cannot exceed cats_per_task")
        if self.task_kind == "NLQ":
            if self.num_tasks > 13:
                raise ValueError("NLQ supports at most 13 template sub-tasks")
            if self.cats_per_task != 1 or self.windows_per_query != 1:
                raise ValueError("NLQ synthesis needs cats_per_task=1, windows_per_query=1")
        elif self.task_kind != "MQ":
            raise ValueError(f"bad task_kind {self.task_kind!r}")


def _orthonormal_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.normal(size=(dim, n)))
    return q.T  # (n, dim), rows orthonormal


def synthesize_stream(cfg: SynthConfig, order_seed: int = 0) -> tuple[Manifest, TaskStream]:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    total_cats = cfg.num_tasks * cfg.cats_per_task

    prototypes = _orthonormal_rows(rng, total_cats, cfg.d_video)
    task_centers = _orthonormal_rows(rng, cfg.num_tasks, cfg.d_text)
    # offset norm ~0.3 regardless of d_text, so task centers dominate cosine
    offsets = (0.3 / np.sqrt(cfg.d_text)) * rng.normal(size=(total_cats, cfg.d_text))
    query_base = np.empty((total_cats, cfg.d_text))
    for c in range(total_cats):
        v = task_centers[c // cfg.cats_per_task] + offsets[c]
        query_base[c] = v / np.linalg.norm(v)

    videos: list[VideoEntry] = []
    queries: dict[str, list[QueryRecord]] = {}
    duration = cfg.num_steps * cfg.clip_stride_s
    for t in range(cfg.num_tasks):
        cat_start = t * cfg.cats_per_task
        for v in range(cfg.videos_per_task + cfg.val_videos_per_task):
            vid = f"synth-t{t}v{v:02d}"
            split = "train" if v < cfg.videos_per_task else "val"
            feats = rng.normal(0.0, cfg.bg_sigma, size=(cfg.num_steps, cfg.d_video))
            feats -= (feats @ prototypes.T) @ prototypes  # background off the span
            records = []
            for qi in range(cfg.queries_per_video):
                cat = cat_start + (v * cfg.queries_per_video + qi) % cfg.cats_per_task
                windows = []
                narrations = []
                for _ in range(cfg.windows_per_query):
                    steps = int(rng.integers(cfg.min_window_steps, cfg.max_window_steps + 1))
                    start = int(rng.integers(0, cfg.num_steps - steps + 1))
                    feats[start : start + steps] += prototypes[cat]
                    windows.append(
                        (start * cfg.clip_stride_s, (start + steps) * cfg.clip_stride_s)
                    )
                    narrations.append(
                        (query_base[cat] + cfg.noise_sigma * rng.normal(size=cfg.d_text)).astype(
                            np.float32
                        )
                    )
                emb = (query_base[cat] + cfg.noise_sigma * rng.normal(size=cfg.d_text)).astype(
                    np.float32
                )
                if cfg.task_kind == "MQ":
                    records.append(
                        QueryRecord(
                            query_id=f"{vid}-q{qi}",
                            kind="MQ",
                            windows=windows,
                            categories=[cat],
                            split=split,
                            query_embedding=emb,
                            narration_embeddings=narrations,
                        )
                    )
                else:
                    records.append(
                        QueryRecord(
                            query_id=f"{vid}-q{qi}",
                            kind="NLQ",
                            windows=windows,
                            text=template_text(t + 1),
                            template_id=t + 1,
                            split=split,
                            query_embedding=emb,
                            narration_embeddings=narrations,
                        )
                    )
            feats += cfg.noise_sigma * rng.normal(size=feats.shape)
            videos.append(
                VideoEntry(
                    video_id=vid,
                    duration_s=duration,
                    features=FeatureSequence(
                        video_id=vid,
                        clip_stride_s=cfg.clip_stride_s,
                        data=feats.astype(np.float32),
                    ),
                )
            )
            queries[vid] = records

    vocabulary = [f"category_{c:03d}" for c in range(total_cats)]
    manifest = Manifest(
        task_kind=cfg.task_kind,
        vocabulary=vocabulary,
        videos=videos,
        queries=queries,
        synth_truth={
            "prototypes": prototypes,
            "task_centers": task_centers,
            "query_base": query_base,
            "config": cfg,
        },
    )
    manifest.validate(check_files=False)
    stream = build_task_stream(manifest, cfg.task_kind, order_seed=order_seed, num_tasks=cfg.num_tasks)
    return manifest, stream

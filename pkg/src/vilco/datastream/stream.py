"""Task-stream construction for query-incremental training."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .manifest import Manifest, QueryRecord
from .partition import apply_partition, partition_videos, query_keys


@dataclass
class SubTask:
    name: str
    index: int  # canonical (unpermuted) position
    vocabulary: list[int]  # category ids (MQ) or template ids (NLQ)
    train: list[tuple[str, QueryRecord]] = field(default_factory=list)
    val: list[tuple[str, QueryRecord]] = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return len(self.vocabulary)

    def local_class(self, key: int) -> int:
        """Index of a global category/template id inside this task's head."""
        return self.vocabulary.index(key)


@dataclass
class TaskStream:
    task_kind: str
    tasks: list[SubTask]
    order_seed: int


def build_task_stream(
    manifest: Manifest,
    task_kind: str | None = None,
    order_seed: int = 0,
    num_tasks: int = 5,
) -> TaskStream:
    """Partition the manifest and lay out sub-tasks.

    MQ chunks the category vocabulary into num_tasks groups of
    ceil(C / num_tasks); NLQ makes one sub-task per template id present.
    order_seed permutes sub-task order only (0 keeps the canonical order);
    contents are order-invariant.
    """
    kind = task_kind or manifest.task_kind
    if kind != manifest.task_kind:
        raise ValueError(f"manifest is {manifest.task_kind}, requested {kind}")
    if kind == "NLQ":
        num_tasks = len(
            {t for records in manifest.queries.values() for r in records for t in query_keys(r)}
        )
    result = partition_videos(manifest, num_tasks)
    clean = apply_partition(manifest, result)

    tasks = []
    for s in range(num_tasks):
        vocab = sorted(k for k, sub in result.key_subset.items() if sub == s)
        tasks.append(SubTask(name=f"{kind.lower()}-task{s}", index=s, vocabulary=vocab))
    for video in clean.videos:
        vid = video.video_id
        if vid not in result.assignment:
            continue
        task = tasks[result.assignment[vid]]
        for r in clean.queries.get(vid, []):
            (task.train if r.split == "train" else task.val).append((vid, r))

    if int(order_seed) != 0:
        order = np.random.default_rng(int(order_seed)).permutation(num_tasks)
        tasks = [tasks[i] for i in order]
    return TaskStream(task_kind=kind, tasks=tasks, order_seed=int(order_seed))

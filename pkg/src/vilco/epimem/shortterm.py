"""Short-term episodic memory: a capacity-bounded buffer of embedding pairs.

Per task the buffer runs reservoir sampling inside a quota of
floor(capacity / tasks_seen); entering a new task re-balances by evicting
uniformly at random from tasks over the new quota, so every past task keeps
a fair share and the SSL negative source never dries up.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MemoryEntry:
    video_emb: np.ndarray  # pooled clip features, raw feature space
    text_emb: np.ndarray  # narration/query embedding, raw text space
    task_id: int
    label_id: int  # category or template id
    item_ref: tuple[str, str] | None = None  # (video_id, query_id) for replay


class ShortTermMemory:
    def __init__(self, capacity: int = 1010, seed: int = 0):
        if capacity < 0:
            raise ValueError("capacity must be non-negative")
        self.capacity = capacity
        self.entries: list[MemoryEntry] = []
        self.offered: dict[int, int] = {}  # task -> items seen in the stream
        self.rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def tasks_seen(self) -> list[int]:
        return sorted(self.offered)

    def _task_quota(self) -> int:
        if not self.offered:
            return self.capacity
        return max(1, self.capacity // len(self.offered))

    def _task_indices(self, task_id: int) -> list[int]:
        return [i for i, e in enumerate(self.entries) if e.task_id == task_id]

    def begin_task(self, task_id: int) -> None:
        """Register a task boundary and re-balance past tasks to the new quota."""
        if task_id in self.offered:
            return
        self.offered[task_id] = 0
        quota = self._task_quota()
        for t in self.tasks_seen:
            idxs = self._task_indices(t)
            excess = len(idxs) - quota
            if excess > 0:
                evict = self.rng.choice(len(idxs), size=excess, replace=False)
                for i in sorted((idxs[j] for j in evict), reverse=True):
                    del self.entries[i]

    def store(self, entry: MemoryEntry) -> None:
        """Reservoir-sample the entry into its task's quota slot set."""
        if self.capacity == 0:
            return
        if entry.task_id not in self.offered:
            self.begin_task(entry.task_id)
        self.offered[entry.task_id] += 1
        quota = self._task_quota()
        idxs = self._task_indices(entry.task_id)
        if len(idxs) < quota:
            if len(self.entries) >= self.capacity:
                # capacity squeeze: push out a random entry of the largest task
                largest = max(self.tasks_seen, key=lambda t: len(self._task_indices(t)))
                victims = self._task_indices(largest)
                del self.entries[int(self.rng.choice(victims))]
            self.entries.append(entry)
            return
        j = int(self.rng.integers(0, self.offered[entry.task_id]))
        if j < quota:
            self.entries[self._task_indices(entry.task_id)[j]] = entry

    def sample(
        self,
        count: int,
        exclude: set[tuple[str, str]] | None = None,
        before_task: int | None = None,
        rng: np.random.Generator | None = None,
    ) -> list[MemoryEntry]:
        """Uniform sample without replacement; the whole pool when it is small."""
        rng = rng or self.rng
        pool = [
            e
            for e in self.entries
            if (exclude is None or e.item_ref not in exclude)
            and (before_task is None or e.task_id < before_task)
        ]
        if count >= len(pool):
            return list(pool)
        picked = rng.choice(len(pool), size=count, replace=False)
        return [pool[i] for i in sorted(picked)]

    # -- checkpoint support ----------------------------------------------------

    def to_state(self) -> dict:
        return {
            "capacity": self.capacity,
            "entries": [
                {
                    "video_emb": e.video_emb.tolist(),
                    "text_emb": e.text_emb.tolist(),
                    "task_id": e.task_id,
                    "label_id": e.label_id,
                    "item_ref": list(e.item_ref) if e.item_ref else None,
                }
                for e in self.entries
            ],
            "offered": {str(k): v for k, v in self.offered.items()},
            "rng_state": self.rng.bit_generator.state,
        }

    @classmethod
    def from_state(cls, state: dict) -> "ShortTermMemory":
        mem = cls(capacity=int(state["capacity"]))
        mem.entries = [
            MemoryEntry(
                video_emb=np.asarray(e["video_emb"], dtype=np.float64),
                text_emb=np.asarray(e["text_emb"], dtype=np.float64),
                task_id=int(e["task_id"]),
                label_id=int(e["label_id"]),
                item_ref=tuple(e["item_ref"]) if e["item_ref"] else None,
            )
            for e in state["entries"]
        ]
        mem.offered = {int(k): int(v) for k, v in state["offered"].items()}
        mem.rng.bit_generator.state = state["rng_state"]
        return mem


def st_store(mem: ShortTermMemory, entry: MemoryEntry) -> ShortTermMemory:
    mem.store(entry)
    return mem


def st_sample_negatives(
    mem: ShortTermMemory,
    count: int,
    exclude: set[tuple[str, str]] | None = None,
    before_task: int | None = None,
    rng: np.random.Generator | None = None,
) -> list[MemoryEntry]:
    return mem.sample(count, exclude=exclude, before_task=before_task, rng=rng)

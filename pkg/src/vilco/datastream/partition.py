"""One-subset-per-video curation.

Category (MQ) or template (NLQ) vocabularies are chunked into disjoint
subsets; a video whose queries span subsets follows its highest-frequency
query key, ties by ascending key, and the video's queries outside the
winning subset are dropped from the stream.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

from .manifest import Manifest, QueryRecord


def query_keys(record: QueryRecord) -> list[int]:
    """Partition keys of one query: category ids (MQ) or the template id (NLQ)."""
    if record.kind == "MQ":
        return list(record.categories)
    return [int(record.template_id)]


@dataclass
class PartitionResult:
    num_subsets: int
    key_subset: dict[int, int]  # partition key -> subset index
    assignment: dict[str, int]  # video_id -> subset index
    dropped: list[tuple[str, str]] = field(default_factory=list)  # (video_id, query_id)


def _key_subset_map(manifest: Manifest, num_subsets: int) -> dict[int, int]:
    if manifest.task_kind == "MQ":
        c = len(manifest.vocabulary)
        per = math.ceil(c / num_subsets)
        if (num_subsets - 1) * per >= c:
            raise ValueError(
                f"{c} categories cannot fill {num_subsets} subsets of {per}"
            )
        return {k: k // per for k in range(c)}
    templates = sorted(
        {t for records in manifest.queries.values() for r in records for t in query_keys(r)}
    )
    if len(templates) != num_subsets:
        raise ValueError(
            f"{len(templates)} templates present, {num_subsets} subsets requested"
        )
    return {t: i for i, t in enumerate(templates)}


def partition_videos(manifest: Manifest, num_subsets: int) -> PartitionResult:
    """Assign every video with queries to exactly one subset.

    Frequency of a key is its total query count across the manifest; a
    conflicted video goes to the subset of its most frequent key (ties to
    the lowest key index). Queries on the video whose keys all fall outside
    the winning subset are dropped; mixed MQ queries keep only their
    in-subset categories.
    """
    if num_subsets < 1:
        raise ValueError("need at least one subset")
    if not any(manifest.queries.values()):
        raise ValueError("manifest has no queries to partition")
    key_subset = _key_subset_map(manifest, num_subsets)

    freq: Counter[int] = Counter()
    for records in manifest.queries.values():
        for r in records:
            freq.update(query_keys(r))

    result = PartitionResult(num_subsets=num_subsets, key_subset=key_subset, assignment={})
    for video in manifest.videos:
        records = manifest.queries.get(video.video_id, [])
        keys = sorted({k for r in records for k in query_keys(r)})
        if not keys:
            continue  # videos without queries join no subset
        best = max(keys, key=lambda k: (freq[k], -k))
        subset = key_subset[best]
        result.assignment[video.video_id] = subset
        for r in records:
            if all(key_subset[k] != subset for k in query_keys(r)):
                result.dropped.append((video.video_id, r.query_id))
    return result


def apply_partition(manifest: Manifest, result: PartitionResult) -> Manifest:
    """Manifest with cross-subset queries removed and mixed MQ queries trimmed."""
    dropped = set(result.dropped)
    queries: dict[str, list[QueryRecord]] = {}
    for vid, records in manifest.queries.items():
        if vid not in result.assignment:
            continue
        subset = result.assignment[vid]
        kept: list[QueryRecord] = []
        for r in records:
            if (vid, r.query_id) in dropped:
                continue
            if r.kind == "MQ":
                inside = [c for c in r.categories if result.key_subset[c] == subset]
                if inside != r.categories:
                    r = QueryRecord(
                        query_id=r.query_id,
                        kind=r.kind,
                        windows=list(r.windows),
                        categories=inside,
                        text=r.text,
                        template_id=r.template_id,
                        split=r.split,
                        query_embedding=r.query_embedding,
                        narration_embeddings=r.narration_embeddings,
                    )
            kept.append(r)
        queries[vid] = kept
    return Manifest(
        task_kind=manifest.task_kind,
        vocabulary=list(manifest.vocabulary),
        videos=list(manifest.videos),
        queries=queries,
        synth_truth=manifest.synth_truth,
    )

"""Annotation manifests: videos, queries, vocabulary, JSON (de)serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import FeatureSequence, concat_features, load_features
from .templates import NLQ_TEMPLATES


@dataclass
class QueryRecord:
    query_id: str
    kind: str  # "MQ" | "NLQ"
    windows: list[tuple[float, float]]
    categories: list[int] = field(default_factory=list)  # MQ category indices
    text: str = ""  # NLQ free text
    template_id: int | None = None  # NLQ, 1..13
    split: str = "train"  # "train" | "val"
    query_embedding: np.ndarray | None = None  # (D_t,) float32
    narration_embeddings: list[np.ndarray] | None = None  # one per window

    def validate(self, duration_s: float, vocab_size: int) -> None:
        if self.kind not in ("MQ", "NLQ"):
            raise ValueError(f"{self.query_id}: unknown kind {self.kind!r}")
        if not self.windows:
            raise ValueError(f"{self.query_id}: no ground-truth windows")
        for s, e in self.windows:
            if not (0.0 <= s < e <= duration_s + 1e-6):
                raise ValueError(f"{self.query_id}: window ({s}, {e}) outside [0, {duration_s}]")
        if self.kind == "MQ":
            if not self.categories:
                raise ValueError(f"{self.query_id}: MQ query without categories")
            for c in self.categories:
                if not 0 <= c < vocab_size:
                    raise ValueError(f"{self.query_id}: category {c} outside vocabulary")
        else:
            if self.template_id not in NLQ_TEMPLATES:
                raise ValueError(f"{self.query_id}: bad template id {self.template_id}")
            if len(self.windows) != 1:
                raise ValueError(f"{self.query_id}: NLQ queries carry exactly one window")
        if self.split not in ("train", "val"):
            raise ValueError(f"{self.query_id}: bad split {self.split!r}")


@dataclass
class VideoEntry:
    video_id: str
    duration_s: float
    feature_paths: list[str] = field(default_factory=list)
    features: FeatureSequence | None = None  # in-memory override (synthetic)


@dataclass
class Manifest:
    task_kind: str  # "MQ" | "NLQ"
    vocabulary: list[str]
    videos: list[VideoEntry]
    queries: dict[str, list[QueryRecord]]  # video_id -> records
    synth_truth: dict | None = None  # generator internals, never serialized

    def video(self, video_id: str) -> VideoEntry:
        for v in self.videos:
            if v.video_id == video_id:
                return v
        raise KeyError(f"unknown video {video_id!r}")

    def validate(self, check_files: bool = True) -> None:
        if self.task_kind not in ("MQ", "NLQ"):
            raise ValueError(f"bad task_kind {self.task_kind!r}")
        if not self.videos:
            raise ValueError("manifest lists no videos")
        seen = set()
        for v in self.videos:
            if v.video_id in seen:
                raise ValueError(f"duplicate video id {v.video_id!r}")
            seen.add(v.video_id)
            if check_files and v.features is None:
                for p in v.feature_paths:
                    if not Path(p).exists():
                        raise FileNotFoundError(f"feature file missing: {p}")
        for vid, records in self.queries.items():
            entry = self.video(vid)
            for r in records:
                r.validate(entry.duration_s, len(self.vocabulary))

    def load_video_features(self, video_id: str) -> FeatureSequence:
        """Features for one video: in-memory, or the channel-concat of its files."""
        entry = self.video(video_id)
        if entry.features is not None:
            seq = entry.features
        else:
            if not entry.feature_paths:
                raise ValueError(f"{video_id}: no feature source")
            seq = concat_features([load_features(p) for p in entry.feature_paths])
        if abs(seq.duration_s - entry.duration_s) > seq.clip_stride_s:
            raise ValueError(
                f"{video_id}: features imply {seq.duration_s:.3f}s, manifest says "
                f"{entry.duration_s:.3f}s (over one stride apart)"
            )
        return seq


# -- JSON round trip ----------------------------------------------------------


def _record_to_json(r: QueryRecord) -> dict:
    d = {
        "query_id": r.query_id,
        "kind": r.kind,
        "windows": [[float(s), float(e)] for s, e in r.windows],
        "split": r.split,
    }
    if r.kind == "MQ":
        d["categories"] = list(map(int, r.categories))
    else:
        d["text"] = r.text
        d["template_id"] = int(r.template_id)
    if r.query_embedding is not None:
        d["query_embedding"] = [float(x) for x in r.query_embedding]
    if r.narration_embeddings is not None:
        d["narration_embeddings"] = [[float(x) for x in e] for e in r.narration_embeddings]
    return d


def _record_from_json(d: dict) -> QueryRecord:
    qe = d.get("query_embedding")
    ne = d.get("narration_embeddings")
    return QueryRecord(
        query_id=d["query_id"],
        kind=d["kind"],
        windows=[(float(s), float(e)) for s, e in d["windows"]],
        categories=list(d.get("categories", [])),
        text=d.get("text", ""),
        template_id=d.get("template_id"),
        split=d.get("split", "train"),
        query_embedding=None if qe is None else np.asarray(qe, dtype=np.float32),
        narration_embeddings=None if ne is None else [np.asarray(e, dtype=np.float32) for e in ne],
    )


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    doc = {
        "task_kind": manifest.task_kind,
        "vocabulary": list(manifest.vocabulary),
        "videos": [
            {
                "video_id": v.video_id,
                "duration_s": float(v.duration_s),
                "feature_paths": list(v.feature_paths),
            }
            for v in manifest.videos
        ],
        "queries": {
            vid: [_record_to_json(r) for r in records]
            for vid, records in manifest.queries.items()
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_manifest(path: str | Path) -> Manifest:
    doc = json.loads(Path(path).read_text())
    return Manifest(
        task_kind=doc["task_kind"],
        vocabulary=list(doc["vocabulary"]),
        videos=[
            VideoEntry(
                video_id=v["video_id"],
                duration_s=float(v["duration_s"]),
                feature_paths=list(v.get("feature_paths", [])),
            )
            for v in doc["videos"]
        ],
        queries={
            vid: [_record_from_json(r) for r in records]
            for vid, records in doc["queries"].items()
        },
    )

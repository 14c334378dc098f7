"""Clip-feature sequences and the VLCF binary file format.

Layout: magic "VLCF" | version u32 | T u32 | D u32 | clip_stride_s f32 |
T*D f32 payload, everything little-endian. Features are float32 both on
disk and in memory (training promotes to float64 at the tensor boundary),
which keeps save/load round trips bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"VLCF"
VERSION = 1
_HEADER = struct.Struct("<4sIIIf")


class FeatureFileError(ValueError):
    """Malformed VLCF file."""


@dataclass
class FeatureSequence:
    video_id: str
    clip_stride_s: float
    data: np.ndarray  # (T, D) float32

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2 or self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise ValueError(f"features must be (T>=1, D>=1), got {self.data.shape}")
        if not self.clip_stride_s > 0:
            raise ValueError("clip_stride_s must be positive")

    @property
    def num_steps(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def duration_s(self) -> float:
        return self.num_steps * self.clip_stride_s


def save_features(path: str | Path, seq: FeatureSequence) -> None:
    t, d = seq.data.shape
    payload = seq.data.astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, t, d, seq.clip_stride_s))
        f.write(payload)


def load_features(path: str | Path) -> FeatureSequence:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FeatureFileError(f"{path}: shorter than header")
    magic, version, t, d, stride = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FeatureFileError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FeatureFileError(f"{path}: unsupported version {version}")
    if t < 1 or d < 1:
        raise FeatureFileError(f"{path}: degenerate shape ({t}, {d})")
    expected = t * d * 4
    body = raw[_HEADER.size :]
    if len(body) != expected:
        raise FeatureFileError(
            f"{path}: payload holds {len(body)} bytes, header implies {expected}"
        )
    data = np.frombuffer(body, dtype="<f4").reshape(t, d)
    return FeatureSequence(video_id=path.stem, clip_stride_s=float(stride), data=data)


def concat_features(seqs: list[FeatureSequence]) -> FeatureSequence:
    """Channel-concatenate multiple feature sets of the same video."""
    if not seqs:
        raise ValueError("nothing to concatenate")
    first = seqs[0]
    for s in seqs[1:]:
        if s.num_steps != first.num_steps:
            raise ValueError(
                f"step mismatch: {s.video_id} has {s.num_steps}, expected {first.num_steps}"
            )
        if s.clip_stride_s != first.clip_stride_s:
            raise ValueError("clip_stride_s mismatch across feature sets")
    if len(seqs) == 1:
        return first
    return FeatureSequence(
        video_id=first.video_id,
        clip_stride_s=first.clip_stride_s,
        data=np.concatenate([s.data for s in seqs], axis=1),
    )

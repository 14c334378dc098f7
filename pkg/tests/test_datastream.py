"""Feature IO, manifests, partitioning, stream construction, synthesis."""

import numpy as np
import pytest

from vilco.datastream import (
    FeatureSequence,
    Manifest,
    NLQ_TEMPLATES,
    NUM_TEMPLATES,
    QueryRecord,
    SynthConfig,
    VideoEntry,
    apply_partition,
    build_task_stream,
    concat_features,
    load_features,
    load_manifest,
    partition_videos,
    save_features,
    save_manifest,
    synthesize_stream,
    template_text,
)
from vilco.datastream.features import FeatureFileError


# -- feature files ----------------------------------------------------------------


def test_feature_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    for trial in range(20):
        t = int(rng.integers(1, 40))
        d = int(rng.integers(1, 30))
        seq = FeatureSequence(
            video_id=f"v{trial}",
            clip_stride_s=float(rng.uniform(0.1, 4.0)),
            data=rng.normal(size=(t, d)).astype(np.float32),
        )
        path = tmp_path / f"v{trial}.vlcf"
        save_features(path, seq)
        back = load_features(path)
        assert back.data.tobytes() == seq.data.tobytes()
        assert back.data.shape == (t, d)
        assert back.clip_stride_s == np.float32(seq.clip_stride_s)
        assert back.video_id == f"v{trial}"


def test_load_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.vlcf"
    p.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(FeatureFileError, match="magic"):
        load_features(p)


def test_load_rejects_truncated_payload(tmp_path):
    seq = FeatureSequence("v", 1.0, np.zeros((10, 4), dtype=np.float32))
    p = tmp_path / "t.vlcf"
    save_features(p, seq)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(FeatureFileError, match="payload"):
        load_features(p)


def test_load_rejects_header_overflowing_payload(tmp_path):
    import struct

    p = tmp_path / "o.vlcf"
    header = struct.pack("<4sIIIf", b"VLCF", 1, 1000, 1000, 1.0)
    p.write_bytes(header + b"\x00" * 16)
    with pytest.raises(FeatureFileError, match="payload"):
        load_features(p)


def test_concat_features():
    a = FeatureSequence("v", 1.0, np.ones((10, 4), dtype=np.float32))
    b = FeatureSequence("v", 1.0, 2 * np.ones((10, 6), dtype=np.float32))
    out = concat_features([a, b])
    assert out.data.shape == (10, 10)
    np.testing.assert_array_equal(out.data[:, :4], 1.0)
    np.testing.assert_array_equal(out.data[:, 4:], 2.0)
    assert concat_features([a]) is a
    with pytest.raises(ValueError, match="step mismatch"):
        concat_features([a, FeatureSequence("v", 1.0, np.ones((12, 6), dtype=np.float32))])


# -- manifest ---------------------------------------------------------------------------


def tiny_manifest(**kwargs):
    videos = [VideoEntry("v0", 20.0), VideoEntry("v1", 20.0)]
    queries = {
        "v0": [QueryRecord("q0", "MQ", [(1.0, 4.0)], categories=[0])],
        "v1": [QueryRecord("q1", "MQ", [(2.0, 9.0)], categories=[1], split="val")],
    }
    base = dict(task_kind="MQ", vocabulary=["a", "b"], videos=videos, queries=queries)
    base.update(kwargs)
    return Manifest(**base)


def test_manifest_json_round_trip(tmp_path):
    m = tiny_manifest()
    m.queries["v0"][0].query_embedding = np.array([0.1, -0.5], dtype=np.float32)
    m.queries["v0"][0].narration_embeddings = [np.array([1.0, 2.0], dtype=np.float32)]
    path = tmp_path / "manifest.json"
    save_manifest(m, path)
    back = load_manifest(path)
    assert back.task_kind == "MQ"
    assert back.vocabulary == ["a", "b"]
    assert [v.video_id for v in back.videos] == ["v0", "v1"]
    r = back.queries["v0"][0]
    assert r.windows == [(1.0, 4.0)]
    np.testing.assert_array_equal(r.query_embedding, m.queries["v0"][0].query_embedding)
    np.testing.assert_array_equal(
        r.narration_embeddings[0], m.queries["v0"][0].narration_embeddings[0]
    )
    assert back.queries["v1"][0].split == "val"


def test_manifest_validation_errors():
    m = tiny_manifest()
    m.queries["v0"][0].windows = [(5.0, 25.0)]
    with pytest.raises(ValueError, match="outside"):
        m.validate(check_files=False)
    m = tiny_manifest()
    m.queries["v0"][0].categories = [9]
    with pytest.raises(ValueError, match="vocabulary"):
        m.validate(check_files=False)
    nlq = QueryRecord("q", "NLQ", [(0.0, 1.0), (2.0, 3.0)], text="x", template_id=1)
    with pytest.raises(ValueError, match="exactly one"):
        nlq.validate(20.0, 2)


def test_duration_cross_check():
    m = tiny_manifest()
    m.videos[0].features = FeatureSequence("v0", 1.0, np.zeros((20, 3), dtype=np.float32))
    assert m.load_video_features("v0").num_steps == 20
    m.videos[0].features = FeatureSequence("v0", 1.0, np.zeros((5, 3), dtype=np.float32))
    with pytest.raises(ValueError, match="stride"):
        m.load_video_features("v0")


# -- templates -----------------------------------------------------------------------------


def test_template_table():
    assert NUM_TEMPLATES == 13
    assert sorted(NLQ_TEMPLATES) == list(range(1, 14))
    assert template_text(2) == "Where did I put X?"
    assert all(isinstance(t[1], str) and t[1] for t in NLQ_TEMPLATES.values())
    with pytest.raises(KeyError):
        template_text(14)


# -- partitioning --------------------------------------------------------------------------


def conflict_manifest():
    """cat 0 appears 5 times (subset 0), cat 2 twice (subset 1), vocab of 4, 2 subsets."""
    videos = [VideoEntry(f"v{i}", 30.0) for i in range(6)]
    queries = {
        "v0": [
            QueryRecord("v0-a", "MQ", [(0.0, 2.0)], categories=[0]),
            QueryRecord("v0-b", "MQ", [(3.0, 6.0)], categories=[2]),
        ],
        "v1": [QueryRecord("v1-a", "MQ", [(0.0, 2.0)], categories=[0])],
        "v2": [QueryRecord("v2-a", "MQ", [(0.0, 2.0)], categories=[0])],
        "v3": [QueryRecord("v3-a", "MQ", [(0.0, 2.0)], categories=[0])],
        "v4": [QueryRecord("v4-a", "MQ", [(0.0, 2.0)], categories=[0])],
        "v5": [QueryRecord("v5-a", "MQ", [(1.0, 4.0)], categories=[2])],
    }
    return Manifest(task_kind="MQ", vocabulary=["a", "b", "c", "d"], videos=videos, queries=queries)


def test_partition_no_conflict_unchanged():
    m = tiny_manifest()  # cats 0 and 1 both land in subset 0 of 1
    res = partition_videos(m, 1)
    assert res.assignment == {"v0": 0, "v1": 0}
    assert res.dropped == []


def test_partition_frequency_priority():
    m = conflict_manifest()
    res = partition_videos(m, 2)
    # v0 carries cat 0 (freq 5, subset 0) and cat 2 (freq 2, subset 1)
    assert res.key_subset == {0: 0, 1: 0, 2: 1, 3: 1}
    assert res.assignment["v0"] == 0
    assert ("v0", "v0-b") in res.dropped
    assert res.assignment["v5"] == 1
    clean = apply_partition(m, res)
    assert [r.query_id for r in clean.queries["v0"]] == ["v0-a"]


def test_partition_tie_breaks_to_lower_category():
    videos = [VideoEntry("v0", 10.0), VideoEntry("v1", 10.0), VideoEntry("v2", 10.0)]
    queries = {
        "v0": [
            QueryRecord("a", "MQ", [(0.0, 1.0)], categories=[1]),
            QueryRecord("b", "MQ", [(2.0, 3.0)], categories=[2]),
        ],
        "v1": [QueryRecord("c", "MQ", [(0.0, 1.0)], categories=[1])],
        "v2": [QueryRecord("d", "MQ", [(0.0, 1.0)], categories=[2])],
    }
    m = Manifest("MQ", ["a", "b", "c", "d"], videos, queries)
    res = partition_videos(m, 2)  # cats 1 and 2 both have frequency 2
    assert res.assignment["v0"] == res.key_subset[1] == 0


def test_partition_idempotent():
    m = conflict_manifest()
    first = partition_videos(m, 2)
    clean = apply_partition(m, first)
    second = partition_videos(clean, 2)
    assert second.assignment == first.assignment
    assert second.dropped == []


def test_partition_trims_mixed_mq_query():
    videos = [VideoEntry("v0", 10.0), VideoEntry("v1", 10.0)]
    queries = {
        "v0": [QueryRecord("a", "MQ", [(0.0, 1.0)], categories=[0, 2])],
        "v1": [QueryRecord("b", "MQ", [(0.0, 1.0)], categories=[0])],
    }
    m = Manifest("MQ", ["a", "b", "c", "d"], videos, queries)
    res = partition_videos(m, 2)
    clean = apply_partition(m, res)
    assert clean.queries["v0"][0].categories == [0]


def test_partition_rejects_empty():
    m = tiny_manifest(queries={"v0": [], "v1": []})
    with pytest.raises(ValueError, match="no queries"):
        partition_videos(m, 2)


# -- stream construction ------------------------------------------------------------------


def test_mq_stream_110_categories():
    cfg = SynthConfig(
        num_tasks=5, cats_per_task=22, videos_per_task=2, val_videos_per_task=1,
        queries_per_video=2, num_steps=16, d_video=128, d_text=8, seed=1,
    )
    manifest, stream = synthesize_stream(cfg)
    assert len(manifest.vocabulary) == 110
    assert len(stream.tasks) == 5
    for i, task in enumerate(stream.tasks):
        assert task.num_classes == 22
        assert task.vocabulary == list(range(i * 22, (i + 1) * 22))
    all_vocab = [c for t in stream.tasks for c in t.vocabulary]
    assert sorted(all_vocab) == list(range(110))
    assert len(set(all_vocab)) == 110


def test_order_seed_permutes_content_invariantly():
    cfg = SynthConfig(
        num_tasks=4, cats_per_task=3, videos_per_task=2, val_videos_per_task=1,
        queries_per_video=2, num_steps=16, d_video=16, d_text=8, seed=2,
    )
    _, s0 = synthesize_stream(cfg, order_seed=0)
    _, s1 = synthesize_stream(cfg, order_seed=2)
    assert [t.index for t in s0.tasks] == [0, 1, 2, 3]
    assert sorted(t.index for t in s1.tasks) == [0, 1, 2, 3]
    assert [t.index for t in s1.tasks] != [0, 1, 2, 3]
    by_index = {t.index: t for t in s1.tasks}
    for t0 in s0.tasks:
        t1 = by_index[t0.index]
        assert t1.vocabulary == t0.vocabulary
        assert [q.query_id for _, q in t1.train] == [q.query_id for _, q in t0.train]


def test_nlq_stream_thirteen_templates():
    videos = [VideoEntry(f"v{i}", 30.0) for i in range(13)]
    queries = {}
    for i in range(13):
        queries[f"v{i}"] = [
            QueryRecord(
                f"q{i}", "NLQ", [(1.0, 5.0)], text=template_text(i + 1), template_id=i + 1
            )
        ]
    m = Manifest("NLQ", [], videos, queries)
    stream = build_task_stream(m, "NLQ")
    assert len(stream.tasks) == 13
    assert [t.vocabulary for t in stream.tasks] == [[i + 1] for i in range(13)]


def test_one_video_one_task():
    cfg = SynthConfig(
        num_tasks=3, cats_per_task=4, videos_per_task=3, val_videos_per_task=1,
        queries_per_video=2, num_steps=16, d_video=16, d_text=8, seed=3,
    )
    _, stream = synthesize_stream(cfg)
    seen: dict[str, int] = {}
    for task in stream.tasks:
        for vid, _ in task.train + task.val:
            assert seen.setdefault(vid, task.index) == task.index


# -- synthesis -----------------------------------------------------------------------------


def test_synth_deterministic():
    cfg = SynthConfig(
        num_tasks=2, cats_per_task=3, videos_per_task=2, val_videos_per_task=1,
        queries_per_video=2, num_steps=16, d_video=8, d_text=4, seed=7,
    )
    m1, _ = synthesize_stream(cfg)
    m2, _ = synthesize_stream(cfg)
    for v1, v2 in zip(m1.videos, m2.videos):
        assert v1.features.data.tobytes() == v2.features.data.tobytes()
    for vid in m1.queries:
        for r1, r2 in zip(m1.queries[vid], m2.queries[vid]):
            assert r1.windows == r2.windows
            np.testing.assert_array_equal(r1.query_embedding, r2.query_embedding)


def test_synth_video_count_contract():
    cfg = SynthConfig(
        num_tasks=5, cats_per_task=2, videos_per_task=20, val_videos_per_task=0,
        queries_per_video=1, num_steps=16, d_video=16, d_text=8, seed=4,
    )
    manifest, _ = synthesize_stream(cfg)
    assert len(manifest.videos) == 100


def test_synth_rejects_small_feature_dim():
    cfg = SynthConfig(num_tasks=4, cats_per_task=4, d_video=8, d_text=8)
    with pytest.raises(ValueError, match="orthogonal"):
        synthesize_stream(cfg)


def matched_filter_windows(feats, prototypes, clip_stride_s, thresh=0.5):
    """Per-category maximal runs of prototype response above thresh."""
    scores = feats.astype(np.float64) @ prototypes.T
    found = {}
    for c in range(prototypes.shape[0]):
        mask = scores[:, c] > thresh
        runs = []
        start = None
        for t, on in enumerate(mask):
            if on and start is None:
                start = t
            if not on and start is not None:
                runs.append((start * clip_stride_s, t * clip_stride_s))
                start = None
        if start is not None:
            runs.append((start * clip_stride_s, len(mask) * clip_stride_s))
        if runs:
            found[c] = runs
    return found


def test_noise_free_windows_exactly_recoverable():
    cfg = SynthConfig(
        num_tasks=3, cats_per_task=4, videos_per_task=3, val_videos_per_task=1,
        queries_per_video=2, num_steps=32, d_video=16, d_text=8,
        noise_sigma=0.0, seed=5,
    )
    manifest, _ = synthesize_stream(cfg)
    prototypes = manifest.synth_truth["prototypes"]
    for video in manifest.videos:
        expected: dict[int, list] = {}
        for r in manifest.queries[video.video_id]:
            expected.setdefault(r.categories[0], []).extend(r.windows)
        got = matched_filter_windows(video.features.data, prototypes, cfg.clip_stride_s)
        assert set(got) == set(expected)
        for c, wins in expected.items():
            assert sorted(got[c]) == sorted(wins)


def test_query_embeddings_cluster_by_task():
    cfg = SynthConfig(
        num_tasks=4, cats_per_task=5, videos_per_task=3, val_videos_per_task=1,
        queries_per_video=2, num_steps=16, d_video=32, d_text=16, seed=6,
    )
    manifest, stream = synthesize_stream(cfg)
    centers = manifest.synth_truth["task_centers"]
    for task in stream.tasks:
        for _, r in task.train + task.val:
            q = r.query_embedding.astype(np.float64)
            sims = centers @ (q / np.linalg.norm(q))
            assert int(np.argmax(sims)) == task.index

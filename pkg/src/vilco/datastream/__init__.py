from .features import FeatureSequence, concat_features, load_features, save_features
from .manifest import Manifest, QueryRecord, VideoEntry, load_manifest, save_manifest
from .templates import NLQ_TEMPLATES, NUM_TEMPLATES, template_text
from .partition import PartitionResult, apply_partition, partition_videos
from .stream import SubTask, TaskStream, build_task_stream
from .synth import SynthConfig, synthesize_stream

__all__ = [
    "FeatureSequence",
    "concat_features",
    "load_features",
    "save_features",
    "Manifest",
    "QueryRecord",
    "VideoEntry",
    "load_manifest",
    "save_manifest",
    "NLQ_TEMPLATES",
    "NUM_TEMPLATES",
    "template_text",
    "PartitionResult",
    "apply_partition",
    "partition_videos",
    "SubTask",
    "TaskStream",
    "build_task_stream",
    "SynthConfig",
    "synthesize_stream",
]

"""Experiment orchestration: stream in, metric matrices and files out.

A run owns its output directory. After every task boundary it writes, all
atomically: checkpoints/task_NN.npz, result.json (schema below), and
summary.csv. A rerun on the same directory resumes from the latest
checkpoint (or returns the finished result), and the serialized RNG state
makes the resumed matrix equal the uninterrupted one exactly.

result.json schema (schema_version 1):
  schema_version, engine_version, config (echo), task_names,
  metrics (matrix keys), matrices {key: N x N lower-triangular, null above},
  p_sequence {key: [P_0..P_{N-1}]}, bwf_sequence {key: [BwF_1..BwF_{N-1}]},
  bwf_final {key: BwF_N or null}, loss_curves (per-task training logs),
  completed_tasks, aborted, wall_clock_s.

summary.csv columns: task_index, task_name, then P[key] and BwF[key] for
every metric key in sorted order; BwF cells are empty for the first task.
"""

from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

from .. import __version__
from ..clstrat import ContinualTrainer
from ..crossmodal import FusionConfig
from ..datastream.manifest import load_manifest
from ..datastream.stream import build_task_stream
from ..datastream.synth import synthesize_stream
from ..evalkit import EvalConfig, MetricsMatrix, avg_performance, backward_forgetting
from ..numkit import NumericalError
from .config import ConfigError, ExperimentConfig

RESULT_SCHEMA_VERSION = 1


@dataclass
class ExperimentResult:
    schema_version: int
    engine_version: str
    config: dict
    task_names: list[str]
    metrics: list[str]
    matrices: dict[str, list[list[float | None]]]
    p_sequence: dict[str, list[float]]
    bwf_sequence: dict[str, list[float]]
    bwf_final: dict[str, float | None]
    loss_curves: list[dict] = field(default_factory=list)
    completed_tasks: int = 0
    aborted: bool = False
    wall_clock_s: float = 0.0


def _eval_threads() -> int:
    try:
        n = int(os.environ.get("VILCO_THREADS", "1"))
    except ValueError:
        n = 1
    return max(1, n)


def _atomic_write_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def result_to_json(result: ExperimentResult) -> str:
    return json.dumps(asdict(result), indent=2, sort_keys=True)


def load_result(path: str) -> dict:
    """Read a result.json (or the directory holding one) back as a dict."""
    if os.path.isdir(path):
        path = os.path.join(path, "result.json")
    with open(path) as fh:
        return json.load(fh)


def _build_world(cfg: ExperimentConfig):
    if cfg.synth is not None:
        manifest, stream = synthesize_stream(cfg.synth, order_seed=cfg.order_seed)
        d_video, d_text = cfg.synth.d_video, cfg.synth.d_text
    else:
        manifest = load_manifest(cfg.manifest_path)
        stream = build_task_stream(
            manifest, task_kind=cfg.task_kind, order_seed=cfg.order_seed, num_tasks=cfg.num_tasks
        )
        first_video = manifest.videos[0].video_id
        d_video = manifest.load_video_features(first_video).data.shape[1]
        record = next(
            (r for recs in manifest.queries.values() for r in recs if r.query_embedding is not None),
            None,
        )
        if record is None:
            raise ConfigError("manifest has no query embeddings; the engine needs them")
        d_text = len(record.query_embedding)
    over = dict(cfg.fusion)
    over.setdefault("max_categories", max(110, max(t.num_classes for t in stream.tasks)))
    fusion = FusionConfig(d_video=d_video, d_text=d_text, **over)
    return manifest, stream, fusion


def _flush(out_dir: str, result: ExperimentResult) -> None:
    _atomic_write_text(os.path.join(out_dir, "result.json"), result_to_json(result))
    buf = io.StringIO()
    writer = csv.writer(buf)
    keys = result.metrics
    writer.writerow(
        ["task_index", "task_name"] + [f"P[{k}]" for k in keys] + [f"BwF[{k}]" for k in keys]
    )
    for i in range(result.completed_tasks):
        row = [i, result.task_names[i]]
        row += [f"{result.p_sequence[k][i]:.6f}" for k in keys]
        row += ["" if i == 0 else f"{result.bwf_sequence[k][i - 1]:.6f}" for k in keys]
        writer.writerow(row)
    _atomic_write_text(os.path.join(out_dir, "summary.csv"), buf.getvalue())


def _checkpoint_path(out_dir: str, task_pos: int) -> str:
    return os.path.join(out_dir, "checkpoints", f"task_{task_pos:02d}.npz")


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Train the stream task by task, evaluating all past tasks at each boundary.

    Resumes automatically when the output directory already holds a partial
    run of the same config; a finished run is returned as stored. Raises
    ConfigError pre-flight and NumericalError on a mid-run abort (partial
    results are flushed first).
    """
    started = time.time()
    config.validate()
    echo = config.to_json_dict()
    out_dir = config.out_dir
    os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)

    manifest, stream, fusion = _build_world(config)
    tasks = stream.tasks
    n = len(tasks)
    trainer = ContinualTrainer(manifest, stream, config.build_strategy(), fusion)
    eval_cfg = EvalConfig(**config.build_eval_kwargs())
    keys = sorted(
        [f"r{k}@{m:g}" for k in eval_cfg.ks for m in eval_cfg.ious]
        + [f"r{k}@mean" for k in eval_cfg.ks]
    )

    result = ExperimentResult(
        schema_version=RESULT_SCHEMA_VERSION,
        engine_version=__version__,
        config=echo,
        task_names=[t.name for t in tasks],
        metrics=keys,
        matrices={k: MetricsMatrix(n, k).to_lists() for k in keys},
        p_sequence={k: [] for k in keys},
        bwf_sequence={k: [] for k in keys},
        bwf_final={k: None for k in keys},
    )

    start_pos = 0
    prior = None
    result_path = os.path.join(out_dir, "result.json")
    if os.path.isfile(result_path):
        prior = load_result(result_path)
        if prior.get("config") != echo:
            raise ConfigError(f"{out_dir} belongs to a different experiment config")
        done = int(prior.get("completed_tasks", 0))
        if done >= n and not prior.get("aborted"):
            return ExperimentResult(**prior)
        if done > 0:
            trainer.restore(_checkpoint_path(out_dir, done - 1))
            result.matrices = prior["matrices"]
            result.p_sequence = prior["p_sequence"]
            result.bwf_sequence = prior["bwf_sequence"]
            result.loss_curves = prior["loss_curves"]
            result.completed_tasks = done
            result.wall_clock_s = float(prior.get("wall_clock_s", 0.0))
            start_pos = done

    base_wall = result.wall_clock_s
    mats = {k: MetricsMatrix.from_lists(result.matrices[k], k) for k in keys}
    threads = _eval_threads()
    for pos in range(start_pos, n):
        task = tasks[pos]
        try:
            log = trainer.train_task(task)
        except NumericalError:
            result.aborted = True
            result.wall_clock_s = base_wall + (time.time() - started)
            _flush(out_dir, result)
            raise
        result.loss_curves.append(asdict(log))
        trainer.save(_checkpoint_path(out_dir, pos), extra={"task_pos": pos})

        past = tasks[: pos + 1]
        if threads > 1 and len(past) > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                scores = list(ex.map(lambda t: trainer.evaluate(t, eval_cfg), past))
        else:
            scores = [trainer.evaluate(t, eval_cfg) for t in past]
        for j, sc in enumerate(scores):
            for k in keys:
                mats[k].set_cell(pos, j, sc[k])
        for k in keys:
            result.matrices[k] = mats[k].to_lists()
            result.p_sequence[k].append(avg_performance(mats[k], pos))
            if pos >= 1:
                result.bwf_sequence[k].append(backward_forgetting(mats[k], pos))
        result.completed_tasks = pos + 1
        result.wall_clock_s = base_wall + (time.time() - started)
        _flush(out_dir, result)

    for k in keys:
        result.bwf_final[k] = result.bwf_sequence[k][-1] if n > 1 else None
    result.wall_clock_s = base_wall + (time.time() - started)
    _flush(out_dir, result)
    return result

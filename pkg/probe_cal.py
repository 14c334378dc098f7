"""Desk-scale calibration probe for the standard 5x22 stream."""
from __future__ import annotations

import sys
import time

import numpy as np

from vilco.clstrat import ContinualTrainer, config_for_kind
from vilco.crossmodal import FusionConfig
from vilco.datastream import SynthConfig, synthesize_stream
from vilco.evalkit import EvalConfig, MetricsMatrix, avg_performance, backward_forgetting


def standard(seed, num_steps=48, videos=16, val_videos=4, queries=6, noise=0.03):
    cfg = SynthConfig(
        task_kind="MQ", num_tasks=5, cats_per_task=22,
        videos_per_task=videos, val_videos_per_task=val_videos,
        queries_per_video=queries,
        num_steps=num_steps, d_video=128, d_text=32, noise_sigma=noise, seed=seed,
    )
    return synthesize_stream(cfg, order_seed=seed)


def run(method, seed, model_dim=64, num_steps=48, videos=16, val_videos=4,
        queries=6, epochs=12, noise=0.03, n_select=1, **over):
    manifest, stream = standard(seed, num_steps, videos, val_videos, queries, noise)
    fcfg = FusionConfig(
        d_video=128, d_text=32, model_dim=model_dim, heads=4,
        fusion_layers=1, pyramid_levels=3, max_categories=22,
    )
    base = dict(epochs=epochs, batch_size=4, lr=3e-3, seed=seed)
    base.update(over)
    strat = config_for_kind("MQ", method, **base)
    tr = ContinualTrainer(manifest, stream, strat, fcfg, prompt_select_n=n_select)
    ecfg = EvalConfig(ks=(1,), ious=(0.3, 0.5))
    n = len(stream.tasks)
    mat = MetricsMatrix(n, "r1@mean")
    t0 = time.time()
    # diag right after each task; full final row at the end
    for pos, task in enumerate(stream.tasks):
        tr.train_task(task)
        res = tr.evaluate(task, cfg=ecfg)
        mat.set_cell(pos, pos, res["r1@mean"])
    for pos, past in enumerate(stream.tasks[:-1]):
        res = tr.evaluate(past, cfg=ecfg)
        mat.set_cell(n - 1, pos, res["r1@mean"])
    dt = time.time() - t0
    bwf = backward_forgetting(mat, n - 1)
    avg = avg_performance(mat, n - 1)
    return mat, bwf, avg, dt, tr


if __name__ == "__main__":
    np.set_printoptions(precision=1, suppress=True)
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
    jobs = []
    for arg in sys.argv[2:]:
        if "=" in arg:
            k, v = arg.split("=", 1)
            try:
                jobs[-1][1][k] = float(v) if "." in v or "e" in v else int(v)
            except ValueError:
                jobs[-1][1][k] = v
        else:
            jobs.append((arg, {}))
    if not jobs:
        jobs = [("naive", {}), ("replay", {}),
                ("vilco", dict(lambda_ssl=0.3, lambda_prompt=0.1))]
    for method, over in jobs:
        mat, bwf, avg, dt, _ = run(method, seed, **over)
        print(f"{method:7s} {dt:6.1f}s  BwF={bwf:6.2f}  AvgR1={avg:6.2f}  {over}")
        print(mat.values)

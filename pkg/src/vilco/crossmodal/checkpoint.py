"""Versioned npz checkpoints for CrossModalModel.

One file holds every named parameter, the AdamW moment state, the
FusionConfig, the task-head registry, an arbitrary JSON-serializable
``extra`` blob, and optional named float arrays (the trainer stashes
importance maps there; the runner adds RNG and memory state to ``extra``).
Loading rebuilds the model and refuses a config that disagrees with the
caller's.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict

import numpy as np

from .model import CrossModalModel, FusionConfig

FORMAT_VERSION = 1


def save_checkpoint(
    path: str,
    model: CrossModalModel,
    extra: dict | None = None,
    extra_arrays: dict[str, np.ndarray] | None = None,
) -> None:
    opt = model.params.opt_state()
    meta = {
        "format_version": FORMAT_VERSION,
        "config": asdict(model.cfg),
        "seed": model.seed,
        "task_classes": sorted(model.task_classes.items()),
        "adam_t": opt["t"],
        "step_count": opt["step_count"],
        "extra": extra or {},
    }
    arrays: dict[str, np.ndarray] = {"param:" + k: t.data for k, t in model.params.items()}
    arrays.update({"adam_m:" + k: v for k, v in opt["m"].items()})
    arrays.update({"adam_v:" + k: v for k, v in opt["v"].items()})
    arrays.update({"xtra:" + k: np.asarray(v) for k, v in (extra_arrays or {}).items()})
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        np.savez(fh, __meta__=json.dumps(meta), **arrays)
    os.replace(tmp, path)  # atomic: never leave a half-written checkpoint


def read_checkpoint(path: str) -> tuple[dict, dict, dict, dict]:
    """Raw view of a checkpoint: (meta, param arrays, opt state, extra arrays)."""
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('format_version')}")
        params = {n[len("param:") :]: z[n] for n in z.files if n.startswith("param:")}
        opt = {
            "m": {n[len("adam_m:") :]: z[n] for n in z.files if n.startswith("adam_m:")},
            "v": {n[len("adam_v:") :]: z[n] for n in z.files if n.startswith("adam_v:")},
            "t": meta["adam_t"],
            "step_count": meta["step_count"],
        }
        xtra = {n[len("xtra:") :]: z[n] for n in z.files if n.startswith("xtra:")}
    return meta, params, opt, xtra


def load_checkpoint(path: str, expect_cfg: FusionConfig | None = None) -> tuple[CrossModalModel, dict]:
    """Rebuild (model, extra) from a checkpoint file."""
    meta, params, opt, _ = read_checkpoint(path)
    cfg = FusionConfig(**meta["config"])
    if expect_cfg is not None and cfg != expect_cfg:
        raise ValueError(f"checkpoint config mismatch: {cfg} vs expected {expect_cfg}")
    model = CrossModalModel(cfg, seed=int(meta.get("seed", 0)))
    for task_id, n_classes in meta["task_classes"]:
        model.add_task_head(int(task_id), int(n_classes))
    model.params.load_state(params)
    model.params.load_opt_state(opt)
    return model, meta["extra"]

"""Finite-difference verification battery over every differentiable loss.

Cycles through six fixture kinds (localization on raw dense outputs,
localization through the full model, InfoNCE alignment, prompt-key loss,
importance penalty, and the combined vilco step) so that any requested
total covers each loss family. Fixtures are tiny and freshly seeded per
configuration; every check compares analytic gradients against central
differences at the given relative tolerance.
"""

from __future__ import annotations

import numpy as np

from ..clstrat import ContinualTrainer, ImportanceMap, StrategyConfig, ewc_penalty
from ..crossmodal import CrossModalModel, DenseOutputs, FusionConfig, loss_localization
from ..datastream.synth import SynthConfig, synthesize_stream
from ..epimem import MemoryEntry, PromptPool, ShortTermMemory, prompt_loss, prompt_select
from ..numkit import ParamSet, Tensor, grad_check
from ..sslalign import build_alignment_batch, ssl_loss


def _check_loc_dense(rng: np.random.Generator, tol: float):
    t0 = int(rng.integers(5, 9))
    lengths = [t0, (t0 + 1) // 2]
    n_cls = int(rng.integers(1, 4))
    params = ParamSet()
    logits, offsets = [], []
    for lvl, tl in enumerate(lengths):
        logits.append(params.add(f"z{lvl}", rng.normal(size=(tl, n_cls))))
        offsets.append(params.add(f"o{lvl}", rng.normal(size=(tl, 2)) + 1.0))
    duration = float(t0)
    dense = DenseOutputs(logits, offsets, [1.0, 2.0], duration, n_cls)
    gt = []
    for _ in range(int(rng.integers(1, 3))):
        s = float(rng.uniform(0, duration - 1.5))
        e = float(rng.uniform(s + 1.0, duration))
        gt.append((s, e, int(rng.integers(0, n_cls))))

    def fn():
        return loss_localization(dense, gt)[0]

    return grad_check(fn, params, tol=tol, max_entries_per_param=3, rng=rng)


def _check_loc_model(rng: np.random.Generator, tol: float):
    cfg = FusionConfig(
        d_video=3, d_text=2, model_dim=4, heads=2, fusion_layers=1,
        pyramid_levels=2, max_categories=3,
    )
    model = CrossModalModel(cfg, seed=int(rng.integers(0, 2**31)))
    model.add_task_head(0, 2)
    video = rng.normal(size=(6, 3))
    query = rng.normal(size=2)
    gt = [(0.5, 3.5, 0), (2.0, 5.0, 1)]

    def fn():
        pyr = model.encode_fuse(video, query, clip_stride_s=1.0)
        return loss_localization(model.predict_moments(pyr, 0), gt)[0]

    return grad_check(fn, model.params, tol=tol, max_entries_per_param=2, rng=rng)


def _check_ssl(rng: np.random.Generator, tol: float):
    d_raw, d = 3, 4
    params = ParamSet()
    params.add("pv", rng.normal(size=(d_raw, d)))
    params.add("pt", rng.normal(size=(d_raw, d)))

    def vmap(raw):
        return Tensor(np.asarray(raw)) @ params["pv"]

    def tmap(raw):
        return Tensor(np.asarray(raw)) @ params["pt"]

    triples = [
        ((f"v{i}", f"q{i}"), rng.normal(size=d_raw), rng.normal(size=d_raw))
        for i in range(int(rng.integers(2, 4)))
    ]
    mem = ShortTermMemory(capacity=8, seed=int(rng.integers(0, 2**31)))
    mem.begin_task(0)
    for i in range(3):
        mem.store(
            MemoryEntry(
                video_emb=rng.normal(size=d_raw),
                text_emb=rng.normal(size=d_raw),
                task_id=0,
                label_id=i,
                item_ref=("m", f"n{i}"),
            )
        )
    draw = np.random.default_rng(int(rng.integers(0, 2**31)))
    frozen = draw.bit_generator.state

    def fn():
        draw.bit_generator.state = frozen
        batch = build_alignment_batch(
            triples, mem, 2, rng=draw, video_map=vmap, text_map=tmap, temperature=0.7
        )
        return ssl_loss(batch)

    return grad_check(fn, params, tol=tol, max_entries_per_param=3, rng=rng)


def _check_prompt(rng: np.random.Generator, tol: float):
    params = ParamSet()
    pool = PromptPool(
        params, m=3, key_dim=4, length=2, model_dim=4, n_select=2,
        rng=np.random.default_rng(int(rng.integers(0, 2**31))),
    )
    query = rng.normal(size=4)
    idx, _ = prompt_select(pool, query)

    def fn():
        return prompt_loss(pool, query, idx)

    return grad_check(fn, params, tol=tol, max_entries_per_param=3, rng=rng)


def _check_penalty(rng: np.random.Generator, tol: float):
    params = ParamSet()
    shapes = {"a": (3,), "b": (2, 2)}
    imp, anchor = {}, {}
    for name, shape in shapes.items():
        params.add(name, rng.normal(size=shape))
        imp[name] = np.abs(rng.normal(size=shape))
        anchor[name] = rng.normal(size=shape)

    def fn():
        return ewc_penalty(params, ImportanceMap(imp, anchor), 1.7)

    return grad_check(fn, params, tol=tol, max_entries_per_param=4, rng=rng)


def _check_vilco_step(rng: np.random.Generator, tol: float):
    seed = int(rng.integers(0, 2**31))
    scfg = SynthConfig(
        num_tasks=1, cats_per_task=2, videos_per_task=2, val_videos_per_task=1,
        queries_per_video=1, num_steps=8, d_video=4, d_text=2,
        min_window_steps=2, max_window_steps=4, seed=seed,
    )
    manifest, stream = synthesize_stream(scfg)
    fcfg = FusionConfig(
        d_video=4, d_text=2, model_dim=4, heads=2, fusion_layers=1,
        pyramid_levels=2, max_categories=2,
    )
    strat = StrategyConfig(
        method="vilco", epochs=0, batch_size=2, seed=seed,
        lambda_ssl=0.5, lambda_prompt=0.3, neg_count=2,
    )
    tr = ContinualTrainer(manifest, stream, strat, fcfg, pool_size=3, prompt_length=2)
    task = stream.tasks[0]
    tr.train_task(task)
    batch = [(task, vid, rec) for vid, rec in task.train[:2]]
    frozen = tr.ssl_rng.bit_generator.state

    def fn():
        tr.ssl_rng.bit_generator.state = frozen
        return tr.vilco_step(task, batch)[0]

    return grad_check(fn, tr.model.params, tol=tol, max_entries_per_param=2, rng=rng)


_KINDS = (
    ("localization/dense", _check_loc_dense),
    ("ssl_loss", _check_ssl),
    ("prompt_loss", _check_prompt),
    ("ewc_penalty", _check_penalty),
    ("localization/model", _check_loc_model),
    ("vilco_step", _check_vilco_step),
)


def gradcheck_battery(total: int = 50, seed: int = 0, tol: float = 1e-4, log=None) -> list[str]:
    """Run `total` finite-difference checks round-robin over all loss kinds.

    Returns failure descriptions (empty means everything passed); `log`,
    when given, receives one line per configuration.
    """
    if total < len(_KINDS):
        raise ValueError(f"need at least {len(_KINDS)} configurations to cover every loss")
    failures = []
    for i in range(total):
        name, check = _KINDS[i % len(_KINDS)]
        rng = np.random.default_rng([seed, i])
        report = check(rng, tol)
        ok = report.passed(tol)
        if log is not None:
            log(f"[{i + 1:3d}/{total}] {name:20s} max rel err {report.max_rel_error:.3e} "
                f"{'ok' if ok else 'FAIL'}")
        if not ok:
            failures.append(f"{name} (config {i}): max rel err {report.max_rel_error:.3e}")
    return failures

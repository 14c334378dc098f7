"""Continual-learning strategy tests: importance maps, bias correction, trainer."""

import dataclasses
import math

import numpy as np
import pytest

from vilco.clstrat import (
    BiasCorrection,
    ContinualTrainer,
    ImportanceMap,
    StrategyConfig,
    bic_correct,
    config_for_kind,
    ewc_estimate_fisher,
    ewc_penalty,
    mas_importance,
    merge_importance,
    replay_train_mix,
)
from vilco.crossmodal import FusionConfig
from vilco.datastream.synth import SynthConfig, synthesize_stream
from vilco.epimem import MemoryEntry, ShortTermMemory
from vilco.numkit import ParamSet, Tensor


def small_world(seed=0, num_tasks=2, noise=0.05):
    scfg = SynthConfig(
        num_tasks=num_tasks,
        cats_per_task=3,
        videos_per_task=3,
        val_videos_per_task=2,
        queries_per_video=2,
        num_steps=24,
        d_video=16,
        d_text=8,
        noise_sigma=noise,
        seed=seed,
    )
    manifest, stream = synthesize_stream(scfg)
    fcfg = FusionConfig(
        d_video=16,
        d_text=8,
        model_dim=16,
        heads=2,
        fusion_layers=1,
        pyramid_levels=2,
        max_categories=num_tasks * 3,
    )
    return manifest, stream, fcfg


def trainer_for(method, manifest, stream, fcfg, **over):
    base = dict(method=method, epochs=2, batch_size=3, lr=2e-3, seed=0, neg_count=4)
    base.update(over)
    return ContinualTrainer(manifest, stream, StrategyConfig(**base), fcfg)


# -- config ------------------------------------------------------------------------


def test_config_for_kind_defaults():
    mq = config_for_kind("MQ", "replay")
    nlq = config_for_kind("NLQ", "vilco", lr=0.01)
    assert (mq.epochs, mq.batch_size, mq.method) == (15, 2, "replay")
    assert (nlq.epochs, nlq.batch_size, nlq.lr) == (13, 8, 0.01)
    with pytest.raises(ValueError):
        config_for_kind("VQ")


def test_config_rejects_bad_values():
    for bad in (
        dict(method="sgd"),
        dict(lambda_ssl=-0.1),
        dict(batch_size=0),
        dict(mix_ratio=1.5),
        dict(prompt_mode="add"),
        dict(temperature=0.0),
        dict(importance_mode="mean"),
    ):
        with pytest.raises(ValueError):
            StrategyConfig(**bad)


# -- importance maps ------------------------------------------------------------------


def quad_param(theta):
    params = ParamSet()
    params.add("w", np.asarray(theta, dtype=np.float64))
    return params


def test_fisher_matches_hand_derivative():
    # loss = w^2 per item, dL/dw = 2w, fisher = mean (2w)^2 = 4 w^2
    params = quad_param([1.0, -2.0])
    fns = [lambda: (params["w"] * params["w"]).sum() for _ in range(3)]
    imp = ewc_estimate_fisher(params, fns)
    np.testing.assert_allclose(imp.importance["w"], [4.0, 16.0], atol=1e-12)
    np.testing.assert_allclose(imp.anchor["w"], [1.0, -2.0])


def test_fisher_is_nonnegative_random_losses():
    rng = np.random.default_rng(3)
    for _ in range(5):
        params = quad_param(rng.normal(size=4))
        coef = rng.normal(size=4)
        fns = [lambda c=c: (params["w"] * Tensor(c * coef)).sum() for c in rng.normal(size=6)]
        imp = ewc_estimate_fisher(params, fns)
        assert np.all(imp.importance["w"] >= 0)


def test_mas_matches_hand_derivative():
    # output = w * x, d ||o||^2 / dw = 2 w x^2 elementwise
    params = quad_param([1.5, -0.5])
    x = np.array([2.0, 3.0])
    fns = [lambda: params["w"] * Tensor(x)]
    imp = mas_importance(params, fns)
    np.testing.assert_allclose(imp.importance["w"], [2 * 1.5 * 4.0, 2 * 0.5 * 9.0], atol=1e-12)


def test_mas_dead_parameter_gets_zero_importance():
    params = quad_param([1.0, 1.0])
    params.add("dead", np.ones(2))
    fns = [lambda: params["w"] * Tensor(np.array([1.0, 2.0]))]
    imp = mas_importance(params, fns)
    np.testing.assert_array_equal(imp.importance["dead"], np.zeros(2))


def test_importance_subsampling_is_rng_driven():
    params = quad_param([1.0])
    fns = [lambda s=s: (params["w"] * float(s)).sum() for s in range(10)]
    a = ewc_estimate_fisher(params, fns, samples=3, rng=np.random.default_rng(0))
    b = ewc_estimate_fisher(params, fns, samples=3, rng=np.random.default_rng(0))
    np.testing.assert_array_equal(a.importance["w"], b.importance["w"])


def test_penalty_zero_at_anchor_and_quarter_fixture():
    params = quad_param([1.0])
    imp = ImportanceMap({"w": np.array([2.0])}, {"w": np.array([1.0])})
    assert ewc_penalty(params, imp, 1.0).item() == 0.0
    params["w"].data[:] = 1.5  # delta 0.5: (1/2) * 2 * 0.25 = 0.25
    assert ewc_penalty(params, imp, 1.0).item() == pytest.approx(0.25, abs=1e-12)
    assert ewc_penalty(params, imp, 0.0).item() == 0.0
    with pytest.raises(ValueError):
        ewc_penalty(params, imp, -1.0)


def test_penalty_gradient_points_back_to_anchor():
    params = quad_param([2.0])
    imp = ImportanceMap({"w": np.array([3.0])}, {"w": np.array([0.5])})
    pen = ewc_penalty(params, imp, 2.0)
    params.zero_grad()
    pen.backward()
    # d/dw (lam/2) F (w - a)^2 = lam F (w - a) = 2 * 3 * 1.5
    np.testing.assert_allclose(params["w"].grad, [9.0], atol=1e-12)


def test_merge_importance_max_and_sum():
    old = ImportanceMap({"w": np.array([1.0, 5.0])}, {"w": np.array([0.0, 0.0])})
    new = ImportanceMap({"w": np.array([3.0, 2.0])}, {"w": np.array([9.0, 9.0])})
    mx = merge_importance(old, new, "max")
    sm = merge_importance(old, new, "sum")
    np.testing.assert_array_equal(mx.importance["w"], [3.0, 5.0])
    np.testing.assert_array_equal(sm.importance["w"], [4.0, 7.0])
    # the anchor always moves to the newest snapshot
    np.testing.assert_array_equal(mx.anchor["w"], [9.0, 9.0])
    assert merge_importance(None, new, "max") is new


# -- bias correction ---------------------------------------------------------------


def test_bic_empty_split_warns_and_stays_identity():
    with pytest.warns(UserWarning):
        corr = bic_correct(None)
    assert (corr.alpha, corr.beta) == (1.0, 0.0)
    z = np.array([1.0, -2.0])
    np.testing.assert_array_equal(corr.apply(z), z)


def test_bic_shrinks_alpha_on_overconfident_logits():
    # validation loss is minimized where 5 alpha + beta = 1, so alpha must drop
    def val_loss(alpha, beta):
        resid = alpha * 5.0 + beta - 1.0
        return resid * resid

    corr = bic_correct(val_loss, steps=200, lr=0.05)
    assert corr.alpha < 1.0
    start = (1.0 * 5.0 - 1.0) ** 2
    end = (corr.alpha * 5.0 + corr.beta - 1.0) ** 2
    assert end < 0.05 * start


def test_bic_apply_is_affine():
    corr = BiasCorrection(alpha=0.5, beta=-1.0)
    np.testing.assert_allclose(corr.apply(np.array([2.0, 4.0])), [0.0, 1.0])


# -- replay mixing ----------------------------------------------------------------


def mem_with(entries):
    mem = ShortTermMemory(capacity=50, seed=0)
    for task_id, ref in entries:
        mem.begin_task(task_id)
        mem.store(
            MemoryEntry(
                video_emb=np.ones(3),
                text_emb=np.ones(3),
                task_id=task_id,
                label_id=0,
                item_ref=ref,
            )
        )
    return mem


def test_replay_mix_size_and_provenance():
    mem = mem_with([(0, ("v0", "a")), (0, ("v0", "b")), (1, ("v1", "c"))])
    batch = ["i1", "i2", "i3", "i4"]
    mixed = replay_train_mix(batch, mem, 0.5, current_task=1, rng=np.random.default_rng(0))
    assert mixed[:4] == batch
    assert len(mixed) == 4 + math.ceil(0.5 * 4)
    # only prior-task entries are eligible
    assert all(e.task_id < 1 for e in mixed[4:])


def test_replay_mix_empty_memory_returns_batch():
    mem = ShortTermMemory(capacity=10, seed=0)
    batch = ["x", "y"]
    assert replay_train_mix(batch, mem, 0.5, current_task=0) == batch


def test_replay_mix_respects_exclusions():
    mem = mem_with([(0, ("v0", "a")), (0, ("v0", "b"))])
    mixed = replay_train_mix(
        ["x", "y"], mem, 1.0, current_task=1, exclude={("v0", "a")}, rng=np.random.default_rng(1)
    )
    assert [e.item_ref for e in mixed[2:]] == [("v0", "b")]


# -- trainer ------------------------------------------------------------------------


def test_zero_epochs_leaves_parameters_untouched():
    manifest, stream, fcfg = small_world()
    tr = trainer_for("naive", manifest, stream, fcfg, epochs=0)
    tr.train_task(stream.tasks[0])
    before = {n: tr.model.params[n].data.copy() for n in tr.model.params.names()}
    tr.train_task(stream.tasks[1])
    assert tr.model.params.step_count == 0
    for n, v in before.items():
        np.testing.assert_array_equal(tr.model.params[n].data, v)


def test_train_task_guards():
    manifest, stream, fcfg = small_world()
    tr = trainer_for("naive", manifest, stream, fcfg, epochs=0)
    tr.train_task(stream.tasks[0])
    with pytest.raises(ValueError):
        tr.train_task(stream.tasks[0])
    empty = dataclasses.replace(stream.tasks[1], train=[])
    with pytest.raises(ValueError):
        tr.train_task(empty)


def test_loss_decreases_within_task():
    manifest, stream, fcfg = small_world()
    tr = trainer_for("naive", manifest, stream, fcfg, epochs=6)
    log = tr.train_task(stream.tasks[0])
    assert log.epoch_losses[-1] < log.epoch_losses[0]


def test_same_seed_runs_are_bitwise_identical():
    manifest, stream, fcfg = small_world()
    runs = []
    for _ in range(2):
        tr = trainer_for("naive", manifest, stream, fcfg)
        for task in stream.tasks:
            tr.train_task(task)
        runs.append({n: tr.model.params[n].data.copy() for n in tr.model.params.names()})
    for n, v in runs[0].items():
        np.testing.assert_array_equal(runs[1][n], v)


def test_vilco_ablated_matches_naive_bitwise():
    manifest, stream, fcfg = small_world()
    naive = trainer_for("naive", manifest, stream, fcfg, seed=7)
    ablated = trainer_for(
        "vilco", manifest, stream, fcfg, seed=7,
        lambda_ssl=0.0, lambda_prompt=0.0, prompt_mode="off", em_replay=False,
    )
    for task in stream.tasks:
        naive.train_task(task)
        ablated.train_task(task)
    shared = set(naive.model.params.names())
    assert shared < set(ablated.model.params.names())  # pool params extra
    for n in shared:
        np.testing.assert_array_equal(naive.model.params[n].data, ablated.model.params[n].data)
    assert len(ablated.mem) == 0  # memory never engaged


def test_vilco_em_replay_rehearses_prior_tasks():
    manifest, stream, fcfg = small_world()
    naive = trainer_for("naive", manifest, stream, fcfg, seed=7)
    vilco = trainer_for(
        "vilco", manifest, stream, fcfg, seed=7,
        lambda_ssl=0.0, lambda_prompt=0.0, prompt_mode="off", em_replay=True,
    )
    for task in stream.tasks:
        naive.train_task(task)
        vilco.train_task(task)
    assert len(vilco.mem) > 0
    assert {e.task_id for e in vilco.mem.entries} == {0, 1}
    # rehearsal alters the trajectory once a prior task exists
    diverged = any(
        not np.array_equal(naive.model.params[n].data, vilco.model.params[n].data)
        for n in naive.model.params.names()
    )
    assert diverged


def test_vilco_step_decomposes_into_weighted_terms():
    manifest, stream, fcfg = small_world()
    tr = trainer_for(
        "vilco", manifest, stream, fcfg, epochs=0, lambda_ssl=0.3, lambda_prompt=0.1
    )
    task = stream.tasks[0]
    tr.train_task(task)  # registers head and fills memory, no optimizer steps
    batch = [(task, vid, rec) for vid, rec in task.train[:3]]
    total, parts, _ = tr.vilco_step(task, batch)
    assert set(parts) == {"task", "ssl", "prompt"}
    expect = parts["task"] + 0.3 * parts["ssl"] + 0.1 * parts["prompt"]
    assert total.item() == pytest.approx(expect, rel=1e-12)


def test_vilco_step_ssl_term_matches_manual_batch():
    from vilco.sslalign import build_alignment_batch, ssl_loss

    manifest, stream, fcfg = small_world()
    tr = trainer_for(
        "vilco", manifest, stream, fcfg, epochs=0, lambda_ssl=0.3, lambda_prompt=0.0,
        prompt_mode="off",
    )
    task = stream.tasks[0]
    tr.train_task(task)
    batch = [(task, vid, rec) for vid, rec in task.train[:3]]
    state = tr.ssl_rng.bit_generator.state
    _, parts, _ = tr.vilco_step(task, batch)
    tr.ssl_rng.bit_generator.state = state  # replay the same negative draws
    triples = [
        (
            (vid, rec.query_id),
            tr._pool_rows(tr._features(vid), rec.windows),
            tr._narration_or_none(rec),
        )
        for _, vid, rec in batch
    ]
    manual = ssl_loss(
        build_alignment_batch(
            triples,
            tr.mem,
            tr.strategy.neg_count,
            rng=tr.ssl_rng,
            video_map=tr._map_video,
            text_map=tr._map_text,
            temperature=tr.strategy.temperature,
        )
    )
    assert parts["ssl"] == pytest.approx(manual.item(), rel=1e-12)


def test_ewc_penalty_active_only_after_first_task():
    manifest, stream, fcfg = small_world()
    tr = trainer_for("ewc", manifest, stream, fcfg, importance_samples=4)
    log0 = tr.train_task(stream.tasks[0])
    assert "penalty" not in log0.parts
    assert tr.importance is not None
    # the map estimated after task 0 cannot constrain the not-yet-created head
    assert not any(n.startswith("head1.") for n in tr.importance.importance)
    log1 = tr.train_task(stream.tasks[1])
    assert all(p >= 0 for p in log1.parts["penalty"])


def test_mas_importance_accumulates_across_tasks():
    manifest, stream, fcfg = small_world()
    tr = trainer_for("mas", manifest, stream, fcfg, importance_samples=4, importance_mode="max")
    tr.train_task(stream.tasks[0])
    first = {n: v.copy() for n, v in tr.importance.importance.items()}
    tr.train_task(stream.tasks[1])
    for n, v in first.items():
        assert np.all(tr.importance.importance[n] >= v - 1e-15)


def test_bic_trainer_reserves_and_fits_newest_task_only():
    manifest, stream, fcfg = small_world()
    tr = trainer_for("bic", manifest, stream, fcfg, bic_val_fraction=0.34, bic_fit_steps=10)
    tr.train_task(stream.tasks[0])
    assert set(tr.corrections) == {0}
    reserved_refs = set(tr._bic_reserved)
    assert reserved_refs  # ceil(0.34 * 6 items) = 3 per task
    tr.train_task(stream.tasks[1])
    assert set(tr.corrections) == {0, 1}
    # stage-2 fit runs on frozen logits: model parameters stay untouched by it
    log = tr.logs[-1]
    assert log.bic_alpha is not None and log.bic_beta is not None


def test_bic_stage_two_never_moves_model_parameters():
    manifest, stream, fcfg = small_world()
    tr = trainer_for("bic", manifest, stream, fcfg, epochs=0, bic_fit_steps=25)
    tr.train_task(stream.tasks[0])
    before = {n: tr.model.params[n].data.copy() for n in tr.model.params.names()}
    corr = tr._fit_bic(stream.tasks[0])
    assert corr.alpha != 1.0 or corr.beta != 0.0
    for n, v in before.items():
        np.testing.assert_array_equal(tr.model.params[n].data, v)


def test_joint_sees_all_registered_items():
    manifest, stream, fcfg = small_world()
    tr = trainer_for("joint", manifest, stream, fcfg, epochs=1)
    tr.train_task(stream.tasks[0])
    assert len(tr._joint_items) == len(stream.tasks[0].train)
    tr.train_task(stream.tasks[1])
    assert len(tr._joint_items) == sum(len(t.train) for t in stream.tasks)


def test_evaluate_emits_recall_grid():
    manifest, stream, fcfg = small_world()
    tr = trainer_for("naive", manifest, stream, fcfg, epochs=1)
    tr.train_task(stream.tasks[0])
    res = tr.evaluate(stream.tasks[0])
    assert {"r1@0.3", "r1@0.5", "r5@0.3", "r5@0.5", "r1@mean", "r5@mean"} <= set(res)
    assert all(0.0 <= v <= 100.0 for v in res.values())


def test_predict_windows_filters_mq_categories():
    manifest, stream, fcfg = small_world()
    tr = trainer_for("naive", manifest, stream, fcfg, epochs=1)
    task = stream.tasks[0]
    tr.train_task(task)
    vid, rec = task.val[0]
    wins = tr.predict_windows(task, vid, rec, threshold=0.01, top_k=3)
    assert len(wins) <= 3
    for s, e in wins:
        assert 0.0 <= s < e


def test_save_restore_resumes_bitwise(tmp_path):
    manifest, stream, fcfg = small_world()

    def fresh():
        return trainer_for(
            "vilco", manifest, stream, fcfg, seed=3, lambda_ssl=0.3, lambda_prompt=0.1
        )

    ck = str(tmp_path / "mid.npz")
    saver = fresh()
    saver.train_task(stream.tasks[0])
    saver.save(ck, extra={"tag": "mid"})

    resumed = fresh()
    assert resumed.restore(ck) == {"tag": "mid"}
    resumed.train_task(stream.tasks[1])

    straight = fresh()
    for task in stream.tasks:
        straight.train_task(task)

    assert resumed.trained == straight.trained == [0, 1]
    for n in straight.model.params.names():
        np.testing.assert_array_equal(resumed.model.params[n].data, straight.model.params[n].data)


def test_restore_rejects_wrong_fusion_config(tmp_path):
    manifest, stream, fcfg = small_world()
    tr = trainer_for("naive", manifest, stream, fcfg, epochs=0)
    tr.train_task(stream.tasks[0])
    ck = str(tmp_path / "a.npz")
    tr.save(ck)
    other = dataclasses.replace(fcfg, fusion_layers=2)
    bad = trainer_for("naive", manifest, stream, other, epochs=0)
    with pytest.raises(ValueError):
        bad.restore(ck)


def test_ewc_importance_survives_checkpoint(tmp_path):
    manifest, stream, fcfg = small_world()
    tr = trainer_for("ewc", manifest, stream, fcfg, importance_samples=4)
    tr.train_task(stream.tasks[0])
    ck = str(tmp_path / "e.npz")
    tr.save(ck)
    back = trainer_for("ewc", manifest, stream, fcfg, importance_samples=4)
    back.restore(ck)
    for n, v in tr.importance.importance.items():
        np.testing.assert_array_equal(back.importance.importance[n], v)
        np.testing.assert_array_equal(back.importance.anchor[n], tr.importance.anchor[n])

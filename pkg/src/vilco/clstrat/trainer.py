"""The continual trainer: one model, one stream, seven strategies.

Every strategy shares the same model initialization, batch order, and
optimizer under a fixed seed; they differ only in the loss they assemble
and the state they carry between tasks. RNG consumers are isolated onto
spawned streams so that, e.g., the vilco method with both auxiliary
weights at zero and every memory injection disabled (prompt injection
off, rehearsal off) replays the naive method bitwise.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..crossmodal import CrossModalModel, DenseOutputs, FusionConfig, decode_windows, loss_localization
from ..crossmodal.checkpoint import read_checkpoint, save_checkpoint
from ..datastream.features import FeatureSequence
from ..datastream.manifest import Manifest, QueryRecord
from ..datastream.stream import SubTask, TaskStream
from ..epimem import (
    MemoryEntry,
    PromptPool,
    ShortTermMemory,
    prompt_inject,
    prompt_loss,
    prompt_select,
)
from ..evalkit import EvalConfig, evaluate_task
from ..numkit import NumericalError, Tensor, adamw_step
from ..sslalign import build_alignment_batch, ssl_loss
from .bic import BiasCorrection, bic_correct
from .config import StrategyConfig
from .importance import (
    ImportanceMap,
    ewc_estimate_fisher,
    ewc_penalty,
    mas_importance,
    merge_importance,
)


@dataclass
class TaskLog:
    task_index: int
    task_name: str
    epoch_losses: list[float] = field(default_factory=list)
    parts: dict[str, list[float]] = field(default_factory=dict)
    skipped_windows: int = 0
    bic_alpha: float | None = None
    bic_beta: float | None = None


def replay_train_mix(
    batch: list,
    mem: ShortTermMemory,
    mix_ratio: float,
    current_task: int,
    rng: np.random.Generator | None = None,
    exclude: set | None = None,
) -> list:
    """Batch plus ceil(mix_ratio * len(batch)) prior-task memory entries.

    Appended elements are MemoryEntry objects (the caller resolves their
    item_refs back to training items); with an empty or all-current memory
    the batch comes back unchanged.
    """
    want = math.ceil(mix_ratio * len(batch))
    if want <= 0 or len(mem) == 0:
        return list(batch)
    entries = mem.sample(want, exclude=exclude, before_task=current_task, rng=rng)
    return list(batch) + entries


class ContinualTrainer:
    def __init__(
        self,
        manifest: Manifest,
        stream: TaskStream,
        strategy: StrategyConfig,
        fusion: FusionConfig,
        pool_size: int = 10,
        prompt_length: int = 4,
        prompt_select_n: int = 2,
    ):
        self.manifest = manifest
        self.stream = stream
        self.strategy = strategy
        self.fusion = fusion
        self.model = CrossModalModel(fusion, seed=strategy.seed)
        # isolated RNG streams: consuming one never shifts another, which is
        # what makes ablated methods replay each other exactly
        seq = np.random.SeedSequence(strategy.seed)
        batch_ss, replay_ss, mem_ss, ssl_ss, imp_ss, bic_ss, pool_ss = seq.spawn(7)
        self.batch_rng = np.random.default_rng(batch_ss)
        self.replay_rng = np.random.default_rng(replay_ss)
        self.ssl_rng = np.random.default_rng(ssl_ss)
        self.imp_rng = np.random.default_rng(imp_ss)
        self.bic_rng = np.random.default_rng(bic_ss)
        self.mem = ShortTermMemory(
            capacity=strategy.replay_capacity, seed=int(mem_ss.generate_state(1)[0])
        )
        self.pool: PromptPool | None = None
        if strategy.method == "vilco":
            self.pool = PromptPool(
                self.model.params,
                m=pool_size,
                key_dim=fusion.d_text,
                length=prompt_length,
                model_dim=fusion.model_dim,
                n_select=prompt_select_n,
                rng=np.random.default_rng(pool_ss),
            )
        self.importance: ImportanceMap | None = None
        self.corrections: dict[int, BiasCorrection] = {}
        self.trained: list[int] = []
        self.logs: list[TaskLog] = []
        self._joint_items: list[tuple[SubTask, str, QueryRecord]] = []
        self._ref_index: dict[tuple[str, str], tuple[SubTask, str, QueryRecord]] = {}
        self._bic_reserved: set[tuple[str, str]] = set()
        self._feat_cache: dict[str, FeatureSequence] = {}

    # -- per-item plumbing -------------------------------------------------------

    def _features(self, video_id: str) -> FeatureSequence:
        if video_id not in self._feat_cache:
            self._feat_cache[video_id] = self.manifest.load_video_features(video_id)
        return self._feat_cache[video_id]

    @staticmethod
    def _gt_windows(task: SubTask, record: QueryRecord) -> list[tuple[float, float, int]]:
        if record.kind == "NLQ":
            return [(float(s), float(e), 0) for s, e in record.windows]
        cats = list(record.categories)
        if len(cats) == 1:
            pairs = [(w, cats[0]) for w in record.windows]
        elif len(cats) == len(record.windows):
            pairs = list(zip(record.windows, cats))
        else:
            raise ValueError(
                f"{record.query_id}: {len(record.windows)} windows vs {len(cats)} categories"
            )
        return [(float(w[0]), float(w[1]), task.local_class(c)) for w, c in pairs]

    def _query_tokens(self, record: QueryRecord):
        """Injected prompt block and selected indices, or (None, None) raw path."""
        s = self.strategy
        if self.pool is None or (s.prompt_mode == "off" and s.lambda_prompt == 0.0):
            return None, None
        idx, _ = prompt_select(self.pool, record.query_embedding)
        if s.prompt_mode == "off":
            return None, idx
        block = prompt_inject(
            self.pool, idx, self.model.project_query(record.query_embedding), mode=s.prompt_mode
        )
        return block, idx

    def _forward_item(self, task: SubTask, video_id: str, record: QueryRecord):
        feats = self._features(video_id)
        tokens, idx = self._query_tokens(record)
        if tokens is None:
            pyr = self.model.encode_fuse(feats, record.query_embedding)
        else:
            pyr = self.model.encode_fuse(feats, query_tokens=tokens)
        return self.model.predict_moments(pyr, task.index), idx

    def _item_loss(self, task: SubTask, video_id: str, record: QueryRecord):
        dense, idx = self._forward_item(task, video_id, record)
        loss, aux = loss_localization(dense, self._gt_windows(task, record))
        return loss, aux, idx

    @staticmethod
    def _pool_rows(feats: FeatureSequence, windows) -> np.ndarray:
        """Mean raw clip feature over the rows any window covers."""
        data = np.asarray(feats.data, dtype=np.float64)
        stride = float(feats.clip_stride_s)
        rows = np.zeros(data.shape[0], dtype=bool)
        for s, e in windows:
            lo = max(0, int(np.floor(s / stride)))
            hi = min(data.shape[0], max(lo + 1, int(np.ceil(e / stride))))
            rows[lo:hi] = True
        if not rows.any():
            rows[:] = True
        return data[rows].mean(axis=0)

    @staticmethod
    def _narration_or_none(record: QueryRecord) -> np.ndarray | None:
        if record.narration_embeddings:
            return np.asarray(record.narration_embeddings[0], dtype=np.float64)
        return None

    def _offer_to_memory(self, task: SubTask) -> None:
        for vid, rec in task.train:
            narration = self._narration_or_none(rec)
            if rec.kind == "MQ" and rec.categories:
                label = int(rec.categories[0])
            else:
                label = int(rec.template_id or 0)
            self.mem.store(
                MemoryEntry(
                    video_emb=self._pool_rows(self._features(vid), rec.windows),
                    # queries stand in for the rare records without narration
                    text_emb=np.asarray(rec.query_embedding, dtype=np.float64)
                    if narration is None
                    else narration,
                    task_id=task.index,
                    label_id=label,
                    item_ref=(vid, rec.query_id),
                )
            )

    def _map_video(self, raw) -> Tensor:
        return self.model.embed_clip(raw)

    def _map_text(self, raw) -> Tensor:
        p = self.model.params
        arr = np.asarray(raw, dtype=np.float64)
        out = Tensor(arr.reshape(1, -1) if arr.ndim == 1 else arr) @ p["proj_q.w"] + p["proj_q.b"]
        return out.reshape(-1) if arr.ndim == 1 else out

    # -- per-step losses -----------------------------------------------------------

    def vilco_step(self, task: SubTask, batch: list) -> tuple[Tensor, dict, int]:
        """total = L_task + lambda_ssl * L_ssl + lambda_prompt * L_prompt."""
        s = self.strategy
        task_sum = None
        prompt_terms = []
        ssl_current = []
        skipped = 0
        for btask, vid, rec in batch:
            loss_i, aux, idx = self._item_loss(btask, vid, rec)
            task_sum = loss_i if task_sum is None else task_sum + loss_i
            skipped += len(aux["skipped"])
            if idx is not None and s.lambda_prompt > 0:
                prompt_terms.append(prompt_loss(self.pool, rec.query_embedding, idx))
            if s.lambda_ssl > 0:
                ssl_current.append(
                    (
                        (vid, rec.query_id),
                        self._pool_rows(self._features(vid), rec.windows),
                        self._narration_or_none(rec),
                    )
                )
        total = task_sum * (1.0 / len(batch))
        parts = {"task": float(total.data)}
        if s.lambda_ssl > 0 and ssl_current:
            abatch = build_alignment_batch(
                ssl_current,
                self.mem if len(self.mem) else None,
                s.neg_count,
                rng=self.ssl_rng,
                video_map=self._map_video,
                text_map=self._map_text,
                temperature=s.temperature,
            )
            if abatch.video:
                term = ssl_loss(abatch)
                parts["ssl"] = float(term.data)
                total = total + term * s.lambda_ssl
        if prompt_terms:
            ptotal = prompt_terms[0]
            for t in prompt_terms[1:]:
                ptotal = ptotal + t
            ptotal = ptotal * (1.0 / len(prompt_terms))
            parts["prompt"] = float(ptotal.data)
            total = total + ptotal * s.lambda_prompt
        return total, parts, skipped

    def _baseline_loss(self, task: SubTask, batch: list) -> tuple[Tensor, dict, int]:
        s = self.strategy
        total = None
        skipped = 0
        for btask, vid, rec in batch:
            loss_i, aux, _ = self._item_loss(btask, vid, rec)
            total = loss_i if total is None else total + loss_i
            skipped += len(aux["skipped"])
        total = total * (1.0 / len(batch))
        parts = {"task": float(total.data)}
        if s.method in ("ewc", "mas") and self.importance is not None:
            lam = s.lambda_ewc if s.method == "ewc" else s.lambda_mas
            pen = ewc_penalty(self.model.params, self.importance, lam)
            parts["penalty"] = float(pen.data)
            total = total + pen
        return total, parts, skipped

    # -- task loop -------------------------------------------------------------------

    def _register_task(self, task: SubTask) -> None:
        for vid, rec in task.train:
            self._ref_index[(vid, rec.query_id)] = (task, vid, rec)
            self._joint_items.append((task, vid, rec))

    def train_task(self, task: SubTask) -> TaskLog:
        s = self.strategy
        if task.index in self.model.task_classes:
            raise ValueError(f"task {task.index} was already trained")
        if not task.train:
            raise ValueError(f"task {task.name} has no training items")
        self.model.add_task_head(task.index, task.num_classes)
        self._register_task(task)
        uses_mem = s.replay_capacity > 0 and (
            s.method in ("replay", "bic")
            or (s.method == "vilco" and (s.em_replay or s.lambda_ssl > 0))
        )
        if uses_mem:
            self.mem.begin_task(task.index)
            self._offer_to_memory(task)
            if s.method == "bic":
                self._bic_reserved = self._reserve_bic_split()
        if s.method == "joint":
            items = list(self._joint_items)
        else:
            items = [(task, vid, rec) for vid, rec in task.train]

        log = TaskLog(task_index=task.index, task_name=task.name)
        for epoch in range(s.epochs):
            order = self.batch_rng.permutation(len(items))
            epoch_sum, batches = 0.0, 0
            part_sums: dict[str, float] = {}
            for start in range(0, len(items), s.batch_size):
                chunk = [items[int(i)] for i in order[start : start + s.batch_size]]
                batch = chunk
                rehearses = s.method in ("replay", "bic") or (
                    s.method == "vilco" and s.em_replay
                )
                if rehearses and self.trained:
                    mixed = replay_train_mix(
                        chunk,
                        self.mem,
                        s.mix_ratio,
                        task.index,
                        rng=self.replay_rng,
                        exclude=self._bic_reserved or None,
                    )
                    batch = chunk + [
                        self._ref_index[tuple(e.item_ref)] for e in mixed[len(chunk) :]
                    ]
                try:
                    if s.method == "vilco":
                        total, parts, skipped = self.vilco_step(task, batch)
                    else:
                        total, parts, skipped = self._baseline_loss(task, batch)
                    self.model.params.zero_grad()
                    total.backward()
                    adamw_step(self.model.params, lr=s.lr, weight_decay=s.weight_decay)
                except NumericalError as err:
                    raise NumericalError(
                        f"aborted: method={s.method} task={task.index} "
                        f"epoch={epoch} batch_start={start}: {err}"
                    ) from err
                log.skipped_windows += skipped
                epoch_sum += float(total.data)
                batches += 1
                for key, value in parts.items():
                    part_sums[key] = part_sums.get(key, 0.0) + value
            if batches:
                log.epoch_losses.append(epoch_sum / batches)
                for key, value in part_sums.items():
                    log.parts.setdefault(key, []).append(value / batches)

        if s.method == "ewc":
            fns = [self._loss_fn(task, vid, rec) for vid, rec in task.train]
            new = ewc_estimate_fisher(
                self.model.params, fns, samples=s.importance_samples, rng=self.imp_rng
            )
            self.importance = merge_importance(self.importance, new, s.importance_mode)
        elif s.method == "mas":
            fns = [self._output_fn(task, vid, rec) for vid, rec in task.train]
            new = mas_importance(
                self.model.params, fns, samples=s.importance_samples, rng=self.imp_rng
            )
            self.importance = merge_importance(self.importance, new, s.importance_mode)
        elif s.method == "bic":
            corr = self._fit_bic(task)
            self.corrections[task.index] = corr
            log.bic_alpha, log.bic_beta = corr.alpha, corr.beta
        self.trained.append(task.index)
        self.logs.append(log)
        return log

    def _loss_fn(self, task, vid, rec):
        def fn():
            return self._item_loss(task, vid, rec)[0]

        return fn

    def _output_fn(self, task, vid, rec):
        def fn():
            dense, _ = self._forward_item(task, vid, rec)
            return list(dense.logits) + list(dense.offsets)

        return fn

    # -- bias correction ----------------------------------------------------------

    def _reserve_bic_split(self) -> set[tuple[str, str]]:
        frac = self.strategy.bic_val_fraction
        reserved: set[tuple[str, str]] = set()
        if frac <= 0:
            return reserved
        for t in self.mem.tasks_seen:
            refs = [e.item_ref for e in self.mem.entries if e.task_id == t]
            want = math.ceil(frac * len(refs))
            if not refs or want == 0:
                continue
            if want >= len(refs):
                chosen = np.arange(len(refs))
            else:
                chosen = np.sort(self.bic_rng.choice(len(refs), size=want, replace=False))
            reserved.update(tuple(refs[int(i)]) for i in chosen)
        return reserved

    def _fit_bic(self, task: SubTask) -> BiasCorrection:
        # only newest-task items can move (alpha, beta): with per-task heads,
        # old-task logits are constants under the correction by design
        val = [
            e
            for e in self.mem.entries
            if e.task_id == task.index and tuple(e.item_ref) in self._bic_reserved
        ]
        if not val:
            return bic_correct(None)
        cached = []
        for e in val:
            btask, vid, rec = self._ref_index[tuple(e.item_ref)]
            dense, _ = self._forward_item(btask, vid, rec)
            cached.append(
                (
                    [z.data.copy() for z in dense.logits],
                    [o.data.copy() for o in dense.offsets],
                    list(dense.strides_s),
                    dense.duration_s,
                    dense.num_classes,
                    self._gt_windows(btask, rec),
                )
            )

        def val_loss(alpha: Tensor, beta: Tensor) -> Tensor:
            total = None
            for logits, offsets, strides, duration, ncls, gt in cached:
                dz = DenseOutputs(
                    [Tensor(z) * alpha + beta for z in logits],
                    [Tensor(o) for o in offsets],
                    strides,
                    duration,
                    ncls,
                )
                item, _ = loss_localization(dz, gt)
                total = item if total is None else total + item
            return total * (1.0 / len(cached))

        return bic_correct(val_loss, steps=self.strategy.bic_fit_steps)

    # -- prediction and evaluation ---------------------------------------------------

    def predict_windows(
        self,
        task: SubTask,
        video_id: str,
        record: QueryRecord,
        threshold: float = 0.1,
        nms_iou: float = 0.5,
        top_k: int = 5,
    ) -> list[tuple[float, float]]:
        """Ranked predicted windows for one query, category-filtered for MQ."""
        dense, _ = self._forward_item(task, video_id, record)
        corr = self.corrections.get(task.index)
        if corr is not None and (corr.alpha, corr.beta) != (1.0, 0.0):
            dense = DenseOutputs(
                [Tensor(corr.apply(z.data)) for z in dense.logits],
                dense.offsets,
                dense.strides_s,
                dense.duration_s,
                dense.num_classes,
            )
        preds = decode_windows(
            dense, threshold=threshold, nms_iou=nms_iou, top_k=max(50, 10 * top_k)
        )
        if record.kind == "MQ":
            allowed = {task.local_class(c) for c in record.categories}
            preds = [p for p in preds if p.category in allowed]
        return [p.window for p in preds[:top_k]]

    def evaluate(
        self,
        task: SubTask,
        cfg: EvalConfig | None = None,
        split: str = "val",
        **decode_kw,
    ) -> dict[str, float]:
        pairs = task.val if split == "val" else task.train
        if not pairs:
            raise ValueError(f"task {task.name} has no {split!r} items")
        vid_of = {id(rec): vid for vid, rec in pairs}

        def predict(rec):
            return self.predict_windows(task, vid_of[id(rec)], rec, **decode_kw)

        return evaluate_task(predict, [rec for _, rec in pairs], cfg or EvalConfig())

    # -- checkpointing -----------------------------------------------------------------

    def save(self, path: str, extra: dict | None = None) -> None:
        state = {
            "trained": list(self.trained),
            "mem": self.mem.to_state(),
            "corrections": {str(k): [v.alpha, v.beta] for k, v in self.corrections.items()},
            "rngs": {
                "batch": self.batch_rng.bit_generator.state,
                "replay": self.replay_rng.bit_generator.state,
                "ssl": self.ssl_rng.bit_generator.state,
                "imp": self.imp_rng.bit_generator.state,
                "bic": self.bic_rng.bit_generator.state,
            },
            "bic_reserved": sorted(list(r) for r in self._bic_reserved),
            "logs": [asdict(log) for log in self.logs],
            "user": extra or {},
        }
        arrays: dict[str, np.ndarray] = {}
        if self.importance is not None:
            arrays.update({"imp:" + k: v for k, v in self.importance.importance.items()})
            arrays.update({"anchor:" + k: v for k, v in self.importance.anchor.items()})
        save_checkpoint(path, self.model, extra=state, extra_arrays=arrays)

    def restore(self, path: str) -> dict:
        """Resume exactly from a checkpoint written by save(); returns user extra."""
        meta, params, opt, xtra = read_checkpoint(path)
        cfg = FusionConfig(**meta["config"])
        if cfg != self.fusion:
            raise ValueError(f"checkpoint fusion config mismatch: {cfg} vs {self.fusion}")
        for task_id, n_classes in meta["task_classes"]:
            if int(task_id) not in self.model.task_classes:
                self.model.add_task_head(int(task_id), int(n_classes))
        self.model.params.load_state(params)
        self.model.params.load_opt_state(opt)
        state = meta["extra"]
        self.trained = [int(i) for i in state["trained"]]
        self.mem = ShortTermMemory.from_state(state["mem"])
        self.corrections = {
            int(k): BiasCorrection(float(a), float(b))
            for k, (a, b) in state["corrections"].items()
        }
        for name, rng in (
            ("batch", self.batch_rng),
            ("replay", self.replay_rng),
            ("ssl", self.ssl_rng),
            ("imp", self.imp_rng),
            ("bic", self.bic_rng),
        ):
            rng.bit_generator.state = state["rngs"][name]
        self._bic_reserved = {tuple(r) for r in state["bic_reserved"]}
        self.logs = [TaskLog(**d) for d in state["logs"]]
        imp = {k[len("imp:") :]: v for k, v in xtra.items() if k.startswith("imp:")}
        anchor = {k[len("anchor:") :]: v for k, v in xtra.items() if k.startswith("anchor:")}
        self.importance = ImportanceMap(imp, anchor) if imp else None
        self._joint_items = []
        self._ref_index = {}
        by_index = {t.index: t for t in self.stream.tasks}
        for task_id in self.trained:
            self._register_task(by_index[task_id])
        return state.get("user", {})

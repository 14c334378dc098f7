"""Cross-modal fusion transformer, temporal feature pyramid, and heads.

The trainable stack downstream of frozen clip features: project video and
query embeddings into a shared width, fuse them with pre-LN transformer
layers (the query rides along as prepended tokens), then build a stride-2
conv pyramid over the video positions. Per-task linear heads emit dense
class logits and non-negative boundary offsets at every pyramid level.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..datastream.features import FeatureSequence
from ..numkit import ParamSet, Tensor, attention, concatenate, layer_norm


@dataclass(frozen=True)
class FusionConfig:
    d_video: int
    d_text: int
    model_dim: int = 256
    heads: int = 4
    fusion_layers: int = 2
    pyramid_levels: int = 4
    max_categories: int = 110
    kernel_size: int = 3

    def __post_init__(self):
        if min(self.d_video, self.d_text, self.model_dim, self.heads) < 1:
            raise ValueError("dims and heads must be positive")
        if self.model_dim % self.heads != 0:
            raise ValueError(f"model_dim {self.model_dim} not divisible by {self.heads} heads")
        if self.pyramid_levels < 1:
            raise ValueError("need at least one pyramid level")
        if self.fusion_layers < 0 or self.max_categories < 1:
            raise ValueError("bad fusion_layers or max_categories")
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd to preserve ceil(T/2) lengths")


@dataclass
class PyramidFeatures:
    """Per-level fused video features; level l has length ceil(T / 2^l)."""

    levels: list[Tensor]
    strides_s: list[float]
    duration_s: float


@dataclass
class DenseOutputs:
    """Per-level dense head outputs: (T_l, C) logits and (T_l, 2) offsets.

    Offsets are in units of the level stride and are non-negative by
    construction (softplus).
    """

    logits: list[Tensor]
    offsets: list[Tensor]
    strides_s: list[float]
    duration_s: float
    num_classes: int


@dataclass(frozen=True)
class MomentPrediction:
    window: tuple[float, float]
    category: int
    score: float


class CrossModalModel:
    """Fusion transformer + pyramid with per-task classification/regression heads."""

    def __init__(self, cfg: FusionConfig, seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        self.params = ParamSet()
        self.task_classes: dict[int, int] = {}
        rng = np.random.default_rng(seed)
        d = cfg.model_dim
        self._linear(rng, "proj_v", cfg.d_video, d)
        self._linear(rng, "proj_q", cfg.d_text, d)
        for i in range(cfg.fusion_layers):
            pre = f"fuse{i}"
            self._norm(f"{pre}.ln1", d)
            for nm in ("wq", "wk", "wv", "wo"):
                self._linear(rng, f"{pre}.{nm}", d, d)
            self._norm(f"{pre}.ln2", d)
            self._linear(rng, f"{pre}.mlp1", d, 4 * d)
            self._linear(rng, f"{pre}.mlp2", 4 * d, d)
        self._norm("ln_out", d)
        k = cfg.kernel_size
        for lvl in range(1, cfg.pyramid_levels):
            self.params.add(f"pyr{lvl}.w", rng.normal(size=(k, d, d)) / np.sqrt(k * d))
            self.params.add(f"pyr{lvl}.b", np.zeros(d))

    def _linear(self, rng: np.random.Generator, name: str, d_in: int, d_out: int) -> None:
        self.params.add(f"{name}.w", rng.normal(size=(d_in, d_out)) / np.sqrt(d_in))
        self.params.add(f"{name}.b", np.zeros(d_out))

    def _norm(self, name: str, d: int) -> None:
        self.params.add(f"{name}.g", np.ones(d))
        self.params.add(f"{name}.b", np.zeros(d))

    # -- task heads ------------------------------------------------------------

    def add_task_head(self, task_id: int, num_classes: int) -> None:
        if task_id in self.task_classes:
            raise ValueError(f"task {task_id} already has a head")
        if not 1 <= num_classes <= self.cfg.max_categories:
            raise ValueError(f"num_classes {num_classes} outside [1, {self.cfg.max_categories}]")
        d = self.cfg.model_dim
        rng = np.random.default_rng([self.seed, 1 + task_id])
        self.params.add(f"head{task_id}.cls.w", rng.normal(size=(d, num_classes)) / np.sqrt(d))
        # bias -2 puts the initial positive rate near sigmoid(-2) ~= 0.12,
        # the usual focal-loss prior so background does not swamp early steps
        self.params.add(f"head{task_id}.cls.b", np.full(num_classes, -2.0))
        self.params.add(f"head{task_id}.reg.w", rng.normal(size=(d, 2)) / np.sqrt(d))
        self.params.add(f"head{task_id}.reg.b", np.zeros(2))
        self.task_classes[task_id] = num_classes

    # -- forward ---------------------------------------------------------------

    def project_query(self, query_embedding: np.ndarray) -> Tensor:
        """Map one raw D_t query embedding to a single (1, D) token."""
        q = np.asarray(query_embedding, dtype=np.float64).reshape(1, -1)
        if q.shape[1] != self.cfg.d_text:
            raise ValueError(f"query dim {q.shape[1]} != d_text {self.cfg.d_text}")
        return Tensor(q) @ self.params["proj_q.w"] + self.params["proj_q.b"]

    def encode_fuse(
        self,
        video: FeatureSequence | np.ndarray,
        query_embedding: np.ndarray | None = None,
        query_tokens: Tensor | None = None,
        clip_stride_s: float | None = None,
    ) -> PyramidFeatures:
        """Fuse video and query, then downsample into the feature pyramid.

        The query enters as prepended tokens: either the projected raw
        embedding (one token) or an externally built block, e.g. injected
        prompts. The query tokens are dropped again before the pyramid, so
        every level stays aligned to video time.
        """
        if isinstance(video, FeatureSequence):
            feats = video.data
            clip_stride_s = video.clip_stride_s if clip_stride_s is None else clip_stride_s
        else:
            feats = video
            clip_stride_s = 1.0 if clip_stride_s is None else clip_stride_s
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] != self.cfg.d_video:
            raise ValueError(f"video features must be (T, {self.cfg.d_video})")
        if query_tokens is None:
            if query_embedding is None:
                raise ValueError("need query_embedding or query_tokens")
            query_tokens = self.project_query(query_embedding)
        elif query_tokens.ndim != 2 or query_tokens.shape[1] != self.cfg.model_dim:
            raise ValueError("query_tokens must be (n, model_dim)")
        n_q = query_tokens.shape[0]
        p = self.params
        x = concatenate([query_tokens, Tensor(feats) @ p["proj_v.w"] + p["proj_v.b"]])
        for i in range(self.cfg.fusion_layers):
            pre = f"fuse{i}"
            h = layer_norm(x, p[f"{pre}.ln1.g"], p[f"{pre}.ln1.b"])
            a = attention(
                h @ p[f"{pre}.wq.w"] + p[f"{pre}.wq.b"],
                h @ p[f"{pre}.wk.w"] + p[f"{pre}.wk.b"],
                h @ p[f"{pre}.wv.w"] + p[f"{pre}.wv.b"],
                self.cfg.heads,
            )
            x = x + (a @ p[f"{pre}.wo.w"] + p[f"{pre}.wo.b"])
            h = layer_norm(x, p[f"{pre}.ln2.g"], p[f"{pre}.ln2.b"])
            x = x + (h @ p[f"{pre}.mlp1.w"] + p[f"{pre}.mlp1.b"]).relu() @ p[f"{pre}.mlp2.w"] + p[f"{pre}.mlp2.b"]
        x = layer_norm(x, p["ln_out.g"], p["ln_out.b"])
        levels = [x[n_q:]]
        strides = [float(clip_stride_s)]
        pad = self.cfg.kernel_size // 2
        for lvl in range(1, self.cfg.pyramid_levels):
            nxt = levels[-1].conv1d(p[f"pyr{lvl}.w"], p[f"pyr{lvl}.b"], stride=2, padding=pad)
            levels.append(nxt.relu())
            strides.append(strides[-1] * 2.0)
        return PyramidFeatures(levels, strides, feats.shape[0] * float(clip_stride_s))

    def embed_clip(self, pooled_video: np.ndarray) -> Tensor:
        """Embed window-pooled clip vectors through the fusion trunk.

        Each row is treated as its own single-token sequence with no query:
        attention over one position is the identity mix (softmax of a single
        score is 1), so only the value/output projections act and rows never
        see each other. The same projection, attention, and MLP weights that
        shape the localization features produce the clip embedding, so an
        alignment loss on it constrains the trunk itself rather than just
        the input projection. Accepts (D_v,) or (N, D_v); returns
        (model_dim,) or (N, model_dim) to match.
        """
        raw = np.asarray(pooled_video, dtype=np.float64)
        single = raw.ndim == 1
        rows = raw.reshape(1, -1) if single else raw
        if rows.ndim != 2 or rows.shape[1] != self.cfg.d_video:
            raise ValueError(f"clip rows must be (N, {self.cfg.d_video})")
        p = self.params
        x = Tensor(rows) @ p["proj_v.w"] + p["proj_v.b"]
        for i in range(self.cfg.fusion_layers):
            pre = f"fuse{i}"
            h = layer_norm(x, p[f"{pre}.ln1.g"], p[f"{pre}.ln1.b"])
            a = (h @ p[f"{pre}.wv.w"] + p[f"{pre}.wv.b"])
            x = x + (a @ p[f"{pre}.wo.w"] + p[f"{pre}.wo.b"])
            h = layer_norm(x, p[f"{pre}.ln2.g"], p[f"{pre}.ln2.b"])
            x = x + (h @ p[f"{pre}.mlp1.w"] + p[f"{pre}.mlp1.b"]).relu() @ p[f"{pre}.mlp2.w"] + p[f"{pre}.mlp2.b"]
        x = layer_norm(x, p["ln_out.g"], p["ln_out.b"])
        return x.reshape(-1) if single else x

    def predict_moments(self, pyr: PyramidFeatures, task_id: int) -> DenseOutputs:
        """Dense per-timestep class logits and softplus boundary offsets."""
        if task_id not in self.task_classes:
            raise KeyError(f"no head for task {task_id}")
        p = self.params
        cw, cb = p[f"head{task_id}.cls.w"], p[f"head{task_id}.cls.b"]
        rw, rb = p[f"head{task_id}.reg.w"], p[f"head{task_id}.reg.b"]
        logits = [lvl @ cw + cb for lvl in pyr.levels]
        offsets = [(lvl @ rw + rb).softplus() for lvl in pyr.levels]
        return DenseOutputs(logits, offsets, list(pyr.strides_s), pyr.duration_s, self.task_classes[task_id])

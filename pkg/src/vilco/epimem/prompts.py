"""Long-term memory: a learnable prompt pool with cosine key matching.

m (key, value) pairs; keys live in the raw query-embedding space used for
matching, values are L x D blocks injected as query tokens. Selection is
non-differentiable top-N; the pull/push prompt loss trains the keys (and,
unless detached, the query path).
"""

from __future__ import annotations

import numpy as np

from ..numkit import ParamSet, Tensor


class PromptPool:
    def __init__(
        self,
        params: ParamSet,
        m: int = 10,
        key_dim: int = 32,
        length: int = 4,
        model_dim: int = 256,
        n_select: int = 2,
        gamma: float = 0.5,
        rng: np.random.Generator | None = None,
        prefix: str = "prompt",
    ):
        if n_select > m:
            raise ValueError("cannot select more prompts than the pool holds")
        rng = rng or np.random.default_rng(0)
        self.m = m
        self.length = length
        self.n_select = n_select
        self.gamma = gamma
        # standard normal init for both keys and values
        self.keys = params.add(f"{prefix}.keys", rng.standard_normal((m, key_dim)))
        self.values = params.add(f"{prefix}.values", rng.standard_normal((m, length, model_dim)))


def prompt_select(
    pool: PromptPool, query_embedding: np.ndarray, n: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Top-n prompt indices by cosine(query, key), ties to the lower index."""
    n = pool.n_select if n is None else n
    if n > pool.m:
        raise ValueError("n exceeds pool size")
    q = np.asarray(query_embedding, dtype=np.float64)
    qn = np.linalg.norm(q)
    if qn == 0.0:
        raise ValueError("degenerate query: zero norm")
    keys = pool.keys.data
    sims = (keys @ q) / (np.linalg.norm(keys, axis=1) * qn)
    order = np.argsort(-sims, kind="stable")[:n]
    return order, sims[order]


def prompt_inject(
    pool: PromptPool,
    indices: np.ndarray,
    original_tokens: Tensor,
    mode: str = "replace",
    beta: float = 0.5,
) -> Tensor:
    """Build the query token block from selected prompt values.

    replace: the N*L selected prompt rows become the block verbatim.
    blend(beta): beta * prompt-mean + (1 - beta) * original tokens.
    """
    if len(indices) == 0:
        raise ValueError("empty prompt selection")
    idx = np.asarray(indices, dtype=np.int64)
    picked = pool.values[idx]  # (N, L, D)
    block = picked.reshape(len(idx) * pool.length, pool.values.shape[2])
    if mode == "replace":
        return block
    if mode == "blend":
        mean_row = block.mean(axis=0)  # (D,)
        return original_tokens * (1.0 - beta) + mean_row * beta
    raise ValueError(f"unknown injection mode {mode!r}")


def prompt_loss(
    pool: PromptPool,
    query_embedding: Tensor | np.ndarray,
    selected: np.ndarray,
    gamma: float | None = None,
    detach_query: bool = False,
) -> Tensor:
    """Pull selected keys toward the query, push non-selected ones below gamma.

    mean_k (1 - cos(q, K_k)) over selected + mean_j max(0, cos(q, K_j) - gamma)
    over the rest; differentiable in the keys and (optionally) the query.
    """
    gamma = pool.gamma if gamma is None else gamma
    q = query_embedding if isinstance(query_embedding, Tensor) else Tensor(query_embedding)
    if detach_query:
        q = q.detach()
    dim = q.shape[0]
    qn = ((q * q).sum() + 1e-12).sqrt()
    kn = ((pool.keys * pool.keys).sum(axis=1) + 1e-12).sqrt()
    dots = (pool.keys @ q.reshape(dim, 1)).reshape(pool.m)
    cos = dots / (kn * qn)
    sel = np.asarray(selected, dtype=np.int64)
    pull = (1.0 - cos[sel]).mean()
    rest = np.setdiff1d(np.arange(pool.m), sel)
    if rest.size == 0:
        return pull
    push = (cos[rest] - gamma).relu().mean()
    return pull + push

"""Named parameter registry and the AdamW update."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class ParamSet:
    """Named trainable tensors plus their AdamW moment state.

    Parameters keep insertion order, which fixes the update order and hence
    bitwise determinism of training. Gradients live on the tensors
    themselves; moments and per-parameter step counters live here.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t: dict[str, int] = {}
        self.step_count = 0

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray | None]:
        return {name: t.grad for name, t in self._params.items()}

    # -- serialization ---------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self._params.items():
            if name not in state:
                raise KeyError(f"checkpoint missing parameter {name!r}")
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {name!r}: {arr.shape} vs {t.data.shape}")
            t.data = arr.copy()

    def opt_state(self) -> dict:
        return {
            "m": {k: v.copy() for k, v in self._m.items()},
            "v": {k: v.copy() for k, v in self._v.items()},
            "t": dict(self._t),
            "step_count": self.step_count,
        }

    def load_opt_state(self, state: dict) -> None:
        self._m = {k: np.asarray(v, dtype=np.float64).copy() for k, v in state["m"].items()}
        self._v = {k: np.asarray(v, dtype=np.float64).copy() for k, v in state["v"].items()}
        self._t = {k: int(v) for k, v in state["t"].items()}
        self.step_count = int(state["step_count"])


def adamw_step(
    params: ParamSet,
    lr: float = 0.0001,
    weight_decay: float = 0.05,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> ParamSet:
    """One decoupled-weight-decay Adam step over every parameter with a gradient.

    Parameters whose grad is None are untouched entirely (no decay either),
    so heads of tasks not in the current graph stay frozen.
    """
    if lr < 0.0:
        raise ValueError("negative learning rate")
    if weight_decay < 0.0:
        raise ValueError("negative weight decay")
    b1, b2 = betas
    params.step_count += 1
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if name not in params._m:
            params._m[name] = np.zeros_like(p.data)
            params._v[name] = np.zeros_like(p.data)
            params._t[name] = 0
        params._t[name] += 1
        t = params._t[name]
        p.data -= lr * weight_decay * p.data
        m = params._m[name]
        v = params._v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        mhat = m / (1.0 - b1**t)
        vhat = v / (1.0 - b2**t)
        p.data -= lr * mhat / (np.sqrt(vhat) + eps)
    return params

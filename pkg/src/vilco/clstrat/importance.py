"""Parameter-importance estimation and the quadratic anchoring penalty.

EWC approximates the Fisher diagonal by the mean squared gradient of the
task loss; MAS weighs parameters by the mean absolute gradient of the
squared L2 norm of the model outputs. Both share the penalty
(lambda/2) * sum_i imp_i (theta_i - theta*_i)^2 against anchor theta*.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..numkit import ParamSet, Tensor


@dataclass
class ImportanceMap:
    importance: dict[str, np.ndarray]
    anchor: dict[str, np.ndarray]


def _subsample(fns: Sequence[Callable], samples: int | None, rng: np.random.Generator | None):
    if not fns:
        raise ValueError("importance estimation over empty data")
    if samples is None or samples >= len(fns):
        return list(fns)
    rng = rng or np.random.default_rng(0)
    picked = rng.choice(len(fns), size=samples, replace=False)
    return [fns[i] for i in sorted(picked)]


def _mean_of_grads(
    params: ParamSet, fns: Sequence[Callable[[], Tensor]], transform
) -> dict[str, np.ndarray]:
    acc = {name: np.zeros_like(t.data) for name, t in params.items()}
    for fn in fns:
        params.zero_grad()
        fn().backward()
        for name, t in params.items():
            if t.grad is not None:
                acc[name] += transform(t.grad)
    params.zero_grad()
    inv = 1.0 / len(fns)
    return {name: g * inv for name, g in acc.items()}


def ewc_estimate_fisher(
    params: ParamSet,
    item_losses: Sequence[Callable[[], Tensor]],
    samples: int | None = None,
    rng: np.random.Generator | None = None,
) -> ImportanceMap:
    """Diagonal Fisher as mean squared per-item loss gradient; anchor = current params."""
    fns = _subsample(item_losses, samples, rng)
    fisher = _mean_of_grads(params, fns, np.square)
    return ImportanceMap(fisher, {name: t.data.copy() for name, t in params.items()})


def mas_importance(
    params: ParamSet,
    item_outputs: Sequence[Callable[[], Tensor | Sequence[Tensor]]],
    samples: int | None = None,
    rng: np.random.Generator | None = None,
) -> ImportanceMap:
    """Omega_i = mean |d ||outputs||^2 / d theta_i| over sampled items.

    item_outputs callables return the pre-decoding dense outputs (a Tensor
    or a sequence of Tensors); their squared L2 norm is the probed function.
    """

    def norm_fn(fn):
        def inner():
            outs = fn()
            if isinstance(outs, Tensor):
                outs = [outs]
            total = None
            for o in outs:
                sq = (o * o).sum()
                total = sq if total is None else total + sq
            return total

        return inner

    fns = [norm_fn(fn) for fn in _subsample(item_outputs, samples, rng)]
    omega = _mean_of_grads(params, fns, np.abs)
    return ImportanceMap(omega, {name: t.data.copy() for name, t in params.items()})


def ewc_penalty(params: ParamSet, imp: ImportanceMap, lam: float) -> Tensor:
    """(lam/2) * sum imp * (theta - anchor)^2, differentiable in theta."""
    if lam < 0:
        raise ValueError("negative penalty weight")
    if lam == 0.0 or not imp.importance:
        return Tensor(0.0)
    total = None
    for name, weight in imp.importance.items():
        if name not in params:
            raise KeyError(f"importance references unknown parameter {name!r}")
        p = params[name]
        if weight.shape != p.data.shape:
            raise ValueError(f"importance shape mismatch for {name!r}")
        diff = p - imp.anchor[name]
        term = (Tensor(weight) * diff * diff).sum()
        total = term if total is None else total + term
    return total * (lam / 2.0)


def merge_importance(old: ImportanceMap | None, new: ImportanceMap, mode: str = "max") -> ImportanceMap:
    """Accumulate importance across tasks; the anchor always moves to the new one."""
    if old is None:
        return new
    if mode not in ("max", "sum"):
        raise ValueError("mode must be 'max' or 'sum'")
    combine = np.maximum if mode == "max" else np.add
    merged = dict(new.importance)
    for name, weight in old.importance.items():
        merged[name] = combine(weight, merged[name]) if name in merged else weight
    anchor = dict(new.anchor)
    for name, value in old.anchor.items():
        anchor.setdefault(name, value)
    return ImportanceMap(merged, anchor)

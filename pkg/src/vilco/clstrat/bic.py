"""Bias correction (stage-2): a scale/shift fit on held-out logits.

After training a task, a two-parameter affine map (alpha, beta) is fitted
on a reserved validation slice of the buffer, with the model frozen, and
applied only to the newest task's class logits at evaluation time. Old-task
logits are never touched.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..numkit import ParamSet, Tensor, adamw_step


@dataclass(frozen=True)
class BiasCorrection:
    alpha: float = 1.0
    beta: float = 0.0

    def apply(self, logits):
        """Affine-correct logits; works on Tensor and ndarray alike."""
        return logits * self.alpha + self.beta


def bic_correct(
    val_loss_fn: Callable[[Tensor, Tensor], Tensor] | None,
    steps: int = 100,
    lr: float = 0.05,
) -> BiasCorrection:
    """Fit (alpha, beta) by minimizing val_loss_fn(alpha, beta).

    val_loss_fn rebuilds the validation loss from frozen logits each call;
    None signals an empty validation split and yields the identity
    correction with a warning.
    """
    if val_loss_fn is None:
        warnings.warn("empty BiC validation split; keeping identity correction")
        return BiasCorrection()
    ps = ParamSet()
    alpha = ps.add("alpha", np.array(1.0))
    beta = ps.add("beta", np.array(0.0))
    for _ in range(steps):
        ps.zero_grad()
        val_loss_fn(alpha, beta).backward()
        adamw_step(ps, lr=lr, weight_decay=0.0)
    return BiasCorrection(float(alpha.data), float(beta.data))

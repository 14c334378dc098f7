"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .optim import ParamSet


@dataclass
class GradCheckReport:
    per_param: dict[str, float] = field(default_factory=dict)

    @property
    def max_rel_error(self) -> float:
        return max(self.per_param.values()) if self.per_param else 0.0

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol

    def format(self) -> str:
        lines = [f"  {name}: max rel err {err:.3e}" for name, err in sorted(self.per_param.items())]
        lines.append(f"overall max rel err {self.max_rel_error:.3e}")
        return "\n".join(lines)


def grad_check(
    loss_fn,
    params: ParamSet,
    step: float = 1e-5,
    tol: float = 1e-4,
    max_entries_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of loss_fn against central differences.

    loss_fn rebuilds its graph from the live ParamSet tensors on every call
    and must be deterministic; each parameter entry is perturbed in place by
    +-step. Relative error per entry is |a - n| / max(|a|, |n|, 1).
    With max_entries_per_param set, a subsample of entries is checked per
    parameter (the analytic side is always full).
    """
    if not (1e-6 <= step <= 1e-3):
        raise ValueError("step must lie in [1e-6, 1e-3]")
    if float(loss_fn().item()) != float(loss_fn().item()):
        raise ValueError("loss_fn is non-deterministic under fixed inputs")

    params.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in params.items()
    }

    if rng is None:
        rng = np.random.default_rng(0)
    report = GradCheckReport()
    for name, t in params.items():
        flat = t.data.reshape(-1)
        n = flat.shape[0]
        if max_entries_per_param is not None and n > max_entries_per_param:
            idxs = rng.choice(n, size=max_entries_per_param, replace=False)
        else:
            idxs = np.arange(n)
        worst = 0.0
        aflat = analytic[name].reshape(-1)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + step
            lp = float(loss_fn().item())
            flat[i] = orig - step
            lm = float(loss_fn().item())
            flat[i] = orig
            numeric = (lp - lm) / (2.0 * step)
            a = float(aflat[i])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
            worst = max(worst, rel)
        report.per_param[name] = worst
    params.zero_grad()
    return report

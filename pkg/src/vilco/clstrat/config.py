"""Strategy configuration shared by every continual-learning method."""

from __future__ import annotations

from dataclasses import dataclass, replace

METHODS = ("naive", "joint", "ewc", "mas", "replay", "bic", "vilco")


@dataclass(frozen=True)
class StrategyConfig:
    method: str = "naive"
    lambda_ewc: float = 10.0
    lambda_mas: float = 1.0
    lambda_ssl: float = 0.1
    lambda_prompt: float = 0.1
    replay_capacity: int = 1010
    epochs: int = 15
    batch_size: int = 2
    lr: float = 0.0001
    weight_decay: float = 0.05
    seed: int = 0
    mix_ratio: float = 0.5
    importance_mode: str = "max"  # how importance maps accumulate across tasks
    importance_samples: int = 32
    bic_val_fraction: float = 0.1
    bic_fit_steps: int = 100
    prompt_mode: str = "replace"  # replace | blend | off
    em_replay: bool = True  # vilco only: rehearse short-term memory items in task batches
    neg_count: int = 8
    temperature: float = 1.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; pick one of {METHODS}")
        for name in ("lambda_ewc", "lambda_mas", "lambda_ssl", "lambda_prompt"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.replay_capacity < 0:
            raise ValueError("replay_capacity must be >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be >= 0")
        if not 0.0 <= self.mix_ratio <= 1.0:
            raise ValueError("mix_ratio must lie in [0, 1]")
        if self.importance_mode not in ("max", "sum"):
            raise ValueError("importance_mode must be 'max' or 'sum'")
        if not 0.0 <= self.bic_val_fraction < 1.0:
            raise ValueError("bic_val_fraction must lie in [0, 1)")
        if self.prompt_mode not in ("replace", "blend", "off"):
            raise ValueError("prompt_mode must be replace, blend, or off")
        if self.neg_count < 0 or self.importance_samples < 1 or self.bic_fit_steps < 1:
            raise ValueError("neg_count >= 0, importance_samples >= 1, bic_fit_steps >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


def config_for_kind(task_kind: str, method: str = "naive", **overrides) -> StrategyConfig:
    """Benchmark defaults per task kind: MQ 15 epochs batch 2, NLQ 13 epochs batch 8."""
    if task_kind == "MQ":
        base = StrategyConfig(method=method, epochs=15, batch_size=2)
    elif task_kind == "NLQ":
        base = StrategyConfig(method=method, epochs=13, batch_size=8)
    else:
        raise ValueError(f"unknown task kind {task_kind!r}")
    return replace(base, **overrides) if overrides else base

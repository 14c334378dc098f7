"""Experiment configuration: JSON file in, validated config out.

The JSON schema mirrors ExperimentConfig. Exactly one data source is set:
"manifest" (path to a manifest JSON next to its feature files) or
"synthetic" (SynthConfig fields). "seed" and "order_seed" must be spelled
out; an experiment with implicit seeds is not reproducible from its file.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields

from ..clstrat import METHODS, StrategyConfig, config_for_kind
from ..crossmodal import FusionConfig
from ..datastream.synth import SynthConfig


class ConfigError(Exception):
    """Invalid experiment configuration; the CLI maps this to exit code 2."""


_STRATEGY_FIELDS = {f.name for f in fields(StrategyConfig)}
_FUSION_FIELDS = {f.name for f in fields(FusionConfig)}
_SYNTH_FIELDS = {f.name for f in fields(SynthConfig)}


@dataclass
class ExperimentConfig:
    task_kind: str
    method: str
    seed: int
    order_seed: int
    out_dir: str
    manifest_path: str | None = None
    synth: SynthConfig | None = None
    num_tasks: int = 5  # manifest-MQ split count; synthetic streams size themselves
    fusion: dict = field(default_factory=dict)  # FusionConfig overrides, dims come from data
    strategy: dict = field(default_factory=dict)  # StrategyConfig overrides
    eval_ks: tuple[int, ...] = (1, 5)
    eval_ious: tuple[float, ...] = (0.3, 0.5)

    def validate(self) -> None:
        if self.task_kind not in ("MQ", "NLQ"):
            raise ConfigError(f"task_kind must be MQ or NLQ, got {self.task_kind!r}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; pick one of {METHODS}")
        if (self.manifest_path is None) == (self.synth is None):
            raise ConfigError("exactly one data source: manifest_path or synth")
        if self.manifest_path is not None and not os.path.isfile(self.manifest_path):
            raise ConfigError(f"manifest_path does not exist: {self.manifest_path}")
        if not self.out_dir:
            raise ConfigError("out_dir must be set")
        if self.num_tasks < 1:
            raise ConfigError("num_tasks must be >= 1")
        if not self.eval_ks or any(k < 1 for k in self.eval_ks):
            raise ConfigError("eval_ks must be non-empty positive integers")
        if not self.eval_ious or any(not (0.0 < m <= 1.0) for m in self.eval_ious):
            raise ConfigError("eval_ious must lie in (0, 1]")
        bad = set(self.strategy) - _STRATEGY_FIELDS
        if bad or {"method", "seed"} & set(self.strategy):
            raise ConfigError(f"bad strategy override keys: {sorted(bad | ({'method', 'seed'} & set(self.strategy)))}")
        bad = set(self.fusion) - _FUSION_FIELDS
        if bad:
            raise ConfigError(f"unknown fusion override keys: {sorted(bad)}")
        if self.synth is not None:
            if self.synth.task_kind != self.task_kind:
                raise ConfigError(
                    f"synth.task_kind {self.synth.task_kind!r} != task_kind {self.task_kind!r}"
                )
            try:
                self.synth.validate()
            except ValueError as err:
                raise ConfigError(f"synth: {err}") from err
        try:
            self.build_strategy()
        except ValueError as err:
            raise ConfigError(f"strategy: {err}") from err

    def build_strategy(self) -> StrategyConfig:
        return config_for_kind(self.task_kind, self.method, seed=self.seed, **self.strategy)

    def build_eval_kwargs(self) -> dict:
        return {"ks": tuple(self.eval_ks), "ious": tuple(self.eval_ious)}

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["eval_ks"] = list(self.eval_ks)
        d["eval_ious"] = list(self.eval_ious)
        if self.synth is not None:
            d["synth"] = asdict(self.synth)
        return d

    @classmethod
    def from_json_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        missing = {"task_kind", "method", "seed", "order_seed", "out_dir"} - set(raw)
        if missing:
            raise ConfigError(f"missing required config keys: {sorted(missing)}")
        data = dict(raw)
        if data.get("synth") is not None:
            sdict = data["synth"]
            bad = set(sdict) - _SYNTH_FIELDS
            if bad:
                raise ConfigError(f"unknown synth keys: {sorted(bad)}")
            data["synth"] = SynthConfig(**sdict)
        if "eval_ks" in data:
            data["eval_ks"] = tuple(data["eval_ks"])
        if "eval_ious" in data:
            data["eval_ious"] = tuple(data["eval_ious"])
        cfg = cls(**data)
        cfg.validate()
        return cfg


def load_experiment_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    return ExperimentConfig.from_json_dict(raw)

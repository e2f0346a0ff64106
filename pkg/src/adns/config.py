"""Experiment configuration: a documented JSON key-value tree, parsed and
validated with defaults applied.

Top-level keys: ``stream``, ``trainer``, ``seeds``, ``output``,
``checkpoint``, ``verify``. Unknown keys anywhere are rejected with the
offending key path in the message.
"""

import json
from dataclasses import dataclass, field

from .bounds import TestbedSpec
from .data import StreamSpec
from .errors import ConfigError, ValidationError
from .nullspace import RankPolicy
from .trainer import TrainerConfig


@dataclass(frozen=True)
class OutputSpec:
    path: str = "results.csv"
    format: str = "csv"

    def __post_init__(self):
        if not self.path:
            raise ConfigError("output.path must be a non-empty string")
        if self.format not in ("csv", "json"):
            raise ConfigError("output.format must be 'csv' or 'json'")


@dataclass(frozen=True)
class ExperimentConfig:
    stream: StreamSpec
    trainer: TrainerConfig
    seeds: tuple = (0,)
    output: OutputSpec = field(default_factory=OutputSpec)
    checkpoint: str | None = None
    verify: TestbedSpec = field(default_factory=TestbedSpec)

    def __post_init__(self):
        if len(self.seeds) < 1:
            raise ConfigError("seeds must list at least one seed")


_STREAM_KEYS = {
    "generator": str, "tasks": int, "classes_per_task": int, "dim": int,
    "samples_per_class": int, "noise_sigma": (int, float), "seed": int,
    "csv_path": (str, type(None)), "csv_label_column": (str, int, type(None)),
    "csv_has_header": bool, "csv_normalize": bool,
}
_TRAINER_KEYS = {
    "method": str, "learning_rate": (int, float),
    "first_task_learning_rate": (int, float, type(None)),
    "epochs": int, "batch_size": int, "beta": (int, float), "tau": (int, float),
    "alpha_max": (int, float), "alpha_min": (int, float),
    "rank_strategy": str, "k0": (int, float), "optimizer": str, "seed": int,
    "hidden": list, "activation": str, "use_bias": bool, "record_epochs": int,
    "lr_decay_epochs": list, "lr_decay_factor": (int, float),
}
_OUTPUT_KEYS = {"path": str, "format": str}
_VERIFY_KEYS = {
    "samples": int, "layer_dims": list, "layer_outputs": list,
    "rank_fraction": (int, float), "deficiency_noise": (int, float),
    "alpha": (int, float), "steps": int, "eta": (int, float, type(None)),
    "eta_scale": (int, float), "old_tasks": int, "pretrain_steps": int,
    "projector": str,
}
_TOP_KEYS = ("stream", "trainer", "seeds", "output", "checkpoint", "verify")


def _check_section(section, data, allowed):
    if not isinstance(data, dict):
        raise ConfigError(f"{section} must be an object")
    out = {}
    for key, value in data.items():
        if key not in allowed:
            raise ConfigError(f"unknown key {section}.{key}")
        expected = allowed[key]
        if not isinstance(value, expected) or (
                isinstance(value, bool) and bool not in _as_tuple(expected)):
            raise ConfigError(
                f"{section}.{key} has wrong type {type(value).__name__}")
        out[key] = value
    return out


def _as_tuple(types):
    return types if isinstance(types, tuple) else (types,)


def parse_config(source):
    """Parse a config from a file path or an inline JSON string."""
    text = source
    if not source.lstrip().startswith("{"):
        try:
            with open(source, encoding="utf-8") as handle:
                text = handle.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {source}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    return build_config(data)


def build_config(data):
    """Validate a parsed key-value tree and apply defaults."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    for key in data:
        if key not in _TOP_KEYS:
            raise ConfigError(f"unknown key {key}")

    stream_kwargs = _check_section("stream", data.get("stream", {}), _STREAM_KEYS)
    trainer_kwargs = _check_section("trainer", data.get("trainer", {}), _TRAINER_KEYS)
    output_kwargs = _check_section("output", data.get("output", {}), _OUTPUT_KEYS)
    verify_kwargs = _check_section("verify", data.get("verify", {}), _VERIFY_KEYS)

    seeds = data.get("seeds", [0])
    if not isinstance(seeds, list) or not all(isinstance(s, int) and not isinstance(s, bool)
                                              for s in seeds):
        raise ConfigError("seeds must be a list of integers")

    checkpoint = data.get("checkpoint")
    if checkpoint is not None and (not isinstance(checkpoint, str) or not checkpoint):
        raise ConfigError("checkpoint must be a non-empty string or null")

    strategy = trainer_kwargs.pop("rank_strategy", "Avg")
    k0 = trainer_kwargs.pop("k0", 0.9)
    try:
        policy = RankPolicy(strategy=strategy, k0=float(k0))
    except ValidationError as exc:
        raise ConfigError(f"trainer.rank_strategy/k0: {exc}") from exc
    if "hidden" in trainer_kwargs:
        trainer_kwargs["hidden"] = tuple(trainer_kwargs["hidden"])
    if "lr_decay_epochs" in trainer_kwargs:
        trainer_kwargs["lr_decay_epochs"] = tuple(trainer_kwargs["lr_decay_epochs"])

    try:
        stream = StreamSpec(**stream_kwargs)
    except ValidationError as exc:
        raise ConfigError(f"stream: {exc}") from exc
    try:
        trainer = TrainerConfig(rank_policy=policy, **trainer_kwargs)
    except ValidationError as exc:
        raise ConfigError(f"trainer: {exc}") from exc
    if trainer.alpha_min > trainer.alpha_max:
        raise ConfigError("trainer.alpha_min must be <= trainer.alpha_max")
    if trainer.alpha_min < 1.0:
        raise ConfigError("trainer.alpha_min must be >= 1")
    for key in ("layer_dims", "layer_outputs"):
        if key in verify_kwargs:
            verify_kwargs[key] = tuple(verify_kwargs[key])
    try:
        verify = TestbedSpec(**verify_kwargs)
    except ValidationError as exc:
        raise ConfigError(f"verify: {exc}") from exc

    return ExperimentConfig(
        stream=stream,
        trainer=trainer,
        seeds=tuple(seeds),
        output=OutputSpec(**output_kwargs),
        checkpoint=checkpoint,
        verify=verify,
    )

"""Flat key=value config files with dotted keys.

One key per line, '#' comments, no sections, no quoting: diff-friendly
and unambiguous. Command-line flags override file values; file values
override defaults.
"""

from __future__ import annotations

import os

from .masking import CurriculumSchedule, MaskConfig
from .model import ModelConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def load_config_file(path: str | os.PathLike) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def _get(kv: dict[str, str], key: str, cast, default):
    if key not in kv:
        return default
    raw = kv.pop(key)
    if cast is bool:
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"key {key!r}: expected a boolean, got {raw!r}")
    try:
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: {exc}") from exc


def mask_config_from(kv: dict[str, str], defaults: MaskConfig | None = None) -> MaskConfig:
    d = defaults or MaskConfig()
    schedule = CurriculumSchedule(
        r_min=_get(kv, "curriculum.r_min", float, d.schedule.r_min),
        r_max=_get(kv, "curriculum.r_max", float, d.schedule.r_max),
        total_steps=_get(kv, "curriculum.total_steps", int, d.schedule.total_steps),
    )
    return MaskConfig(
        epsilon=_get(kv, "epsilon", float, d.epsilon),
        number_fraction=_get(kv, "number_fraction", float, d.number_fraction),
        span_prob=_get(kv, "span_prob", float, d.span_prob),
        span_len=_get(kv, "span_len", int, d.span_len),
        schedule=schedule,
        enable_number_first=_get(kv, "enable.number_first", bool, d.enable_number_first),
        enable_span=_get(kv, "enable.span", bool, d.enable_span),
        enable_curriculum=_get(kv, "enable.curriculum", bool, d.enable_curriculum),
        enable_weighted_loss=_get(kv, "enable.weighted_loss", bool, d.enable_weighted_loss),
        base=_get(kv, "base", str, d.base),
    )


def model_config_from(kv: dict[str, str], vocab_size: int) -> ModelConfig:
    d = ModelConfig(vocab_size=vocab_size)
    return ModelConfig(
        vocab_size=vocab_size,
        layers=_get(kv, "model.layers", int, d.layers),
        heads=_get(kv, "model.heads", int, d.heads),
        dim=_get(kv, "model.dim", int, d.dim),
        ff_dim=_get(kv, "model.ff_dim", int, d.ff_dim),
        max_len=_get(kv, "model.max_len", int, d.max_len),
    )


def train_config_from(
    kv: dict[str, str],
    model: ModelConfig,
    mask: MaskConfig,
    mode: str,
    seed: int,
) -> TrainConfig:
    d = TrainConfig(model=model, mode=mode, seed=seed, mask=mask)
    return TrainConfig(
        model=model,
        mask=mask,
        mode=mode,
        seed=seed,
        learning_rate=_get(kv, "train.learning_rate", float, d.learning_rate),
        batch_size=_get(kv, "train.batch_size", int, d.batch_size),
        steps=_get(kv, "train.steps", int, d.steps),
        w_num=_get(kv, "train.w_num", float, d.w_num),
        workers=_get(kv, "train.workers", int, d.workers),
        checkpoint_every=_get(kv, "train.checkpoint_every", int, d.checkpoint_every),
        sft_sum_loss=_get(kv, "train.sft_sum_loss", bool, d.sft_sum_loss),
    )


def reject_unknown(kv: dict[str, str]) -> None:
    if kv:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(kv))}")


def train_config_to_flat(config: TrainConfig) -> dict[str, str]:
    """Flat key=value image of a train config, invertible by the parsers
    above; used for manifest snapshots."""
    mask = config.mask
    flat = {
        "epsilon": repr(mask.epsilon),
        "number_fraction": repr(mask.number_fraction),
        "span_prob": repr(mask.span_prob),
        "span_len": str(mask.span_len),
        "base": mask.base,
        "curriculum.r_min": repr(mask.schedule.r_min),
        "curriculum.r_max": repr(mask.schedule.r_max),
        "curriculum.total_steps": str(mask.schedule.total_steps),
        "enable.number_first": str(mask.enable_number_first).lower(),
        "enable.span": str(mask.enable_span).lower(),
        "enable.curriculum": str(mask.enable_curriculum).lower(),
        "enable.weighted_loss": str(mask.enable_weighted_loss).lower(),
        "model.layers": str(config.model.layers),
        "model.heads": str(config.model.heads),
        "model.dim": str(config.model.dim),
        "model.ff_dim": str(config.model.ff_dim),
        "model.max_len": str(config.model.max_len),
        "train.learning_rate": repr(config.learning_rate),
        "train.batch_size": str(config.batch_size),
        "train.steps": str(config.steps),
        "train.w_num": repr(config.w_num),
        "train.workers": str(config.workers),
        "train.checkpoint_every": str(config.checkpoint_every),
        "train.sft_sum_loss": str(config.sft_sum_loss).lower(),
    }
    return flat

"""Experiment config files: one ``key = value`` per line, ``#`` starts a comment."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from .botnet import BotnetConfig
from .channel import ChannelModel
from .errors import FormatError, ParameterError
from .watermark import WatermarkParams

# key -> (type, section, check, requirement shown on failure)
_INT_GE1 = (lambda v: v >= 1, "an integer >= 1")
_INT_GE0 = (lambda v: v >= 0, "an integer >= 0")
_POS = (lambda v: v > 0 and math.isfinite(v), "a positive number")
_NONNEG = (lambda v: v >= 0 and math.isfinite(v), "a number >= 0")
_PROB = (lambda v: 0 <= v <= 1, "a number in [0, 1]")

FIELDS = {
    "T": (float, "params", *_POS),
    "l": (int, "params", *_INT_GE1),
    "eta": (int, "params", *_INT_GE1),
    "psi": (int, "params", *_INT_GE1),
    "R": (int, "params", *_INT_GE1),
    "rate_cap": (float, "params", *_POS),
    "theta": (int, "theta", *_INT_GE1),
    "bots": (int, "botnet", *_INT_GE0),
    "duration": (float, "botnet", *_POS),
    "command_rate": (float, "botnet", *_NONNEG),
    "response_delay_lo": (float, "botnet", *_NONNEG),
    "response_delay_hi": (float, "botnet", *_NONNEG),
    "response_prob": (float, "botnet", *_PROB),
    "per_bot_rate_cap": (float, "botnet", *_POS),
    "base_delay": (float, "channel", *_NONNEG),
    "jitter_sigma": (float, "channel", *_NONNEG),
    "drop_prob": (float, "channel", *_PROB),
    "stages": (int, "channel", *_INT_GE1),
    "trials": (int, "run", *_INT_GE1),
    "master_seed": (int, "run", *_INT_GE0),
}


@dataclass(frozen=True)
class ExperimentConfig:
    params: WatermarkParams = field(default_factory=WatermarkParams)
    botnet: BotnetConfig = field(default_factory=BotnetConfig)
    channel: ChannelModel = field(default_factory=ChannelModel)
    theta: int = 32
    trials: int = 100
    master_seed: int = 0


def _convert(kind, raw: str):
    if kind is int:
        return int(raw)
    value = float(raw)
    if not math.isfinite(value):
        raise ValueError(raw)
    return value


def parse_config_text(text: str, path=None) -> ExperimentConfig:
    values: dict[str, object] = {}
    where: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        name, sep, value = line.partition("=")
        name, value = name.strip(), value.strip()
        if not sep or not name:
            raise FormatError(f"expected 'key = value', got {raw.strip()!r}", path, lineno)
        if name not in FIELDS:
            raise FormatError(f"unknown key {name!r}", path, lineno)
        if name in values:
            raise FormatError(f"duplicate key {name!r}", path, lineno)
        kind, _, check, need = FIELDS[name]
        try:
            converted = _convert(kind, value)
        except ValueError:
            raise FormatError(f"{name} must be {need}, got {value!r}", path, lineno) from None
        if not check(converted):
            raise FormatError(f"{name} must be {need}, got {value!r}", path, lineno)
        values[name] = converted
        where[name] = lineno

    def pick(section):
        return {k: v for k, v in values.items() if FIELDS[k][1] == section}

    def fail(exc, keys):
        lines = [where[k] for k in keys if k in where]
        return FormatError(str(exc), path, min(lines) if lines else None)

    param_keys = ("T", "l", "eta", "psi", "R", "rate_cap")
    try:
        params = WatermarkParams(**pick("params"))
        params.check_feasible()
    except ParameterError as exc:
        raise fail(exc, param_keys) from None

    botnet_values = pick("botnet")
    botnet_values.setdefault("duration", params.span + params.T)
    try:
        botnet = BotnetConfig(interval=params.T, **botnet_values)
    except ParameterError as exc:
        raise fail(exc, ("response_delay_lo", "response_delay_hi")) from None

    channel = ChannelModel(**pick("channel"))

    theta = values.get("theta", max(1, params.l // 2))
    if not 1 <= theta <= params.l:
        raise fail(ParameterError(f"theta must be in [1, l={params.l}], got {theta}"), ("theta",))
    run = pick("run")
    return ExperimentConfig(params, botnet, channel, theta, **run)


def parse_config(path) -> ExperimentConfig:
    """Read and validate an experiment config, applying defaults.

    Omitted keys take their defaults: eta = psi = 1, rate_cap = 0.5,
    theta = l // 2 and a background duration covering the watermark span
    plus one interval.
    """
    path = Path(path)
    return parse_config_text(path.read_text(), path)

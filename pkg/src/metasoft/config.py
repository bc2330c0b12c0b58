"""``key = value`` config files mapping onto TrainConfig and NoiseSpec.

Lists use commas: ``hidden_dims = 256,128`` and
``lr_schedule = 0:0.001,10:0.0001,20:1e-05`` (epoch:rate pairs).
Lines starting with ``#`` are comments. Unknown keys are rejected.
"""

import logging
from dataclasses import fields
from pathlib import Path

from .dataio import NoiseSpec
from .errors import InvalidInputError, ParseError
from .trainer import TrainConfig

log = logging.getLogger(__name__)

TRAIN_KEYS = [f.name for f in fields(TrainConfig)]
NOISE_KEYS = {"noise_kind": "kind", "noise_ratio": "ratio", "noise_seed": "seed"}


def _parse_value(key, text):
    if key == "lr_schedule":
        pairs = []
        for item in text.split(","):
            epoch, sep, rate = item.partition(":")
            if not sep:
                raise ValueError(f"expected epoch:rate, got {item.strip()!r}")
            pairs.append((int(epoch), float(rate)))
        return tuple(pairs)
    if key == "hidden_dims":
        return tuple(int(v) for v in text.split(",") if v.strip())
    if key in ("mode", "noise_kind"):
        return text
    if key in ("epochs", "warmup_epochs", "batch_size", "meta_batch_size", "seed", "noise_seed"):
        return int(text)
    return float(text)


def _format_value(key, value):
    if key == "lr_schedule":
        return ",".join(f"{e}:{r!r}" for e, r in value)
    if key == "hidden_dims":
        return ",".join(str(h) for h in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text, path="<config>"):
    """Return (TrainConfig, NoiseSpec or None). Missing train keys fall back to defaults."""
    values, noise = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ParseError(path, lineno, "expected 'key = value'")
        if key not in TRAIN_KEYS and key not in NOISE_KEYS:
            raise ParseError(path, lineno, f"unknown key {key!r}")
        if key in values or key in noise:
            raise ParseError(path, lineno, f"duplicate key {key!r}")
        try:
            parsed = _parse_value(key, value)
        except ValueError as exc:
            raise ParseError(path, lineno, f"bad value for {key}: {exc}") from None
        if key in NOISE_KEYS:
            noise[NOISE_KEYS[key]] = parsed
        else:
            values[key] = parsed
    defaults = TrainConfig()
    for key in TRAIN_KEYS:
        if key not in values:
            log.info("config key %s not set; using default %s", key, _format_value(key, getattr(defaults, key)))
    try:
        cfg = TrainConfig(**values)
        spec = NoiseSpec(**noise) if noise else None
    except InvalidInputError as exc:
        raise ParseError(path, 0, str(exc)) from None
    return cfg, spec


def load_config(path):
    return parse_config(Path(path).read_text(encoding="utf-8"), path)


def format_config(cfg, noise=None):
    lines = [f"{key} = {_format_value(key, getattr(cfg, key))}" for key in TRAIN_KEYS]
    if noise is not None:
        for key, attr in NOISE_KEYS.items():
            lines.append(f"{key} = {_format_value(key, getattr(noise, attr))}")
    return "\n".join(lines) + "\n"

"""Flat ``key = value`` run configuration with ``[section]`` headers.

Sections: ``[sensor]``, ``[backbone]``, ``[adapt]``, ``[pretrain]``, ``[run]``.
Every key has a default; unknown sections or keys are errors. Lists are
comma separated.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ..backbone import BackboneConfig
from ..cat import AdaptConfig
from ..errors import ValidationError
from ..resample import SensorDescriptor

RUN_DEFAULTS = {
    "seed": 0,
    "workers": 1,
    "weights": "",
    "scene_size": 256,
    "scene_count": 1,
    "crop_to_multiple": False,
    "preview_bands": (0, 1, 2),
}
PRETRAIN_DEFAULTS = {"epochs": 200, "lr": 5e-4, "seed": 0}
BACKBONE_KEYS = ("latent", "blocks", "kernel")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_like(text: str, default, key: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [t for t in (s.strip() for s in text.split(",")) if t]
            kind = type(default[0]) if default else float
            return tuple(kind(t) for t in items)
    except ValueError as exc:
        raise ValidationError(f"bad value for {key}: {text!r}") from exc
    return text


@dataclass
class RunConfig:
    sensor: SensorDescriptor = field(default_factory=SensorDescriptor)
    backbone: dict = field(default_factory=lambda: {"latent": 32, "blocks": 2, "kernel": 3})
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    pretrain: dict = field(default_factory=lambda: dict(PRETRAIN_DEFAULTS))
    run: dict = field(default_factory=lambda: dict(RUN_DEFAULTS))

    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig(bands=self.sensor.bands, ratio=self.sensor.ratio, **self.backbone)

    # ------------------------------------------------------------- parsing

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",),
                                           inline_comment_prefixes=("#",), empty_lines_in_values=False)
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ValidationError(f"config parse error: {exc}") from exc
        cfg = cls()
        known = {"sensor", "backbone", "adapt", "pretrain", "run"}
        for section in parser.sections():
            if section not in known:
                raise ValidationError(f"unknown config section [{section}]")
        if parser.has_section("sensor"):
            cfg.sensor = _parse_dataclass(SensorDescriptor, cfg.sensor, parser["sensor"], "sensor")
        if parser.has_section("adapt"):
            cfg.adapt = _parse_dataclass(AdaptConfig, cfg.adapt, parser["adapt"], "adapt")
        for name, target in (("backbone", cfg.backbone), ("pretrain", cfg.pretrain), ("run", cfg.run)):
            if parser.has_section(name):
                for key, text in parser[name].items():
                    if key not in target:
                        raise ValidationError(f"unknown key {name}.{key}")
                    target[key] = _parse_like(text, target[key], f"{name}.{key}")
        cfg.backbone_config()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def load_or_default(cls, path) -> "RunConfig":
        return cls.load(path) if path else cls()

    def sections(self) -> dict[str, dict]:
        sensor = {f.name: getattr(self.sensor, f.name) for f in fields(SensorDescriptor)}
        adapt = {f.name: getattr(self.adapt, f.name) for f in fields(AdaptConfig)}
        return {"sensor": sensor, "backbone": dict(self.backbone), "adapt": adapt,
                "pretrain": dict(self.pretrain), "run": dict(self.run)}

    def to_text(self) -> str:
        lines = []
        for name, values in self.sections().items():
            lines.append(f"[{name}]")
            lines.extend(f"{k} = {_fmt(v)}" for k, v in values.items())
            lines.append("")
        return "\n".join(lines)

    def with_adapt(self, **changes) -> "RunConfig":
        return replace(self, adapt=replace(self.adapt, **changes))


def _parse_dataclass(cls, current, section, name):
    changes = {}
    valid = {f.name for f in fields(cls)}
    for key, text in section.items():
        if key not in valid:
            raise ValidationError(f"unknown key {name}.{key}")
        default = getattr(current, key)
        if key == "eta":
            default = (1.0, 1.0, 1.0)
        if key == "eta" and text.strip().lower() in ("", "none", "preset"):
            changes[key] = None
            continue
        changes[key] = _parse_like(text, default, f"{name}.{key}")
    if "preset" in changes and "eta" not in changes:
        changes["eta"] = None
    if cls is SensorDescriptor and "pan_weights" in changes and "mtf_gain" not in changes:
        if len(set(current.mtf_gain)) == 1:
            changes["mtf_gain"] = (current.mtf_gain[0],)
    return replace(current, **changes)

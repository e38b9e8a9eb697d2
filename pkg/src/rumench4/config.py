"""Run configuration: one flat ``section.key = value`` file over every
stage's settings.

Sections are ``qc``, ``filter``, ``baseline``, ``event``, ``xval`` and
``sim``; keys are the field names of the matching config class.  Blank
lines and ``#`` comments are ignored.  Tuples are comma-separated and
``none`` clears an optional value.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .baseline import BaselineConfig
from .errors import ConfigError
from .events import EventConfig
from .filters import FilterConfig
from .qc import QCConfig
from .sim import SimConfig
from .xval import DEFAULT_SCALES_MIN


@dataclass(frozen=True)
class XvalConfig:
    scales_min: tuple[float, ...] = tuple(float(s) for s in DEFAULT_SCALES_MIN)
    step_min: float = 1.0
    min_valid_frac: float = 0.8
    min_bin_frac: float = 0.5
    alpha: float = 0.05

    def __post_init__(self):
        if not self.scales_min or any(s <= 0 for s in self.scales_min):
            raise ConfigError("scales_min must be a non-empty list of positive minutes")
        if self.step_min <= 0:
            raise ConfigError("step_min must be positive")
        for name in ("min_valid_frac", "min_bin_frac", "alpha"):
            if not 0 < getattr(self, name) <= 1:
                raise ConfigError(f"{name} must lie in (0, 1]")

    @property
    def min_segment_s(self) -> float:
        return 60.0 * min(self.scales_min)


SECTIONS = {
    "qc": ("qc", QCConfig),
    "filter": ("filt", FilterConfig),
    "baseline": ("base", BaselineConfig),
    "event": ("event", EventConfig),
    "xval": ("xval", XvalConfig),
    "sim": ("sim", SimConfig),
}


@dataclass(frozen=True)
class RunConfig:
    qc: QCConfig = field(default_factory=QCConfig)
    filt: FilterConfig = field(default_factory=FilterConfig)
    base: BaselineConfig = field(default_factory=BaselineConfig)
    event: EventConfig = field(default_factory=EventConfig)
    xval: XvalConfig = field(default_factory=XvalConfig)
    sim: SimConfig = field(default_factory=SimConfig)

    def to_dict(self) -> dict:
        out = {}
        for section, (attr, _) in SECTIONS.items():
            for k, v in dataclasses.asdict(getattr(self, attr)).items():
                out[f"{section}.{k}"] = list(v) if isinstance(v, tuple) else v
        return out

    def with_overrides(self, **sections) -> "RunConfig":
        """``with_overrides(xval={"scales_min": (5, 10)})``"""
        changes = {}
        for section, values in sections.items():
            attr, cls = SECTIONS[section]
            try:
                changes[attr] = dataclasses.replace(getattr(self, attr), **values)
            except TypeError as exc:
                raise ConfigError(str(exc)) from None
        return dataclasses.replace(self, **changes)


def _coerce(key: str, raw: str, default):
    text = raw.strip()
    try:
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(float(p) for p in text.split(",") if p.strip())
        if default is None:
            return None if text.lower() == "none" else float(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw.strip()!r}") from None


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    overrides: dict[str, dict] = {}
    defaults = RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        section, _, name = key.partition(".")
        if section not in SECTIONS or not name:
            raise ConfigError(f"unknown config key: {key}")
        attr, cls = SECTIONS[section]
        fields = {f.name for f in dataclasses.fields(cls)}
        if name not in fields:
            raise ConfigError(f"unknown config key: {key}")
        overrides.setdefault(section, {})[name] = _coerce(key, value, getattr(getattr(defaults, attr), name))
    return defaults.with_overrides(**overrides)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, str(path))

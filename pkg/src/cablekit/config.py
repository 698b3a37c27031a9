"""Run configuration: one INI file, one ``key = value`` per line, grouped in sections.

Sections and keys mirror the dataclasses below; for example::

    [run]
    seed = 7
    output = runs/demo

    [loss]
    epsilon = 0.02
    lambda = 0.2

    [eval]
    threshold_cables = 32
    pooling = micro

Command-line flags override file values (``--set section.key=value`` reaches
any key).
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .losses import LossConfig
from .pipeline import PipelineConfig
from .sampler import SampleSpec
from .synth import SynthOptions
from .targets import D_MAX, FACTOR


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TargetOptions:
    d_max: int = D_MAX
    factor: int = FACTOR
    thickness: int = 5
    crop: bool = True


@dataclass(frozen=True)
class EvalOptions:
    threshold_cables: float = 32.0
    threshold_pylons: float = 32.0
    pooling: str = "micro"
    k: int = 5
    missing: str = "empty"

    def __post_init__(self):
        if self.pooling not in ("micro", "macro"):
            raise ConfigError(f"eval.pooling must be micro or macro, got {self.pooling!r}")
        if self.missing not in ("empty", "skip", "fail"):
            raise ConfigError(f"eval.missing must be empty, skip or fail, got {self.missing!r}")


@dataclass(frozen=True)
class SimOptions:
    predictor: str = "oracle"
    noise_sigma: float = 0.0
    dropout: float = 0.0
    flows: str = "builtin"


PATH_KEYS = (
    "annotations",
    "targets",
    "predictions",
    "folds",
    "frames",
    "report",
    "pred_cables",
    "pred_pylons",
    "gt_cables",
    "gt_pylons",
)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    jobs: int = 1
    output: str = "out"
    paths: dict = field(default_factory=dict)
    targets: TargetOptions = TargetOptions()
    loss: LossConfig = LossConfig()
    sampler: SampleSpec = SampleSpec()
    pipeline: PipelineConfig = PipelineConfig()
    sim: SimOptions = SimOptions()
    eval: EvalOptions = EvalOptions()
    synth: SynthOptions = SynthOptions()

    def path(self, key: str, required: bool = True):
        p = self.paths.get(key)
        if p is None and required:
            raise ConfigError(f"missing required path {key!r} (set paths.{key} or the matching flag)")
        return Path(p) if p is not None else None

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


SECTIONS = ("targets", "loss", "sampler", "pipeline", "sim", "eval", "synth")
# config-file spellings that differ from attribute names
ALIASES = {("loss", "lambda"): "lam"}


def _convert(raw: str, default, where: str):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(s.strip() for s in raw.split(",") if s.strip())
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None


def _apply(cfg: RunConfig, section: str, key: str, raw: str) -> RunConfig:
    where = f"{section}.{key}"
    if section == "run":
        if key not in ("seed", "jobs", "output"):
            raise ConfigError(f"unknown key {where}")
        return replace(cfg, **{key: _convert(raw, getattr(cfg, key), where)})
    if section == "paths":
        if key not in PATH_KEYS:
            raise ConfigError(f"unknown key {where}; known: {', '.join(PATH_KEYS)}")
        return replace(cfg, paths={**cfg.paths, key: raw.strip()})
    if section not in SECTIONS:
        raise ConfigError(f"unknown section [{section}]")
    sub = getattr(cfg, section)
    attr = ALIASES.get((section, key), key)
    if attr not in {f.name for f in fields(sub)}:
        raise ConfigError(f"unknown key {where}")
    try:
        new_sub = replace(sub, **{attr: _convert(raw, getattr(sub, attr), where)})
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(f"{where}: {e}") from None
    return replace(cfg, **{section: new_sub})


def load_config(path=None, overrides=()) -> RunConfig:
    """Build a RunConfig from an optional INI file plus ``section.key=value`` overrides."""
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        read = parser.read(path)
        if not read:
            raise FileNotFoundError(f"config file not found: {path}")
        for section in parser.sections():
            for key, raw in parser.items(section):
                cfg = _apply(cfg, section, key, raw)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        lhs, raw = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        cfg = _apply(cfg, section, key, raw)
    if cfg.jobs < 1:
        raise ConfigError("run.jobs must be >= 1")
    for name in ("threshold_cables", "threshold_pylons"):
        t = getattr(cfg.eval, name)
        if not 0 < t <= cfg.targets.d_max:
            raise ConfigError(f"eval.{name} must be in (0, {cfg.targets.d_max}], got {t}")
    return cfg

"""INI pipeline configuration: one section per module, defaults from the module dataclasses.

Values are parsed according to the type of the default: booleans, ints,
floats, strings, comma-separated tuples, and semicolon-separated tuples of
tuples (``bounds``, ``palette``).  ``none`` is accepted where the default is
None.  Unknown sections or keys are errors.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from ..core import InvalidInputError
from ..fit import FitConfig
from ..predictor import PredictorConfig
from ..refine import RefineConfig
from ..scenes import BENCHMARK_PATCH, CorruptionSpec, SceneSpec


class ConfigError(InvalidInputError):
    """Unknown key, unparsable value, or a value rejected by module validation."""


@dataclass(frozen=True)
class IOConfig:
    ply_precision: str = "float"  # "float" (3DGS viewers) or "double" (lossless)
    checkpoint: str = ""  # predictor checkpoint path without suffix; empty = untrained init

    def __post_init__(self):
        if self.ply_precision not in ("float", "double"):
            raise InvalidInputError("ply_precision must be 'float' or 'double'")


@dataclass(frozen=True)
class PipelineOptions:
    init: str = "truth"  # "truth" (ground-truth frames) or "random"
    init_count: int = 100  # Gaussians per frame for init = random
    init_seed: int = 0
    floaters: bool = True  # add floater candidates in front of the corrupted view before fitting
    corrupt: bool = True  # inject [corruption] into the multi-view source
    enhancer: str = "identity"  # "identity" or "unsharp"

    def __post_init__(self):
        if self.init not in ("truth", "random"):
            raise InvalidInputError("init must be 'truth' or 'random'")
        if self.enhancer not in ("identity", "unsharp"):
            raise InvalidInputError("enhancer must be 'identity' or 'unsharp'")
        if self.init_count < 1:
            raise InvalidInputError("init_count must be >= 1")


SECTIONS = {
    "scene": SceneSpec,
    "corruption": CorruptionSpec,
    "fit": FitConfig,
    "refine": RefineConfig,
    "predictor": PredictorConfig,
    "io": IOConfig,
    "pipeline": PipelineOptions,
}

# pipeline defaults that differ from the bare module defaults
OVERRIDES = {
    "scene": {"T": 5},
    "corruption": {"t_range": (1, 5), "patch": BENCHMARK_PATCH},
    "fit": {"steps": 300, "full_res": 64},
}


@dataclass(frozen=True)
class PipelineConfig:
    scene: SceneSpec = field(default_factory=lambda: SceneSpec(**OVERRIDES["scene"]))
    corruption: CorruptionSpec = field(default_factory=lambda: CorruptionSpec(**OVERRIDES["corruption"]))
    fit: FitConfig = field(default_factory=lambda: FitConfig(**OVERRIDES["fit"]))
    refine: RefineConfig = field(default_factory=RefineConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    io: IOConfig = field(default_factory=IOConfig)
    pipeline: PipelineOptions = field(default_factory=PipelineOptions)


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return "; ".join(_format(x) for x in v)
        return ", ".join(_format(x) for x in v)
    return str(v)


def _parse_scalar(text: str, like, key: str):
    t = text.strip()
    if isinstance(like, bool):
        low = t.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")
    try:
        if isinstance(like, int):
            return int(t)
        if isinstance(like, float) or like is None:
            return float(t)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {text!r}") from None
    return t


def _parse(text: str, default, key: str):
    if default is None:
        return None if text.strip().lower() == "none" else _parse_scalar(text, None, key)
    if isinstance(default, tuple):
        if default and isinstance(default[0], tuple):
            return tuple(_parse(part, default[0], key) for part in text.split(";"))
        parts = [p for p in (x.strip() for x in text.split(",")) if p]
        like = default[0] if default else ""
        return tuple(_parse_scalar(p, like, key) for p in parts)
    return _parse_scalar(text, default, key)


def _section_defaults(name: str) -> dict:
    obj = getattr(PipelineConfig(), name)
    return {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}


def parse_config(text: str = "", source: str = "<config>") -> PipelineConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__no_defaults__")
    cp.optionxform = str  # keys are case sensitive (e.g. T)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from None
    built = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{section}]; known: {', '.join(SECTIONS)}")
    for name, cls in SECTIONS.items():
        values = _section_defaults(name)
        if cp.has_section(name):
            for key, text_val in cp.items(name):
                if key not in values:
                    raise ConfigError(f"{source}: unknown key {key!r} in [{name}]; known: {', '.join(values)}")
                values[key] = _parse(text_val, values[key], f"[{name}] {key}")
        try:
            built[name] = cls(**values)
        except InvalidInputError as e:
            raise ConfigError(f"{source}: [{name}] {e}") from None
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{source}: [{name}] {e}") from None
    return PipelineConfig(**built)


def load_config(path=None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file {p} not found")
    return parse_config(p.read_text(), str(p))


def dump_config(cfg: PipelineConfig) -> str:
    out = []
    for name in SECTIONS:
        obj = getattr(cfg, name)
        out.append(f"[{name}]")
        out += [f"{f.name} = {_format(getattr(obj, f.name))}" for f in dataclasses.fields(obj)]
        out.append("")
    return "\n".join(out)


def config_help() -> str:
    """Every section, key and default, in config-file syntax."""
    return "configuration keys and defaults:\n\n" + dump_config(PipelineConfig())

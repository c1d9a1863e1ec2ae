"""Experiment configuration files (YAML).

One document drives every subcommand. Run settings sit at the top level,
so ``model: minicnn`` plus ``dataset: stripes`` is a complete config; the
remaining groups live in sections::

    model: minicnn
    dataset: stripes
    schedule: {warmup_epochs: 3, m_initial: 1, k: 4, growth: 1}
    cost: {alpha: 0.02, variant: Efficient}
    pipeline: {strategy: chimera, devices: 4, micro_batches: 4}

Every default lives in the dataclass it configures; ``config_reference.yaml``
lists them all. Unknown keys, wrong types and constraint violations raise
:class:`ConfigError` naming the key and its line.
"""
from __future__ import annotations

import os
import re
from dataclasses import dataclass, fields, replace
from fractions import Fraction
from pathlib import Path

import yaml

from .costmodel import CostParams
from .energy import EnergyParams
from .optim import LrSchedulerConfig, OptimizerConfig
from .pipesim import PipelineConfig
from .trainer import RunConfig, ScheduleConfig

CONFIG_FORMAT_VERSION = 1
OUTPUT_ROOT_ENV = "ADAGP_OUTPUT_ROOT"
REFERENCE_PATH = Path(__file__).with_name("config_reference.yaml")


class ConfigError(ValueError):
    def __init__(self, message, key=None, line=None):
        where = ""
        if key is not None:
            where = f"{key}"
            if line is not None:
                where += f" (line {line})"
            where += ": "
        super().__init__(where + message)
        self.key = key
        self.line = line


@dataclass(frozen=True)
class ExperimentConfig:
    run: RunConfig = RunConfig()
    cost: CostParams = CostParams()
    pipeline: PipelineConfig = PipelineConfig()
    energy: EnergyParams = EnergyParams()
    phase_fractions: tuple = (0.0, 0.5, 0.5)
    output_dir: str = "outputs"

    def __post_init__(self):
        f = self.phase_fractions
        if len(f) != 3 or any(x < 0 for x in f) or abs(sum(f) - 1) > 1e-9:
            raise ValueError("phase_fractions must be three non-negative numbers summing to 1")


_SECTIONS = {
    "schedule": ScheduleConfig,
    "optimizer": OptimizerConfig,
    "predictor_optimizer": OptimizerConfig,
    "lr_scheduler": LrSchedulerConfig,
    "cost": CostParams,
    "pipeline": PipelineConfig,
    "energy": EnergyParams,
}
_RUN_NESTED = ("schedule", "optimizer", "predictor_optimizer", "lr_scheduler")
_RUN_SCALARS = tuple(f.name for f in fields(RunConfig) if f.name not in _RUN_NESTED)
_TOP_SCALARS = ("format_version", "output_dir", "phase_fractions")
# fields whose default is None or that take a number where the default is an int
_OPTIONAL_INT = {("energy", "buffer_capacity")}
_OPTIONAL_NUMBER = {("pipeline", "predictor_alpha")}
_NUMBER = {("cost", "alpha"), ("cost", "bw_ratio"), ("cost", "load_store_cost"), ("pipeline", "bw_ratio")}


def _line_map(text):
    """(section, key) -> 1-based line, from the YAML node tree."""
    lines = {}
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {getattr(err, 'problem', err)}",
                          line=None if mark is None else mark.line + 1) from None
    if root is None:
        return lines
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError("the config document must be a mapping", line=root.start_mark.line + 1)
    for k, v in root.value:
        lines[(None, k.value)] = k.start_mark.line + 1
        if isinstance(v, yaml.MappingNode):
            for k2, _ in v.value:
                lines[(k.value, k2.value)] = k2.start_mark.line + 1
    return lines


def _coerce(section, key, value, default, line):
    name = key if section is None else f"{section}.{key}"

    def bad(kind):
        return ConfigError(f"expected {kind}, got {value!r}", name, line)

    if (section, key) in _OPTIONAL_INT:
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad("an integer or null")
        return value
    if (section, key) in _OPTIONAL_NUMBER:
        if value is None:
            return None
        return _number(value, bad)
    if (section, key) in _NUMBER:
        return _number(value, bad)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise bad("true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad("an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad("a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise bad("a string")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list) or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value):
            raise bad("a list of numbers")
        return tuple(value)
    raise bad(f"a value like {default!r}")


def _number(value, bad):
    if isinstance(value, bool):
        raise bad("a number")
    if isinstance(value, (int, float)):
        return value
    if isinstance(value, str):
        try:
            return Fraction(value)
        except (ValueError, ZeroDivisionError):
            pass
    raise bad("a number or a fraction such as '1/50'")


def _build_section(cls, section, mapping, lines, base):
    if not isinstance(mapping, dict):
        raise ConfigError("expected a mapping", section, lines.get((None, section)))
    allowed = {f.name: getattr(base, f.name) for f in fields(cls) if f.init}
    values = {}
    for key, value in mapping.items():
        line = lines.get((section, key))
        if key not in allowed:
            raise ConfigError(f"unknown key; expected one of {sorted(allowed)}", f"{section}.{key}", line)
        values[key] = _coerce(section, key, value, allowed[key], line)
    try:
        return replace(base, **values)
    except (ValueError, TypeError) as err:
        msg = str(err)
        key = next((k for k in values if re.search(rf"\b{k}\b", msg)), None)
        if key is None:
            raise ConfigError(msg, section, lines.get((None, section))) from None
        raise ConfigError(msg, f"{section}.{key}", lines.get((section, key))) from None


def parse_config(source) -> ExperimentConfig:
    """Parse a path or YAML text into a fully defaulted, validated config."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and source.endswith((".yaml", ".yml"))):
        try:
            text = Path(source).read_text()
        except OSError as err:
            raise ConfigError(f"cannot read config: {err}") from None
    else:
        text = str(source)
    lines = _line_map(text)
    doc = yaml.safe_load(text) or {}
    allowed = set(_RUN_SCALARS) | set(_SECTIONS) | set(_TOP_SCALARS)
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"unknown key; expected one of {sorted(allowed)}", key, lines.get((None, key)))

    version = doc.get("format_version", CONFIG_FORMAT_VERSION)
    if version != CONFIG_FORMAT_VERSION:
        raise ConfigError(f"unsupported format_version {version!r}", "format_version",
                          lines.get((None, "format_version")))

    run_defaults = RunConfig()
    nested = {}
    for name in _RUN_NESTED:
        base = getattr(run_defaults, name)
        nested[name] = _build_section(type(base), name, doc[name], lines, base) if name in doc else base
    scalars = {k: _coerce(None, k, doc[k], getattr(run_defaults, k), lines.get((None, k)))
               for k in _RUN_SCALARS if k in doc}
    try:
        run = RunConfig(**{**{k: getattr(run_defaults, k) for k in _RUN_SCALARS}, **scalars, **nested})
    except ValueError as err:
        key = next(iter(scalars), None)
        raise ConfigError(str(err), key, lines.get((None, key))) from None

    sections = {}
    for name in ("cost", "pipeline", "energy"):
        base = _SECTIONS[name]()
        sections[name] = _build_section(_SECTIONS[name], name, doc[name], lines, base) if name in doc else base

    top = ExperimentConfig()
    extra = {}
    if "output_dir" in doc:
        extra["output_dir"] = _coerce(None, "output_dir", doc["output_dir"], top.output_dir,
                                      lines.get((None, "output_dir")))
    if "phase_fractions" in doc:
        extra["phase_fractions"] = _coerce(None, "phase_fractions", doc["phase_fractions"],
                                           top.phase_fractions, lines.get((None, "phase_fractions")))
    try:
        return ExperimentConfig(run=run, **sections, **extra)
    except ValueError as err:
        raise ConfigError(str(err), "phase_fractions", lines.get((None, "phase_fractions"))) from None


def _plain(value):
    if isinstance(value, Fraction):
        return int(value) if value.denominator == 1 else f"{value.numerator}/{value.denominator}"
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def config_to_dict(cfg: ExperimentConfig):
    out = {"format_version": CONFIG_FORMAT_VERSION, "output_dir": cfg.output_dir}
    for name in _RUN_SCALARS:
        out[name] = _plain(getattr(cfg.run, name))
    for name in _RUN_NESTED:
        out[name] = {f.name: _plain(getattr(getattr(cfg.run, name), f.name)) for f in fields(getattr(cfg.run, name))}
    for name in ("cost", "pipeline", "energy"):
        obj = getattr(cfg, name)
        out[name] = {f.name: _plain(getattr(obj, f.name)) for f in fields(obj) if f.init}
    out["phase_fractions"] = _plain(cfg.phase_fractions)
    return out


def serialize_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False, default_flow_style=False)


def with_overrides(cfg: ExperimentConfig, run=None, cost=None, pipeline=None, energy=None, schedule=None,
                   optimizer=None, **top):
    """Copy of ``cfg`` with non-None overrides applied per section."""
    def upd(obj, changes):
        changes = {k: v for k, v in (changes or {}).items() if v is not None}
        return replace(obj, **changes) if changes else obj

    r = upd(cfg.run, run)
    r = replace(r, schedule=upd(r.schedule, schedule), optimizer=upd(r.optimizer, optimizer))
    top = {k: v for k, v in top.items() if v is not None}
    return replace(cfg, run=r, cost=upd(cfg.cost, cost), pipeline=upd(cfg.pipeline, pipeline),
                   energy=upd(cfg.energy, energy), **top)


def resolve_output_dir(cfg: ExperimentConfig, override=None):
    """``override`` wins; a relative config directory hangs off $ADAGP_OUTPUT_ROOT (or the cwd)."""
    if override is not None:
        return Path(override)
    out = Path(cfg.output_dir)
    if out.is_absolute():
        return out
    return Path(os.environ.get(OUTPUT_ROOT_ENV, ".")) / out


def reference_text():
    return REFERENCE_PATH.read_text()


"""Experiment configuration: an INI-style file validated into typed sections.

Top-level keys (``seed``, ``output_dir``) come before the first section. List
values are comma separated. Every key is checked: unknown keys, bad values and
inconsistent combinations are reported with their section, key and line.
"""

from __future__ import annotations

import configparser
import hashlib
import math
import re
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .grid import ConfigurationError

TOP = "__top__"
_OPTION = re.compile(r"^\s*(?P<key>[^=:\s][^=:]*?)\s*[=:]")
_SECTION = re.compile(r"^\s*\[(?P<name>[^\]]+)\]")


class ConfigError(ConfigurationError):
    """Invalid configuration, with a location when one is known."""


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    @field_validator("*", mode="before")
    @classmethod
    def _split_lists(cls, value, info):
        annotation = cls.model_fields[info.field_name].annotation
        if isinstance(value, str) and getattr(annotation, "__origin__", None) is tuple:
            return tuple(part.strip() for part in value.split(",") if part.strip())
        return value


class GridSection(_Section):
    n_elements: int = Field(800, gt=1)
    domain_length: float = Field(10.0, gt=0)
    coarsening_ratio: int = Field(1, ge=1)


class ModelSection(_Section):
    model: Literal["burgers", "euler"]
    dt: float = Field(gt=0)
    reynolds: float = Field(200.0, gt=0)
    u0: float = 1.0
    forcing_frequency: float = Field(1.0, gt=0)
    mach: float = Field(0.4, gt=0)
    gamma: float = Field(1.4, gt=1)
    rho0: float = Field(1.17, gt=0)
    T0: float = Field(300.0, gt=0)
    gas_constant: float = Field(287.05, gt=0)
    filter_strength: float = Field(1.0, ge=0, le=1)
    outlet: Literal["characteristic", "linear"] = "characteristic"
    true_theta: tuple[float, ...]


class FilterSection(_Section):
    n_ensemble: int = Field(100, ge=2)
    obs_noise_variance: float = Field(gt=0)
    obs_every_n_steps: int = Field(30, ge=1)
    param_prior_mean: tuple[float, ...]
    param_prior_variance: tuple[float, ...]
    param_inflation: tuple[float, ...]

    @field_validator("param_prior_variance", "param_inflation")
    @classmethod
    def _non_negative(cls, value):
        if any(v < 0 for v in value):
            raise ValueError("variances must be non-negative")
        return value


class MenkfSection(_Section):
    smoothing_relaxation: float = Field(0.5, gt=0, le=1)
    enable_state_correction: bool = True
    n_threads: int = Field(1, ge=1)


class ExperimentSection(_Section):
    spinup_time: float = Field(10.0, ge=0)
    duration: float = Field(gt=0)
    obs_window: tuple[float, float] = (0.0, 1.0)
    snapshot_times: tuple[float, ...] = ()

    @field_validator("obs_window")
    @classmethod
    def _ordered(cls, value):
        if not value[0] < value[1]:
            raise ValueError("obs_window must be a non-empty interval")
        return value


class AssimilationConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int = Field(0, ge=0, lt=2**64)
    output_dir: str = "output"
    grid: GridSection = GridSection()
    model: ModelSection
    filter: FilterSection
    menkf: MenkfSection = MenkfSection()
    experiment: ExperimentSection

    @model_validator(mode="after")
    def _consistent(self):
        grid, model, filt = self.grid, self.model, self.filter
        if grid.n_elements % grid.coarsening_ratio:
            raise ValueError(
                f"grid.n_elements={grid.n_elements} is not divisible by "
                f"grid.coarsening_ratio={grid.coarsening_ratio}"
            )
        n_params = 2 if model.model == "burgers" else 1
        for key in ("param_prior_mean", "param_prior_variance", "param_inflation"):
            if len(getattr(filt, key)) != n_params:
                raise ValueError(f"filter.{key} needs {n_params} values for the {model.model} model")
        if len(model.true_theta) != 2:
            raise ValueError("model.true_theta needs 2 values")
        spacing = grid.domain_length / grid.n_elements
        speed = abs(model.u0) if model.model == "burgers" else 1.0
        if model.dt * speed / spacing >= 1.0:
            raise ValueError(f"Courant number {model.dt * speed / spacing:.3g} >= 1")
        lo, hi = self.experiment.obs_window
        if lo < 0 or hi > grid.domain_length:
            raise ValueError("experiment.obs_window must lie inside the domain")
        return self

    @property
    def omega(self) -> float:
        return 2 * math.pi * self.model.forcing_frequency

    def replace(self, **changes) -> "AssimilationConfig":
        """Copy with ``changes`` given as ``section.key`` or bare unique key names."""
        data = self.model_dump()
        for name, value in changes.items():
            section, key = resolve_key(name)
            target = data if section == TOP else data[section]
            target[key] = value
        return _validate(data, {})

    def to_text(self) -> str:
        return serialize_config(self)

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


SECTIONS = {
    "grid": GridSection,
    "model": ModelSection,
    "filter": FilterSection,
    "menkf": MenkfSection,
    "experiment": ExperimentSection,
}
TOP_KEYS = ("seed", "output_dir")


def resolve_key(name: str) -> tuple[str, str]:
    """Map ``section.key`` or a bare key to its ``(section, key)`` pair."""
    if "." in name:
        section, key = name.split(".", 1)
        if section in SECTIONS and key in SECTIONS[section].model_fields:
            return section, key
        raise ConfigError(f"unknown config key {name!r}")
    if name in TOP_KEYS:
        return TOP, name
    hits = [s for s, cls in SECTIONS.items() if name in cls.model_fields]
    if len(hits) != 1:
        raise ConfigError(f"unknown or ambiguous config key {name!r}")
    return hits[0], name


def required_keys() -> list[str]:
    keys = []
    for section, cls in SECTIONS.items():
        keys += [f"{section}.{k}" for k, f in cls.model_fields.items() if f.is_required()]
    return keys


def _line_numbers(text: str) -> dict[tuple[str, str], int]:
    lines: dict[tuple[str, str], int] = {}
    section = TOP
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.lstrip().startswith(("#", ";")) or not line.strip():
            continue
        if m := _SECTION.match(line):
            section = m["name"].strip()
            lines.setdefault((section, ""), lineno)
        elif (m := _OPTION.match(line)) and not line[:1].isspace():
            lines.setdefault((section, m["key"].strip()), lineno)
    return lines


def _validate(data: dict, lines: dict[tuple[str, str], int]) -> AssimilationConfig:
    try:
        return AssimilationConfig.model_validate(data)
    except ValidationError as exc:
        messages = []
        for err in exc.errors():
            loc = [str(p) for p in err["loc"]]
            if len(loc) == 1 and loc[0] in SECTIONS:
                section, key = loc[0], ""
            elif len(loc) >= 2 and loc[0] in SECTIONS:
                section, key = loc[0], loc[1]
            else:
                section, key = TOP, loc[0] if loc else ""
            path = ".".join(p for p in (None if section == TOP else section, key) if p)
            where = lines.get((section, key))
            suffix = f" (line {where})" if where else ""
            if err["type"] == "extra_forbidden":
                messages.append(f"unknown key {path or '<top>'}{suffix}")
            elif err["type"] == "missing":
                messages.append(f"missing required key {path}")
            else:
                messages.append(f"{path or 'config'}: {err['msg']}{suffix}")
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(messages)) from None


def parse_config_text(text: str) -> AssimilationConfig:
    if not text.strip():
        raise ConfigError("configuration is empty; required keys: " + ", ".join(required_keys()))
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    parser.optionxform = str
    try:
        parser.read_string(f"[{TOP}]\n" + text)
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] - 1
        raise ConfigError(f"syntax error on line {lineno}: {text.splitlines()[lineno - 1].strip()!r}") from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.section}.{exc.option} on line {exc.lineno - 1}") from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}] on line {exc.lineno - 1}") from None
    except configparser.Error as exc:
        raise ConfigError(f"syntax error: {exc}") from None
    lines = _line_numbers(text)
    data: dict = {}
    for section in parser.sections():
        items = dict(parser.items(section))
        if section == TOP:
            data.update(items)
        elif section in SECTIONS:
            data[section] = items
        else:
            where = lines.get((section, ""))
            raise ConfigError(f"unknown section [{section}]" + (f" (line {where})" if where else ""))
    return _validate(data, lines)


def parse_config(path: str | Path) -> AssimilationConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ", ".join(_format(v) for v in value)
    return str(value)


def serialize_config(cfg: AssimilationConfig) -> str:
    out = [f"{key} = {_format(getattr(cfg, key))}" for key in TOP_KEYS]
    for section in SECTIONS:
        out.append("")
        out.append(f"[{section}]")
        sec = getattr(cfg, section)
        out += [f"{key} = {_format(getattr(sec, key))}" for key in type(sec).model_fields]
    return "\n".join(out) + "\n"

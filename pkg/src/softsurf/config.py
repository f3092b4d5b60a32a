"""Run configuration: presets, config-file parsing, and flag overrides.

A run is described by one INI-style document with [msm], [model], [train],
and [split] sections; command-line flags override file values, which override
the built-in defaults (the published simulator and training constants).
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass

from softsurf.datasets import SplitSpec
from softsurf.errors import ConfigError
from softsurf.model import ModelConfig
from softsurf.msm import MsmConfig
from softsurf.training import TrainConfig

# Small simulation for quick experiments on a single desktop CPU.
DESK_PRESET = {"grid_n": 16, "n_locations": 20, "n_directions": 3}

# Stand-in for a sparse-marker target domain: stiffer springs, observed
# through 25 fixed markers plus the tracked contact point.
TARGET_DOMAIN_PRESET = {
    "grid_n": 16, "n_locations": 20, "n_directions": 3,
    "k_between": 60.0, "k_fixed": 35.0,
}
TARGET_DOMAIN_MARKERS = 25
TARGET_DOMAIN_SPLIT = (12, 3, 5)


def workers_from_env(explicit: int | None = None) -> int:
    if explicit is not None:
        return max(1, explicit)
    env = os.environ.get("SOFTSURF_WORKERS")
    if env is None:
        return 1
    try:
        return max(1, int(env))
    except ValueError:
        raise ConfigError(f"SOFTSURF_WORKERS must be an integer, got {env!r}")


def _coerce(value: str, target_type):
    if target_type is bool:
        lowered = value.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if target_type is tuple:
        return tuple(int(p) for p in value.replace(":", ",").split(","))
    return target_type(value)


def _section_overrides(parser: configparser.ConfigParser, section: str, cls) -> dict:
    if not parser.has_section(section):
        return {}
    fields = {f.name: f for f in dataclasses.fields(cls)}
    out = {}
    for key, raw in parser.items(section):
        if key not in fields:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        default = fields[key].default
        target = type(default) if default is not dataclasses.MISSING else str
        try:
            out[key] = _coerce(raw, target)
        except ValueError as e:
            raise ConfigError(f"[{section}] {key}: {e}")
    return out


@dataclass
class RunConfig:
    msm: MsmConfig
    model: ModelConfig
    train: TrainConfig
    split: SplitSpec
    markers: int | None = None  # sparse-cloud marker count, None = full clouds
    data_seed: int = 0  # split shuffle, multi-step pairs, marker choice


def load_run_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the config file, then explicit overrides.

    ``overrides`` maps section name to a {field: value} dict; ``None`` values
    are ignored so unset command-line flags fall through.
    """
    sections: dict[str, dict] = {"msm": {}, "model": {}, "train": {}, "split": {}, "run": {}}
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for name, cls in (("msm", MsmConfig), ("model", ModelConfig), ("train", TrainConfig)):
            sections[name].update(_section_overrides(parser, name, cls))
        if parser.has_section("split"):
            for key, raw in parser.items("split"):
                if key == "ratios":
                    sections["split"]["ratios"] = tuple(int(p) for p in raw.split(":"))
                elif key == "seed":
                    sections["split"]["seed"] = int(raw)
                else:
                    raise ConfigError(f"unknown key {key!r} in [split]")
        if parser.has_section("run"):
            for key, raw in parser.items("run"):
                if key == "markers":
                    sections["run"]["markers"] = int(raw)
                elif key == "data_seed":
                    sections["run"]["data_seed"] = int(raw)
                else:
                    raise ConfigError(f"unknown key {key!r} in [run]")

    for name, vals in (overrides or {}).items():
        sections[name].update({k: v for k, v in vals.items() if v is not None})

    try:
        msm = MsmConfig(**sections["msm"])
        msm.validate()
        model = ModelConfig(**sections["model"])
        model.validate()
        train = TrainConfig(**sections["train"])
        train.validate()
        split = SplitSpec(**sections["split"])
    except TypeError as e:
        raise ConfigError(str(e))
    return RunConfig(
        msm=msm, model=model, train=train, split=split,
        markers=sections["run"].get("markers"),
        data_seed=sections["run"].get("data_seed", 0),
    )


def apply_msm_preset(overrides: dict, preset: str | None) -> dict:
    if preset is None or preset == "full":
        return overrides
    if preset == "desk":
        base = dict(DESK_PRESET)
    elif preset == "target":
        base = dict(TARGET_DOMAIN_PRESET)
    else:
        raise ConfigError(f"unknown preset {preset!r} (expected full, desk, or target)")
    base.update({k: v for k, v in overrides.items() if v is not None})
    return base

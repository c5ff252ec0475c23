"""Experiment configuration: TOML file with fixed sections and keys.

Every key has a default, unknown sections or keys are rejected, and
errors name the offending field and, when it can be located, its line.
"""
import copy
import re
from dataclasses import dataclass
from typing import Any, Dict, Optional

import tomli

from .channel import InvalidInputError

DEFAULTS: Dict[str, Dict[str, Any]] = {
    "geometry": {"setting": "two_cluster"},
    "system": {
        "num_antennas": 5,
        "num_ris_elements": 40,
        "num_devices": 40,
        "max_power": 0.1,
        "noise_power": 1e-10,
        "carrier_freq": 915e6,
        "path_loss_exp": 3.76,
        "gain_ps_db": 5.0,
        "gain_device_db": 0.0,
        "gain_ris_db": 5.0,
    },
    "channel": {
        "model": "iid",
        "rician_rp_db": 3.0,
        "rician_dp": 0.0,
        "rician_dr": 0.0,
        "block_period": 0,
    },
    "task": {
        "kind": "ridge",
        "dim": 20,
        "counts": "setting",
        "total_samples": 0,
        "reg": 0.1,
        "noise_std": 0.1,
        "feature_decay": 0.25,
        "batch_size": 0,
    },
    "optimizer": {
        "beta0": 1.0,
        "rho": 0.9,
        "j_max": 50,
        "tau": 1.0,
        "i_max": 100,
        "epsilon": 0.01,
        "dual_step": 1.0,
        "dual_max_iter": 500,
        "dual_tol": 1e-9,
        "return_last_iterate": False,
        "return_last_sample": False,
        "phase_bits": 0,
    },
    "run": {
        "rounds": 200,
        "learning_rate": 0.0,
        "trajectories": 1,
        "seed": 0,
        "policy": "optimized",
    },
    "output": {"dir": "out"},
}

_CHOICES = {
    ("geometry", "setting"): ("concentrated", "two_cluster"),
    ("channel", "model"): ("iid", "rician"),
    ("task", "kind"): ("ridge", "logistic"),
    ("run", "policy"): ("optimized", "error_free", "select_all_no_ris", "random_phases"),
}

# (section, key) -> predicate, description
_RANGES = {
    ("system", "num_antennas"): (lambda v: v >= 1, ">= 1"),
    ("system", "num_ris_elements"): (lambda v: v >= 0, ">= 0"),
    ("system", "num_devices"): (lambda v: v >= 1, ">= 1"),
    ("system", "max_power"): (lambda v: v > 0, "> 0"),
    ("system", "noise_power"): (lambda v: v >= 0, ">= 0"),
    ("system", "carrier_freq"): (lambda v: v > 0, "> 0"),
    ("system", "path_loss_exp"): (lambda v: v > 0, "> 0"),
    ("channel", "block_period"): (lambda v: v >= 0, ">= 0 (0 means static)"),
    ("task", "dim"): (lambda v: v >= 1, ">= 1"),
    ("task", "total_samples"): (lambda v: v >= 0, ">= 0 (0 keeps the raw counts)"),
    ("task", "reg"): (lambda v: v > 0, "> 0"),
    ("task", "noise_std"): (lambda v: v >= 0, ">= 0"),
    ("task", "feature_decay"): (lambda v: v > 0, "> 0"),
    ("task", "batch_size"): (lambda v: v >= 0, ">= 0 (0 means full batch)"),
    ("optimizer", "beta0"): (lambda v: v > 0, "> 0"),
    ("optimizer", "rho"): (lambda v: 0 < v <= 1, "in (0, 1]"),
    ("optimizer", "j_max"): (lambda v: v >= 1, ">= 1"),
    ("optimizer", "tau"): (lambda v: v >= 0, ">= 0"),
    ("optimizer", "i_max"): (lambda v: v >= 0, ">= 0"),
    ("optimizer", "epsilon"): (lambda v: v >= 0, ">= 0"),
    ("optimizer", "dual_step"): (lambda v: v > 0, "> 0"),
    ("optimizer", "dual_max_iter"): (lambda v: v >= 1, ">= 1"),
    ("optimizer", "dual_tol"): (lambda v: v >= 0, ">= 0"),
    ("optimizer", "phase_bits"): (lambda v: v >= 0, ">= 0 (0 means continuous)"),
    ("run", "rounds"): (lambda v: v >= 1, ">= 1"),
    ("run", "learning_rate"): (lambda v: v >= 0, ">= 0 (0 means 1/omega)"),
    ("run", "trajectories"): (lambda v: v >= 1, ">= 1"),
    ("run", "seed"): (lambda v: v >= 0, ">= 0"),
}


class ConfigError(InvalidInputError):
    """Invalid configuration; ``field`` is ``section.key`` and ``line`` is 1-based or None."""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if field:
            where.append(field)
        if line:
            where.append(f"line {line}")
        super().__init__(f"{' at '.join(where)}: {message}" if where else message)

    def to_dict(self):
        return {"error": "config", "message": str(self), "field": self.field, "line": self.line}


def _locate(text, section, key=None):
    """1-based line of ``[section]`` or of ``key`` inside it, if present in ``text``."""
    if text is None:
        return None
    current = None
    header = re.compile(r"^\s*\[\s*([A-Za-z0-9_.-]+)\s*\]")
    for no, raw in enumerate(text.splitlines(), start=1):
        m = header.match(raw)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return no
            continue
        if key is not None and current == section:
            if re.match(rf"^\s*{re.escape(key)}\s*=", raw):
                return no
    return None


def _check_type(value, default):
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    return True


def _type_name(default):
    return {bool: "boolean", int: "integer", float: "number", str: "string"}[type(default)]


@dataclass(frozen=True)
class ExperimentConfig:
    values: Dict[str, Dict[str, Any]]

    def __getitem__(self, section):
        return self.values[section]

    def to_dict(self):
        return copy.deepcopy(self.values)


def resolve(data, text=None):
    """Merge ``data`` over the defaults and validate every field."""
    if not isinstance(data, dict):
        raise ConfigError("top level must be a table")
    merged = copy.deepcopy(DEFAULTS)
    for section, table in data.items():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown section [{section}]", section, _locate(text, section))
        if not isinstance(table, dict):
            raise ConfigError("expected a table", section, _locate(text, section))
        for key, value in table.items():
            name = f"{section}.{key}"
            line = _locate(text, section, key)
            if key not in DEFAULTS[section]:
                raise ConfigError("unknown key", name, line)
            default = DEFAULTS[section][key]
            if section == "task" and key == "counts":
                if not (isinstance(value, str) or
                        (isinstance(value, list) and all(isinstance(v, int) and v > 0 for v in value))):
                    raise ConfigError('expected "setting" or a list of positive integers', name, line)
            elif not _check_type(value, default):
                raise ConfigError(f"expected a {_type_name(default)}, got {value!r}", name, line)
            if isinstance(default, float) and not isinstance(value, bool):
                value = float(value)
            choices = _CHOICES.get((section, key))
            if choices and value not in choices:
                raise ConfigError(f"must be one of {', '.join(choices)}", name, line)
            rule = _RANGES.get((section, key))
            if rule and not rule[0](value):
                raise ConfigError(f"must be {rule[1]}, got {value!r}", name, line)
            merged[section][key] = value
    counts = merged["task"]["counts"]
    if isinstance(counts, str) and counts != "setting":
        raise ConfigError('expected "setting" or a list of positive integers', "task.counts",
                          _locate(text, "task", "counts"))
    if isinstance(counts, list) and len(counts) != merged["system"]["num_devices"]:
        raise ConfigError("needs one entry per device", "task.counts", _locate(text, "task", "counts"))
    if merged["geometry"]["setting"] == "two_cluster" and merged["system"]["num_devices"] < 2:
        raise ConfigError("two_cluster needs at least 2 devices", "system.num_devices",
                          _locate(text, "system", "num_devices"))
    return ExperimentConfig(merged)


def loads(text):
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"parse error: {exc}", None, int(m.group(1)) if m else None) from exc
    return resolve(data, text)


def load(path: Optional[str]):
    """Config from ``path``, or the defaults when ``path`` is None."""
    if path is None:
        return resolve({})
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return loads(text)


def with_overrides(config, **sections):
    """Copy of ``config`` with ``sections={key: value}`` applied and re-validated."""
    data = config.to_dict()
    for section, table in sections.items():
        data.setdefault(section, {}).update(table)
    return resolve(data)

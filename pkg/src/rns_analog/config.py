"""Declarative experiment configuration (YAML) with flag overrides.

Every key must exist in :data:`DEFAULTS`; values from a config file are
merged over the defaults, then ``--set section.key=value`` overrides, then
dedicated command-line flags.
"""

from __future__ import annotations

import copy
import os
from pathlib import Path

import yaml

from .errors import ConfigError
from .rng import DEFAULT_SEED

ENV_VAR = "RNS_ANALOG_CONFIG"

DEFAULTS: dict = {
    "seed": DEFAULT_SEED,
    "dotprod_error": {"b": [4, 5, 6, 7, 8], "h": 128, "trials": 10_000, "bins": 41},
    "accuracy": {
        "model": None,
        "b": [4],
        "h": [16, 64, 128],
        "modes": ["fixed", "rns"],
        "seeds": [0, 1, 2],
    },
    "rrns_perr": {
        "codes": [{"non_redundant": [11, 13], "redundant": [14, 15]}],
        "p": [0.01, 0.05, 0.1],
        "R": [1, 2, 3, 5, 10],
        "trials": 100_000,
        "vote_rule": "bounded",
        "accuracy": False,
        "accuracy_b": 6,
        "accuracy_h": 64,
        "accuracy_codes": [
            {"non_redundant": [53, 55, 59], "redundant": [61]},
            {"non_redundant": [53, 55, 59], "redundant": [61, 62]},
            {"non_redundant": [53, 55, 59], "redundant": [61, 62, 63]},
        ],
        "accuracy_p": [0.0, 0.001, 0.003, 0.01, 0.03, 0.1],
        "accuracy_R": [1, 3],
        "rate_trials": 20_000,
    },
    "energy": {
        "b": [4, 5, 6, 7, 8],
        "h": 128,
        "C_u": 0.5e-15,
        "V_dd": 1.0,
        "k1": 100e-15,
        "k2": 1e-18,
    },
    "infer": {
        "model": None,
        "input": None,
        "mode": "rns",
        "b": 6,
        "h": 128,
        "moduli": None,
        "p": 0.0,
    },
}


def _merge(base: dict, update: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a mapping")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def load_config(path: str | os.PathLike | None = None) -> dict:
    """Defaults merged with ``path`` (or the file named by ``$RNS_ANALOG_CONFIG``)."""
    if path is None:
        path = os.environ.get(ENV_VAR) or None
    if path is None:
        return copy.deepcopy(DEFAULTS)
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return _merge(DEFAULTS, data)


def apply_override(cfg: dict, assignment: str) -> dict:
    """Apply one ``dotted.key=value`` override; the value is parsed as YAML."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    dotted, raw = assignment.split("=", 1)
    keys = dotted.strip().split(".")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        value = raw
    update: dict = value
    for key in reversed(keys):
        update = {key: update}
    return _merge(cfg, update)

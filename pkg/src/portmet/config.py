"""Experiment configuration: strict JSON schema, defaults, dotted overrides.

Unknown keys are rejected rather than ignored; silent default drift is the
usual way learned-simulator experiments stop being reproducible. All
randomness derives from the single root `seed` through named sub-streams
(dataset draws, the train/test split, weight init, batch shuffling).
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import ConfigError
from .nets import BulkNetConfig
from .oracle import DEFAULT_DT, DEFAULT_N_STEPS, DEFAULT_SUBSTEPS, ICSpec
from .seeds import derive_seed
from .state import PendulumParams
from .training import TrainConfig

CONFIG_SCHEMA_VERSION = 1


def default_config() -> dict:
    return {
        "schema_version": CONFIG_SCHEMA_VERSION,
        "seed": 0,
        "oracle": {
            "m1": 1.0, "m2": 2.0, "lam01": 2.0, "lam02": 1.0,
            "C1": 0.02, "C2": 0.2, "kappa": 0.5,
            "k1": 1.0, "k2": 1.0, "beta": 1.0, "theta_ref": 1.0,
            "substeps": DEFAULT_SUBSTEPS,
        },
        "dataset": {
            "n_sims": 50,
            "n_steps": DEFAULT_N_STEPS,
            "dt": DEFAULT_DT,
            "spread": 0.1,
            "theta0": 300.0,
            "train_fraction": 0.8,
            "dir": "data/pendulum",
        },
        "nets": {
            "bulk_hidden": [64, 64],
            "boundary_hidden": [64, 64],
        },
        "train": {
            "data_weight": 10.0,
            "batch_size": 128,
            "learning_rate": 1e-3,
            "beta1": 0.9,
            "beta2": 0.999,
            "eps": 1e-8,
            "epochs": 2000,
            "patience": 200,
            "out_dir": "runs/train",
        },
        "eval": {
            "rollout_steps": None,
            "out_dir": "runs/eval",
            "per_snapshot_csv": False,
        },
    }


def _check_keys(given: dict, reference: dict, path: str = ""):
    for key, value in given.items():
        if key not in reference:
            where = f"{path}.{key}" if path else key
            raise ConfigError(f"unknown config key: {where!r}")
        if isinstance(reference[key], dict) and reference[key]:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path + '.' + key if path else key!r} must be a mapping")
            _check_keys(value, reference[key], f"{path}.{key}" if path else key)


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            out[key] = _merge(base[key], value)
        else:
            out[key] = value
    return out


def load_config(path=None, overrides: list[str] = ()) -> dict:
    """Defaults, optionally overlaid with a JSON file and --set key=value pairs."""
    cfg = default_config()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            given = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(given, dict):
            raise ConfigError("top-level config must be a JSON object")
        version = given.get("schema_version", CONFIG_SCHEMA_VERSION)
        if version != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema_version {version}")
        _check_keys(given, cfg)
        cfg = _merge(cfg, given)
    for item in overrides:
        cfg = apply_override(cfg, item)
    return cfg


def apply_override(cfg: dict, item: str) -> dict:
    """Apply one `dotted.key=value` override; values parse as JSON when possible."""
    if "=" not in item:
        raise ConfigError(f"override must look like key=value, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.split(".")
    probe = cfg
    for part in parts[:-1]:
        if not isinstance(probe, dict) or part not in probe:
            raise ConfigError(f"unknown config key: {key!r}")
        probe = probe[part]
    if not isinstance(probe, dict) or parts[-1] not in probe:
        raise ConfigError(f"unknown config key: {key!r}")
    out = json.loads(json.dumps(cfg))
    target = out
    for part in parts[:-1]:
        target = target[part]
    target[parts[-1]] = value
    return out


# ---------------------------------------------------------------------------
# typed views

def oracle_params(cfg: dict) -> PendulumParams:
    section = {k: v for k, v in cfg["oracle"].items() if k != "substeps"}
    return PendulumParams(**section)


def ic_spec(cfg: dict) -> ICSpec:
    d = cfg["dataset"]
    return ICSpec(spread=d["spread"], theta0=d["theta0"])


def bulk_net_config(cfg: dict) -> BulkNetConfig:
    return BulkNetConfig(hidden=tuple(cfg["nets"]["bulk_hidden"]))


def boundary_hidden(cfg: dict) -> tuple[int, ...]:
    return tuple(cfg["nets"]["boundary_hidden"])


def train_config(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(data_weight=t["data_weight"], batch_size=t["batch_size"],
                       learning_rate=t["learning_rate"], beta1=t["beta1"], beta2=t["beta2"],
                       eps=t["eps"], epochs=t["epochs"], patience=t["patience"],
                       seed=derive_seed(cfg["seed"], "train"))


def dataset_seed(cfg: dict) -> int:
    return derive_seed(cfg["seed"], "dataset")


def split_seed(cfg: dict) -> int:
    return derive_seed(cfg["seed"], "split")

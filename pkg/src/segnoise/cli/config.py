"""Run configuration: one YAML file of record per run, merged over defaults."""

from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path

import yaml

from ..explainers import EXPLAINERS
from ..integrate import TECHNIQUES
from ..metrics import DEFAULT_TAUS, ThresholdSweep

OUTPUT_ROOT_ENV = "SEGNOISE_OUTPUT_ROOT"

DEFAULTS: dict = {
    "seed": 0,
    "deterministic": True,
    "output_dir": "runs/default",
    "target_class": 1,
    "dataset": {
        "seed": 0,
        "size": 64,
        "num_classes": 2,
        "channels": 3,
        "n_train": 400,
        "n_val": 100,
        "n_test": 20,
        "test_shapes": [1, 3],
    },
    "utility": {
        "epochs": 20,
        "seed": 0,
        "widths": [12, 24, 48],
        "lr": 0.003,
        "batch_size": 16,
        "noise_aug": 0.1,
        "min_val_iou": 0.85,
    },
    "noise": {
        "lam": 0.1,
        "noise_scale": 0.5,
        "epochs": 12,
        "seed": 0,
        "lr": 0.003,
        "batch_size": 16,
        "widths": [12, 24, 48],
        "max_iou_drop": 0.05,
        "min_mean_noise": 0.2,
    },
    "explainers": [
        {"name": "seg_sobol", "params": {"grid_size": 11, "n_designs": 64}},
        {"name": "seg_grad_cam"},
        {"name": "seg_grad_cam_pp"},
    ],
    "technique": "mul",
    "sampling": {"sigma": 0.1, "seed": 0},
    "taus": list(DEFAULT_TAUS),
    "evaluate": {"n_images": 20, "jobs": 1},
    "explain": {"image_ids": [0, 1]},
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a mapping")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


def validate(cfg: dict) -> dict:
    explainers = cfg["explainers"]
    if not isinstance(explainers, list) or not explainers:
        raise ConfigError("'explainers' must be a non-empty list")
    seen = set()
    for i, entry in enumerate(explainers):
        if isinstance(entry, str):
            entry = explainers[i] = {"name": entry}
        name = entry.get("name")
        if name not in EXPLAINERS:
            raise ConfigError(f"unknown explainer {name!r} in explainers[{i}]; expected one of {list(EXPLAINERS)}")
        unknown = set(entry) - {"name", "id", "params"}
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)} in explainers[{i}]")
        entry.setdefault("id", name)
        entry.setdefault("params", {})
        if entry["id"] in seen:
            raise ConfigError(f"duplicate explainer id {entry['id']!r}")
        seen.add(entry["id"])
    if cfg["technique"] not in TECHNIQUES:
        raise ConfigError(f"unknown technique {cfg['technique']!r}; expected one of {list(TECHNIQUES)}")
    try:
        ThresholdSweep(tuple(cfg["taus"]))
    except ValueError as exc:
        raise ConfigError(f"invalid taus: {exc}") from None
    for section in ("dataset", "utility", "noise", "sampling"):
        if not isinstance(cfg[section].get("seed", 0), int):
            raise ConfigError(f"{section}.seed must be an integer")
    if not isinstance(cfg["seed"], int):
        raise ConfigError("seed must be an integer")
    if int(cfg["evaluate"]["jobs"]) < 1:
        raise ConfigError("evaluate.jobs must be >= 1")
    return cfg


def load_config(path=None, overrides: dict | None = None) -> dict:
    user = {}
    if path is not None:
        try:
            user = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a mapping")
    cfg = _merge(DEFAULTS, user)
    if overrides:
        cfg = _merge(cfg, overrides)
    return validate(cfg)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def output_dir(cfg: dict) -> Path:
    out = Path(cfg["output_dir"])
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    return out


def dump(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=False)

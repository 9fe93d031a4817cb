"""Experiment configuration: defaults per setting, JSON I/O and schema validation."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from ..errors import PreconditionError

SETTINGS = ("regression", "classification", "class_incremental", "generative", "rl", "degenerate")

_FORGETTING = {"k": 40, "ks": [40], "num_particles": 1000, "divergence": "kl_gaussian", "probes": "validation",
               "mixture_policy": "mixture", "bootstrap": 0}

DEFAULTS = {
    "regression": {
        "env": {"num_samples": 40, "num_val": 100, "noise": 0.1, "batch_size": 10, "num_epochs": 30},
        "learner": {"hidden": 5, "optimizer": "adam", "lr": 0.1, "momentum": 0.0},
        "forgetting": dict(_FORGETTING),
    },
    "classification": {
        "env": {"num_samples": 100, "num_val": 100, "noise": 0.1, "batch_size": 25, "num_epochs": 30},
        "learner": {"hidden": 10, "optimizer": "adam", "lr": 0.1, "momentum": 0.0},
        "forgetting": dict(_FORGETTING, divergence="kl_categorical"),
    },
    "class_incremental": {
        "env": {"num_samples": 100, "num_val": 100, "noise": 0.1, "batch_size": 25, "num_epochs": 30},
        "learner": {"hidden": 10, "optimizer": "adam", "lr": 0.1, "momentum": 0.0},
        "forgetting": dict(_FORGETTING, divergence="kl_categorical"),
    },
    "generative": {
        "env": {"num_samples": 10_000, "num_val": 1_000, "noise": 0.05, "batch_size": 2_500, "num_epochs": 250,
                "n_probes": 256},
        "learner": {"hidden": 64, "lr": 0.01, "num_steps": 100, "hybrid_batch": 250},
        "forgetting": dict(_FORGETTING, divergence="mmd_rbf", num_particles=50),
    },
    "rl": {
        "env": {"n_probes": 64},
        "learner": {"hidden": 5, "lr": 5e-3, "batch_size": 128, "buffer_size": 10_000, "start_e": 1.0, "end_e": 0.05,
                    "exploration_fraction": 0.5, "learning_starts": 1_000, "train_frequency": 10,
                    "target_network_frequency": 500, "tau": 1.0, "gamma": 0.99, "total_timesteps": 20_000,
                    "temperature": 1.0, "hybrid_targets": "self", "transitory_window": 50},
        "forgetting": dict(_FORGETTING, divergence="kl_categorical"),
        "eval_steps": 1_000,
    },
    "degenerate": {
        "env": {"p": 0.5, "steps": 100},
        "learner": {},
        "forgetting": dict(_FORGETTING, divergence="kl_categorical", num_particles=100, probes="validation"),
    },
}


def _schema() -> dict:
    return json.loads(resources.files("forgetmeter.harness").joinpath("schema.json").read_text())


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass
class ExperimentConfig:
    setting: str
    name: str = ""
    env: dict = field(default_factory=dict)
    learner: dict = field(default_factory=dict)
    forgetting: dict = field(default_factory=dict)
    measure_fraction: float = 0.05
    eval_steps: int = 1_000
    seeds: list = field(default_factory=lambda: [0])
    out_dir: str = "runs"

    def to_dict(self) -> dict:
        return {
            "setting": self.setting, "name": self.name, "env": copy.deepcopy(self.env),
            "learner": copy.deepcopy(self.learner), "forgetting": copy.deepcopy(self.forgetting),
            "measure_fraction": self.measure_fraction, "eval_steps": self.eval_steps,
            "seeds": list(self.seeds), "out_dir": self.out_dir,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def hash(self) -> str:
        """Stable digest of everything that affects a run (seeds and paths excluded)."""
        d = self.to_dict()
        for key in ("seeds", "out_dir", "name"):
            d.pop(key)
        return hashlib.sha256(json.dumps(d, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:16]

    def with_override(self, path: str, value) -> "ExperimentConfig":
        """Copy with one dotted field replaced, e.g. ``learner.momentum``."""
        d = self.to_dict()
        keys = path.split(".")
        node = d
        for key in keys[:-1]:
            if key not in node or not isinstance(node[key], dict):
                raise PreconditionError(f"unknown config section {key!r} in {path!r}")
            node = node[key]
        if keys[-1] not in node:
            raise PreconditionError(f"unknown config field {path!r}")
        old = node[keys[-1]]
        if isinstance(old, bool) or not isinstance(old, (int, float)):
            raise PreconditionError(f"{path!r} is not a numeric field")
        node[keys[-1]] = int(value) if isinstance(old, int) and float(value).is_integer() else float(value)
        return from_dict(d)


def validate(d: dict) -> None:
    try:
        jsonschema.validate(d, _schema())
    except jsonschema.ValidationError as exc:
        raise PreconditionError(f"invalid config: {exc.message}") from exc


def from_dict(d: dict) -> ExperimentConfig:
    """Validate, then fill unspecified fields from the setting's defaults."""
    validate(d)
    setting = d["setting"]
    full = _merge({"measure_fraction": 0.05, "eval_steps": 1_000, "seeds": [0], "out_dir": "runs", "name": setting},
                  {k: v for k, v in DEFAULTS[setting].items()})
    full = _merge(full, d)
    unknown = set(full["env"]) - set(DEFAULTS[setting]["env"])
    unknown |= set(full["learner"]) - set(DEFAULTS[setting]["learner"])
    unknown |= set(full["forgetting"]) - set(_FORGETTING)
    if unknown:
        raise PreconditionError(f"unknown config fields for {setting!r}: {sorted(unknown)}")
    if full["forgetting"]["k"] not in full["forgetting"]["ks"]:
        full["forgetting"]["ks"] = sorted(set(full["forgetting"]["ks"]) | {full["forgetting"]["k"]})
    return ExperimentConfig(setting, full["name"], full["env"], full["learner"], full["forgetting"],
                            float(full["measure_fraction"]), int(full["eval_steps"]), list(full["seeds"]),
                            str(full["out_dir"]))


def parse(text: str) -> ExperimentConfig:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PreconditionError(f"config is not valid JSON: {exc}") from exc
    return from_dict(d)


def load(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise PreconditionError(f"cannot read config {path}: {exc}") from exc
    return parse(text)


def default_config(setting: str, **overrides) -> ExperimentConfig:
    if setting not in SETTINGS:
        raise PreconditionError(f"unknown setting {setting!r}")
    return from_dict(_merge({"setting": setting}, overrides))

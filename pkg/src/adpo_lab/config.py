"""YAML run configuration: strict schema, default filling, presets.

A config file is a nested mapping with the sections below; every key is
optional and anything missing is filled from the defaults (optionally
overlaid by a preset).  Unknown keys are rejected with a suggestion.

    task:        kind, num_queries, answer_vocab_size, score_bins,
                 interval_width, num_action_types, seed
    train:       group_size, batch_queries, learning_rate, steps,
                 inner_epochs, optimizer, seed, decode{temperature, top_p},
                 init{kind, accuracy}
    objective:   clip, kl_coeff, mode, verification
    thresholds:  tau_s, tau_a, gamma
    eval:        n, protocol, seed, decode{temperature, top_p}
    experiment:  kind, seeds, gammas, eval_ns, workers
"""

from __future__ import annotations

import copy
import difflib
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .evaluation import EvalConfig
from .objective import ObjectiveConfig
from .policy import DecodeConfig
from .rewards import Thresholds
from .tasks import TaskSpec
from .trainer import InitConfig, TrainConfig

EXPERIMENT_KINDS = ("collapse", "decoupling", "scaling", "margin", "score_distribution")
MARGIN_GAMMAS = [0.025, 0.05, 0.1, 0.2, 0.25]
AGENT_GRID_CELLS = 16  # agent answers need a square click grid

DEFAULTS: dict = {
    "task": {
        "kind": "discrete",
        "num_queries": 1024,
        "answer_vocab_size": 8,
        "score_bins": 11,
        "interval_width": 0.2,
        "num_action_types": 4,
        "seed": 0,
    },
    "train": {
        "group_size": 8,
        "batch_queries": 16,
        "learning_rate": 0.05,
        "steps": 300,
        "inner_epochs": 2,
        "optimizer": "adam",
        "seed": 0,
        "decode": {"temperature": 1.0, "top_p": 0.99},
        "init": {"kind": "pretrained", "accuracy": 0.85},
    },
    "objective": {"clip": 0.2, "kl_coeff": 0.01, "mode": "decoupled", "verification": "preference"},
    "thresholds": {"tau_s": 0.5, "tau_a": 0.5, "gamma": 0.1},
    "eval": {"n": 8, "protocol": "best_of_n", "seed": 0, "decode": {"temperature": 0.2, "top_p": 0.99}},
    "experiment": {
        "kind": "collapse",
        "seeds": [0, 1, 2, 3, 4],
        "gammas": MARGIN_GAMMAS + [1.0],
        "eval_ns": [1, 4, 8, 12],
        "workers": 1,
    },
}

# Per-experiment overlays applied under the preset and the user file.  The
# collapse-style runs use two score bins so "max score" is the top of two.
EXPERIMENT_DEFAULTS: dict = {
    "collapse": {"task": {"score_bins": 2}, "train": {"steps": 200}},
    "decoupling": {"task": {"score_bins": 2}, "train": {"steps": 200}},
    "scaling": {"task": {"score_bins": 2}, "train": {"steps": 200}},
    "margin": {"task": {"kind": "interval"}, "train": {"steps": 200}},
    "score_distribution": {"train": {"steps": 200}},
}

# Hyperparameters used at 7B-model scale; kept for reference, far too slow here.
PRESETS: dict = {
    "toy": {},
    "large": {
        "train": {"learning_rate": 1e-6, "batch_queries": 128, "group_size": 8, "steps": 1200},
        "objective": {"clip": 0.2, "kl_coeff": 0.01},
    },
}


class ConfigError(ValueError):
    """Schema or invariant violation, tagged with the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
        self.detail = message

    def record(self) -> dict:
        return {"error": "ConfigError", "field": self.path, "message": self.detail}


@dataclass(frozen=True)
class ExperimentSettings:
    kind: str
    seeds: tuple[int, ...]
    gammas: tuple[float, ...]
    eval_ns: tuple[int, ...]
    workers: int


@dataclass(frozen=True)
class RunConfig:
    task: TaskSpec
    train: TrainConfig
    eval: EvalConfig
    experiment: ExperimentSettings
    resolved: dict

    @property
    def digest(self) -> str:
        return config_hash(self.resolved)


def config_hash(resolved: dict) -> str:
    blob = json.dumps(resolved, sort_keys=True, separators=(",", ":")).encode()
    return "sha256:" + hashlib.sha256(blob).hexdigest()


def _type_ok(default, value) -> bool:
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, list):
        return isinstance(value, list)
    return True


def merge(base: dict, override: dict, path: str = "") -> dict:
    """Overlay ``override`` on ``base`` with strict key and type checks."""
    if not isinstance(override, dict):
        raise ConfigError(path, f"expected a mapping, got {type(override).__name__}")
    out = copy.deepcopy(base)
    for key, value in override.items():
        here = f"{path}.{key}" if path else str(key)
        if key not in base:
            close = difflib.get_close_matches(str(key), list(base), n=1)
            hint = f"; did you mean '{close[0]}'?" if close else ""
            raise ConfigError(here, f"unknown key{hint}")
        default = base[key]
        if isinstance(default, dict):
            out[key] = merge(default, value, here)
        elif not _type_ok(default, value):
            raise ConfigError(here, f"expected {type(default).__name__}, got {type(value).__name__}")
        else:
            out[key] = float(value) if isinstance(default, float) else value
    return out


def _build(path: str, factory, **kwargs):
    try:
        return factory(**kwargs)
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


def resolve(raw: dict | None = None, preset: str = "toy", seed: int | None = None) -> dict:
    if preset not in PRESETS:
        raise ConfigError("preset", f"unknown preset '{preset}', choose from {sorted(PRESETS)}")
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("", f"expected a mapping at top level, got {type(raw).__name__}")
    resolved = DEFAULTS
    section = raw.get("experiment")
    kind = section.get("kind") if isinstance(section, dict) else None
    if kind in EXPERIMENT_DEFAULTS:
        resolved = merge(resolved, EXPERIMENT_DEFAULTS[kind])
    resolved = merge(resolved, PRESETS[preset])
    resolved = merge(resolved, raw)
    task_raw = raw.get("task") if isinstance(raw.get("task"), dict) else {}
    if resolved["task"]["kind"] == "agent" and "answer_vocab_size" not in task_raw:
        resolved["task"]["answer_vocab_size"] = AGENT_GRID_CELLS
    if seed is not None:
        resolved["train"]["seed"] = seed
        resolved["eval"]["seed"] = seed
        resolved["experiment"]["seeds"] = [seed]
    return resolved


def build(resolved: dict) -> RunConfig:
    t = resolved["task"]
    task = _build("task", TaskSpec, **t)
    tr = resolved["train"]
    obj = _build("objective", ObjectiveConfig, **resolved["objective"])
    th = _build("thresholds", Thresholds, **resolved["thresholds"])
    train_decode = _build("train.decode", DecodeConfig, **tr["decode"])
    init = _build("train.init", InitConfig, **tr["init"])
    scalars = {k: v for k, v in tr.items() if k not in ("decode", "init")}
    if scalars["learning_rate"] <= 0.0:
        raise ConfigError("train.learning_rate", "must be > 0")
    if scalars["group_size"] < 2 and obj.verification.value == "preference":
        raise ConfigError("train.group_size", "preference verification needs G >= 2 (comparisons within a group)")
    train = _build("train", TrainConfig, decode=train_decode, objective=obj, thresholds=th, init=init, **scalars)
    ev = resolved["eval"]
    ev_decode = _build("eval.decode", DecodeConfig, **ev["decode"])
    evcfg = _build("eval", EvalConfig, n=ev["n"], protocol=ev["protocol"], decode=ev_decode, seed=ev["seed"])
    ex = resolved["experiment"]
    if ex["kind"] not in EXPERIMENT_KINDS:
        close = difflib.get_close_matches(ex["kind"], EXPERIMENT_KINDS, n=1)
        hint = f"; did you mean '{close[0]}'?" if close else ""
        raise ConfigError("experiment.kind", f"unknown experiment '{ex['kind']}'{hint}")
    if not ex["seeds"]:
        raise ConfigError("experiment.seeds", "need at least one seed")
    if any(not isinstance(g, (int, float)) or not g > 0 for g in ex["gammas"]):
        raise ConfigError("experiment.gammas", "every margin must be > 0")
    if any(not isinstance(n, int) or n < 1 for n in ex["eval_ns"]):
        raise ConfigError("experiment.eval_ns", "sample counts must be positive integers")
    if ex["workers"] < 1:
        raise ConfigError("experiment.workers", "must be >= 1")
    settings = ExperimentSettings(
        ex["kind"], tuple(int(s) for s in ex["seeds"]), tuple(float(g) for g in ex["gammas"]),
        tuple(ex["eval_ns"]), ex["workers"],
    )
    return RunConfig(task, train, evcfg, settings, resolved)


def parse_mapping(raw: dict | None, preset: str = "toy", seed: int | None = None) -> RunConfig:
    return build(resolve(raw, preset, seed))


def load_yaml(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError("", f"config file not found: {p}")
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("", f"cannot parse {p}: {exc}") from None
    return raw if raw is not None else {}


def parse_config(path, preset: str = "toy", seed: int | None = None) -> RunConfig:
    return parse_mapping(load_yaml(path), preset, seed)

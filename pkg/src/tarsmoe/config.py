"""CLI configuration: one JSON file, full defaults, per-field overrides.

Schema (all fields optional; defaults shown):

    {
      "seed": 0,
      "score_range": {"min": 1.0, "max": 10.0},
      "data": {
        "root": "data",
        "manifest": null,                 // default: <root>/manifest.jsonl
        "sim_experts": ["expert1", "expert2", "expert3"],
        "use_seq_expert": true
      },
      "model": {"width": 512, "heads": 8, "mlp_hidden": 256,
                "dropout": 0.1, "gate_hidden": 64},
      "train": {"batch_size": 16, "epochs": 50, "lr": 0.001,
                "beta1": 0.9, "beta2": 0.999,
                "pair_strategy": "all_in_batch", "k_pairs": null,
                "patience": 10},
      "loss": {"beta": 1.0, "gamma": 0.5, "tau": 0.5, "epsilon": 0.5}
    }

Violations raise ConfigError naming the dotted field path, which the CLI
maps to exit code 2.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .experts import ScoreRange
from .features_io import FeatureLayout
from .losses import LossConfig
from .training import ModelConfig, TrainConfig

_DEFAULTS: dict = {
    "seed": 0,
    "score_range": {"min": 1.0, "max": 10.0},
    "data": {
        "root": "data",
        "manifest": None,
        "sim_experts": ["expert1", "expert2", "expert3"],
        "use_seq_expert": True,
    },
    "model": {"width": 512, "heads": 8, "mlp_hidden": 256, "dropout": 0.1,
              "gate_hidden": 64},
    "train": {"batch_size": 16, "epochs": 50, "lr": 1e-3, "beta1": 0.9,
              "beta2": 0.999, "pair_strategy": "all_in_batch", "k_pairs": None,
              "patience": 10},
    "loss": {"beta": 1.0, "gamma": 0.5, "tau": 0.5, "epsilon": 0.5},
}


def _merge(defaults, given, path: str):
    if isinstance(defaults, dict):
        if not isinstance(given, dict):
            raise ConfigError(f"config: {path or 'top level'}: expected an object")
        out = {}
        for key, dval in defaults.items():
            sub = f"{path}.{key}" if path else key
            # copy untouched defaults so overrides never mutate _DEFAULTS
            out[key] = (_merge(dval, given[key], sub) if key in given
                        else copy.deepcopy(dval))
        for key in given:
            if key not in defaults:
                sub = f"{path}.{key}" if path else key
                raise ConfigError(f"config: unknown field {sub!r}")
        return out
    return given


def _expect(cond: bool, path: str, message: str):
    if not cond:
        raise ConfigError(f"config: {path}: {message}")


def _check_types(cfg: dict) -> None:
    _expect(isinstance(cfg["seed"], int) and not isinstance(cfg["seed"], bool),
            "seed", f"expected an integer, got {cfg['seed']!r}")
    sr = cfg["score_range"]
    for key in ("min", "max"):
        _expect(isinstance(sr[key], (int, float)) and not isinstance(sr[key], bool),
                f"score_range.{key}", f"expected a number, got {sr[key]!r}")
    data = cfg["data"]
    _expect(isinstance(data["root"], str) and data["root"] != "",
            "data.root", "expected a non-empty string")
    _expect(data["manifest"] is None or isinstance(data["manifest"], str),
            "data.manifest", "expected a string or null")
    _expect(isinstance(data["sim_experts"], list) and data["sim_experts"]
            and all(isinstance(s, str) and s for s in data["sim_experts"]),
            "data.sim_experts", "expected a non-empty list of names")
    _expect(len(set(data["sim_experts"])) == len(data["sim_experts"]),
            "data.sim_experts", "names must be unique")
    _expect(isinstance(data["use_seq_expert"], bool),
            "data.use_seq_expert", "expected true or false")
    model = cfg["model"]
    for key in ("width", "heads", "mlp_hidden", "gate_hidden"):
        v = model[key]
        _expect(isinstance(v, int) and not isinstance(v, bool) and v >= 1,
                f"model.{key}", f"expected a positive integer, got {v!r}")
    _expect(isinstance(model["dropout"], (int, float))
            and not isinstance(model["dropout"], bool),
            "model.dropout", f"expected a number, got {model['dropout']!r}")
    train = cfg["train"]
    for key, kind in (("batch_size", int), ("epochs", int), ("patience", int)):
        v = train[key]
        _expect(isinstance(v, kind) and not isinstance(v, bool) and v >= 1,
                f"train.{key}", f"expected a positive integer, got {v!r}")
    for key in ("lr", "beta1", "beta2"):
        v = train[key]
        _expect(isinstance(v, (int, float)) and not isinstance(v, bool),
                f"train.{key}", f"expected a number, got {v!r}")
    _expect(train["pair_strategy"] in ("all_in_batch", "random_k"),
            "train.pair_strategy",
            f"expected 'all_in_batch' or 'random_k', got {train['pair_strategy']!r}")
    _expect(train["k_pairs"] is None
            or (isinstance(train["k_pairs"], int) and not isinstance(train["k_pairs"], bool)
                and train["k_pairs"] >= 1),
            "train.k_pairs", f"expected a positive integer or null, got {train['k_pairs']!r}")
    loss = cfg["loss"]
    for key in ("beta", "gamma", "tau", "epsilon"):
        v = loss[key]
        _expect(isinstance(v, (int, float)) and not isinstance(v, bool) and v >= 0,
                f"loss.{key}", f"expected a number >= 0, got {v!r}")


@dataclass
class AppConfig:
    raw: dict
    seed: int
    score_range: ScoreRange
    layout: FeatureLayout
    root: str
    manifest: str
    model: ModelConfig
    train: TrainConfig
    loss: LossConfig


def resolve(cfg: dict) -> AppConfig:
    """Validate a merged config dict and build the typed views."""
    _check_types(cfg)
    try:
        score_range = ScoreRange(float(cfg["score_range"]["min"]),
                                 float(cfg["score_range"]["max"]))
    except ConfigError as exc:
        raise ConfigError(f"config: score_range: {exc}") from exc
    try:
        loss = LossConfig(beta=float(cfg["loss"]["beta"]),
                          gamma=float(cfg["loss"]["gamma"]),
                          tau=float(cfg["loss"]["tau"]),
                          epsilon=float(cfg["loss"]["epsilon"]))
        model = ModelConfig(width=cfg["model"]["width"], heads=cfg["model"]["heads"],
                            mlp_hidden=cfg["model"]["mlp_hidden"],
                            dropout=float(cfg["model"]["dropout"]),
                            gate_hidden=cfg["model"]["gate_hidden"])
        train = TrainConfig(seed=cfg["seed"],
                            batch_size=cfg["train"]["batch_size"],
                            epochs=cfg["train"]["epochs"],
                            lr=float(cfg["train"]["lr"]),
                            beta1=float(cfg["train"]["beta1"]),
                            beta2=float(cfg["train"]["beta2"]),
                            pair_strategy=cfg["train"]["pair_strategy"],
                            k_pairs=cfg["train"]["k_pairs"],
                            patience=cfg["train"]["patience"],
                            loss=loss)
    except ConfigError as exc:
        raise ConfigError(f"config: {exc}") from exc
    root = cfg["data"]["root"]
    manifest = cfg["data"]["manifest"] or str(Path(root) / "manifest.jsonl")
    layout = FeatureLayout(sim_experts=tuple(cfg["data"]["sim_experts"]),
                           include_seq=cfg["data"]["use_seq_expert"])
    return AppConfig(raw=cfg, seed=cfg["seed"], score_range=score_range,
                     layout=layout, root=root, manifest=manifest,
                     model=model, train=train, loss=loss)


def load_config(path: str | None, overrides: dict | None = None) -> AppConfig:
    """Read the JSON file (defaults if path is None), apply overrides, resolve.

    ``overrides`` maps dotted paths (e.g. ``train.lr``) to values.
    """
    if path is None:
        given = {}
    else:
        try:
            given = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config: file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: {path}: invalid JSON: {exc}") from exc
        if not isinstance(given, dict):
            raise ConfigError(f"config: {path}: expected a JSON object")
    merged = _merge(_DEFAULTS, given, "")
    for dotted, value in (overrides or {}).items():
        node = merged
        parts = dotted.split(".")
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(f"config: unknown field {dotted!r}")
            node = node[part]
        if not isinstance(node, dict) or parts[-1] not in node:
            raise ConfigError(f"config: unknown field {dotted!r}")
        node[parts[-1]] = value
    return resolve(merged)

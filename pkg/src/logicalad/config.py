"""Experiment configuration: named profiles, a JSON file, and overrides.

Resolution order, later wins:

1. the built-in profile (``desk`` or ``paper``),
2. top-level ``generator`` / ``run`` sections of the config file,
3. the file's ``profiles.<name>`` section,
4. ``key=value`` overrides with dotted keys (``run.net.edge_head=false``).

Example file::

    {
      "profile": "desk",
      "seed": 3,
      "run": {"epochs": 40},
      "profiles": {"paper": {"run": {"batch_size": 12}}}
    }
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .generator import GeneratorConfig
from .trainer import RunConfig

PROFILES = ("desk", "paper")
TOP_LEVEL = {"profile", "profiles", "seed", "dataset", "data_root", "generator", "run"}


class ConfigError(ValueError):
    """Invalid configuration file, profile or override."""


@dataclass
class ExperimentConfig:
    profile: str = "desk"
    dataset: str = "mvtec"
    seed: int = 0
    data_root: str | None = None
    generator: GeneratorConfig = field(default_factory=GeneratorConfig.desk)
    run: RunConfig = field(default_factory=RunConfig.desk)

    def to_dict(self) -> dict:
        return {
            "profile": self.profile,
            "dataset": self.dataset,
            "seed": self.seed,
            "data_root": self.data_root,
            "generator": dataclasses.asdict(self.generator),
            "run": self.run.to_dict(),
        }


def _merge(base: dict, update: dict) -> dict:
    out = dict(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _builtin(profile: str, dataset: str) -> dict:
    if profile == "paper":
        gen, run = GeneratorConfig.paper(), RunConfig.paper(dataset)
    else:
        gen, run = GeneratorConfig.desk(), RunConfig.desk()
    return {"generator": dataclasses.asdict(gen), "run": run.to_dict()}


def parse_override(text: str) -> tuple[list[str], object]:
    """``"run.epochs=5"`` to ``(["run", "epochs"], 5)``; values are parsed as JSON when possible."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def _apply(tree: dict, path: list[str], value) -> dict:
    node = tree
    for part in path[:-1]:
        if not isinstance(node.get(part), dict):
            raise ConfigError(f"unknown config section {'.'.join(path)!r}")
        node = node[part]
    if path[-1] not in node:
        raise ConfigError(f"unknown config key {'.'.join(path)!r}")
    node[path[-1]] = value
    return tree


def load_config(path=None, profile: str | None = None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    """Resolve a configuration from an optional file, a profile name and overrides."""
    data: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(data) - TOP_LEVEL
        if unknown:
            raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    name = profile or data.get("profile", "desk")
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; choose one of {PROFILES}")
    dataset = data.get("dataset", "mvtec")

    tree = _builtin(name, dataset)
    tree.update({"seed": data.get("seed", 0), "data_root": data.get("data_root"), "dataset": dataset})
    tree = _merge(tree, {k: data[k] for k in ("generator", "run") if k in data})
    tree = _merge(tree, data.get("profiles", {}).get(name, {}))
    for text in overrides:
        keys, value = parse_override(text)
        tree = _apply(tree, keys, value)

    try:
        gen = GeneratorConfig(**tree["generator"])
        run = RunConfig.from_dict(tree["run"])
        return ExperimentConfig(name, tree["dataset"], int(tree["seed"]), tree["data_root"], gen, run)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

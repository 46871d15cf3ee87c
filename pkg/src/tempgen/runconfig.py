"""Layered run configuration for the command line: defaults, then an
optional JSON config file, then explicit flags, with flags winning.

The resolved configuration is echoed next to every command's outputs as
JSON with a version field, sufficient to rerun the command exactly.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .codec import CodecConfig, SlotLayout, SlotNameStyle
from .corpus import SynthConfig, TaskKind
from .model import ModelConfig
from .topk_copy import CopyConfig, CopyMode
from .training import TrainConfig

CONFIG_VERSION = 1

THREADS_ENV_VAR = "TEMPGEN_THREADS"


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, Any] = {
    "version": CONFIG_VERSION,
    "task": "ree",
    "seed": 0,
    "model": {
        "d_model": 64,
        "n_heads": 8,
        "n_enc_layers": 2,
        "n_dec_layers": 2,
        "d_ff": 256,
        "max_src_len": 512,
        "max_tgt_len": 256,
        "dropout": 0.0,
    },
    "train": {
        "learning_rate": 5e-5,
        "weight_decay": 1e-5,
        "batch_size": 4,
        "epochs": 10,
        "clip_norm": 1.0,
        "checkpoint_every": 0,
    },
    "copy": {
        "mode": "topk",
        "k": None,  # None resolves per head count
    },
    "codec": {
        "slot_names": "semantic",
        "slot_layout": "per-entity",
        "mention_policy": "first",
        "mention_seed": 0,
        "merged_separator": ";",
        "role_order": None,  # None derives from the dataset
    },
    "decode": {
        "beam": 4,
        "max_out": 256,
        "length_penalty": 0.0,
    },
    "synth": {
        "n_docs": 100,
        "doc_len": [100, 140],
        "roles": ["PerpInd", "PerpOrg", "Target", "Victim", "Weapon"],
        "entities_per_slot": [0, 2],
        "mention_repeat": [1, 2],
        "mention_len": [1, 2],
        "distractor_ratio": 0.2,
        "relation_count": [1, 2],
    },
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config_file(path: str | Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    version = obj.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"config version {version} unsupported; "
                          f"expected {CONFIG_VERSION}")
    unknown = set(obj) - set(DEFAULTS) - {"paths", "command"}
    if unknown:
        raise ConfigError(f"unknown config section(s) {sorted(unknown)}")
    return obj


def resolve(config_path: str | None, overrides: dict) -> dict:
    """defaults <- config file <- flag overrides."""
    merged = DEFAULTS
    if config_path:
        merged = _deep_merge(merged, load_config_file(config_path))
    merged = _deep_merge(merged, overrides)
    merged["version"] = CONFIG_VERSION
    return merged


def write_echo(target: str | Path, resolved: dict, command: str) -> Path:
    """Write the fully resolved configuration next to an output. For a
    directory target this is <dir>/config.json, otherwise
    <file>.config.json."""
    target = Path(target)
    if target.is_dir():
        echo_path = target / "config.json"
    else:
        echo_path = target.with_name(target.name + ".config.json")
    payload = dict(resolved)
    payload["command"] = command
    with open(echo_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return echo_path


# ---------------------------------------------------------------------------
# Typed views

def task_from(resolved: dict) -> TaskKind:
    try:
        return TaskKind.from_string(resolved["task"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def model_config(resolved: dict) -> ModelConfig:
    try:
        return ModelConfig(**resolved["model"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model config: {exc}") from None


def copy_config(resolved: dict, n_heads: int) -> CopyConfig:
    section = resolved["copy"]
    try:
        mode = CopyMode(section["mode"])
        return CopyConfig.for_heads(mode, n_heads, section.get("k"))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid copy config: {exc}") from None


def codec_config(resolved: dict, dataset_roles: tuple[str, ...]) -> CodecConfig:
    section = resolved["codec"]
    role_order = section.get("role_order")
    if role_order is None:
        role_order = dataset_roles
    try:
        return CodecConfig(
            role_order=tuple(role_order),
            slot_name_style=SlotNameStyle(section["slot_names"]),
            slot_layout=SlotLayout(section["slot_layout"]),
            mention_policy=section["mention_policy"],
            mention_seed=int(section["mention_seed"]),
            merged_separator=section["merged_separator"],
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid codec config: {exc}") from None


def train_config(resolved: dict, copy_cfg: CopyConfig,
                 codec_cfg: CodecConfig) -> TrainConfig:
    section = resolved["train"]
    try:
        return TrainConfig(
            learning_rate=float(section["learning_rate"]),
            weight_decay=float(section["weight_decay"]),
            batch_size=int(section["batch_size"]),
            epochs=int(section["epochs"]),
            seed=int(resolved["seed"]),
            clip_norm=float(section["clip_norm"]),
            checkpoint_every=int(section["checkpoint_every"]),
            copy=copy_cfg,
            codec=codec_cfg,
        )
    except (KeyError, ValueError, RuntimeError) as exc:
        raise ConfigError(f"invalid train config: {exc}") from None


def synth_config(resolved: dict, task: TaskKind) -> SynthConfig:
    section = resolved["synth"]
    try:
        return SynthConfig(
            task=task,
            n_docs=int(section["n_docs"]),
            doc_len=tuple(section["doc_len"]),
            roles=tuple(section["roles"]),
            entities_per_slot=tuple(section["entities_per_slot"]),
            mention_repeat=tuple(section["mention_repeat"]),
            mention_len=tuple(section["mention_len"]),
            distractor_ratio=float(section["distractor_ratio"]),
            relation_count=tuple(section["relation_count"]),
            rng_seed=int(resolved["seed"]),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid synth config: {exc}") from None


DEFAULT_THREADS = 2


def configure_threads() -> int:
    """Cap worker parallelism from the environment. Returns the cap.

    Without the variable, parallelism is pinned to a small fixed value:
    the matrices here are small enough that thread synchronization costs
    more than it saves, and a fixed count keeps float reduction order,
    and therefore outputs, reproducible across machines.
    """
    import torch

    raw = os.environ.get(THREADS_ENV_VAR)
    if raw:
        try:
            n = max(1, int(raw))
        except ValueError:
            raise ConfigError(
                f"{THREADS_ENV_VAR} must be an integer, got {raw!r}") from None
    else:
        n = DEFAULT_THREADS
    torch.set_num_threads(n)
    return n

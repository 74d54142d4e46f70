"""Experiment configuration: TOML files resolving to the typed configs.

Sections mirror the dataclass fields: [network] (with optional `preset` as a
base), [network.sampler], [train], and [train.loss].  Every key is optional;
omitted keys take the dataclass defaults.  emit_config() prints the fully
resolved state and load_config(emit_config(x)) == x.
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .attention import SamplerSpec
from .errors import ConfigError
from .losses import CRConfig
from .network import NetworkConfig, preset
from .training import TrainConfig


@dataclass(frozen=True)
class ExperimentConfig:
    network: NetworkConfig
    train: TrainConfig


def default_experiment(preset_name: str = "B") -> ExperimentConfig:
    return ExperimentConfig(network=preset(preset_name), train=TrainConfig())


def _check_keys(table: dict, allowed, where: str):
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")


def _tup(value):
    return tuple(value) if isinstance(value, list) else value


def _build_network(table: dict) -> NetworkConfig:
    allowed = ("preset", "base_channels", "stage_depths", "block_kinds",
               "attention", "recursion", "ca_reduction", "sa_reduction",
               "global_residual", "dtype", "sampler")
    _check_keys(table, allowed, "network")
    base = preset(table["preset"]) if "preset" in table else NetworkConfig()
    fields = {k: _tup(v) for k, v in table.items()
              if k not in ("preset", "sampler")}
    sampler_table = table.get("sampler", {})
    if sampler_table:
        _check_keys(sampler_table, ("variant", "factors", "grid_sizes"),
                    "network.sampler")
        merged = asdict(base.sampler)
        merged.update({k: _tup(v) for k, v in sampler_table.items()})
        fields["sampler"] = SamplerSpec(**merged)
    return replace(base, **fields)


def _build_train(table: dict) -> TrainConfig:
    allowed = ("iterations", "lr_init", "lr_final", "batch_size", "crop",
               "seed", "augment", "eval_interval", "checkpoint_interval",
               "early_stop_psnr", "loss")
    _check_keys(table, allowed, "train")
    fields = {k: v for k, v in table.items() if k != "loss"}
    for key in ("lr_init", "lr_final", "early_stop_psnr"):
        if key in fields:
            fields[key] = float(fields[key])
    loss_table = table.get("loss", {})
    if loss_table:
        _check_keys(loss_table, ("variant", "taps", "weights", "eps", "beta"),
                    "train.loss")
        fields["loss"] = CRConfig(**{k: _tup(v) for k, v in loss_table.items()})
    return TrainConfig(**fields)


def load_config(text_or_path) -> ExperimentConfig:
    """Parse a TOML config from a string or a file path."""
    if isinstance(text_or_path, Path):
        text = text_or_path.read_text()
    elif (isinstance(text_or_path, str) and "\n" not in text_or_path
          and len(text_or_path) < 4096 and Path(text_or_path).is_file()):
        text = Path(text_or_path).read_text()
    else:
        text = str(text_or_path)
    try:
        tables = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc
    _check_keys(tables, ("network", "train"), "top level")
    return ExperimentConfig(
        network=_build_network(tables.get("network", {})),
        train=_build_train(tables.get("train", {})),
    )


def _toml_scalar(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return f'"{value}"'
    if isinstance(value, (tuple, list)):
        return "[" + ", ".join(_toml_scalar(v) for v in value) + "]"
    raise ConfigError(f"cannot serialize {value!r} to TOML")


def _emit_table(name: str, items: dict) -> str:
    lines = [f"[{name}]"]
    for key, value in items.items():
        if value is None:
            continue
        lines.append(f"{key} = {_toml_scalar(value)}")
    return "\n".join(lines)


def emit_config(exp: ExperimentConfig) -> str:
    """Fully resolved TOML text; parsing it back reproduces `exp` exactly."""
    net = asdict(exp.network)
    sampler = net.pop("sampler")
    tr = asdict(exp.train)
    loss = tr.pop("loss")
    parts = [
        _emit_table("network", net),
        _emit_table("network.sampler", sampler),
        _emit_table("train", tr),
        _emit_table("train.loss", loss),
    ]
    return "\n\n".join(parts) + "\n"

"""Run configuration: defaults, then an INI-style file, then command-line flags.

Example file::

    [general]
    seed = 7

    [paths]
    manifest = data/manifest.csv
    out_dir = runs/baseline

    [split]
    val = H01,A01
    test = H02,A02

    [model]
    conv_specs = 5:16,3:8,3:4
    attention_dim = 128

    [train]
    epochs = 50
    batch_size = 32

    [pipeline]
    window = 256
    stride = 192

    [denoise]
    enabled = false
    wavelet = db4
    levels = 4

    [classes]
    standing_knee_flexion = 0
    sitting_knee_extension = 1
    gait = 2
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from limbnet.dataset import DEFAULT_LABEL_MAP
from limbnet.errors import ConfigError
from limbnet.model import ModelConfig
from limbnet.pipeline import STRIDE, WINDOW_LEN
from limbnet.train import TrainConfig
from limbnet.wavelet import DenoiseConfig

DEFAULTS: dict[str, dict[str, str]] = {
    "general": {"seed": "0", "latency_iters": "200"},
    "paths": {"manifest": "", "out_dir": ".", "weights": "", "split": ""},
    "split": {"val": "", "test": ""},
    "model": {"conv_specs": "5:16,3:8,3:4", "pool_window": "2", "padding": "same",
              "attention_dim": "128", "n_attention_heads": "2", "dense_hidden": "100",
              "dropout_rate": "0.5"},
    "train": {"epochs": "50", "batch_size": "32", "lr": "0.001", "beta1": "0.9",
              "beta2": "0.999", "eps": "1e-8"},
    "pipeline": {"window": str(WINDOW_LEN), "stride": str(STRIDE)},
    "denoise": {"enabled": "false", "wavelet": "db4", "levels": "4",
                "threshold_rule": "universal-soft"},
    "classes": {k: str(v) for k, v in DEFAULT_LABEL_MAP.items()},
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _bool(text: str, key: str) -> bool:
    t = text.strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ConfigError(f"{key}: expected a boolean, got {text!r}")


def _int(text: str, key: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {text!r}") from None


def _float(text: str, key: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {text!r}") from None


def parse_pair(text: str, key: str) -> tuple[str, str] | None:
    if not text.strip():
        return None
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2 or not all(parts):
        raise ConfigError(f"{key}: expected 'HEALTHY_ID,ABNORMAL_ID', got {text!r}")
    return parts[0], parts[1]


def parse_conv_specs(text: str) -> tuple[tuple[int, int], ...]:
    try:
        return tuple((int(k), int(c)) for k, c in (s.split(":") for s in text.split(",")))
    except ValueError:
        raise ConfigError(f"conv_specs: expected 'K:C,K:C,...', got {text!r}") from None


@dataclass
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    stride: int
    manifest: Path | None
    out_dir: Path
    weights: Path | None
    split_file: Path | None
    val_pair: tuple[str, str] | None
    test_pair: tuple[str, str] | None
    seed: int
    latency_iters: int
    label_map: dict[str, int]
    explicit: set[str] = field(default_factory=set)   # "section.key" set by file or flag

    @property
    def window_len(self) -> int:
        return self.model.window_len


def read_config_file(path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str.lower
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    values = {}
    for section in parser.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, val in parser.items(section):
            if section != "classes" and key not in DEFAULTS[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            values.setdefault(section, {})[key] = val
    return values


def build_run_config(config_file=None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Merge defaults <- config file <- overrides (``{"section.key": value}``)."""
    merged = {s: dict(v) for s, v in DEFAULTS.items()}
    explicit = set()
    if config_file:
        for section, values in read_config_file(config_file).items():
            if section == "classes":
                merged["classes"] = {}
            merged[section].update(values)
            explicit |= {f"{section}.{k}" for k in values}
    for dotted, val in (overrides or {}).items():
        if val is None:
            continue
        section, key = dotted.split(".", 1)
        merged[section][key] = str(val)
        explicit.add(dotted)

    g, m, t, d = merged["general"], merged["model"], merged["train"], merged["denoise"]
    seed = _int(g["seed"], "general.seed")
    if seed < 0:
        raise ConfigError("seed must be non-negative")
    try:
        denoise = DenoiseConfig(_bool(d["enabled"], "denoise.enabled"), d["wavelet"],
                                _int(d["levels"], "denoise.levels"), d["threshold_rule"])
        model = ModelConfig(
            window_len=_int(merged["pipeline"]["window"], "pipeline.window"),
            conv_specs=parse_conv_specs(m["conv_specs"]),
            pool_window=_int(m["pool_window"], "model.pool_window"),
            padding=m["padding"],
            attention_dim=_int(m["attention_dim"], "model.attention_dim"),
            n_attention_heads=_int(m["n_attention_heads"], "model.n_attention_heads"),
            dense_hidden=_int(m["dense_hidden"], "model.dense_hidden"),
            dropout_rate=_float(m["dropout_rate"], "model.dropout_rate"),
            seed=seed)
        train = TrainConfig(
            epochs=_int(t["epochs"], "train.epochs"),
            batch_size=_int(t["batch_size"], "train.batch_size"),
            lr=_float(t["lr"], "train.lr"), beta1=_float(t["beta1"], "train.beta1"),
            beta2=_float(t["beta2"], "train.beta2"), eps=_float(t["eps"], "train.eps"),
            seed=seed, denoise=denoise)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    stride = _int(merged["pipeline"]["stride"], "pipeline.stride")
    if stride < 1:
        raise ConfigError("stride must be positive")
    label_map = {k: _int(v, f"classes.{k}") for k, v in merged["classes"].items()}
    p = merged["paths"]
    return RunConfig(
        model=model, train=train, stride=stride,
        manifest=Path(p["manifest"]) if p["manifest"] else None,
        out_dir=Path(p["out_dir"] or "."),
        weights=Path(p["weights"]) if p["weights"] else None,
        split_file=Path(p["split"]) if p["split"] else None,
        val_pair=parse_pair(merged["split"]["val"], "split.val"),
        test_pair=parse_pair(merged["split"]["test"], "split.test"),
        seed=seed, latency_iters=_int(g["latency_iters"], "general.latency_iters"),
        label_map=label_map, explicit=explicit)


# model-shaping keys: if any of these is set explicitly it must agree with a loaded weight file
MODEL_KEYS = {
    "pipeline.window": lambda c: c.window_len,
    "model.conv_specs": lambda c: c.conv_specs,
    "model.pool_window": lambda c: c.pool_window,
    "model.padding": lambda c: c.padding,
    "model.attention_dim": lambda c: c.attention_dim,
    "model.n_attention_heads": lambda c: c.n_attention_heads,
    "model.dense_hidden": lambda c: c.dense_hidden,
}


def check_weights_match(run: RunConfig, weights_config: ModelConfig) -> None:
    for key, get in MODEL_KEYS.items():
        if key in run.explicit and get(run.model) != get(weights_config):
            raise ConfigError(f"{key} = {get(run.model)} does not match the weight file "
                              f"({get(weights_config)})")

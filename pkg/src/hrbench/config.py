"""Benchmark configuration: flat key = value sections in one INI file.

Every training-protocol hyperparameter has a key whose default is the
published protocol value (AdamW at 1e-3, batch 64, 6 epochs, seeds 0/1/2,
theta candidates 100/95/90/85, 1000 bootstrap draws, F-beta with beta 2).
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .synth import SyntheticSpec
from .training import TrainConfig


@dataclass(frozen=True)
class DataConfig:
    peaks_manifest: str = ""
    peaks_combined: str = ""
    exclude: tuple[str, ...] = ()
    dataset_dir: str = "out/dataset"
    synth_dir: str = "data/synthetic"


@dataclass(frozen=True)
class WindowConfig:
    context_seconds: int = 60
    horizon_seconds: int = 10
    theta_candidates: tuple[float, ...] = (100.0, 95.0, 90.0, 85.0)


@dataclass(frozen=True)
class SplitConfig:
    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15)
    seed: int = 0


@dataclass(frozen=True)
class ModelsConfig:
    kinds: tuple[str, ...] = ("grud", "transformer")
    grud_hidden: int = 64
    d_model: int = 64
    layers: int = 2
    heads: int = 4
    ffn_dim: int = 256
    layer_norm: bool = True


@dataclass(frozen=True)
class CalibrationConfig:
    enabled: bool = True
    beta: float = 2.0


@dataclass(frozen=True)
class EvaluationConfig:
    bootstrap_draws: int = 1000
    bootstrap_seed: int = 1234
    ece_bins: int = 10


@dataclass(frozen=True)
class BenchConfig:
    data: DataConfig = field(default_factory=DataConfig)
    windows: WindowConfig = field(default_factory=WindowConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    models: ModelsConfig = field(default_factory=ModelsConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    hidden_sweep: tuple[int, ...] = ()
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    synth: SyntheticSpec = field(default_factory=SyntheticSpec)
    runs_dir: str = "out/runs"


def _parse_value(raw: str, kind):
    raw = raw.strip()
    if kind is bool:
        return raw.lower() in ("1", "true", "yes", "on")
    if kind in (int, float, str):
        return kind(raw)
    raise TypeError(f"unsupported config field type {kind}")


def _parse_tuple(raw: str, kind):
    items = [item.strip() for item in raw.split(",") if item.strip()]
    return tuple(kind(item) for item in items)


_TUPLE_KINDS = {
    "exclude": str,
    "theta_candidates": float,
    "ratios": float,
    "kinds": str,
    "seeds": int,
    "hidden_sweep": int,
}


def _load_section(parser: configparser.ConfigParser, section: str, cls, extra=()):
    kwargs = {}
    if parser.has_section(section):
        names = {f.name: f for f in fields(cls)}
        for key, raw in parser.items(section):
            if key in extra:
                continue
            if key not in names:
                raise ValueError(f"unknown key {key!r} in section [{section}]")
            f = names[key]
            if key in _TUPLE_KINDS:
                kwargs[key] = _parse_tuple(raw, _TUPLE_KINDS[key])
            else:
                kwargs[key] = _parse_value(raw, f.type if isinstance(f.type, type) else type(getattr(cls(), key)))
    return cls(**kwargs)


def load_config(path) -> BenchConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")
    train_extra = ("hidden_sweep", "runs_dir")
    config = BenchConfig(
        data=_load_section(parser, "data", DataConfig),
        windows=_load_section(parser, "windows", WindowConfig),
        split=_load_section(parser, "split", SplitConfig),
        models=_load_section(parser, "models", ModelsConfig),
        train=_load_section(parser, "train", TrainConfig, extra=train_extra),
        calibration=_load_section(parser, "calibration", CalibrationConfig),
        evaluation=_load_section(parser, "evaluation", EvaluationConfig),
        synth=_load_section(parser, "synth", SyntheticSpec),
    )
    hidden_sweep: tuple[int, ...] = ()
    runs_dir = config.runs_dir
    if parser.has_option("train", "hidden_sweep"):
        hidden_sweep = _parse_tuple(parser.get("train", "hidden_sweep"), int)
    if parser.has_option("train", "runs_dir"):
        runs_dir = parser.get("train", "runs_dir").strip()
    return BenchConfig(
        data=config.data,
        windows=config.windows,
        split=config.split,
        models=config.models,
        train=config.train,
        hidden_sweep=hidden_sweep,
        calibration=config.calibration,
        evaluation=config.evaluation,
        synth=config.synth,
        runs_dir=runs_dir,
    )


DEFAULT_CONFIG_TEXT = """\
# Benchmark configuration. Every key shows its default; delete or edit freely.

[data]
# Either a manifest CSV (record_id,path to one peak-times file per record)
# or a single combined CSV (record_id,peak_time).
peaks_manifest =
peaks_combined =
exclude =
dataset_dir = out/dataset
# Where `bench synth` writes; `bench prepare` falls back to its manifest when
# no peak source is configured.
synth_dir = data/synthetic

[windows]
context_seconds = 60
horizon_seconds = 10
theta_candidates = 100,95,90,85

[split]
ratios = 0.70,0.15,0.15
seed = 0

[models]
kinds = grud,transformer
grud_hidden = 64
d_model = 64
layers = 2
heads = 4
ffn_dim = 256
layer_norm = true

[train]
lr = 0.001
batch_size = 64
epochs = 6
seeds = 0,1,2
weight_decay = 0.01
prevalence_eps = 1e-6
target_mode = residual
hidden_sweep =
runs_dir = out/runs

[calibration]
enabled = true
beta = 2.0

[evaluation]
bootstrap_draws = 1000
bootstrap_seed = 1234
ece_bins = 10

[synth]
n_records = 20
record_seconds = 1800
base_hr = 78.0
ar_coeff = 0.9
reversion = 0.9
noise_scale = 0.25
episode_rate_per_hour = 4.0
episode_duration_s = 110.0
episode_amplitude = 42.0
episode_ramp_s = 40.0
osc_amplitude = 10.0
osc_period_s = 100.0
seed = 7
"""


def write_default_config(path) -> None:
    Path(path).write_text(DEFAULT_CONFIG_TEXT, encoding="utf-8")

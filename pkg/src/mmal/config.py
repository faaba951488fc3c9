"""INI experiment configs with schema validation and dotted error paths.

Sections: [dataset] (synthetic parameters or a CSV source), [model],
[train], [experiment]. Unknown sections or keys are rejected so typos
surface immediately; every error names its ``section.key`` path.
"""

from __future__ import annotations

import configparser
from pathlib import Path
from typing import Callable, Optional

from .data import SynthConfig
from .errors import ConfigError
from .loop import ExperimentConfig
from .model import CONCAT, FUSIONS, TrainConfig
from .strategies import STRATEGY_NAMES

_SCHEMA: dict[str, set[str]] = {
    "dataset": {
        "source", "n", "classes", "dim_m1", "dim_m2",
        "snr_m1", "snr_m2", "dominant_fraction", "seed",
    },
    "model": {"fusion", "encoder_m1", "encoder_m2"},
    "train": {"epochs", "batch_size", "learning_rate"},
    "experiment": {
        "name", "strategy", "initial_budget", "round_budget", "rounds",
        "split", "seed", "repetitions",
    },
}


def _convert(section: str, key: str, raw: str, kind: Callable, what: str):
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{section}.{key}: expected {what}, got {raw!r}") from None


class _Section:
    def __init__(self, parser: configparser.ConfigParser, name: str):
        self.name = name
        self.data = dict(parser[name]) if parser.has_section(name) else {}
        unknown = set(self.data) - _SCHEMA[name]
        if unknown:
            raise ConfigError(f"{name}.{sorted(unknown)[0]}: unknown key")

    def get_int(self, key: str, default: int) -> int:
        if key not in self.data:
            return default
        return _convert(self.name, key, self.data[key], int, "an integer")

    def get_float(self, key: str, default: float) -> float:
        if key not in self.data:
            return default
        return _convert(self.name, key, self.data[key], float, "a number")

    def get_str(self, key: str, default: str) -> str:
        return self.data.get(key, default)

    def get_optional_int(self, key: str) -> Optional[int]:
        raw = self.data.get(key, "none").strip().lower()
        if raw == "none":
            return None
        return _convert(self.name, key, raw, int, "an integer or 'none'")


def parse_config(path: str | Path) -> ExperimentConfig:
    """Parse an INI experiment config; missing keys take documented defaults."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such config file: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{section}: unknown section")

    dataset = _Section(parser, "dataset")
    model = _Section(parser, "model")
    train = _Section(parser, "train")
    experiment = _Section(parser, "experiment")

    source = dataset.get_str("source", "synthetic")
    synth = None
    data_path = None
    if source == "synthetic":
        synth = SynthConfig(
            n=dataset.get_int("n", 2000),
            num_classes=dataset.get_int("classes", 4),
            dim_m1=dataset.get_int("dim_m1", 16),
            dim_m2=dataset.get_int("dim_m2", 16),
            snr_m1=dataset.get_float("snr_m1", 1.0),
            snr_m2=dataset.get_float("snr_m2", 1.0),
            dominant_fraction=dataset.get_float("dominant_fraction", 0.0),
            seed=dataset.get_int("seed", 0),
        )
    else:
        data_path = source

    fusion = model.get_str("fusion", CONCAT)
    if fusion not in FUSIONS:
        raise ConfigError(f"model.fusion: expected one of {FUSIONS}, got {fusion!r}")

    strategy = experiment.get_str("strategy", "random")
    if strategy not in STRATEGY_NAMES:
        raise ConfigError(
            f"experiment.strategy: expected one of {STRATEGY_NAMES}, got {strategy!r}"
        )

    cfg = ExperimentConfig(
        strategy=strategy,
        initial_budget=experiment.get_int("initial_budget", 100),
        round_budget=experiment.get_int("round_budget", 50),
        num_rounds=experiment.get_int("rounds", 5),
        synth=synth,
        data_path=data_path,
        train=TrainConfig(
            epochs=train.get_int("epochs", 30),
            batch_size=train.get_int("batch_size", 32),
            learning_rate=train.get_float("learning_rate", 0.05),
        ),
        fusion=fusion,
        enc_m1=model.get_optional_int("encoder_m1"),
        enc_m2=model.get_optional_int("encoder_m2"),
        split=experiment.get_int("split", 1),
        master_seed=experiment.get_int("seed", 0),
        repetitions=experiment.get_int("repetitions", 1),
        name=experiment.get_str("name", "default"),
    )
    cfg.validate()
    return cfg

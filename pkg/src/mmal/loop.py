"""Active-learning protocol: a random seed round, then alternating
query -> label -> retrain rounds with per-round metrics.

Round 0 labels a random initial pool (identical across strategies for the
same master seed and repetition) and trains on it. Each later round queries
the previous round's model for a fresh batch, grows the labeled pool, and
retrains from a new seeded initialization. All randomness derives from
(master seed, repetition, round, role), so a run is fully reproducible.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .attribution import attribute_pool
from .data import Dataset, SynthConfig, generate_synthetic, load_dataset
from .errors import ConfigError
from .evaluation import mean_contribution
from .model import (
    CONCAT,
    FUSIONS,
    ModelDims,
    ModelParams,
    TrainConfig,
    evaluate,
    init_model,
    train,
)
from .seeding import derive_seed, spawn_rng
from .strategies import STRATEGY_NAMES, QueryRequest, run_query

# Seed-path roles.
_INIT_POOL = 1
_MODEL_INIT = 2
_TRAIN = 3
_QUERY = 4


@dataclass(frozen=True)
class ExperimentConfig:
    """One active-learning experiment: data source, strategy, budgets."""

    strategy: str
    initial_budget: int
    round_budget: int
    num_rounds: int
    synth: Optional[SynthConfig] = None
    data_path: Optional[str] = None
    train: TrainConfig = field(default_factory=TrainConfig)
    fusion: str = CONCAT
    enc_m1: Optional[int] = None
    enc_m2: Optional[int] = None
    split: int = 1
    master_seed: int = 0
    repetitions: int = 1
    name: str = "default"

    def validate(self) -> None:
        if (self.synth is None) == (self.data_path is None):
            raise ConfigError("exactly one of synth config or data path required")
        if self.strategy not in STRATEGY_NAMES:
            raise ConfigError(
                f"unknown strategy {self.strategy!r}; expected one of {STRATEGY_NAMES}"
            )
        if self.initial_budget < 1:
            raise ConfigError("initial_budget must be positive")
        if self.round_budget < 1:
            raise ConfigError("round_budget must be positive")
        if self.num_rounds < 0:
            raise ConfigError("num_rounds must be >= 0")
        if self.fusion not in FUSIONS:
            raise ConfigError(f"unknown fusion {self.fusion!r}")
        if self.split < 1:
            raise ConfigError("split must be >= 1")
        if self.round_budget % self.split:
            raise ConfigError("split must divide round_budget")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be positive")
        self.train.validate()
        if self.synth is not None:
            self.synth.validate()


@dataclass
class RoundReport:
    """Metrics for one AL round, including the batch that produced its pool."""

    round_index: int
    labeled_size: int
    mm_top1: float
    m1_top1: float
    m2_top1: float
    phi_m1: float
    phi_m2: float
    selected: np.ndarray
    selected_mean_rho: Optional[float]
    selection_log: list[dict]
    wall_ms: float


@dataclass
class RunRecord:
    setting: str
    strategy: str
    repetition: int
    reports: list[RoundReport]
    final_model: Optional[ModelParams] = None


@dataclass
class ReportBundle:
    """All runs of a suite, with per-round aggregation helpers."""

    runs: list[RunRecord]

    def settings(self) -> list[str]:
        out: list[str] = []
        for run in self.runs:
            if run.setting not in out:
                out.append(run.setting)
        return out

    def strategies(self, setting: str) -> list[str]:
        out: list[str] = []
        for run in self.runs:
            if run.setting == setting and run.strategy not in out:
                out.append(run.strategy)
        return out

    def accuracy_array(
        self, setting: str, strategy: str, metric: str = "mm_top1"
    ) -> np.ndarray:
        """(repetitions, rounds) array of one metric."""
        rows = [
            [getattr(rep, metric) for rep in run.reports]
            for run in self.runs
            if run.setting == setting and run.strategy == strategy
        ]
        if not rows:
            raise ConfigError(f"no runs recorded for {setting}/{strategy}")
        return np.asarray(rows, dtype=np.float64)

    def accuracy_table(self, metric: str = "mm_top1") -> dict[str, dict[str, np.ndarray]]:
        return {
            setting: {
                strategy: self.accuracy_array(setting, strategy, metric)
                for strategy in self.strategies(setting)
            }
            for setting in self.settings()
        }

    def aggregate(
        self, setting: str, strategy: str, metric: str = "mm_top1"
    ) -> tuple[np.ndarray, np.ndarray]:
        """Per-round mean and population std across repetitions."""
        arr = self.accuracy_array(setting, strategy, metric)
        return arr.mean(axis=0), arr.std(axis=0)

    def metrics_rows(self) -> list[dict]:
        rows = []
        for run in self.runs:
            for rep in run.reports:
                rows.append({
                    "setting": run.setting,
                    "strategy": run.strategy,
                    "repetition": run.repetition,
                    "round": rep.round_index,
                    "labeled": rep.labeled_size,
                    "mm_top1": rep.mm_top1,
                    "m1_top1": rep.m1_top1,
                    "m2_top1": rep.m2_top1,
                    "phi_m1": rep.phi_m1,
                    "phi_m2": rep.phi_m2,
                })
        return rows

    def selection_rows(self) -> list[dict]:
        rows = []
        for run in self.runs:
            for rep in run.reports:
                for record in rep.selection_log:
                    rows.append({
                        "setting": run.setting,
                        "strategy": run.strategy,
                        "repetition": run.repetition,
                        "round": rep.round_index,
                        **record,
                    })
        return rows


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    cfg.validate()
    if cfg.synth is not None:
        return generate_synthetic(cfg.synth)
    return load_dataset(cfg.data_path)


def _model_dims(cfg: ExperimentConfig, dataset: Dataset) -> ModelDims:
    d1, d2 = dataset.modality_dims
    return ModelDims(d1, d2, dataset.num_classes, cfg.enc_m1, cfg.enc_m2)


def _selection_records(result, attr) -> list[dict]:
    scores = (
        result.selected_diagnostic("score")
        if "score" in result.diagnostics
        else [None] * result.selected.size
    )
    return [
        {
            "index": int(idx),
            "score": None if score is None else float(score),
            "phi_m1": float(attr.contributions[i, 0]),
            "phi_m2": float(attr.contributions[i, 1]),
            "rho": float(attr.rho[i]),
        }
        for i, (idx, score) in enumerate(zip(result.selected, scores))
    ]


def run_experiment(
    cfg: ExperimentConfig,
    dataset: Optional[Dataset] = None,
    repetition: int = 0,
    keep_final_model: bool = False,
) -> RunRecord:
    """Run one repetition: seed round plus ``num_rounds`` query rounds."""
    cfg.validate()
    if dataset is None:
        dataset = build_dataset(cfg)
    train_pool = dataset.train_indices
    need = cfg.initial_budget + cfg.num_rounds * cfg.round_budget
    if need > train_pool.size:
        raise ConfigError(
            f"budget needs {need} train samples, split has {train_pool.size}"
        )
    dims = _model_dims(cfg, dataset)
    seed = cfg.master_seed

    init_rng = spawn_rng(seed, repetition, _INIT_POOL)
    drawn = init_rng.choice(train_pool, size=cfg.initial_budget, replace=False)
    labeled = np.sort(drawn)
    unlabeled = np.setdiff1d(train_pool, labeled)

    reports: list[RoundReport] = []
    pending_selected = drawn
    pending_rho: Optional[float] = None
    pending_log: list[dict] = [{"index": int(i), "score": None, "phi_m1": None,
                                "phi_m2": None, "rho": None} for i in drawn]
    model: Optional[ModelParams] = None
    for t in range(cfg.num_rounds + 1):
        t0 = time.perf_counter()
        fresh = init_model(dims, cfg.fusion, derive_seed(seed, repetition, t, _MODEL_INIT))
        train_cfg = replace(cfg.train, seed=derive_seed(seed, repetition, t, _TRAIN))
        model = train(fresh, dataset, labeled, train_cfg)
        mm, m1, m2 = evaluate(model, dataset, dataset.test_indices)
        phi_m1, phi_m2 = mean_contribution(model, dataset, dataset.test_indices)
        report = RoundReport(
            round_index=t,
            labeled_size=int(labeled.size),
            mm_top1=mm, m1_top1=m1, m2_top1=m2,
            phi_m1=phi_m1, phi_m2=phi_m2,
            selected=np.asarray(pending_selected, dtype=np.int64),
            selected_mean_rho=pending_rho,
            selection_log=pending_log,
            wall_ms=0.0,
        )
        if t < cfg.num_rounds:
            # The query seed ignores the strategy name, so strategies that
            # coincide (e.g. bmmal on an all-balanced pool vs badge) pick
            # identical batches.
            req = QueryRequest(
                unlabeled_indices=unlabeled,
                labeled_indices=labeled,
                budget=cfg.round_budget,
                rng_seed=derive_seed(seed, repetition, t + 1, _QUERY),
                strategy=cfg.strategy,
                split=cfg.split,
            )
            try:
                result = run_query(req, model, dataset)
            except ConfigError as exc:
                raise ConfigError(f"round {t + 1} query failed: {exc}") from exc
            attr = attribute_pool(
                model,
                dataset.x_m1[result.selected],
                dataset.x_m2[result.selected],
            )
            pending_selected = result.selected
            pending_rho = float(attr.rho.mean())
            pending_log = _selection_records(result, attr)
            labeled = np.sort(np.concatenate([labeled, result.selected]))
            unlabeled = np.setdiff1d(unlabeled, result.selected)
        report.wall_ms = (time.perf_counter() - t0) * 1000.0
        reports.append(report)
    return RunRecord(
        setting=cfg.name,
        strategy=cfg.strategy,
        repetition=repetition,
        reports=reports,
        final_model=model if keep_final_model else None,
    )


def run_suite(
    cfgs: list[ExperimentConfig],
    repetitions: Optional[int] = None,
    keep_final_models: bool = False,
) -> ReportBundle:
    """Run every config ``repetitions`` times (default: each config's own
    count) with derived per-repetition seeds; aggregate into a bundle."""
    runs: list[RunRecord] = []
    for cfg in cfgs:
        cfg.validate()
        dataset = build_dataset(cfg)
        reps = cfg.repetitions if repetitions is None else repetitions
        for rep in range(reps):
            runs.append(
                run_experiment(cfg, dataset, rep, keep_final_model=keep_final_models)
            )
    return ReportBundle(runs=runs)

"""Analysis statistics: contribution curves, dominated-subset summaries,
Welch t-tests, pairwise win matrices, and classwise accuracy deltas.

The t critical values come from an in-package regularized incomplete beta
implementation (continued fraction plus bisection), so significance calls do
not depend on an external stats library.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .attribution import PoolAttribution, attribute_pool
from .data import Dataset
from .errors import ConfigError, LoadError
from .model import ModelParams, forward_batch

DEFAULT_CONFIDENCE = 0.9

METRICS_HEADER = [
    "setting", "strategy", "repetition", "round", "labeled",
    "mm_top1", "m1_top1", "m2_top1", "phi_m1", "phi_m2",
]


# ---------------------------------------------------------------------------
# Student t machinery (regularized incomplete beta + bisection inverse)

_BETA_EPS = 3e-14
_BETA_FPMIN = 1e-300
_BETA_MAXIT = 300


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (Lentz's method)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _BETA_FPMIN:
        d = _BETA_FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _BETA_MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETA_FPMIN:
            d = _BETA_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _BETA_FPMIN:
            c = _BETA_FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETA_FPMIN:
            d = _BETA_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _BETA_FPMIN:
            c = _BETA_FPMIN
        d = 1.0 / d
        step = d * c
        h *= step
        if abs(step - 1.0) < _BETA_EPS:
            return h
    return h


def _betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_bt = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log(1.0 - x)
    )
    bt = math.exp(ln_bt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf(a, b, x) / a
    return 1.0 - bt * _betacf(b, a, 1.0 - x) / b


def t_cdf(t: float, df: float) -> float:
    if df <= 0:
        raise ConfigError("degrees of freedom must be positive")
    if math.isinf(t):
        return 1.0 if t > 0 else 0.0
    x = df / (df + t * t)
    tail = 0.5 * _betainc(df / 2.0, 0.5, x)
    return 1.0 - tail if t >= 0 else tail


def t_quantile(p: float, df: float) -> float:
    """Inverse t CDF by bisection on :func:`t_cdf`."""
    if not 0.0 < p < 1.0:
        raise ConfigError("quantile level must be in (0, 1)")
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return -t_quantile(1.0 - p, df)
    hi = 1.0
    while t_cdf(hi, df) < p:
        hi *= 2.0
        if hi > 1e12:
            return hi
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if t_cdf(mid, df) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Welch's two-sample test


@dataclass(frozen=True)
class WelchResult:
    t: float
    df: float
    critical: float
    significant: bool


def welch_ttest(
    a: Sequence[float], b: Sequence[float], confidence: float = DEFAULT_CONFIDENCE
) -> WelchResult:
    """Two-sided unequal-variance t-test at the given confidence level.

    Degenerate zero-variance inputs: identical means give t = 0 (not
    significant); different means give an infinite t (significant).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ConfigError("welch_ttest needs at least two values per sample")
    if not 0.0 < confidence < 1.0:
        raise ConfigError("confidence must be in (0, 1)")
    mean_a, mean_b = float(a.mean()), float(b.mean())
    var_a = float(a.var(ddof=1))
    var_b = float(b.var(ddof=1))
    sa, sb = var_a / a.size, var_b / b.size
    level = 1.0 - (1.0 - confidence) / 2.0
    if sa + sb == 0.0:
        if mean_a == mean_b:
            return WelchResult(t=0.0, df=float(a.size + b.size - 2),
                               critical=math.nan, significant=False)
        t = math.copysign(math.inf, mean_a - mean_b)
        return WelchResult(t=t, df=float(a.size + b.size - 2),
                           critical=math.nan, significant=True)
    t = (mean_a - mean_b) / math.sqrt(sa + sb)
    df = (sa + sb) ** 2 / (
        sa**2 / (a.size - 1) + sb**2 / (b.size - 1)
    )
    critical = t_quantile(level, df)
    return WelchResult(t=t, df=df, critical=critical, significant=abs(t) > critical)


# ---------------------------------------------------------------------------
# Contribution curves and dominated-subset summaries


def mean_contribution(
    model: ModelParams, dataset: Dataset, indices: np.ndarray
) -> tuple[float, float]:
    """Per-modality contribution averaged over the given samples."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise ConfigError("empty index set")
    attr = attribute_pool(model, dataset.x_m1[indices], dataset.x_m2[indices])
    means = attr.contributions.mean(axis=0)
    return float(means[0]), float(means[1])


@dataclass
class SubsetStats:
    """Per-dominated-subset summary; entries are None for empty subsets.

    ``mean_offweight[i]`` is the average modulation weight of the
    non-dominant modality (1 - rho) among samples where modality i dominates.
    """

    counts: tuple[int, int]
    mean_offweight: tuple[Optional[float], Optional[float]]
    mean_rho: tuple[Optional[float], Optional[float]]
    mean_contributions: tuple[float, float]


def dominated_subset_stats(attr: PoolAttribution) -> SubsetStats:
    """Partition samples by their dominant modality (argmax contribution,
    ties to modality 1) and summarize weights and dominance per subset."""
    m1_dom = attr.contributions[:, 0] >= attr.contributions[:, 1]
    masks = (m1_dom, ~m1_dom)
    offweight = []
    rho = []
    for mask in masks:
        if not mask.any():
            offweight.append(None)
            rho.append(None)
        else:
            offweight.append(float((1.0 - attr.rho[mask]).mean()))
            rho.append(float(attr.rho[mask].mean()))
    means = attr.contributions.mean(axis=0)
    return SubsetStats(
        counts=(int(masks[0].sum()), int(masks[1].sum())),
        mean_offweight=(offweight[0], offweight[1]),
        mean_rho=(rho[0], rho[1]),
        mean_contributions=(float(means[0]), float(means[1])),
    )


# ---------------------------------------------------------------------------
# Pairwise strategy comparison


@dataclass
class PairwiseMatrix:
    """Significant-win counts: entry (i, j) accumulates 1/L per round where
    strategy i significantly beats strategy j, summed over settings."""

    strategies: list[str]
    p: np.ndarray
    settings_count: int
    rounds: int
    confidence: float = DEFAULT_CONFIDENCE

    def column_averages(self) -> np.ndarray:
        """Per-strategy average of times beaten (lower is better)."""
        return self.p.mean(axis=0)


def pairwise_matrix(
    accuracy: dict[str, dict[str, np.ndarray]],
    confidence: float = DEFAULT_CONFIDENCE,
) -> PairwiseMatrix:
    """Build the win matrix from per-setting accuracy arrays.

    ``accuracy[setting][strategy]`` is a (repetitions, rounds) array. Every
    setting must carry the same strategies and round count; each round's
    comparison is a Welch test across repetitions.
    """
    if not accuracy:
        raise ConfigError("no settings given")
    settings = list(accuracy)
    strategies = list(accuracy[settings[0]])
    if len(strategies) < 2:
        raise ConfigError("need at least two strategies to compare")
    rounds = None
    for setting in settings:
        if list(accuracy[setting]) != strategies:
            raise ConfigError(f"setting {setting!r}: strategy set mismatch")
        for name, arr in accuracy[setting].items():
            arr = np.asarray(arr)
            if arr.ndim != 2:
                raise ConfigError(f"{setting}/{name}: expected 2-D (reps, rounds)")
            if rounds is None:
                rounds = arr.shape[1]
            if arr.shape[1] != rounds:
                raise ConfigError(
                    f"{setting}/{name}: mismatched rounds "
                    f"({arr.shape[1]} != {rounds})"
                )
    num = len(strategies)
    p = np.zeros((num, num))
    for setting in settings:
        arrays = [np.asarray(accuracy[setting][s], dtype=np.float64) for s in strategies]
        for t in range(rounds):
            for i in range(num):
                for j in range(num):
                    if i == j:
                        continue
                    a, b = arrays[i][:, t], arrays[j][:, t]
                    res = welch_ttest(a, b, confidence)
                    if res.significant and a.mean() > b.mean():
                        p[i, j] += 1.0 / rounds
    return PairwiseMatrix(
        strategies=strategies, p=p, settings_count=len(settings),
        rounds=rounds, confidence=confidence,
    )


# ---------------------------------------------------------------------------
# Classwise comparison


@dataclass
class ClasswiseDelta:
    """Per-class accuracy gaps between two models, sorted by the multimodal
    delta (descending). Classes absent from the index set are listed in
    ``missing`` and excluded from records."""

    records: list[dict]
    missing: list[int]


def classwise_delta(
    model_a: ModelParams, model_b: ModelParams, dataset: Dataset,
    indices: Optional[np.ndarray] = None,
) -> ClasswiseDelta:
    indices = dataset.test_indices if indices is None else np.asarray(indices)
    if indices.size == 0:
        raise ConfigError("empty index set")
    y = dataset.labels[indices]
    fa = forward_batch(model_a, dataset.x_m1[indices], dataset.x_m2[indices])
    fb = forward_batch(model_b, dataset.x_m1[indices], dataset.x_m2[indices])
    records = []
    missing = []
    for k in range(dataset.num_classes):
        mask = y == k
        if not mask.any():
            missing.append(k)
            continue
        rec = {"class": k, "support": int(mask.sum())}
        for name, logits_a, logits_b in (
            ("mm", fa.f_mm, fb.f_mm),
            ("m1", fa.f_m1, fb.f_m1),
            ("m2", fa.f_m2, fb.f_m2),
        ):
            acc_a = float(np.mean(np.argmax(logits_a[mask], axis=1) == k))
            acc_b = float(np.mean(np.argmax(logits_b[mask], axis=1) == k))
            rec[f"{name}_delta"] = acc_a - acc_b
        records.append(rec)
    records.sort(key=lambda r: (-r["mm_delta"], r["class"]))
    return ClasswiseDelta(records=records, missing=missing)


# ---------------------------------------------------------------------------
# Metrics and matrix files


def write_metrics(rows: list[dict], path: str | Path) -> None:
    """CSV dump of per-round metrics; floats use repr for exact round-trips."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
        for row in rows:
            writer.writerow([
                row["setting"], row["strategy"],
                int(row["repetition"]), int(row["round"]), int(row["labeled"]),
                repr(float(row["mm_top1"])), repr(float(row["m1_top1"])),
                repr(float(row["m2_top1"])),
                repr(float(row["phi_m1"])), repr(float(row["phi_m2"])),
            ])


def read_metrics(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise LoadError(f"no such metrics file: {path}")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != METRICS_HEADER:
            raise LoadError(f"{path}: unexpected metrics header")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(METRICS_HEADER):
                raise LoadError(f"{path} row {lineno}: wrong column count")
            try:
                rows.append({
                    "setting": row[0], "strategy": row[1],
                    "repetition": int(row[2]), "round": int(row[3]),
                    "labeled": int(row[4]),
                    "mm_top1": float(row[5]), "m1_top1": float(row[6]),
                    "m2_top1": float(row[7]),
                    "phi_m1": float(row[8]), "phi_m2": float(row[9]),
                })
            except ValueError as exc:
                raise LoadError(f"{path} row {lineno}: {exc}") from exc
    if not rows:
        raise LoadError(f"{path}: no metric rows")
    return rows


def metrics_to_accuracy(
    rows: list[dict], metric: str = "mm_top1"
) -> dict[str, dict[str, np.ndarray]]:
    """Group metric rows into the (reps, rounds) arrays pairwise_matrix eats."""
    if metric not in METRICS_HEADER[5:]:
        raise ConfigError(f"unknown metric {metric!r}")
    table: dict[str, dict[str, dict[tuple[int, int], float]]] = {}
    for row in rows:
        table.setdefault(row["setting"], {}).setdefault(row["strategy"], {})[
            (row["repetition"], row["round"])
        ] = row[metric]
    out: dict[str, dict[str, np.ndarray]] = {}
    for setting, per_strategy in table.items():
        out[setting] = {}
        for strategy, cells in per_strategy.items():
            reps = 1 + max(r for r, _ in cells)
            rounds = 1 + max(t for _, t in cells)
            if len(cells) != reps * rounds:
                raise LoadError(
                    f"{setting}/{strategy}: missing metric rows "
                    f"({len(cells)} of {reps * rounds})"
                )
            arr = np.empty((reps, rounds))
            for (r, t), v in cells.items():
                arr[r, t] = v
            out[setting][strategy] = arr
    return out


def write_matrix(matrix: PairwiseMatrix, path: str | Path) -> None:
    """Matrix file: strategy header, one row per strategy, then the
    column-average row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", *matrix.strategies])
        for name, row in zip(matrix.strategies, matrix.p):
            writer.writerow([name, *[repr(float(v)) for v in row]])
        writer.writerow(
            ["column_avg", *[repr(float(v)) for v in matrix.column_averages()]]
        )

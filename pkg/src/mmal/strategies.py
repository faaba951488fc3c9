"""Batch acquisition strategies over a trained model and an unlabeled pool.

All strategies take a :class:`QueryRequest` and return a
:class:`QueryResult` with exactly ``budget`` distinct unlabeled indices,
selected deterministically for a fixed seed. Diagnostics (scores,
contribution shares, dominance) are emitted pool-wide so downstream
analysis never recomputes them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Callable

import numpy as np

from .data import Dataset
from .embedding import embedding_matrix
from .errors import ConfigError
from .model import ModelParams, forward_batch
from .seeding import derive_seed, spawn_rng

log = logging.getLogger(__name__)

RANDOM = "random"
ENTROPY = "entropy"
CORESET = "coreset"
BADGE = "badge"
BMMAL = "bmmal"
STRATEGY_NAMES = (RANDOM, ENTROPY, CORESET, BADGE, BMMAL)

# Seed-path tags for the split wrapper.
_SPLIT_SHUFFLE = 11
_SPLIT_CHUNK = 12


@dataclass(frozen=True)
class QueryRequest:
    """One acquisition call: the pool, the labeled set, and a budget."""

    unlabeled_indices: np.ndarray
    labeled_indices: np.ndarray
    budget: int
    rng_seed: int
    strategy: str = RANDOM
    split: int = 1

    def validate(self) -> None:
        unlabeled = np.asarray(self.unlabeled_indices)
        labeled = np.asarray(self.labeled_indices)
        if self.budget < 1:
            raise ConfigError("budget must be positive")
        if self.budget > unlabeled.size:
            raise ConfigError(
                f"budget {self.budget} exceeds pool size {unlabeled.size}"
            )
        if np.intersect1d(unlabeled, labeled).size:
            raise ConfigError("labeled and unlabeled index sets overlap")
        if self.split < 1:
            raise ConfigError("split must be >= 1")
        if self.budget % self.split:
            raise ConfigError(
                f"split {self.split} must divide budget {self.budget}"
            )


@dataclass
class QueryResult:
    """Selected indices (in pick order) plus pool-aligned diagnostics."""

    selected: np.ndarray
    pool_indices: np.ndarray
    diagnostics: dict[str, np.ndarray] = field(default_factory=dict)
    peak_embedding_rows: int = 0
    kmeanspp_fallback: bool = False

    def __post_init__(self) -> None:
        self.selected = np.asarray(self.selected, dtype=np.int64)
        self.pool_indices = np.asarray(self.pool_indices, dtype=np.int64)
        if len(set(self.selected.tolist())) != self.selected.size:
            raise ConfigError("duplicate indices in selection")
        if not np.isin(self.selected, self.pool_indices).all():
            raise ConfigError("selection outside the unlabeled pool")

    def selected_diagnostic(self, key: str) -> np.ndarray:
        """Diagnostic values for the selected samples, in selection order."""
        lookup = {int(p): i for i, p in enumerate(self.pool_indices)}
        rows = [lookup[int(s)] for s in self.selected]
        return self.diagnostics[key][rows]


def select_random(req: QueryRequest) -> QueryResult:
    """Seeded uniform sample without replacement."""
    req.validate()
    rng = spawn_rng(req.rng_seed)
    pool = np.asarray(req.unlabeled_indices, dtype=np.int64)
    selected = rng.choice(pool, size=req.budget, replace=False)
    return QueryResult(selected=selected, pool_indices=pool)


def select_entropy(req: QueryRequest, model: ModelParams, dataset: Dataset) -> QueryResult:
    """Top-budget samples by multimodal predictive entropy; ties go to the
    lower dataset index."""
    req.validate()
    pool = np.asarray(req.unlabeled_indices, dtype=np.int64)
    fwd = forward_batch(model, dataset.x_m1[pool], dataset.x_m2[pool])
    p = fwd.p_mm
    plogp = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    scores = -np.sum(plogp, axis=1)
    order = np.lexsort((pool, -scores))
    selected = pool[order[: req.budget]]
    return QueryResult(
        selected=selected, pool_indices=pool, diagnostics={"score": scores}
    )


def _min_sq_dist(points: np.ndarray, center: np.ndarray) -> np.ndarray:
    diff = points - center[None, :]
    return np.einsum("ij,ij->i", diff, diff)


def select_coreset(req: QueryRequest, model: ModelParams, dataset: Dataset) -> QueryResult:
    """Greedy k-center over fused features: each pick maximizes the Euclidean
    distance to the nearest covered point (labeled plus already picked).

    With no labeled samples the first pick is the max-norm feature.
    """
    req.validate()
    pool = np.asarray(req.unlabeled_indices, dtype=np.int64)
    labeled = np.asarray(req.labeled_indices, dtype=np.int64)
    feats = forward_batch(model, dataset.x_m1[pool], dataset.x_m2[pool]).z_mm
    picks: list[int] = []
    if labeled.size:
        centers = forward_batch(
            model, dataset.x_m1[labeled], dataset.x_m2[labeled]
        ).z_mm
        # ||a - b||^2 expanded; clip tiny negatives from cancellation.
        sq = (
            np.sum(feats**2, axis=1)[:, None]
            - 2.0 * feats @ centers.T
            + np.sum(centers**2, axis=1)[None, :]
        )
        d2 = np.maximum(sq.min(axis=1), 0.0)
    else:
        first = int(np.argmax(np.linalg.norm(feats, axis=1)))
        picks.append(first)
        d2 = _min_sq_dist(feats, feats[first])
    initial_d2 = d2.copy()
    while len(picks) < req.budget:
        nxt = int(np.argmax(d2))
        picks.append(nxt)
        d2 = np.minimum(d2, _min_sq_dist(feats, feats[nxt]))
    return QueryResult(
        selected=pool[picks],
        pool_indices=pool,
        diagnostics={"score": np.sqrt(initial_d2)},
    )


def _dsquared_select(
    embeddings: np.ndarray, budget: int, rng: np.random.Generator
) -> tuple[list[int], bool]:
    """K-means++ seeding: deterministic max-norm first center, then D^2
    sampling. Returns local row indices plus a flag for the uniform fallback
    taken when every remaining distance is zero.

    Distance updates use the expanded form with a single mat-vec per pick
    over a float32 working copy: D^2 ranking needs no more precision, and
    halving the streamed bytes keeps the per-pick pass cache-friendly.
    Chosen rows are re-zeroed to kill the cancellation residue.
    """
    n = embeddings.shape[0]
    work = np.ascontiguousarray(embeddings, dtype=np.float32)
    sq_norms = np.einsum("ij,ij->i", work, work)
    picks = [int(np.argmax(sq_norms))]
    fallback = False
    scratch = np.empty(n, dtype=np.float32)

    def sq_dist_to(row: int) -> np.ndarray:
        # ||e - c||^2 expanded around one mat-vec; reuses the scratch buffer
        np.dot(work, work[row], out=scratch)
        np.multiply(scratch, np.float32(-2.0), out=scratch)
        np.add(scratch, sq_norms, out=scratch)
        np.add(scratch, sq_norms[row], out=scratch)
        np.maximum(scratch, np.float32(0.0), out=scratch)
        return scratch

    d2 = sq_dist_to(picks[0]).astype(np.float64)
    d2[picks[0]] = 0.0
    while len(picks) < budget:
        total = float(d2.sum())
        if total <= 0.0:
            fallback = True
            remaining = np.setdiff1d(np.arange(n), np.asarray(picks))
            extra = rng.choice(remaining, size=budget - len(picks), replace=False)
            picks.extend(int(i) for i in extra)
            break
        probs = d2 / total
        probs /= probs.sum()
        pick = int(rng.choice(n, p=probs))
        picks.append(pick)
        np.minimum(d2, sq_dist_to(pick), out=d2)
        d2[pick] = 0.0
    return picks, fallback


def kmeanspp_seed(embeddings: np.ndarray, budget: int, rng_seed: int) -> list[int]:
    """K-means++ seeding over embedding rows; returns ``budget`` distinct row
    indices (first pick: largest L2 norm, ties to the lower index)."""
    embeddings = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if budget < 1 or budget > embeddings.shape[0]:
        raise ConfigError(f"budget {budget} outside [1, {embeddings.shape[0]}]")
    picks, fallback = _dsquared_select(embeddings, budget, spawn_rng(rng_seed))
    if fallback:
        log.warning("k-means++ fell back to uniform sampling (zero distances)")
    return picks


def _embedding_query(
    req: QueryRequest, model: ModelParams, dataset: Dataset, modulated: bool
) -> QueryResult:
    req.validate()
    pool = np.asarray(req.unlabeled_indices, dtype=np.int64)
    matrix, attribution = embedding_matrix(
        model, dataset.x_m1[pool], dataset.x_m2[pool], modulated=modulated
    )
    picks, fallback = _dsquared_select(matrix, req.budget, spawn_rng(req.rng_seed))
    if fallback:
        log.warning("k-means++ fell back to uniform sampling (zero distances)")
    diagnostics: dict[str, np.ndarray] = {
        "score": np.linalg.norm(matrix, axis=1),
    }
    if attribution is not None:
        diagnostics["phi_m1"] = attribution.contributions[:, 0]
        diagnostics["phi_m2"] = attribution.contributions[:, 1]
        diagnostics["rho"] = attribution.rho
        diagnostics["w_m1"] = attribution.weights[:, 0]
        diagnostics["w_m2"] = attribution.weights[:, 1]
    return QueryResult(
        selected=pool[picks],
        pool_indices=pool,
        diagnostics=diagnostics,
        peak_embedding_rows=pool.size,
        kmeanspp_fallback=fallback,
    )


def select_badge(req: QueryRequest, model: ModelParams, dataset: Dataset) -> QueryResult:
    """K-means++ seeding over plain gradient embeddings."""
    return _embedding_query(req, model, dataset, modulated=False)


def select_bmmal(req: QueryRequest, model: ModelParams, dataset: Dataset) -> QueryResult:
    """K-means++ seeding over attribution-modulated gradient embeddings."""
    return _embedding_query(req, model, dataset, modulated=True)


def split_pool_query(
    req: QueryRequest, strategy_fn: Callable[[QueryRequest], QueryResult]
) -> QueryResult:
    """Run a strategy over S seeded-shuffled pool chunks with budget B/S each.

    Cuts the peak embedding buffer by roughly S at the cost of chunk-local
    (rather than global) diversity. S = 1 is exactly the direct call.
    """
    req.validate()
    if req.split == 1:
        return strategy_fn(req)
    pool = np.asarray(req.unlabeled_indices, dtype=np.int64)
    shuffled = spawn_rng(req.rng_seed, _SPLIT_SHUFFLE).permutation(pool)
    chunks = np.array_split(shuffled, req.split)
    sub_budget = req.budget // req.split
    if min(len(c) for c in chunks) < sub_budget:
        raise ConfigError("pool too small for the requested split")
    parts = []
    for ci, chunk in enumerate(chunks):
        sub = replace(
            req,
            unlabeled_indices=chunk,
            budget=sub_budget,
            split=1,
            rng_seed=derive_seed(req.rng_seed, _SPLIT_CHUNK, ci),
        )
        parts.append(strategy_fn(sub))
    keys = set(parts[0].diagnostics)
    return QueryResult(
        selected=np.concatenate([p.selected for p in parts]),
        pool_indices=np.concatenate([p.pool_indices for p in parts]),
        diagnostics={
            k: np.concatenate([p.diagnostics[k] for p in parts]) for k in keys
        },
        peak_embedding_rows=max(p.peak_embedding_rows for p in parts),
        kmeanspp_fallback=any(p.kmeanspp_fallback for p in parts),
    )


def run_query(req: QueryRequest, model: ModelParams, dataset: Dataset) -> QueryResult:
    """Dispatch by strategy name, applying the pool-split wrapper."""
    if req.strategy not in STRATEGY_NAMES:
        raise ConfigError(
            f"unknown strategy {req.strategy!r}; expected one of {STRATEGY_NAMES}"
        )
    if req.strategy == RANDOM:
        fn: Callable[[QueryRequest], QueryResult] = select_random
    else:
        fn = partial(
            {
                ENTROPY: select_entropy,
                CORESET: select_coreset,
                BADGE: select_badge,
                BMMAL: select_bmmal,
            }[req.strategy],
            model=model,
            dataset=dataset,
        )
    return split_pool_query(req, fn)

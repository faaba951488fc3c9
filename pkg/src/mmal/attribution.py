"""Per-sample modality attribution via exact Shapley values.

The model outcome for a feature subset is the multimodal softmax probability
of the pseudo class, with absent modalities replaced by zero vectors at the
encoded-feature level. Shapley values over that outcome yield normalized
contributions, a dominance degree, and the modulation weights used to
rebalance gradient embeddings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Collection, FrozenSet

import numpy as np

from .data import MultimodalSample
from .errors import ConfigError
from .model import ModelParams, forward_batch, softmax

M1, M2 = 0, 1
MAX_PLAYERS = 20


@dataclass
class AttributionResult:
    """Shapley values phi, contributions (|phi| normalized to sum 1),
    dominance degree rho, and per-modality modulation weights.

    ``degenerate`` marks the all-zero-phi fallback where contributions
    default to uniform.
    """

    phi: np.ndarray
    contributions: np.ndarray
    rho: float
    weights: np.ndarray
    degenerate: bool = False


@dataclass
class PoolAttribution:
    """Vectorized attribution over a pool; rows align with the input order."""

    phi: np.ndarray  # (n, 2)
    contributions: np.ndarray  # (n, 2)
    rho: np.ndarray  # (n,)
    weights: np.ndarray  # (n, 2)
    degenerate: np.ndarray  # (n,) bool
    pseudo_labels: np.ndarray  # (n,)


def _masked_outcomes(
    model: ModelParams, x_m1: np.ndarray, x_m2: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Outcome V(S) for all four modality subsets, batched.

    Returns (v_both, v_m1, v_m2, v_none, pseudo_labels). The pseudo label is
    fixed from the full-input forward pass and reused for every subset.
    """
    fwd = forward_batch(model, x_m1, x_m2)
    n = fwd.p_mm.shape[0]
    rows = np.arange(n)
    y_hat = fwd.pseudo_labels
    left, right = model.mm_blocks()
    a1 = fwd.z_m1 @ left.T
    a2 = fwd.z_m2 @ right.T
    v_both = fwd.p_mm[rows, y_hat]
    v_m1 = softmax(a1 + model.b_mm)[rows, y_hat]
    v_m2 = softmax(a2 + model.b_mm)[rows, y_hat]
    v_none = softmax(np.broadcast_to(model.b_mm, a1.shape))[rows, y_hat]
    return v_both, v_m1, v_m2, v_none, y_hat


def model_outcome(
    model: ModelParams,
    mask: Collection[int],
    sample: MultimodalSample,
    pseudo_label: int,
) -> float:
    """Multimodal softmax probability of ``pseudo_label`` with modalities
    outside ``mask`` zeroed at the encoded-feature level.

    ``mask`` holds the present modality indices (0 and/or 1).
    """
    if not 0 <= pseudo_label < model.num_classes:
        raise ConfigError(f"pseudo label {pseudo_label} outside [0, {model.num_classes})")
    fwd = forward_batch(model, sample.x_m1[None, :], sample.x_m2[None, :])
    left, right = model.mm_blocks()
    a1 = fwd.z_m1 @ left.T if M1 in mask else np.zeros((1, model.num_classes))
    a2 = fwd.z_m2 @ right.T if M2 in mask else np.zeros((1, model.num_classes))
    p = softmax(a1 + a2 + model.b_mm)
    return float(p[0, pseudo_label])


def shapley_exact(
    outcome_fn: Callable[[FrozenSet[int]], float], num_players: int
) -> np.ndarray:
    """Exact Shapley values by full subset enumeration.

    ``outcome_fn`` maps a frozenset of player indices to a real value. The
    marginal contribution of player i to subset S is weighted by
    |S|! (M - |S| - 1)! / M!.
    """
    if num_players < 1:
        raise ConfigError("need at least one player")
    if num_players > MAX_PLAYERS:
        raise ConfigError(
            f"{num_players} players means 2^{num_players} evaluations; refusing"
        )
    m = num_players
    values = {}
    for bits in range(1 << m):
        subset = frozenset(i for i in range(m) if bits >> i & 1)
        values[bits] = float(outcome_fn(subset))
    fact = [math.factorial(i) for i in range(m + 1)]
    weights = [fact[s] * fact[m - s - 1] / fact[m] for s in range(m)]
    phi = np.zeros(m)
    for i in range(m):
        for bits in range(1 << m):
            if bits >> i & 1:
                continue
            size = bin(bits).count("1")
            phi[i] += weights[size] * (values[bits | (1 << i)] - values[bits])
    return phi


def shapley_two(model: ModelParams, sample: MultimodalSample) -> tuple[float, float]:
    """Closed-form two-modality Shapley values from the four masked outcomes."""
    v_both, v_m1, v_m2, v_none, _ = _masked_outcomes(
        model, sample.x_m1[None, :], sample.x_m2[None, :]
    )
    phi1 = 0.5 * ((v_both[0] - v_m2[0]) + (v_m1[0] - v_none[0]))
    phi2 = 0.5 * ((v_both[0] - v_m1[0]) + (v_m2[0] - v_none[0]))
    return float(phi1), float(phi2)


def contribution(phi: np.ndarray) -> np.ndarray:
    """Normalized absolute Shapley values, summing to one.

    All-zero phi falls back to the uniform 1/M split; callers flag that case
    via :class:`AttributionResult`.
    """
    phi = np.asarray(phi, dtype=np.float64)
    total = np.sum(np.abs(phi))
    if total == 0.0:
        return np.full(phi.shape, 1.0 / phi.size)
    return np.abs(phi) / total


def dominance(contributions: np.ndarray) -> float:
    """Total gap between the largest contribution and each contribution.

    Zero iff all contributions are equal; |Phi_1 - Phi_2| for two modalities.
    """
    c = np.asarray(contributions, dtype=np.float64)
    return float(np.sum(np.max(c) - c))


def modulation_weights(contributions: np.ndarray) -> tuple[float, float]:
    """Two-modality weights: 1 for the dominant modality, 1 - rho for the
    other. Ties count modality 1 as dominant."""
    c = np.asarray(contributions, dtype=np.float64)
    if c.shape != (2,):
        raise ConfigError("modulation weights are defined for two modalities")
    rho = abs(float(c[0] - c[1]))
    if c[0] >= c[1]:
        return 1.0, 1.0 - rho
    return 1.0 - rho, 1.0


def attribute(model: ModelParams, sample: MultimodalSample) -> AttributionResult:
    """Full per-sample pipeline: Shapley -> contributions -> rho -> weights."""
    pool = attribute_pool(model, sample.x_m1[None, :], sample.x_m2[None, :])
    return AttributionResult(
        phi=pool.phi[0],
        contributions=pool.contributions[0],
        rho=float(pool.rho[0]),
        weights=pool.weights[0],
        degenerate=bool(pool.degenerate[0]),
    )


def attribute_pool(
    model: ModelParams, x_m1: np.ndarray, x_m2: np.ndarray
) -> PoolAttribution:
    """Vectorized attribution for every row of the given feature arrays."""
    v_both, v_m1, v_m2, v_none, y_hat = _masked_outcomes(model, x_m1, x_m2)
    phi1 = 0.5 * ((v_both - v_m2) + (v_m1 - v_none))
    phi2 = 0.5 * ((v_both - v_m1) + (v_m2 - v_none))
    phi = np.stack([phi1, phi2], axis=1)
    totals = np.sum(np.abs(phi), axis=1)
    degenerate = totals == 0.0
    safe = np.where(degenerate, 1.0, totals)
    contributions = np.abs(phi) / safe[:, None]
    contributions[degenerate] = 0.5
    rho = np.abs(contributions[:, 0] - contributions[:, 1])
    m1_dominant = contributions[:, 0] >= contributions[:, 1]
    weights = np.stack(
        [np.where(m1_dominant, 1.0, 1.0 - rho), np.where(m1_dominant, 1.0 - rho, 1.0)],
        axis=1,
    )
    return PoolAttribution(
        phi=phi,
        contributions=contributions,
        rho=rho,
        weights=weights,
        degenerate=degenerate,
        pseudo_labels=y_hat,
    )

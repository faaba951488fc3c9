"""Gradient embeddings of the multimodal classifier head.

The embedding of a sample is the closed-form gradient of its pseudo-label
cross-entropy loss with respect to the multimodal head matrix: row i equals
(p_i - 1{y_hat = i}) * z_mm. The modulated variant scales each modality's
feature block by its attribution weight before forming the rows, shrinking
the embedding of samples with unbalanced contributions.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attribution import PoolAttribution, attribute_pool
from .data import MultimodalSample
from .model import CONCAT, ModelParams, forward_batch


@dataclass
class GradientEmbedding:
    """One sample's (K, D_mm) gradient rows; flattening is row-major."""

    rows: np.ndarray
    sample_index: int = -1
    modulated: bool = False

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.rows))

    def flattened(self) -> np.ndarray:
        return self.rows.reshape(-1)


def _weighted_fusion(
    model: ModelParams, z_m1: np.ndarray, z_m2: np.ndarray, weights: np.ndarray
) -> np.ndarray:
    """Fused feature with per-modality scaling: blockwise for concatenation,
    addend-wise for summation."""
    w1 = weights[:, 0:1]
    w2 = weights[:, 1:2]
    if model.fusion == CONCAT:
        return np.concatenate([w1 * z_m1, w2 * z_m2], axis=1)
    return w1 * z_m1 + w2 * z_m2


def _rows_from(p_mm: np.ndarray, pseudo: np.ndarray, fused: np.ndarray) -> np.ndarray:
    """(n, K, D) rows g_i = (p_i - 1{y_hat=i}) fused, batched."""
    n, k = p_mm.shape
    coeff = p_mm.copy()
    coeff[np.arange(n), pseudo] -= 1.0
    return coeff[:, :, None] * fused[:, None, :]


def embedding_matrix(
    model: ModelParams,
    x_m1: np.ndarray,
    x_m2: np.ndarray,
    modulated: bool = False,
) -> tuple[np.ndarray, PoolAttribution | None]:
    """Flattened (n, K * D_mm) embeddings for a pool of samples.

    With ``modulated=True`` the per-sample attribution is computed and
    returned alongside the matrix; otherwise the second element is None.
    """
    fwd = forward_batch(model, x_m1, x_m2)
    attribution = None
    if modulated:
        attribution = attribute_pool(model, x_m1, x_m2)
        fused = _weighted_fusion(model, fwd.z_m1, fwd.z_m2, attribution.weights)
    else:
        fused = fwd.z_mm
    rows = _rows_from(fwd.p_mm, fwd.pseudo_labels, fused)
    n = rows.shape[0]
    return rows.reshape(n, -1), attribution


def gradient_embedding(
    model: ModelParams, sample: MultimodalSample, sample_index: int = -1
) -> GradientEmbedding:
    """Closed-form pseudo-label CE gradient w.r.t. the multimodal head."""
    fwd = forward_batch(model, sample.x_m1[None, :], sample.x_m2[None, :])
    rows = _rows_from(fwd.p_mm, fwd.pseudo_labels, fwd.z_mm)[0]
    return GradientEmbedding(rows=rows, sample_index=sample_index, modulated=False)


def modulated_embedding(
    model: ModelParams, sample: MultimodalSample, sample_index: int = -1
) -> GradientEmbedding:
    """Gradient embedding with attribution weights applied per modality block."""
    fwd = forward_batch(model, sample.x_m1[None, :], sample.x_m2[None, :])
    attribution = attribute_pool(model, sample.x_m1[None, :], sample.x_m2[None, :])
    fused = _weighted_fusion(model, fwd.z_m1, fwd.z_m2, attribution.weights)
    rows = _rows_from(fwd.p_mm, fwd.pseudo_labels, fused)[0]
    return GradientEmbedding(rows=rows, sample_index=sample_index, modulated=True)


def dump_embeddings(matrix: np.ndarray, path: str | Path) -> None:
    """Binary dump with shape header for offline inspection (npy format)."""
    np.save(path, np.asarray(matrix, dtype=np.float64))


def load_embeddings(path: str | Path) -> np.ndarray:
    return np.load(path, allow_pickle=False)

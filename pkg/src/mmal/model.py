"""Late-fusion two-modality classifier with closed-form SGD training.

Each modality passes through an optional one-hidden-layer ReLU encoder
(identity by default), then three linear heads produce unimodal logits
f_m1, f_m2 and multimodal logits f_mm over the fused feature (concatenation
or summation). The training loss is the average of the three cross-entropy
terms, and all gradients are computed in closed form.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .data import Dataset, MultimodalSample
from .errors import ConfigError, LoadError

log = logging.getLogger(__name__)

CONCAT = "concat"
SUM = "sum"
FUSIONS = (CONCAT, SUM)


@dataclass(frozen=True)
class ModelDims:
    """Input dims, class count, and optional encoder hidden widths.

    ``enc_m1`` / ``enc_m2`` of None means the encoder is the identity and the
    encoded dim equals the input dim.
    """

    dim_m1: int
    dim_m2: int
    num_classes: int
    enc_m1: Optional[int] = None
    enc_m2: Optional[int] = None

    @property
    def encoded_m1(self) -> int:
        return self.enc_m1 if self.enc_m1 is not None else self.dim_m1

    @property
    def encoded_m2(self) -> int:
        return self.enc_m2 if self.enc_m2 is not None else self.dim_m2


@dataclass
class EncoderParams:
    weight: np.ndarray  # (hidden, in)
    bias: np.ndarray  # (hidden,)


@dataclass
class ModelParams:
    """All trainable matrices. Heads are (K, feature_dim) plus bias (K,)."""

    fusion: str
    enc_m1: Optional[EncoderParams]
    enc_m2: Optional[EncoderParams]
    w_m1: np.ndarray
    b_m1: np.ndarray
    w_m2: np.ndarray
    b_m2: np.ndarray
    w_mm: np.ndarray
    b_mm: np.ndarray

    def __post_init__(self) -> None:
        if self.fusion not in FUSIONS:
            raise ConfigError(f"unknown fusion {self.fusion!r}")
        d1, d2, dmm = self.w_m1.shape[1], self.w_m2.shape[1], self.w_mm.shape[1]
        if self.fusion == CONCAT and dmm != d1 + d2:
            raise ConfigError(f"concat fusion needs D_mm == {d1 + d2}, got {dmm}")
        if self.fusion == SUM and not (d1 == d2 == dmm):
            raise ConfigError("sum fusion needs equal encoded dims on both modalities")
        for arr in self.arrays().values():
            if not np.all(np.isfinite(arr)):
                raise ConfigError("model weights contain non-finite entries")

    @property
    def num_classes(self) -> int:
        return self.w_mm.shape[0]

    @property
    def encoded_dims(self) -> tuple[int, int]:
        return self.w_m1.shape[1], self.w_m2.shape[1]

    @property
    def input_dims(self) -> tuple[int, int]:
        d1 = self.enc_m1.weight.shape[1] if self.enc_m1 is not None else self.w_m1.shape[1]
        d2 = self.enc_m2.weight.shape[1] if self.enc_m2 is not None else self.w_m2.shape[1]
        return d1, d2

    def mm_blocks(self) -> tuple[np.ndarray, np.ndarray]:
        """The multimodal head split per modality.

        For concatenation this is the (left, right) column split; for
        summation both modalities share the full matrix.
        """
        if self.fusion == CONCAT:
            d1 = self.w_m1.shape[1]
            return self.w_mm[:, :d1], self.w_mm[:, d1:]
        return self.w_mm, self.w_mm

    def arrays(self) -> dict[str, np.ndarray]:
        """Named view of every trainable array (used by SGD and checkpoints)."""
        out = {
            "w_m1": self.w_m1, "b_m1": self.b_m1,
            "w_m2": self.w_m2, "b_m2": self.b_m2,
            "w_mm": self.w_mm, "b_mm": self.b_mm,
        }
        if self.enc_m1 is not None:
            out["enc_m1_weight"] = self.enc_m1.weight
            out["enc_m1_bias"] = self.enc_m1.bias
        if self.enc_m2 is not None:
            out["enc_m2_weight"] = self.enc_m2.weight
            out["enc_m2_bias"] = self.enc_m2.bias
        return out

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.05
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be nonnegative")


@dataclass
class ForwardResult:
    """Per-sample activations: encoded features, logits, softmax, pseudo label."""

    z_m1: np.ndarray
    z_m2: np.ndarray
    z_mm: np.ndarray
    f_m1: np.ndarray
    f_m2: np.ndarray
    f_mm: np.ndarray
    p_mm: np.ndarray
    pseudo_label: int


@dataclass
class BatchForward:
    """Vectorized activations; raw inputs and pre-activations kept for backprop."""

    x_m1: np.ndarray
    x_m2: np.ndarray
    z_m1: np.ndarray
    z_m2: np.ndarray
    z_mm: np.ndarray
    f_m1: np.ndarray
    f_m2: np.ndarray
    f_mm: np.ndarray
    p_mm: np.ndarray
    pseudo_labels: np.ndarray
    pre_m1: Optional[np.ndarray] = None
    pre_m2: Optional[np.ndarray] = None


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax (shift by the row max)."""
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-row -log softmax(logits)[label], via log-sum-exp."""
    ls = log_softmax(np.atleast_2d(logits))
    labels = np.atleast_1d(labels)
    return -ls[np.arange(len(labels)), labels]


def init_model(dims: ModelDims, fusion: str = CONCAT, seed: int = 0) -> ModelParams:
    """Seeded init: uniform(+-1/sqrt(fan_in)) weights, zero biases."""
    if fusion not in FUSIONS:
        raise ConfigError(f"unknown fusion {fusion!r}")
    d1, d2 = dims.encoded_m1, dims.encoded_m2
    if fusion == SUM and d1 != d2:
        raise ConfigError(f"sum fusion needs equal encoded dims, got {d1} and {d2}")
    d_mm = d1 + d2 if fusion == CONCAT else d1
    k = dims.num_classes
    rng = np.random.default_rng(np.random.SeedSequence(seed & (2**64 - 1)))

    def mat(rows: int, cols: int) -> np.ndarray:
        bound = 1.0 / np.sqrt(cols)
        return rng.uniform(-bound, bound, size=(rows, cols))

    enc1 = enc2 = None
    if dims.enc_m1 is not None:
        enc1 = EncoderParams(mat(dims.enc_m1, dims.dim_m1), np.zeros(dims.enc_m1))
    if dims.enc_m2 is not None:
        enc2 = EncoderParams(mat(dims.enc_m2, dims.dim_m2), np.zeros(dims.enc_m2))
    return ModelParams(
        fusion=fusion,
        enc_m1=enc1,
        enc_m2=enc2,
        w_m1=mat(k, d1), b_m1=np.zeros(k),
        w_m2=mat(k, d2), b_m2=np.zeros(k),
        w_mm=mat(k, d_mm), b_mm=np.zeros(k),
    )


def _encode(enc: Optional[EncoderParams], x: np.ndarray) -> tuple[np.ndarray, Optional[np.ndarray]]:
    if enc is None:
        return x, None
    pre = x @ enc.weight.T + enc.bias
    return np.maximum(pre, 0.0), pre


def fuse(model: ModelParams, z_m1: np.ndarray, z_m2: np.ndarray) -> np.ndarray:
    if model.fusion == CONCAT:
        return np.concatenate([z_m1, z_m2], axis=-1)
    return z_m1 + z_m2


def forward_batch(model: ModelParams, x_m1: np.ndarray, x_m2: np.ndarray) -> BatchForward:
    x_m1 = np.atleast_2d(np.asarray(x_m1, dtype=np.float64))
    x_m2 = np.atleast_2d(np.asarray(x_m2, dtype=np.float64))
    exp1, exp2 = model.input_dims
    if x_m1.shape[1] != exp1 or x_m2.shape[1] != exp2:
        raise ConfigError(
            f"input dims ({x_m1.shape[1]}, {x_m2.shape[1]}) do not match "
            f"model ({exp1}, {exp2})"
        )
    z_m1, pre1 = _encode(model.enc_m1, x_m1)
    z_m2, pre2 = _encode(model.enc_m2, x_m2)
    z_mm = fuse(model, z_m1, z_m2)
    f_m1 = z_m1 @ model.w_m1.T + model.b_m1
    f_m2 = z_m2 @ model.w_m2.T + model.b_m2
    # Canonical blockwise form of z_mm . W^T + b: bitwise consistent with the
    # per-modality split and with zero-vector masking downstream.
    left, right = model.mm_blocks()
    f_mm = z_m1 @ left.T + z_m2 @ right.T + model.b_mm
    p_mm = softmax(f_mm)
    return BatchForward(
        x_m1=x_m1, x_m2=x_m2,
        z_m1=z_m1, z_m2=z_m2, z_mm=z_mm,
        f_m1=f_m1, f_m2=f_m2, f_mm=f_mm, p_mm=p_mm,
        pseudo_labels=np.argmax(f_mm, axis=1),
        pre_m1=pre1, pre_m2=pre2,
    )


def forward(model: ModelParams, sample: MultimodalSample) -> ForwardResult:
    """Single-sample forward pass. Argmax ties resolve to the lowest index."""
    b = forward_batch(model, sample.x_m1[None, :], sample.x_m2[None, :])
    return ForwardResult(
        z_m1=b.z_m1[0], z_m2=b.z_m2[0], z_mm=b.z_mm[0],
        f_m1=b.f_m1[0], f_m2=b.f_m2[0], f_mm=b.f_mm[0],
        p_mm=b.p_mm[0], pseudo_label=int(b.pseudo_labels[0]),
    )


def _batch_loss(batch: BatchForward, labels: np.ndarray) -> float:
    per_sample = (
        cross_entropy(batch.f_m1, labels)
        + cross_entropy(batch.f_m2, labels)
        + cross_entropy(batch.f_mm, labels)
    ) / 3.0
    return float(per_sample.mean())


def loss_final(model: ModelParams, sample: MultimodalSample, label: int) -> float:
    """Average cross-entropy over the three heads for one labeled sample."""
    if not 0 <= label < model.num_classes:
        raise ConfigError(f"label {label} outside [0, {model.num_classes})")
    b = forward_batch(model, sample.x_m1[None, :], sample.x_m2[None, :])
    return _batch_loss(b, np.array([label]))


def _batch_gradients(
    model: ModelParams, batch: BatchForward, labels: np.ndarray
) -> dict[str, np.ndarray]:
    """Mean gradient of the three-head loss over a batch, in closed form.

    The softmax-CE gradient at each head is (p - onehot); it flows into the
    head matrices directly and, through the multimodal blocks and the ReLU
    gate, into the encoders.
    """
    m, k = batch.p_mm.shape
    onehot = np.zeros((m, k))
    onehot[np.arange(m), labels] = 1.0
    # d(loss)/d(logits), folding in the 1/3 head average and 1/m batch mean.
    g_m1 = (softmax(batch.f_m1) - onehot) / (3.0 * m)
    g_m2 = (softmax(batch.f_m2) - onehot) / (3.0 * m)
    g_mm = (batch.p_mm - onehot) / (3.0 * m)
    grads = {
        "w_m1": g_m1.T @ batch.z_m1, "b_m1": g_m1.sum(axis=0),
        "w_m2": g_m2.T @ batch.z_m2, "b_m2": g_m2.sum(axis=0),
        "w_mm": g_mm.T @ batch.z_mm, "b_mm": g_mm.sum(axis=0),
    }
    left, right = model.mm_blocks()
    if model.enc_m1 is not None:
        dz = g_m1 @ model.w_m1 + g_mm @ left
        dpre = dz * (batch.pre_m1 > 0)
        grads["enc_m1_weight"] = dpre.T @ batch.x_m1
        grads["enc_m1_bias"] = dpre.sum(axis=0)
    if model.enc_m2 is not None:
        dz = g_m2 @ model.w_m2 + g_mm @ right
        dpre = dz * (batch.pre_m2 > 0)
        grads["enc_m2_weight"] = dpre.T @ batch.x_m2
        grads["enc_m2_bias"] = dpre.sum(axis=0)
    return grads


def loss_gradients(
    model: ModelParams, sample: MultimodalSample, label: int
) -> dict[str, np.ndarray]:
    """Gradient of :func:`loss_final` w.r.t. every parameter, one sample."""
    b = forward_batch(model, sample.x_m1[None, :], sample.x_m2[None, :])
    return _batch_gradients(model, b, np.array([label]))


def train(
    model: ModelParams,
    dataset: Dataset,
    labeled_indices: np.ndarray,
    cfg: TrainConfig,
    on_epoch: Optional[Callable[[int, float], None]] = None,
) -> ModelParams:
    """Minibatch SGD on the three-head loss; returns updated parameters.

    Deterministic for a fixed ``cfg.seed``: epoch shuffles come from one
    seeded generator and batches are visited in order. The input model is
    not mutated. ``on_epoch(epoch, mean_loss)`` is invoked per epoch.
    """
    cfg.validate()
    labeled_indices = np.asarray(labeled_indices, dtype=np.int64)
    if labeled_indices.size == 0:
        raise ConfigError("empty labeled set")
    params = model.copy()
    arrays = params.arrays()
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed & (2**64 - 1)))
    x1_all = dataset.x_m1[labeled_indices]
    x2_all = dataset.x_m2[labeled_indices]
    y_all = dataset.labels[labeled_indices]
    n = len(y_all)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            batch = forward_batch(params, x1_all[sel], x2_all[sel])
            labels = y_all[sel]
            loss_sum += _batch_loss(batch, labels) * len(sel)
            grads = _batch_gradients(params, batch, labels)
            for name, grad in grads.items():
                arrays[name] -= cfg.learning_rate * grad
        mean_loss = loss_sum / n
        log.debug("epoch %d mean loss %.6f", epoch, mean_loss)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss)
    return params


def evaluate(
    model: ModelParams, dataset: Dataset, indices: np.ndarray
) -> tuple[float, float, float]:
    """Top-1 accuracy of the multimodal and the two unimodal heads."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise ConfigError("empty evaluation index set")
    b = forward_batch(model, dataset.x_m1[indices], dataset.x_m2[indices])
    y = dataset.labels[indices]
    mm = float(np.mean(np.argmax(b.f_mm, axis=1) == y))
    m1 = float(np.mean(np.argmax(b.f_m1, axis=1) == y))
    m2 = float(np.mean(np.argmax(b.f_m2, axis=1) == y))
    return mm, m1, m2


def save_model(model: ModelParams, path: str | Path) -> None:
    """Binary checkpoint (npz): every array plus a JSON meta entry."""
    meta = {
        "fusion": model.fusion,
        "has_enc_m1": model.enc_m1 is not None,
        "has_enc_m2": model.enc_m2 is not None,
    }
    np.savez(path, __meta__=np.array(json.dumps(meta)), **model.arrays())


def load_model(path: str | Path) -> ModelParams:
    path = Path(path)
    if not path.exists():
        raise LoadError(f"no such checkpoint: {path}")
    with np.load(path, allow_pickle=False) as archive:
        try:
            meta = json.loads(str(archive["__meta__"]))
            get = lambda key: np.array(archive[key])
            enc1 = (
                EncoderParams(get("enc_m1_weight"), get("enc_m1_bias"))
                if meta["has_enc_m1"]
                else None
            )
            enc2 = (
                EncoderParams(get("enc_m2_weight"), get("enc_m2_bias"))
                if meta["has_enc_m2"]
                else None
            )
            return ModelParams(
                fusion=meta["fusion"],
                enc_m1=enc1, enc_m2=enc2,
                w_m1=get("w_m1"), b_m1=get("b_m1"),
                w_m2=get("w_m2"), b_m2=get("b_m2"),
                w_mm=get("w_mm"), b_mm=get("b_mm"),
            )
        except KeyError as exc:
            raise LoadError(f"checkpoint {path} missing entry: {exc}") from exc

"""Shared fixtures and independent numeric oracles."""

from __future__ import annotations

import numpy as np
import pytest

from mmal.data import Dataset, MultimodalSample, SynthConfig, generate_synthetic
from mmal.model import CONCAT, EncoderParams, ModelParams


def random_model(
    rng: np.random.Generator,
    num_classes: int = 3,
    d1: int = 4,
    d2: int = 5,
    fusion: str = CONCAT,
    encoders: bool = False,
    scale: float = 1.0,
) -> ModelParams:
    """A model with dense random weights (biases included), for oracles."""
    if fusion == "sum":
        d2 = d1
    e1 = e2 = None
    in1, in2 = d1, d2
    if encoders:
        in1, in2 = d1 + 1, d2 + 2
        e1 = EncoderParams(rng.normal(scale=scale, size=(d1, in1)),
                           rng.normal(scale=scale, size=d1))
        e2 = EncoderParams(rng.normal(scale=scale, size=(d2, in2)),
                           rng.normal(scale=scale, size=d2))
    d_mm = d1 + d2 if fusion == CONCAT else d1
    k = num_classes
    return ModelParams(
        fusion=fusion,
        enc_m1=e1, enc_m2=e2,
        w_m1=rng.normal(scale=scale, size=(k, d1)),
        b_m1=rng.normal(scale=scale, size=k),
        w_m2=rng.normal(scale=scale, size=(k, d2)),
        b_m2=rng.normal(scale=scale, size=k),
        w_mm=rng.normal(scale=scale, size=(k, d_mm)),
        b_mm=rng.normal(scale=scale, size=k),
    )


def random_sample(rng: np.random.Generator, model: ModelParams) -> MultimodalSample:
    in1, in2 = model.input_dims
    return MultimodalSample(
        rng.normal(size=in1), rng.normal(size=in2), 0
    )


def fd_gradient(fn, array: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function w.r.t. one array,
    mutating entries in place and restoring them."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = fn()
        flat[i] = orig - h
        lo = fn()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    return grad


@pytest.fixture
def balanced_dataset() -> Dataset:
    return generate_synthetic(
        SynthConfig(n=400, num_classes=4, dim_m1=8, dim_m2=8,
                    snr_m1=1.5, snr_m2=1.5, dominant_fraction=0.0, seed=101)
    )


@pytest.fixture
def dominant_dataset() -> Dataset:
    return generate_synthetic(
        SynthConfig(n=600, num_classes=4, dim_m1=8, dim_m2=8,
                    snr_m1=1.2, snr_m2=1.2, dominant_fraction=0.7, seed=202)
    )

"""Attention aggregation, positional debiasing, and visual connectivity.

The pipeline starts by averaging raw attention over the top decoder layers
and all heads, divides out a smooth positional bias curve, then scores each
generated token by how much calibrated mass it places on visual columns.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import (
    EmptyVisualSet,
    IndexOutOfRange,
    LengthMismatch,
    TopLayersOutOfRange,
)
from .tensor_io import AttentionTensor

BIAS_FLOOR = 1e-6


@dataclass(frozen=True)
class BiasParams:
    """Positional bias curve coefficients.

    The curve models two artifacts of autoregressive decoding: an
    exponential bump at early positions and a mild cosine drift across the
    sequence. Defaults were tuned once on held-out traces and are treated
    as fixed.
    """

    lambda_exp: float = 0.15
    gamma: float = 4.0
    lambda_cos: float = 0.05

    def __post_init__(self) -> None:
        if self.lambda_exp < 0:
            raise ValueError(f"lambda_exp must be >= 0, got {self.lambda_exp}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if self.lambda_cos < 0:
            raise ValueError(f"lambda_cos must be >= 0, got {self.lambda_cos}")


def aggregate(tensor: AttentionTensor, top_layers: int = 4) -> np.ndarray:
    """Mean attention over the last ``top_layers`` layers and every head.

    Returns a float64 (gen_len, ctx_len) matrix. Scaling all raw values by
    c scales the output by c; the op is linear.
    """
    if not 1 <= top_layers <= tensor.layers:
        raise TopLayersOutOfRange(
            f"top_layers={top_layers} outside [1, {tensor.layers}]"
        )
    sel = tensor.values[tensor.layers - top_layers:]
    # accumulate in float64 without materializing a float64 copy of sel
    return sel.mean(axis=(0, 1), dtype=np.float64)


def bias_curve(gen_len: int, params: BiasParams = BiasParams()) -> np.ndarray:
    """Normalized positional bias, one value per generated position.

    raw_j = 1 + lambda_exp * exp(-p_j * gamma) + lambda_cos * cos(pi * p_j)
    with p_j = j / T for j = 1..T, rescaled to mean exactly 1 and floored
    at ``BIAS_FLOOR``. T = 1 gives [1.0]; zero lambdas give all ones.
    """
    if gen_len < 1:
        raise LengthMismatch(f"gen_len must be >= 1, got {gen_len}")
    p = np.arange(1, gen_len + 1, dtype=np.float64) / gen_len
    raw = 1.0 + params.lambda_exp * np.exp(-p * params.gamma)
    raw += params.lambda_cos * np.cos(np.pi * p)
    curve = raw / raw.mean()
    return np.maximum(curve, BIAS_FLOOR)


def debias(aggregated: np.ndarray, curve: np.ndarray, axis: str = "gen") -> np.ndarray:
    """Divide out the positional bias curve.

    ``axis="gen"`` (default) rescales each generated token's row by its own
    position's bias, so later column sums compare tokens fairly. The
    alternative ``axis="ctx"`` divides columns instead, for traces where
    the positional artifact lives on the context side.
    """
    agg = np.asarray(aggregated, dtype=np.float64)
    if agg.ndim != 2:
        raise LengthMismatch(f"aggregated matrix must be 2-d, got {agg.ndim}-d")
    b = np.asarray(curve, dtype=np.float64)
    if b.ndim != 1:
        raise LengthMismatch("bias curve must be 1-d")
    if (b <= 0).any():
        raise ValueError("bias curve entries must be positive")
    if axis == "gen":
        if b.shape[0] != agg.shape[0]:
            raise LengthMismatch(
                f"curve length {b.shape[0]} != gen_len {agg.shape[0]}"
            )
        return agg / b[:, None]
    if axis == "ctx":
        if b.shape[0] != agg.shape[1]:
            raise LengthMismatch(
                f"curve length {b.shape[0]} != ctx_len {agg.shape[1]}"
            )
        return agg / b[None, :]
    raise ValueError(f"axis must be 'gen' or 'ctx', got {axis!r}")


def connectivity(calibrated: np.ndarray, visual: Iterable[int]) -> np.ndarray:
    """Per-token sum of calibrated attention over visual columns.

    C_i = sum over j in the visual set of calibrated[i, j]. Linear in the
    input matrix; result is a float64 vector of length gen_len.
    """
    cal = np.asarray(calibrated, dtype=np.float64)
    if cal.ndim != 2:
        raise LengthMismatch(f"calibrated matrix must be 2-d, got {cal.ndim}-d")
    idx = np.asarray(sorted(set(int(i) for i in visual)), dtype=np.intp)
    if idx.size == 0:
        raise EmptyVisualSet("visual index set is empty")
    if idx[0] < 0 or idx[-1] >= cal.shape[1]:
        raise IndexOutOfRange(
            f"visual indices must lie in [0, {cal.shape[1] - 1}]"
        )
    return cal[:, idx].sum(axis=1)

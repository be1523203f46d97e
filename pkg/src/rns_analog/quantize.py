"""Max-abs scaling and symmetric signed quantization of inputs and weights.

Inputs get one scale per vector, weights one scale per row.  Integers live
in ``[-(2**(b-1) - 1), 2**(b-1) - 1]`` and rounding is half away from zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, NonFiniteError


def qmax(bits: int) -> int:
    """Largest magnitude of a symmetric signed ``bits``-bit integer."""
    return (1 << (bits - 1)) - 1


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True, eq=False)
class QuantizedVector:
    """Quantized input vector(s).

    ``values`` is ``(h,)`` for one vector or ``(batch, h)`` for a stack of
    vectors; ``scale`` is then a float or a ``(batch,)`` array.
    """

    values: np.ndarray
    bits: int
    scale: float | np.ndarray


@dataclass(frozen=True, eq=False)
class QuantizedMatrix:
    values: np.ndarray
    bits: int
    row_scales: np.ndarray


def _max_abs_scale(x: np.ndarray) -> np.ndarray:
    scale = np.max(np.abs(x), axis=-1) if x.shape[-1] else np.zeros(x.shape[:-1])
    return np.where(scale > 0, scale, 1.0)


def _quantize_rows(x: np.ndarray, bits: int) -> tuple[np.ndarray, np.ndarray]:
    if bits < 2:
        raise ValueError("quantization needs at least 2 bits")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("quantizer input contains NaN or inf")
    scale = _max_abs_scale(x)
    q = round_half_away(x / scale[..., None] * qmax(bits)).astype(np.int64)
    return q, scale


def quantize_input(x, bits: int) -> QuantizedVector:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] == 0:
        raise DimensionMismatchError("input must be a non-empty vector or a batch of vectors")
    q, scale = _quantize_rows(x, bits)
    return QuantizedVector(q, bits, float(scale) if x.ndim == 1 else scale)


def quantize_weights(w, bits: int) -> QuantizedMatrix:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise DimensionMismatchError("weights must be a 2-D matrix")
    q, scale = _quantize_rows(w, bits)
    return QuantizedMatrix(q, bits, scale)


def dequantize_output(y_si, s_inp, s_w, b_in: int, b_w: int) -> np.ndarray:
    """Rescale integer MVM outputs to the real domain.

    ``y[k] = y_si[k] * s_inp * s_w[k] / (qmax(b_in) * qmax(b_w))``.  For a
    batch, ``y_si`` is ``(batch, rows)`` and ``s_inp`` is ``(batch,)``.
    """
    y = np.asarray(y_si, dtype=np.float64)
    s_w = np.asarray(s_w, dtype=np.float64)
    s_inp = np.asarray(s_inp, dtype=np.float64)
    if y.shape[-1] != s_w.shape[-1]:
        raise DimensionMismatchError(
            f"{y.shape[-1]} outputs but {s_w.shape[-1]} row scales"
        )
    if s_inp.ndim:
        if y.ndim != 2 or s_inp.shape[0] != y.shape[0]:
            raise DimensionMismatchError("batched outputs need one input scale per row")
        s_inp = s_inp[:, None]
    return y * s_inp * s_w / (qmax(b_in) * qmax(b_w))

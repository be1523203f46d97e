"""Tiled GEMM on the simulated cores, network execution and experiment drivers.

Every layer GEMM is split into ``h x h`` weight tiles and ``h``-long input
chunks (zero padded).  Each tile is quantized with its own scales, run on
the configured core, decoded back to signed integers, dequantized, and the
partial outputs of one row tile are summed in floating point.

Noise substreams are keyed by ``(layer, row tile, column tile, attempt,
modulus)`` so results do not depend on execution order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rns, rrns
from .analog import (
    NOISELESS,
    CoreConfig,
    NoiseModel,
    RnsMode,
    fixed_point_tile_mvm,
    rns_tile_mvm,
)
from .errors import DimensionMismatchError, ShapeError
from .model import ModelSpec, im2col
from .quantize import dequantize_output, quantize_input, quantize_weights
from .rng import substream


@dataclass
class ExperimentResult:
    experiment: str
    config: dict
    seed: int
    columns: tuple[str, ...]
    rows: list[dict] = field(default_factory=list)
    tables: dict[str, tuple[tuple[str, ...], list[dict]]] = field(default_factory=dict)


# -- tiled GEMM ---------------------------------------------------------------


def _tile_outputs(wq, xq, cfg: CoreConfig, noise, key, code, attempts) -> np.ndarray:
    """Signed integer tile outputs ``(batch, rows)`` before dequantization."""
    if not cfg.is_rns:
        out, shift = fixed_point_tile_mvm(wq, xq, cfg)
        return out << shift
    ms = cfg.mode.moduli
    res = rns_tile_mvm(wq, xq, cfg, noise, key=(*key, 0))
    if code is None:
        return rns.signed_decode(rns.crt_reconstruct(res, ms, check=False), ms)
    value, status, _ = rrns.vote_decode_batch(res, code, signed=True, check=False)
    for attempt in range(1, attempts):
        pending = status == rrns.DETECTED
        if not pending.any():
            break
        res = rns_tile_mvm(wq, xq, cfg, noise, key=(*key, attempt))
        v2, s2, _ = rrns.vote_decode_batch(res, code, signed=True, check=False)
        value = np.where(pending, v2, value)
        status = np.where(pending, s2, status)
    # still uncorrectable after every attempt: drop the output
    return np.where(status == rrns.CORRECTED, value, 0)


def tiled_gemm(
    W,
    x,
    cfg: CoreConfig | None,
    noise: NoiseModel = NOISELESS,
    *,
    key: tuple = (),
    code: rrns.RrnsCode | None = None,
    attempts: int = 1,
) -> np.ndarray:
    """``W @ x`` on the configured core.

    ``x`` is one vector ``(in,)`` or a batch ``(batch, in)``; the result is
    ``(out,)`` or ``(batch, out)``.  ``cfg=None`` runs in float64.  With an
    RRNS ``code`` the output residues are vote-decoded and detected errors
    re-run up to ``attempts`` times in total.
    """
    W = np.asarray(W, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if W.ndim != 2 or x.ndim not in (1, 2):
        raise DimensionMismatchError("W must be 2-D and x 1-D or 2-D")
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != W.shape[1]:
        raise DimensionMismatchError(f"W has {W.shape[1]} columns, x has {X.shape[1]} entries")
    if cfg is None:
        Y = X @ W.T
        return Y[0] if single else Y

    h = cfg.h
    rows, cols = W.shape
    n_rt, n_ct = math.ceil(rows / h), math.ceil(cols / h)
    Wp = np.zeros((n_rt * h, n_ct * h))
    Wp[:rows, :cols] = W
    Xp = np.zeros((X.shape[0], n_ct * h))
    Xp[:, :cols] = X
    Y = np.zeros((X.shape[0], n_rt * h))
    xqs = [quantize_input(Xp[:, c * h:(c + 1) * h], cfg.b_in) for c in range(n_ct)]
    for r in range(n_rt):
        for c in range(n_ct):
            wq = quantize_weights(Wp[r * h:(r + 1) * h, c * h:(c + 1) * h], cfg.b_w)
            xq = xqs[c]
            y_si = _tile_outputs(wq, xq, cfg, noise, (*key, r, c), code, attempts)
            Y[:, r * h:(r + 1) * h] += dequantize_output(y_si, xq.scale, wq.row_scales, cfg.b_in, cfg.b_w)
    Y = Y[:, :rows]
    return Y[0] if single else Y


# -- networks -----------------------------------------------------------------


def _activate(y: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(y, 0.0)
    if kind == "softmax":
        z = y - y.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)
    return y


def run_network(
    model: ModelSpec,
    x,
    cfg: CoreConfig | None,
    noise: NoiseModel = NOISELESS,
    *,
    code: rrns.RrnsCode | None = None,
    attempts: int = 1,
) -> np.ndarray:
    """Forward pass; GEMMs on the core, bias and activations in float."""
    a = np.asarray(x, dtype=np.float64)
    single = a.ndim == 1
    if single:
        a = a[None, :]
    for li, layer in enumerate(model.layers):
        kw = dict(key=(li,), code=code, attempts=attempts)
        if layer.kind == "conv":
            if a.ndim != 4:
                raise ShapeError(f"layer {li}: conv needs (batch, C, H, W) input")
            if a.shape[1] != layer.weight.shape[1]:
                raise ShapeError(f"layer {li}: {a.shape[1]} channels, expected {layer.weight.shape[1]}")
            B = a.shape[0]
            kh, kw_ = layer.weight.shape[2:]
            patches, oh, ow = im2col(a, kh, kw_, layer.stride, layer.padding)
            y = tiled_gemm(layer.gemm_weight, patches, cfg, noise, **kw)
            y = y.reshape(B, oh, ow, -1).transpose(0, 3, 1, 2)
            if layer.bias is not None:
                y = y + layer.bias[None, :, None, None]
        else:
            a = a.reshape(a.shape[0], -1)
            if a.shape[1] != layer.weight.shape[1]:
                raise ShapeError(f"layer {li}: {a.shape[1]} inputs, expected {layer.weight.shape[1]}")
            y = tiled_gemm(layer.weight, a, cfg, noise, **kw)
            if layer.bias is not None:
                y = y + layer.bias
        a = _activate(y, layer.activation)
    return a[0] if single else a


def accuracy(model: ModelSpec, x, labels, cfg: CoreConfig | None, noise: NoiseModel = NOISELESS, **kw) -> float:
    out = run_network(model, x, cfg, noise, **kw)
    return float(np.mean(out.reshape(len(labels), -1).argmax(axis=1) == labels))


def gemm_outputs_per_inference(model: ModelSpec, x_shape: tuple[int, ...], h: int) -> int:
    """Number of tile MVM outputs (residue codewords) in one forward pass."""
    total = 0
    a = np.zeros((1, *x_shape))
    for layer in model.layers:
        if layer.kind == "conv":
            patches, oh, ow = im2col(a, *layer.weight.shape[2:], layer.stride, layer.padding)
            vecs = patches.shape[0]
            a = np.zeros((1, layer.out_features, oh, ow))
        else:
            vecs = 1
            a = np.zeros((1, layer.out_features))
        inner = layer.gemm_weight.shape[1]
        total += vecs * math.ceil(inner / h) * math.ceil(layer.out_features / h) * h
    return total


# -- experiments --------------------------------------------------------------

DOTPROD_COLUMNS = (
    "b", "h", "moduli", "lost_bits", "trials", "mean_abs_err_rns", "mean_abs_err_fixed",
    "max_abs_err_rns", "max_abs_err_fixed", "ratio",
)
HIST_COLUMNS = ("b", "core", "bin_lo", "bin_hi", "count")


def _rns_dot(xq: np.ndarray, wq: np.ndarray, ms: rns.ModuliSet) -> np.ndarray:
    """Row-wise dot products through residues, Barrett and CRT."""
    xr = rns.forward_convert(xq, ms)
    wr = rns.forward_convert(wq, ms)
    res = np.stack([
        rns.mod_reduce((xr[i] * wr[i]).sum(axis=-1), m, xq.shape[-1] * (m - 1) ** 2 + 1)
        for i, m in enumerate(ms.moduli)
    ])
    return rns.signed_decode(rns.crt_reconstruct(res, ms, check=False), ms)


def dot_product_error_experiment(b_range=range(4, 9), h: int = 128, trials: int = 10_000,
                                 seed: int = 0, bins: int = 41) -> ExperimentResult:
    """Error of both cores against the float64 dot product on random pairs.

    Entries are i.i.d. uniform in ``[-1, 1]``; the same pairs are reused for
    every bit width.
    """
    b_range = list(b_range)
    result = ExperimentResult(
        "dotprod-error",
        {"b_range": b_range, "h": h, "trials": trials, "bins": bins},
        seed, DOTPROD_COLUMNS,
    )
    result.tables["histogram"] = (HIST_COLUMNS, [])
    if trials <= 0:
        return result
    rng = substream(seed, 0)
    x = rng.uniform(-1.0, 1.0, (trials, h))
    w = rng.uniform(-1.0, 1.0, (trials, h))
    truth = np.einsum("ij,ij->i", x, w)
    for b in b_range:
        rcfg = CoreConfig.rns(b, h)
        fcfg = CoreConfig.fixed_point(b, h)
        xq = quantize_input(x, b)
        wq = quantize_weights(w, b)  # one row per trial, one row scale each
        exact = np.einsum("ij,ij->i", xq.values, wq.values)
        y_rns = _rns_dot(xq.values, wq.values, rcfg.mode.moduli)
        assert np.array_equal(y_rns, exact)
        y_fix = (exact >> fcfg.shift) << fcfg.shift
        step = xq.scale * wq.row_scales / ((2 ** (b - 1) - 1) ** 2)
        err_rns = y_rns * step - truth
        err_fix = y_fix * step - truth
        m_rns, m_fix = float(np.mean(np.abs(err_rns))), float(np.mean(np.abs(err_fix)))
        result.rows.append({
            "b": b, "h": h, "moduli": " ".join(map(str, rcfg.mode.moduli.moduli)),
            "lost_bits": fcfg.shift, "trials": trials,
            "mean_abs_err_rns": m_rns, "mean_abs_err_fixed": m_fix,
            "max_abs_err_rns": float(np.max(np.abs(err_rns))),
            "max_abs_err_fixed": float(np.max(np.abs(err_fix))),
            "ratio": m_fix / m_rns if m_rns > 0 else math.inf,
        })
        lim = float(max(np.abs(err_rns).max(), np.abs(err_fix).max())) or 1.0
        edges = np.linspace(-lim, lim, bins + 1)
        for core, err in (("rns", err_rns), ("fixed", err_fix)):
            counts, _ = np.histogram(err, edges)
            for lo, hi, cnt in zip(edges[:-1], edges[1:], counts):
                result.tables["histogram"][1].append(
                    {"b": b, "core": core, "bin_lo": float(lo), "bin_hi": float(hi), "count": int(cnt)}
                )
    return result


ACCURACY_COLUMNS = ("mode", "b", "h", "seed", "accuracy", "float_accuracy", "samples")


def make_core(mode: str, b: int, h: int) -> CoreConfig | None:
    if mode == "float":
        return None
    if mode == "rns":
        return CoreConfig.rns(b, h)
    if mode == "fixed":
        return CoreConfig.fixed_point(b, h)
    raise ValueError(f"unknown core mode {mode!r}")


def _resample(n: int, seed: int) -> np.ndarray:
    """Bootstrap indices for evaluation seed ``seed``; seed 0 is the identity."""
    if seed == 0:
        return np.arange(n)
    return substream(seed, 2).integers(0, n, n)


def accuracy_sweep(model: ModelSpec, x, labels, b_range=(4,), h_range=(16, 64, 128),
                   modes=("fixed", "rns"), seeds=(0, 1, 2)) -> ExperimentResult:
    """Top-1 accuracy over a (mode, b, h, seed) grid.

    Noiseless cores are deterministic, so a seed selects a bootstrap resample
    of the evaluation set (seed 0 uses the set as is).
    """
    labels = np.asarray(labels)
    result = ExperimentResult(
        "accuracy",
        {"b_range": list(b_range), "h_range": list(h_range), "modes": list(modes), "seeds": list(seeds)},
        seeds[0] if seeds else 0, ACCURACY_COLUMNS,
    )
    float_pred = run_network(model, x, None).argmax(axis=1)
    for mode in modes:
        for b in b_range:
            for h in h_range:
                pred = run_network(model, x, make_core(mode, b, h)).argmax(axis=1)
                for s in seeds:
                    idx = _resample(len(labels), s)
                    result.rows.append({
                        "mode": mode, "b": b, "h": h, "seed": s,
                        "accuracy": float(np.mean(pred[idx] == labels[idx])),
                        "float_accuracy": float(np.mean(float_pred[idx] == labels[idx])),
                        "samples": len(idx),
                    })
    return result


NOISE_COLUMNS = ("b", "h", "n", "k", "redundant", "p", "R", "accuracy", "float_accuracy",
                 "p_err_analytic", "seed")
CUTOFF_COLUMNS = ("n", "k", "redundant", "R", "p_cutoff", "p_err_cutoff", "outputs_per_inference",
                  "p_err_all_correct")


def noise_sweep(model: ModelSpec, x, labels, code: rrns.RrnsCode, p_range, R_range, *,
                b: int, h: int, seed: int = 0, rate_trials: int = 20_000) -> ExperimentResult:
    """Accuracy under residue noise with RRNS voting and retries.

    For every ``(p, R)`` the analytic ``p_err`` from Monte Carlo case rates
    is recorded; the cutoff table gives, per ``R``, the first ``p`` whose
    accuracy falls below 99% of the float accuracy.
    """
    labels = np.asarray(labels)
    cfg = CoreConfig(h, b, b, code.moduli_set.bit_width, code.moduli_set.bit_width,
                     RnsMode(code.moduli_set, code.k))
    result = ExperimentResult(
        "noise",
        {"b": b, "h": h, "non_redundant": list(code.non_redundant), "redundant": list(code.redundant),
         "p_range": list(p_range), "R_range": list(R_range), "rate_trials": rate_trials},
        seed, NOISE_COLUMNS,
    )
    a_float = float(np.mean(run_network(model, x, None).argmax(axis=1) == labels))
    outputs = gemm_outputs_per_inference(model, x.shape[1:], h)
    cutoffs = []
    for R in R_range:
        cut = None
        for p in p_range:
            noise = NoiseModel(p, seed)
            acc = accuracy(model, x, labels, cfg, noise, code=code, attempts=R)
            rates = rrns.estimate_rates(code, NoiseModel(p, seed), rate_trials) if p > 0 else None
            p_err = rrns.p_err_retry(rates, R) if rates else 0.0
            result.rows.append({
                "b": b, "h": h, "n": code.n, "k": code.k,
                "redundant": code.n - code.k, "p": p, "R": R, "accuracy": acc,
                "float_accuracy": a_float, "p_err_analytic": p_err, "seed": seed,
            })
            if cut is None and acc < 0.99 * a_float:
                cut = (p, p_err)
        cutoffs.append({
            "n": code.n, "k": code.k, "redundant": code.n - code.k, "R": R,
            "p_cutoff": cut[0] if cut else math.nan, "p_err_cutoff": cut[1] if cut else math.nan,
            "outputs_per_inference": outputs, "p_err_all_correct": 1.0 / outputs,
        })
    result.tables["cutoff"] = (CUTOFF_COLUMNS, cutoffs)
    return result

"""Bit-accurate models of the two analog tile engines.

The RNS core runs one ``h x h`` MVM unit per modulus, reduces every output
modulo its modulus before the ADC and so captures it losslessly.  The
regular fixed-point core computes the full dot product and its ADC keeps
only the top ``b_adc`` of ``b_out`` bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rns
from .errors import ConfigMismatchError, DimensionMismatchError, RangeViolationError
from .quantize import QuantizedMatrix, QuantizedVector, qmax
from .rng import substream


@dataclass(frozen=True)
class RnsMode:
    """RNS engine over ``moduli``.

    With ``k`` set, only the first ``k`` moduli carry the value range and
    the rest are redundant check moduli.
    """

    moduli: rns.ModuliSet
    k: int | None = None

    @property
    def value_range(self) -> int:
        k = self.moduli.n if self.k is None else self.k
        return math.prod(self.moduli.moduli[:k])


@dataclass(frozen=True)
class FixedPointMode:
    pass


@dataclass(frozen=True)
class CoreConfig:
    h: int
    b_in: int
    b_w: int
    b_dac: int
    b_adc: int
    mode: RnsMode | FixedPointMode = field(default_factory=FixedPointMode)

    def __post_init__(self):
        if self.h < 1 or min(self.b_in, self.b_w, self.b_dac, self.b_adc) < 1:
            raise ConfigMismatchError("tile size and bit widths must be >= 1")
        if max(self.b_in, self.b_w) > 16:
            raise ConfigMismatchError("input/weight widths above 16 bits are not supported")
        if isinstance(self.mode, RnsMode):
            bw = self.mode.moduli.bit_width
            if self.b_dac != bw or self.b_adc != bw:
                raise ConfigMismatchError(
                    f"RNS core needs b_dac = b_adc = moduli bit width {bw}, "
                    f"got {self.b_dac}/{self.b_adc}"
                )
            if self.mode.value_range < (1 << self.b_out):
                raise RangeViolationError(
                    f"log2(M) = {math.log2(self.mode.value_range):.2f} < b_out = {self.b_out}"
                )
        elif self.b_adc > self.b_out:
            raise ConfigMismatchError(f"b_adc = {self.b_adc} exceeds b_out = {self.b_out}")

    @property
    def b_out(self) -> int:
        return rns.required_output_bits(self.b_in, self.b_w, self.h)

    @property
    def is_rns(self) -> bool:
        return isinstance(self.mode, RnsMode)

    @property
    def shift(self) -> int:
        """Low-order bits dropped at the ADC (0 for the RNS core)."""
        return 0 if self.is_rns else self.b_out - self.b_adc

    @classmethod
    def rns(cls, b: int, h: int = 128, moduli: rns.ModuliSet | None = None, k: int | None = None):
        if moduli is None:
            moduli = rns.preset(rns.PRESET_FOR_BITS[b])
        bw = moduli.bit_width
        return cls(h, b, b, bw, bw, RnsMode(moduli, k))

    @classmethod
    def fixed_point(cls, b: int, h: int = 128, b_adc: int | None = None):
        return cls(h, b, b, b, b if b_adc is None else b_adc, FixedPointMode())

    def to_dict(self) -> dict:
        d = {"h": self.h, "b_in": self.b_in, "b_w": self.b_w,
             "b_dac": self.b_dac, "b_adc": self.b_adc}
        if self.is_rns:
            d["mode"] = "rns"
            d["moduli"] = list(self.mode.moduli.moduli)
            if self.mode.k is not None:
                d["k"] = self.mode.k
        else:
            d["mode"] = "fixed"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CoreConfig":
        d = dict(d)
        mode = d.pop("mode", "fixed")
        if mode == "rns":
            ms = rns.make_moduli_set(d.pop("moduli"))
            return cls(mode=RnsMode(ms, d.pop("k", None)), **d)
        if mode == "fixed":
            return cls(mode=FixedPointMode(), **d)
        raise ConfigMismatchError(f"unknown core mode {mode!r}")


@dataclass(frozen=True)
class NoiseModel:
    """Independent per-residue corruption: with probability ``p`` a residue
    is replaced by a uniform draw among the other ``m - 1`` values."""

    p: float = 0.0
    seed: int = 0
    kind: str = "replace_uniform"

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"error probability {self.p} outside [0, 1]")
        if self.kind != "replace_uniform":
            raise ValueError(f"unknown noise kind {self.kind!r}")


NOISELESS = NoiseModel(0.0)


def inject_residue_noise(residues, moduli, noise: NoiseModel, key: tuple = ()) -> np.ndarray:
    """Corrupt residues of shape ``(n, ...)``; row ``i`` is taken modulo
    ``moduli[i]`` and draws from substream ``(noise.seed, *key, i)``."""
    r = np.array(residues, dtype=np.int64)
    mods = moduli.moduli if isinstance(moduli, rns.ModuliSet) else tuple(moduli)
    if noise.p == 0.0:
        return r
    for i, m in enumerate(mods):
        rng = substream(noise.seed, *key, i)
        hit = rng.random(r[i].shape) < noise.p
        offset = rng.integers(1, m, size=r[i].shape)
        r[i] = np.where(hit, (r[i] + offset) % m, r[i])
    return r


def _check_operands(wq: QuantizedMatrix, xq: QuantizedVector, cfg: CoreConfig) -> tuple[np.ndarray, np.ndarray]:
    w = np.asarray(wq.values, dtype=np.int64)
    x = np.asarray(xq.values, dtype=np.int64)
    if w.ndim != 2:
        raise DimensionMismatchError("weight tile must be 2-D")
    if x.shape[-1] != w.shape[1]:
        raise DimensionMismatchError(f"input length {x.shape[-1]} vs weight columns {w.shape[1]}")
    if w.shape[0] > cfg.h or w.shape[1] > cfg.h:
        raise DimensionMismatchError(f"tile {w.shape} larger than h = {cfg.h}")
    if wq.bits > cfg.b_w or xq.bits > cfg.b_in:
        raise ConfigMismatchError("operand bit widths exceed the core configuration")
    if np.abs(w).max(initial=0) > qmax(cfg.b_w) or np.abs(x).max(initial=0) > qmax(cfg.b_in):
        raise ConfigMismatchError("operand values exceed the configured bit widths")
    return w, x


def exact_tile_mvm(wq: QuantizedMatrix, xq: QuantizedVector) -> np.ndarray:
    """Wide-integer reference MVM, ``(rows,)`` or ``(batch, rows)``."""
    return np.asarray(xq.values, dtype=np.int64) @ np.asarray(wq.values, dtype=np.int64).T


def rns_tile_mvm(
    wq: QuantizedMatrix,
    xq: QuantizedVector,
    cfg: CoreConfig,
    noise: NoiseModel = NOISELESS,
    key: tuple = (),
) -> np.ndarray:
    """Output residues of one tile MVM on the RNS core.

    Returns shape ``(n, rows)`` for a single input vector or
    ``(n, batch, rows)`` for a batch.  Noise substreams are keyed by
    ``(*key, modulus index)``.
    """
    if not cfg.is_rns:
        raise ConfigMismatchError("rns_tile_mvm needs an RNS core configuration")
    w, x = _check_operands(wq, xq, cfg)
    ms = cfg.mode.moduli
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    x_res = rns.forward_convert(x2, ms)
    w_res = rns.forward_convert(w.T, ms)
    out = rns.residue_matmul(x_res, w_res, ms)
    out = inject_residue_noise(out, ms, noise, key)
    return out[:, 0, :] if single else out


def fixed_point_tile_mvm(wq: QuantizedMatrix, xq: QuantizedVector, cfg: CoreConfig) -> tuple[np.ndarray, int]:
    """MSB-truncated MVM output and the number of dropped bits.

    ``out = floor(exact / 2**shift)``; multiply by ``2**shift`` to rescale.
    """
    if cfg.is_rns:
        raise ConfigMismatchError("fixed_point_tile_mvm needs a fixed-point configuration")
    w, x = _check_operands(wq, xq, cfg)
    exact = x @ w.T
    shift = cfg.shift
    return exact >> shift, shift

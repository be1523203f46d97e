"""Exact residue-number-system arithmetic.

Integers are carried as one residue per modulus of a pairwise co-prime
:class:`ModuliSet`; reconstruction uses the Chinese remainder theorem.
Signed values use the complement mapping ``v -> v + M`` for ``v < 0``.

Vectorised paths work on ``int64`` numpy arrays.  A moduli set is only
accepted if ``max(m_i) * M < 2**63`` so every CRT partial product fits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    InvalidResidueError,
    ModuliMismatchError,
    NotCoprimeError,
    OutOfRangeError,
    RangeOverflowError,
)

#: Moduli sets from the precision comparison table (h = 128), keyed by name.
PRESETS: dict[str, tuple[int, ...]] = {
    "rns4": (15, 14, 13, 11),
    "rns5": (31, 29, 28, 27),
    "rns6": (63, 62, 61, 59),
    "rns7": (127, 126, 125),
    "rns8": (255, 254, 253),
}

#: Preset name for each input/weight bit width.
PRESET_FOR_BITS: dict[int, str] = {4: "rns4", 5: "rns5", 6: "rns6", 7: "rns7", 8: "rns8"}

_INT64_LIMIT = 1 << 63


@dataclass(frozen=True)
class SignedRange:
    lo: int
    hi: int

    def __contains__(self, value: int) -> bool:
        return self.lo <= value <= self.hi


@dataclass(frozen=True, eq=False)
class ModuliSet:
    """Pairwise co-prime moduli with precomputed CRT constants.

    Build instances with :func:`make_moduli_set`, which validates the
    moduli; the constructor itself trusts its arguments.
    """

    moduli: tuple[int, ...]
    M: int
    crt_weights: tuple[tuple[int, int], ...]
    bit_width: int

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ModuliSet) and self.moduli == other.moduli

    def __hash__(self) -> int:
        return hash(self.moduli)

    def __len__(self) -> int:
        return len(self.moduli)

    def __repr__(self) -> str:
        return f"ModuliSet({list(self.moduli)}, M={self.M})"

    @property
    def n(self) -> int:
        return len(self.moduli)

    @property
    def signed_range(self) -> SignedRange:
        half = (self.M - 1) // 2
        return SignedRange(-half, half)

    @property
    def log2_range(self) -> float:
        return math.log2(self.M)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.moduli, dtype=np.int64)

    @property
    def crt_coefficients(self) -> tuple[int, ...]:
        """``|M_i * T_i|_M`` for each modulus."""
        return tuple((Mi * Ti) % self.M for Mi, Ti in self.crt_weights)


def make_moduli_set(moduli: Iterable[int]) -> ModuliSet:
    """Validate ``moduli`` and precompute the CRT constants.

    Raises :class:`NotCoprimeError` naming the first offending pair and
    :class:`RangeOverflowError` if the set exceeds the int64 capacity of
    the vectorised reconstruction.
    """
    ms = tuple(int(m) for m in moduli)
    if not ms:
        raise ValueError("moduli set must not be empty")
    for m in ms:
        if m < 2:
            raise ValueError(f"modulus {m} must be >= 2")
    for a, b in combinations(ms, 2):
        if math.gcd(a, b) != 1:
            raise NotCoprimeError(a, b)
    M = math.prod(ms)
    if M * max(ms) >= _INT64_LIMIT:
        raise RangeOverflowError(
            f"moduli product {M} too large: max(m) * M must stay below 2**63"
        )
    weights = []
    for m in ms:
        Mi = M // m
        Ti = pow(Mi, -1, m)
        assert (Mi * Ti) % m == 1
        weights.append((Mi, Ti))
    bit_width = max((m - 1).bit_length() for m in ms)
    return ModuliSet(ms, M, tuple(weights), bit_width)


def preset(name: str) -> ModuliSet:
    try:
        return make_moduli_set(PRESETS[name])
    except KeyError:
        raise KeyError(f"unknown moduli preset {name!r}; known: {sorted(PRESETS)}") from None


# -- Barrett reduction -------------------------------------------------------


class BarrettReducer:
    """Barrett reduction of non-negative integers below ``2**input_bits``.

    ``q = ((x >> (k-1)) * mu) >> (input_bits - k + 1)`` with
    ``mu = floor(2**input_bits / m)`` and ``k = bitlen(m)`` underestimates
    ``x // m`` by at most 2, fixed by conditional subtraction.
    """

    def __init__(self, modulus: int, input_bits: int):
        if modulus < 2:
            raise ValueError("modulus must be >= 2")
        k = modulus.bit_length()
        input_bits = max(input_bits, k)
        if input_bits - k + 1 > 31:
            raise RangeOverflowError(
                f"Barrett product overflows int64 for m={modulus}, {input_bits}-bit inputs"
            )
        self.modulus = modulus
        self.input_bits = input_bits
        self._pre_shift = k - 1
        self._post_shift = input_bits - k + 1
        self._mu = (1 << input_bits) // modulus

    def reduce(self, x):
        x = np.asarray(x, dtype=np.int64)
        q = ((x >> self._pre_shift) * self._mu) >> self._post_shift
        r = x - q * self.modulus
        r = np.where(r >= self.modulus, r - self.modulus, r)
        r = np.where(r >= self.modulus, r - self.modulus, r)
        return r


@lru_cache(maxsize=None)
def barrett(modulus: int, input_bits: int) -> BarrettReducer:
    return BarrettReducer(modulus, input_bits)


def mod_reduce(x: np.ndarray, modulus: int, bound: int) -> np.ndarray:
    """Reduce non-negative ``x < bound`` modulo ``modulus``.

    Uses Barrett reduction when the bound allows it, plain ``%`` otherwise.
    """
    bits = max(int(bound - 1).bit_length(), 1)
    try:
        return barrett(modulus, bits).reduce(x)
    except RangeOverflowError:
        return np.asarray(x, dtype=np.int64) % modulus


# -- conversions --------------------------------------------------------------


def _check_value_range(values: np.ndarray, ms: ModuliSet) -> None:
    lo = ms.signed_range.lo
    if values.size and (values.min() < lo or values.max() >= ms.M):
        bad = values[(values < lo) | (values >= ms.M)].flat[0]
        raise OutOfRangeError(
            f"value {int(bad)} outside the representable range [{lo}, {ms.M - 1}] for M={ms.M}"
        )


def forward_convert(value, ms: ModuliSet) -> np.ndarray:
    """Residues of ``value`` (scalar or array) against every modulus.

    Accepts signed values down to ``-floor((M-1)/2)`` and unsigned values up
    to ``M-1``.  The result has shape ``(n,) + shape(value)``.
    """
    v = np.asarray(value)
    if not np.issubdtype(v.dtype, np.integer):
        raise TypeError(f"forward_convert expects integers, got {v.dtype}")
    v = v.astype(np.int64)
    _check_value_range(v, ms)
    v = np.where(v < 0, v + ms.M, v)
    return np.stack([mod_reduce(v, m, ms.M) for m in ms.moduli])


def _check_residues(residues: np.ndarray, ms: ModuliSet) -> None:
    if residues.shape[:1] != (ms.n,):
        raise DimensionMismatchError(
            f"expected {ms.n} residue rows, got shape {residues.shape}"
        )
    mods = ms.array.reshape((ms.n,) + (1,) * (residues.ndim - 1))
    bad = (residues < 0) | (residues >= mods)
    if bad.any():
        idx = np.argwhere(bad)[0]
        raise InvalidResidueError(
            f"residue {int(residues[tuple(idx)])} invalid for modulus {ms.moduli[idx[0]]}"
        )


def crt_reconstruct(residues, ms: ModuliSet, *, check: bool = True):
    """Unique integer in ``[0, M)`` with the given residues.

    ``residues`` has shape ``(n, ...)``; the result has the trailing shape
    (a Python ``int`` for a single residue vector).
    """
    r = np.asarray(residues, dtype=np.int64)
    if check:
        _check_residues(r, ms)
    acc = np.zeros(r.shape[1:], dtype=np.int64)
    for i, c in enumerate(ms.crt_coefficients):
        acc = (acc + (r[i] * c) % ms.M) % ms.M
    if acc.ndim == 0:
        return int(acc)
    return acc


def signed_decode(value, ms_or_M) -> int | np.ndarray:
    """Map ``[0, M)`` onto the symmetric signed range."""
    M = ms_or_M.M if isinstance(ms_or_M, ModuliSet) else int(ms_or_M)
    half = (M - 1) // 2
    v = np.asarray(value, dtype=np.int64)
    out = np.where(v > half, v - M, v)
    if out.ndim == 0:
        return int(out)
    return out


# -- residue vectors ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ResidueVector:
    residues: np.ndarray  # shape (n, length)
    moduli: ModuliSet

    def __post_init__(self):
        r = np.array(self.residues, dtype=np.int64)
        if r.ndim != 2:
            raise DimensionMismatchError("residues must be a 2-D (n, length) array")
        _check_residues(r, self.moduli)
        r.setflags(write=False)
        object.__setattr__(self, "residues", r)

    @classmethod
    def encode(cls, values: Sequence[int], ms: ModuliSet) -> "ResidueVector":
        return cls(forward_convert(np.asarray(values, dtype=np.int64).reshape(-1), ms), ms)

    def __len__(self) -> int:
        return self.residues.shape[1]

    def decode(self) -> np.ndarray:
        return signed_decode(crt_reconstruct(self.residues, self.moduli), self.moduli)


def residue_dot_product(a: ResidueVector, b: ResidueVector) -> np.ndarray:
    """Per-modulus ``|sum_j a_i[j] * b_i[j]|_{m_i}``."""
    if a.moduli != b.moduli:
        raise ModuliMismatchError(f"{a.moduli!r} vs {b.moduli!r}")
    if len(a) != len(b):
        raise DimensionMismatchError(f"lengths {len(a)} and {len(b)} differ")
    ms = a.moduli
    out = np.empty(ms.n, dtype=np.int64)
    for i, m in enumerate(ms.moduli):
        acc = int(np.dot(a.residues[i], b.residues[i]))
        out[i] = mod_reduce(acc, m, max(len(a), 1) * (m - 1) ** 2 + 1)
    return out


def residue_matmul(w_res: np.ndarray, x_res: np.ndarray, ms: ModuliSet) -> np.ndarray:
    """Per-modulus modular matrix product.

    ``w_res`` is ``(n, rows, inner)``, ``x_res`` is ``(n, inner, cols)``;
    returns ``(n, rows, cols)`` residues.
    """
    inner = w_res.shape[2]
    if x_res.shape[1] != inner:
        raise DimensionMismatchError(f"inner dims {inner} and {x_res.shape[1]} differ")
    out = np.empty((ms.n, w_res.shape[1], x_res.shape[2]), dtype=np.int64)
    for i, m in enumerate(ms.moduli):
        out[i] = mod_reduce(w_res[i] @ x_res[i], m, max(inner, 1) * (m - 1) ** 2 + 1)
    return out


# -- range analysis ------------------------------------------------------------


def required_output_bits(b_in: int, b_w: int, h: int) -> int:
    """Bits of a lossless signed dot product of two ``h``-vectors."""
    if b_in < 1 or b_w < 1 or h < 1:
        raise ValueError("b_in, b_w and h must be >= 1")
    return b_in + b_w + (h - 1).bit_length() - 1


def fits_output_bits(ms: ModuliSet, b_out: int) -> bool:
    """True iff ``log2(M) >= b_out``."""
    return ms.M >= (1 << b_out)

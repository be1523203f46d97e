"""Redundant RNS: group-vote decoding, outcome classes and retry analytics.

A codeword is the full residue vector of a value in the legitimate range
``[0, M_k)``, where ``M_k`` is the product of the ``k`` non-redundant
moduli (listed first).  Decoding reconstructs the value from every
``k``-subset of residues with the CRT and lets the subsets vote.

The default vote rule accepts the winner when it is backed by at least
``C(n - t, k)`` groups, i.e. when its codeword lies within ``t`` residue
errors of the received word.  For ``n - k = 2`` this is exactly half of the
groups.  ``vote_rule="majority"`` instead demands strictly more than half
of all ``C(n, k)`` groups.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from . import rns
from .analog import NoiseModel, inject_residue_noise
from .errors import InvalidCodeError, InvalidResidueError, OutOfRangeError
from .rng import substream

BLOCK = 4096

CORRECTED = 1
DETECTED = 2


class Case(enum.IntEnum):
    CORRECTABLE = 1
    DETECTABLE = 2
    UNDETECTABLE = 3


@dataclass(frozen=True, eq=False)
class RrnsCode:
    moduli_set: rns.ModuliSet
    k: int
    vote_rule: str = "bounded"
    groups: tuple = field(init=False, repr=False)
    group_sets: tuple = field(init=False, repr=False)

    def __post_init__(self):
        if not 1 <= self.k <= self.moduli_set.n:
            raise InvalidCodeError(f"k = {self.k} outside [1, {self.moduli_set.n}]")
        if self.vote_rule not in ("bounded", "majority"):
            raise InvalidCodeError(f"unknown vote rule {self.vote_rule!r}")
        groups = tuple(combinations(range(self.n), self.k))
        object.__setattr__(self, "groups", groups)
        object.__setattr__(
            self,
            "group_sets",
            tuple(rns.make_moduli_set([self.moduli_set.moduli[i] for i in g]) for g in groups),
        )

    @property
    def n(self) -> int:
        return self.moduli_set.n

    @property
    def moduli(self) -> tuple[int, ...]:
        return self.moduli_set.moduli

    @property
    def non_redundant(self) -> tuple[int, ...]:
        return self.moduli[: self.k]

    @property
    def redundant(self) -> tuple[int, ...]:
        return self.moduli[self.k:]

    @property
    def legitimate_range(self) -> int:
        return math.prod(self.non_redundant)

    @property
    def t(self) -> int:
        return (self.n - self.k) // 2

    @property
    def threshold(self) -> int:
        """Minimum number of agreeing groups for a correction."""
        if self.vote_rule == "majority":
            return len(self.groups) // 2 + 1
        return math.comb(self.n - self.t, self.k)

    def __repr__(self) -> str:
        return f"RrnsCode(non_redundant={list(self.non_redundant)}, redundant={list(self.redundant)})"


def make_rrns_code(non_redundant, redundant=(), *, strict: bool = True, vote_rule: str = "bounded") -> RrnsCode:
    """Build a code from an explicit split.

    With ``strict`` the redundant moduli must be at least as large as every
    non-redundant one, which is what the correction capability relies on.
    """
    non_redundant, redundant = list(non_redundant), list(redundant)
    if not non_redundant:
        raise InvalidCodeError("need at least one non-redundant modulus")
    if strict and redundant and min(redundant) < max(non_redundant):
        raise InvalidCodeError(
            f"redundant moduli {redundant} must be >= every non-redundant modulus {non_redundant}"
        )
    return RrnsCode(rns.make_moduli_set(non_redundant + redundant), len(non_redundant), vote_rule)


def code_from_moduli(moduli, k: int, **kw) -> RrnsCode:
    """Code whose ``k`` smallest moduli are the non-redundant ones."""
    ms = sorted(int(m) for m in moduli)
    return make_rrns_code(ms[:k], ms[k:], **kw)


@dataclass(frozen=True)
class VoteOutcome:
    tag: str  # "corrected" or "detected"
    value: int | None
    groups_agreeing: int

    @property
    def corrected(self) -> bool:
        return self.tag == "corrected"


@dataclass(frozen=True)
class ErrorRates:
    p_c: float
    p_d: float
    p_u: float
    trials: int
    p: float
    counts: tuple[int, int, int] = (0, 0, 0)


def rrns_encode(value, code: RrnsCode) -> np.ndarray:
    v = np.asarray(value, dtype=np.int64)
    if v.size and (v.min() < 0 or v.max() >= code.legitimate_range):
        raise OutOfRangeError(f"value outside legitimate range [0, {code.legitimate_range})")
    return np.stack([v % m for m in code.moduli])


def _group_candidates(residues: np.ndarray, code: RrnsCode, signed: bool) -> tuple[np.ndarray, np.ndarray]:
    half = (code.legitimate_range - 1) // 2
    cands, valid = [], []
    for g, gs in zip(code.groups, code.group_sets):
        v = rns.crt_reconstruct(residues[list(g)], gs, check=False)
        v = np.asarray(v, dtype=np.int64)
        if signed:
            v = rns.signed_decode(v, gs.M)
            ok = np.abs(v) <= half
        else:
            ok = v < code.legitimate_range
        cands.append(v)
        valid.append(ok)
    return np.stack(cands), np.stack(valid)


def vote_decode_batch(residues, code: RrnsCode, *, signed: bool = False, check: bool = True):
    """Vectorised voting over residue columns.

    ``residues`` is ``(n, ...)``.  Returns ``(values, status, support)``
    with ``status`` ``CORRECTED`` (1) or ``DETECTED`` (2); ``values`` is
    meaningful only where corrected.  With ``signed`` the legitimate range
    is the symmetric ``|v| <= (M_k - 1) // 2``.
    """
    r = np.asarray(residues, dtype=np.int64)
    if check:
        rns._check_residues(r, code.moduli_set)
    shape = r.shape[1:]
    r = r.reshape(code.n, -1)
    cands, valid = _group_candidates(r, code, signed)
    G = cands.shape[0]
    support = np.zeros_like(cands)
    for g in range(G):
        same = (cands == cands[g]) & valid
        support[g] = np.where(valid[g], same.sum(axis=0), 0)
    best = support.argmax(axis=0)
    cols = np.arange(cands.shape[1])
    top = support[best, cols]
    value = cands[best, cols]
    rival = ((support == top) & (cands != value) & valid).any(axis=0)
    ok = (top >= code.threshold) & ~rival
    status = np.where(ok, CORRECTED, DETECTED)
    return value.reshape(shape), status.reshape(shape), top.reshape(shape)


def vote_decode(residues, code: RrnsCode, *, signed: bool = False) -> VoteOutcome:
    r = np.asarray(residues, dtype=np.int64).reshape(-1)
    if r.shape[0] != code.n:
        raise InvalidResidueError(f"expected {code.n} residues, got {r.shape[0]}")
    value, status, support = vote_decode_batch(r[:, None], code, signed=signed)
    if status[0] == CORRECTED:
        return VoteOutcome("corrected", int(value[0]), int(support[0]))
    return VoteOutcome("detected", None, int(support[0]))


def classify_case(decoded: VoteOutcome, truth: int) -> Case:
    if not decoded.corrected:
        return Case.DETECTABLE
    return Case.CORRECTABLE if decoded.value == truth else Case.UNDETECTABLE


def _classify(value, status, truth) -> np.ndarray:
    return np.where(status == DETECTED, 2, np.where(value == truth, 1, 3))


# -- Monte Carlo --------------------------------------------------------------

_VALUES, _NOISE = 0, 1


def _block_sizes(trials: int) -> list[int]:
    full, rest = divmod(trials, BLOCK)
    return [BLOCK] * full + ([rest] if rest else [])


def _block_attempts(code: RrnsCode, noise: NoiseModel, R: int, block: int, size: int) -> np.ndarray:
    """Per-trial case of each attempt, shape ``(R, size)``.

    Attempt ``a`` of block ``b`` draws from substream ``(seed, 1, b, a, i)``,
    so truncating to fewer attempts reproduces the same leading rows.
    """
    truth = substream(noise.seed, _VALUES, block).integers(0, code.legitimate_range, size)
    clean = rrns_encode(truth, code)
    cases = np.empty((R, size), dtype=np.int8)
    for a in range(R):
        noisy = inject_residue_noise(clean, code.moduli, noise, key=(_NOISE, block, a))
        value, status, _ = vote_decode_batch(noisy, code, check=False)
        cases[a] = _classify(value, status, truth)
    return cases


def _block_counts(args) -> np.ndarray:
    code, noise, R, block, size = args
    cases = _block_attempts(code, noise, R, block, size)
    # counts[a, c]: trials finishing at attempt a with case c (c=2: still pending at the end)
    counts = np.zeros((R, 4), dtype=np.int64)
    pending = np.ones(size, dtype=bool)
    for a in range(R):
        for c in (1, 3):
            hit = pending & (cases[a] == c)
            counts[a, c] = hit.sum()
            pending &= ~hit
        counts[a, 2] = pending.sum()
    return counts


def _run_blocks(code, noise, R, trials, jobs) -> np.ndarray:
    tasks = [(code, noise, R, b, s) for b, s in enumerate(_block_sizes(trials))]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_block_counts, tasks))
    else:
        parts = [_block_counts(t) for t in tasks]
    return sum(parts, np.zeros((R, 4), dtype=np.int64))


def estimate_rates(code: RrnsCode, noise: NoiseModel, trials: int, *, jobs: int = 1) -> ErrorRates:
    """Empirical single-attempt case probabilities.

    Draws uniform legitimate values, corrupts them with ``noise`` and
    classifies the decoder output.  Uses the same substreams as the first
    attempt of :func:`retry_protocol_simulate` with the same seed.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    counts = _run_blocks(code, noise, 1, trials, jobs)[0]
    c1, c2, c3 = int(counts[1]), int(counts[2]), int(counts[3])
    return ErrorRates(c1 / trials, c2 / trials, c3 / trials, trials, noise.p, (c1, c2, c3))


def p_err_retry(rates: ErrorRates, R: int) -> float:
    """Output error probability after up to ``R`` attempts.

    Attempts repeat only on a detected error, so
    ``p_err(R) = 1 - p_c * sum_{j<R} p_d**j``.
    """
    if R < 1:
        raise ValueError("R must be >= 1")
    if rates.p_d == 1.0:
        return 1.0 - rates.p_c * R
    return 1.0 - rates.p_c * (1.0 - rates.p_d**R) / (1.0 - rates.p_d)


def p_err_limit(rates: ErrorRates) -> float:
    """``p_err`` for unbounded retries, ``p_u / (p_u + p_c)``."""
    denom = rates.p_u + rates.p_c
    return 1.0 if denom == 0 else rates.p_u / denom


def retry_protocol_simulate(code: RrnsCode, noise: NoiseModel, R, trials: int, *, jobs: int = 1):
    """Empirical ``p_err`` of the retry-on-detect protocol.

    ``R`` may be an int or a sequence of attempt budgets; a sequence returns
    a dict keyed by budget, all evaluated on the same simulated trials.
    """
    budgets = [R] if isinstance(R, int) else list(R)
    if min(budgets) < 1 or trials < 1:
        raise ValueError("R and trials must be >= 1")
    counts = _run_blocks(code, noise, max(budgets), trials, jobs)
    out = {}
    for r in budgets:
        correct = int(counts[:r, 1].sum())
        out[r] = 1.0 - correct / trials
    return out[R] if isinstance(R, int) else out

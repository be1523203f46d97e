"""Per-conversion data-converter energy for RNS and fixed-point cores.

Energies are joules per converted output element.  The RNS core with ``n``
moduli needs ``n`` DAC and ``n`` ADC conversions at the moduli bit width;
the same-precision fixed-point baseline needs a single DAC conversion and a
single ADC conversion at ``b_out`` bits.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import rns
from .analog import CoreConfig
from .errors import ConfigMismatchError


@dataclass(frozen=True)
class ConverterParams:
    C_u: float = 0.5e-15  # F
    V_dd: float = 1.0  # V
    k1: float = 100e-15  # J per bit
    k2: float = 1e-18  # J

    def __post_init__(self):
        for name in ("C_u", "V_dd", "k1", "k2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


DEFAULT_PARAMS = ConverterParams()


def dac_energy(enob: int, params: ConverterParams = DEFAULT_PARAMS) -> float:
    if enob < 1:
        raise ValueError("enob must be >= 1")
    return enob**2 * params.C_u * params.V_dd**2


def adc_energy(enob: int, params: ConverterParams = DEFAULT_PARAMS) -> float:
    if enob < 1:
        raise ValueError("enob must be >= 1")
    return params.k1 * enob + params.k2 * 4.0**enob


@dataclass(frozen=True)
class ConversionEnergy:
    n: int
    b_dac: int
    b_adc: int
    dac_total: float
    adc_total: float


def core_conversion_energy(cfg: CoreConfig, params: ConverterParams = DEFAULT_PARAMS) -> ConversionEnergy:
    """DAC and ADC energy per output element for ``cfg``.

    A fixed-point config is costed as the same-precision baseline, with the
    ADC at ``b_out`` regardless of its configured ``b_adc``.
    """
    if not isinstance(cfg, CoreConfig):
        raise ConfigMismatchError("expected a CoreConfig")
    if cfg.is_rns:
        n = cfg.mode.moduli.n
        return ConversionEnergy(
            n, cfg.b_dac, cfg.b_adc,
            n * dac_energy(cfg.b_dac, params),
            n * adc_energy(cfg.b_adc, params),
        )
    b_out = cfg.b_out
    return ConversionEnergy(1, cfg.b_dac, b_out, dac_energy(cfg.b_dac, params), adc_energy(b_out, params))


def efficiency_ratio(b: int, h: int = 128, params: ConverterParams = DEFAULT_PARAMS) -> float:
    """Fixed-point over RNS ADC energy at ``b`` bits with the matching preset."""
    if b not in rns.PRESET_FOR_BITS:
        raise ValueError(f"no moduli preset for b = {b}")
    fixed = core_conversion_energy(CoreConfig.fixed_point(b, h), params)
    rns_core = core_conversion_energy(CoreConfig.rns(b, h), params)
    return fixed.adc_total / rns_core.adc_total


def with_redundancy(energy: ConversionEnergy, extra_moduli: int) -> ConversionEnergy:
    """Scale RNS converter counts for ``extra_moduli`` redundant moduli."""
    if extra_moduli < 0:
        raise ValueError("extra_moduli must be >= 0")
    n = energy.n + extra_moduli
    return ConversionEnergy(
        n, energy.b_dac, energy.b_adc,
        energy.dac_total / energy.n * n,
        energy.adc_total / energy.n * n,
    )


ENERGY_COLUMNS = ("b", "mode", "n", "b_adc_effective", "dac_J", "adc_J", "ratio")


def energy_table(bits=(4, 5, 6, 7, 8), h: int = 128, params: ConverterParams = DEFAULT_PARAMS) -> list[dict]:
    """Rows of the converter-energy comparison, two per bit width."""
    rows = []
    for b in bits:
        fixed = core_conversion_energy(CoreConfig.fixed_point(b, h), params)
        rcore = core_conversion_energy(CoreConfig.rns(b, h), params)
        ratio = fixed.adc_total / rcore.adc_total
        for mode, e in (("rns", rcore), ("fixed", fixed)):
            rows.append({
                "b": b, "mode": mode, "n": e.n, "b_adc_effective": e.b_adc,
                "dac_J": e.dac_total, "adc_J": e.adc_total, "ratio": ratio,
            })
    return rows

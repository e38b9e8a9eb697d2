"""Ideal-gas conversion between mass concentration (mg/m3) and ppm(v)."""

from __future__ import annotations

from collections import Counter
from typing import Sequence

import numpy as np

from .core import SnifferRecord, Series, Unit, to_series
from .errors import DomainError

R_GAS = 8.314462  # J/(mol K)
M_CH4 = 16.04  # g/mol
M_CO2 = 44.01  # g/mol
KELVIN = 273.15

MOLAR_MASS = {"CH4": M_CH4, "CO2": M_CO2}


def _check_domain(temp_c, pressure_mbar):
    if np.any(np.asarray(pressure_mbar) <= 0):
        raise DomainError("pressure must be positive")
    if np.any(np.asarray(temp_c) <= -KELVIN):
        raise DomainError("temperature must be above absolute zero")


def mg_m3_to_ppm(c, temp_c, pressure_mbar, molar_mass=M_CH4):
    """Volume mixing ratio from mass concentration at the measured T and P.

    ``ppm = c * R * (T + 273.15) / (M * P * 100) * 1000`` with ``c`` in
    mg/m3, ``T`` in degC, ``P`` in mbar and ``M`` in g/mol.  Works
    element-wise on arrays.
    """
    _check_domain(temp_c, pressure_mbar)
    return c * R_GAS * (np.add(temp_c, KELVIN)) / (molar_mass * (np.multiply(pressure_mbar, 100.0))) * 1000.0


def ppm_to_mg_m3(ppm, temp_c, pressure_mbar, molar_mass=M_CH4):
    """Inverse of :func:`mg_m3_to_ppm`."""
    _check_domain(temp_c, pressure_mbar)
    return ppm * molar_mass * np.multiply(pressure_mbar, 100.0) / (R_GAS * np.add(temp_c, KELVIN) * 1000.0)


def convert_series(records: Sequence[SnifferRecord], gas: str = "CH4", *,
                   dt: float | None = None, t0: float | None = None, n: int | None = None,
                   counts: Counter | None = None) -> Series:
    """Convert one gas channel of sniffer records to ppm on a uniform grid.

    Every sample uses its own temperature and pressure.  Samples lacking
    either become invalid and are counted in ``meta["missing_tp"]``.
    """
    gas = gas.upper()
    if gas not in MOLAR_MASS:
        raise ValueError(f"unknown gas {gas!r}")
    col = "ch4_mg_m3" if gas == "CH4" else "co2_mg_m3"
    kw = dict(dt=dt, t0=t0, n=n)
    conc = to_series(records, col, **kw)
    temp = to_series(records, "temp_c", **kw)
    pres = to_series(records, "pressure_mbar", **kw)
    tp_ok = temp.valid & pres.valid
    missing_tp = int(np.count_nonzero(conc.valid & ~tp_ok))
    ok = conc.valid & tp_ok
    ppm = np.full(len(conc), np.nan)
    ppm[ok] = mg_m3_to_ppm(conc.values[ok], temp.values[ok], pres.values[ok], MOLAR_MASS[gas])
    if counts is not None and missing_tp:
        counts["missing_tp"] += missing_tp
    meta = dict(conc.meta, missing_tp=missing_tp)
    return Series(conc.t0, conc.dt, ppm, ok, Unit.PPM, meta=meta)

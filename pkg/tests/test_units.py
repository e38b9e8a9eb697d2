import numpy as np
import pytest
from hypothesis import given, strategies as st

from rumench4.core import SnifferRecord, Unit
from rumench4.errors import DomainError
from rumench4.units import M_CH4, M_CO2, R_GAS, convert_series, mg_m3_to_ppm, ppm_to_mg_m3


def molar_volume_oracle(c, temp_c, p_mbar, m):
    """ppm = c * Vm / M with Vm in L/mol from the ideal gas law."""
    vm_l = R_GAS * (temp_c + 273.15) / (p_mbar * 100.0) * 1000.0
    return c * vm_l / m


def test_spot_values():
    assert mg_m3_to_ppm(1.0, 25.0, 1013.25, M_CH4) == pytest.approx(1.5253, abs=5e-5)
    assert mg_m3_to_ppm(16.04, 0.0, 1013.25, M_CH4) == pytest.approx(22.414, abs=5e-4)
    assert mg_m3_to_ppm(44.01, 0.0, 1013.25, M_CO2) == pytest.approx(22.414, abs=5e-4)


def test_zero_concentration():
    assert mg_m3_to_ppm(0.0, 12.0, 990.0) == 0.0


@given(c=st.floats(0, 1e5), t=st.floats(-10, 45), p=st.floats(900, 1060))
def test_matches_oracle(c, t, p):
    assert mg_m3_to_ppm(c, t, p) == pytest.approx(molar_volume_oracle(c, t, p, M_CH4), rel=1e-9, abs=1e-12)


@given(c=st.floats(0, 1e5), t=st.floats(-10, 45), p=st.floats(900, 1060))
def test_inverse(c, t, p):
    assert ppm_to_mg_m3(mg_m3_to_ppm(c, t, p), t, p) == pytest.approx(c, rel=1e-12, abs=1e-12)


def test_domain_errors():
    with pytest.raises(DomainError):
        mg_m3_to_ppm(1.0, 20.0, 0.0)
    with pytest.raises(DomainError):
        mg_m3_to_ppm(1.0, -300.0, 1000.0)


def _recs(n, pressure=1013.25):
    return [SnifferRecord(float(i), 1.0, 1.0, 1.1, 25.0, pressure) for i in range(n)]


def test_convert_constant():
    s = convert_series(_recs(10))
    assert s.unit == Unit.PPM
    assert np.allclose(s.values, mg_m3_to_ppm(1.0, 25.0, 1013.25))


def test_convert_missing_pressure():
    recs = _recs(5)
    recs[2] = SnifferRecord(2.0, 1.0, 1.0, 1.1, 25.0, None)
    s = convert_series(recs)
    assert s.valid.tolist() == [True, True, False, True, True]
    assert s.meta["missing_tp"] == 1


def test_convert_co2():
    recs = [SnifferRecord(0.0, 1.0, 44.01, 1.1, 0.0, 1013.25)]
    assert convert_series(recs, "CO2").values[0] == pytest.approx(22.414, abs=5e-4)

import math

import numpy as np
import pytest

from qlase.integrator import IntegratorConfig, Trajectory, integrate
from qlase.model import ModelParams, cim_rhs, cim_rhs_lab
from qlase.spectrum import (FrequencyError, SpectrumResult, cim_frequency, laser_frequency,
                            lasing_trajectory, power_spectrum, time_average_frequency)
from qlase.steady_state import cim_lasing_state


def _tone(omega, window=100.0, n=1000, amp=1.0):
    t = np.arange(n + 1) * window / n
    states = np.zeros((n + 1, 2), complex)
    states[:, 0] = amp * np.exp(-1j * omega * t)
    states[:, 1] = states[:, 0]
    return Trajectory(t, states)


def test_pure_tone_on_grid():
    omega = 2 * np.pi * 7 / 100.0
    res = power_spectrum(_tone(omega), 100.0, ModelParams(), frame="lab")
    assert res.peak_freq == pytest.approx(omega, abs=1e-12)
    assert res.bin_width == pytest.approx(2 * np.pi / 100.0)
    assert res.parseval_error < 1e-12
    assert res.psd.sum() == pytest.approx(1.0, rel=1e-12)


def test_constant_signal():
    res = power_spectrum(_tone(0.0, amp=3.0), 100.0, ModelParams(), frame="lab")
    assert res.peak_freq == 0.0
    assert res.psd.sum() == pytest.approx(9.0, rel=1e-12)
    assert res.omega_formula == ModelParams().nu


def test_rotating_frame_mapping():
    # a constant rotating-frame field is a tone at nu in the lab frame
    nu = 2 * np.pi * 5 / 100.0
    p = ModelParams(nu=nu)
    res = power_spectrum(_tone(0.0), 100.0, p, frame="rotating")
    assert res.peak_freq == pytest.approx(nu, abs=1e-12)
    res = power_spectrum(_tone(0.0), 100.0, p, frame="rotating", frame_offset=-nu)
    assert res.peak_freq == pytest.approx(0.0, abs=1e-12)


def test_gauge_invariance_of_formula():
    p = ModelParams(nu=3.0)
    x = np.array([2.0 + 1j, 0.5 - 0.2j])
    w = laser_frequency(x, p)
    assert laser_frequency(x * np.exp(0.7j), p) == pytest.approx(w, rel=1e-14)
    assert laser_frequency(np.array([1.0, 2.0]), p) == 3.0
    with pytest.raises(FrequencyError):
        laser_frequency(np.zeros(2), p)


def test_cim_frequency_example():
    assert cim_frequency(ModelParams(delta_nu=100.0)) == pytest.approx(1000 / 10010, rel=1e-14)
    assert cim_frequency(ModelParams(nu=5.0)) == 5.0


def test_window_checks_and_warning(caplog):
    with pytest.raises(ValueError, match="window"):
        power_spectrum(_tone(1.0), 200.0, ModelParams(), frame="lab")
    res = power_spectrum(_tone(1.0), 100.0, ModelParams(delta_nu=0.1), frame="lab")
    assert any("10 periods" in d for d in res.diagnostics)
    with pytest.raises(ValueError, match="psd"):
        SpectrumResult(np.zeros(2), -np.ones(2), 0.0, 0.0, 0.0)


def test_lab_and_rotating_integration_agree():
    p = ModelParams(r=3e5, nu=50.0, delta_nu=20.0)
    x_cim, omega0 = cim_lasing_state(p)
    cfg = IntegratorConfig(rel_tol=1e-10, abs_tol=1e-10)
    lab = integrate(lambda z: cim_rhs_lab(z, p), x_cim, (0.0, 5.0), cfg, dense=True)
    rot = integrate(lambda z: cim_rhs(z, p), x_cim, (0.0, 5.0), cfg, dense=True)
    a = power_spectrum(lab, 4.0, p, frame="lab")
    b = power_spectrum(rot, 4.0, p, frame="rotating")
    assert a.peak_freq == b.peak_freq
    np.testing.assert_allclose(a.psd, b.psd, rtol=1e-6, atol=1e-9 * a.psd.max())
    expected = p.nu + omega0  # rotation rate of the CIM relative equilibrium
    assert a.peak_freq == pytest.approx(expected, abs=a.bin_width)
    assert time_average_frequency(lab, 4.0, p) == pytest.approx(expected, abs=1e-6)


@pytest.mark.slow
def test_detuned_peak_matches_formula():
    p = ModelParams(r=8e5, n_dots=500, delta_nu=-1e4)
    traj, omega0 = lasing_trajectory(p, "tpm", settle=20.0, window=100.0)
    res = power_spectrum(traj, 100.0, p, frame_offset=omega0)
    assert abs(res.peak_freq - res.omega_formula) <= res.bin_width
    assert abs(time_average_frequency(traj, 100.0, p) - res.omega_formula) < 1e-3

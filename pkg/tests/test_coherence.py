import math

import numpy as np
import pytest

from qlase.coherence import (DegenerateNormalizationError, RegressionSystem, g1_from_regression,
                             regression_system_cim_nl, regression_system_tpm_nl,
                             schawlow_townes)
from qlase.model import ModelParams
from qlase.steady_state import (FixedPoint, cim_threshold_analytic, lasing_fixed_point,
                                nonlasing_fixed_point_cim, nonlasing_fixed_point_tpm,
                                tpm_threshold_analytic)


def _lasing_fp(params, b2, n):
    x = np.zeros(12, complex)
    x[0], x[2] = math.sqrt(b2), n
    return FixedPoint(params, x, 0.0)


def test_schawlow_townes_worked_example():
    est = schawlow_townes(ModelParams(), _lasing_fp(ModelParams(), 100.0, 0.95))
    assert est.linewidth == pytest.approx(10 / 400 * 0.95 / 0.9 * (1e4 / 10005) ** 2, rel=1e-12)
    assert est.linewidth == pytest.approx(0.026362, abs=1e-6)
    assert est.tau_c == pytest.approx(37.93, abs=5e-3)
    assert est.valid and est.series().method == "schawlow-townes"


def test_schawlow_townes_scaling_and_limits():
    p = ModelParams()
    a = schawlow_townes(p, _lasing_fp(p, 100.0, 0.95)).linewidth
    b = schawlow_townes(p, _lasing_fp(p, 200.0, 0.95)).linewidth
    assert b == pytest.approx(a / 2, rel=1e-14)
    widths = [schawlow_townes(p.with_(gamma=ga), _lasing_fp(p, 100.0, 0.95)).linewidth
              for ga in (1e2, 1e4, 1e8)]
    assert widths[0] < widths[1] < widths[2] <= 10 / 400 * 0.95 / 0.9


def test_schawlow_townes_validity():
    p = ModelParams(r=1.0e5)
    est = schawlow_townes(p, _lasing_fp(p, 100.0, 0.4))
    assert not est.valid and math.isnan(est.linewidth)
    est = schawlow_townes(p, _lasing_fp(p, 100.0, 0.9), r_threshold=0.95e5)
    assert not est.valid and math.isfinite(est.linewidth)
    assert any("10%" in d for d in est.diagnostics)


def test_one_by_one_system():
    series = g1_from_regression(RegressionSystem([[-2.5]], [1.0]), tau_max=2.0, n_samples=50)
    np.testing.assert_allclose(series.g1, np.exp(-2.5 * series.taus), rtol=1e-12)
    assert series.tau_c == pytest.approx(1 / 2.5, rel=1e-12)


def _random_stable(rng, n=4):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    a -= (np.max(np.linalg.eigvals(a).real) + rng.uniform(0.5, 2.0)) * np.eye(n)
    return RegressionSystem(a, rng.normal(size=n) + 1j * rng.normal(size=n))


def test_eigen_and_integration_agree(rng):
    for _ in range(10):
        sys = _random_stable(rng)
        e = g1_from_regression(sys, tau_max=5.0, n_samples=64, method="eigen")
        i = g1_from_regression(sys, tau_max=5.0, n_samples=64, method="integrate")
        assert e.g1[0] == 1 and i.g1[0] == 1
        np.testing.assert_allclose(e.g1, i.g1, atol=1e-6)
        assert e.tau_c == pytest.approx(i.tau_c, rel=1e-6)


def test_defective_matrix_falls_back():
    sys = RegressionSystem([[-1.0, 1.0], [0.0, -1.0]], [1.0, 1.0])
    s = g1_from_regression(sys)
    assert s.method == "regression-integration" and s.diagnostics
    # x1 = (1 + t) e^{-t}: 2 * int (1+t)^2 e^{-2t} dt = 2.5
    assert s.tau_c == pytest.approx(2.5, rel=1e-6)


def test_diverging_and_degenerate():
    s = g1_from_regression(RegressionSystem([[0.1]], [1.0]))
    assert s.tau_c == math.inf and "diverging" in s.diagnostics[0]
    with pytest.raises(DegenerateNormalizationError):
        g1_from_regression(RegressionSystem([[-1.0]], [0.0]))
    with pytest.raises(ValueError, match="inconsistent"):
        RegressionSystem([[-1.0, 0], [0, -1]], [1.0])


def test_cim_regression_below_and_at_threshold():
    p = ModelParams()
    n_th, r_th = cim_threshold_analytic(p)
    below = regression_system_cim_nl(p, nonlasing_fixed_point_cim(p.with_(r=0.5 * r_th)))
    assert np.all(below.eigenvalues.real < 0)
    at = regression_system_cim_nl(p, nonlasing_fixed_point_cim(p.with_(r=r_th)))
    assert np.min(np.abs(at.eigenvalues)) < 1e-9 * np.max(np.abs(at.eigenvalues))


def test_cim_regression_half_inversion():
    p = ModelParams()
    fp = nonlasing_fixed_point_cim(p.with_(r=1.0e3))
    fp.state[2] = 0.5
    ev = np.sort(regression_system_cim_nl(p, fp).eigenvalues.real)
    np.testing.assert_allclose(ev, [-p.gamma, -p.gamma_c], rtol=1e-12)


def test_cim_regression_rejects_lasing():
    p = ModelParams(r=3e5)
    fp = lasing_fixed_point(p, model="cim")
    with pytest.raises(ValueError, match="non-lasing"):
        regression_system_cim_nl(p, fp)


def test_tpm_regression_weak_coupling():
    p = ModelParams(g=1e-9, mu=0.05, r=1e3)
    sys = regression_system_tpm_nl(p, nonlasing_fixed_point_tpm(p, with_stability=False))
    expected = [-p.gamma * 1.05 - 1, -p.gamma, -p.gamma_c - 1, -p.gamma_c]
    np.testing.assert_allclose(np.sort(sys.eigenvalues.real), expected, rtol=1e-6)


def test_tpm_regression_zero_photons():
    p = ModelParams(r=1e3)
    fp = nonlasing_fixed_point_tpm(p, with_stability=False)
    fp.state[3] = 0
    with pytest.raises(DegenerateNormalizationError):
        regression_system_tpm_nl(p, fp)


def test_tpm_regression_contains_cim_structure():
    p = ModelParams(r=2e5, delta_nu=50.0)
    fp = nonlasing_fixed_point_tpm(p, with_stability=False)
    n = fp.state[2].real
    a = regression_system_tpm_nl(p, fp).a_matrix
    c = regression_system_cim_nl(p, FixedPoint(p, fp.state[:5], 0.0)).a_matrix
    # <b^+ v^+c c^+c> closes to n <b^+ v^+c> in the CIM
    assert a[1, 0] + a[1, 2] * n == pytest.approx(c[1, 0], rel=1e-12)
    assert a[0, 1] == c[0, 1] and a[1, 1] == c[1, 1]


def test_tpm_nl_finite_above_threshold():
    p = ModelParams()
    r_th = tpm_threshold_analytic(p).r_th_analytic
    sys = regression_system_tpm_nl(p, nonlasing_fixed_point_tpm(p.with_(r=1.2 * r_th)))
    assert np.max(sys.eigenvalues.real) < -1.0
    s = g1_from_regression(sys)
    assert 0 < s.tau_c < 1 and abs(s.g1[-1]) < 1e-3


def test_cim_divergence_at_threshold():
    p = ModelParams()
    _, r_th = cim_threshold_analytic(p)
    taus = []
    for k in range(2, 7):
        q = p.with_(r=r_th * (1 - 2.0 ** -k))
        taus.append(g1_from_regression(regression_system_cim_nl(q, nonlasing_fixed_point_cim(q)))
                    .tau_c)
    ratios = np.diff(taus) / 1
    assert np.all(np.array(taus[1:]) / np.array(taus[:-1]) > 1.5)

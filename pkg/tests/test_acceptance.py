"""Acceptance criteria 1-9.

Each test prints one ``PASS``/``FAIL`` line with the measured values and the
runtime; the lines are repeated in the pytest terminal summary.  Run the file
directly (``python tests/test_acceptance.py``) to get just the nine lines.

Criteria that the model does not meet stay red; the reasons are recorded in
the decision ledger rather than hidden behind relaxed tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
import sys
import time

import numpy as np
import pytest
from scipy.optimize import brentq

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:  # pragma: no cover
    ACCEPTANCE_LINES = []

from qlase.coherence import (g1_from_regression, regression_system_cim_nl,
                             regression_system_tpm_nl, schawlow_townes)
from qlase.config import load
from qlase.integrator import IntegratorConfig, integrate
from qlase.model import (ModelParams, decorrelate3, decorrelate4, to_rotating_frame, tpm_rhs,
                         tpm_rhs_lab)
from qlase.spectrum import lasing_trajectory, power_spectrum, time_average_frequency
from qlase.steady_state import (StepConfig, cim_lasing_state, cim_threshold_analytic,
                                cim_threshold_population, continue_branch, lasing_fixed_point,
                                nonlasing_fixed_point_cim, nonlasing_fixed_point_tpm,
                                tpm_threshold_analytic)


@dataclass
class Outcome:
    number: int
    ok: bool
    detail: str
    elapsed: float
    limit: float

    @property
    def passed(self) -> bool:
        return self.ok and self.elapsed < self.limit

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (f"{tag} criterion {self.number}: {self.detail} "
                f"[{self.elapsed:.1f} s, limit {self.limit:g} s]")


def _report(outcome: Outcome) -> Outcome:
    line = outcome.line()
    print(line)
    ACCEPTANCE_LINES.append(line)
    return outcome


def _timed(fn):
    t0 = time.perf_counter()
    value = fn()
    return value, time.perf_counter() - t0


@lru_cache(maxsize=None)
def tpm_branch(n_dots: int, mu: float):
    """Lasing branch from 3x the analytic threshold down through the fold, with its runtime."""
    def run():
        p = ModelParams(n_dots=n_dots, mu=mu)
        rt = tpm_threshold_analytic(p).r_th_analytic
        seed = lasing_fixed_point(p.with_(r=3 * rt))
        return continue_branch(lambda q: (lambda x: tpm_rhs(x, q)), seed,
                               (0.3 * rt, 4 * rt), StepConfig())
    return _timed(run)


# ---------------------------------------------------------------------------

def criterion_1() -> Outcome:
    def run():
        gaps = []
        for n_dots in (25, 500):
            p = ModelParams(n_dots=n_dots)
            n_th, r_th = cim_threshold_analytic(p)

            def leading(r):
                q = p.with_(r=r)
                fp = nonlasing_fixed_point_cim(q, with_stability=False)
                return np.max(regression_system_cim_nl(q, fp).eigenvalues.real)
            r_star = brentq(leading, 0.5 * r_th, 2.0 * r_th, xtol=1e-12 * r_th, rtol=1e-15)
            q = p.with_(r=r_star)
            n_star = nonlasing_fixed_point_cim(q, with_stability=False).state[2].real
            gaps.append((n_dots, abs(n_star - cim_threshold_population(p)) / n_th))
        return gaps
    gaps, dt = _timed(run)
    ok = all(g < 1e-6 for _, g in gaps)
    detail = ", ".join(f"N={n}: |n*-n_th|/n_th={g:.2e}" for n, g in gaps)
    return Outcome(1, ok, detail + " (tol 1e-6)", dt, 10)


def criterion_2() -> Outcome:
    parts, ok, worst = [], True, 0.0
    for mu in (0.0, 0.05):
        br, dt = tpm_branch(25, mu)
        rep = tpm_threshold_analytic(ModelParams(mu=mu))
        if br.fold is None:
            ok = False
            parts.append(f"mu={mu}: no fold")
            continue
        rep.with_numeric(br.fold[0])
        ok &= rep.relative_gap < 0.05
        worst = max(worst, dt)
        parts.append(f"mu={mu}: r_fold={br.fold[0]:.6g} r_th={rep.r_th_analytic:.6g} "
                     f"gap={rep.relative_gap:.2e}")
    return Outcome(2, ok, "; ".join(parts) + " (tol 5e-2, slowest branch shown)", worst, 120)


def criterion_3() -> Outcome:
    br, _ = tpm_branch(25, 0.0)

    def run():
        p = ModelParams(r=1.1 * br.fold[0])
        nl = nonlasing_fixed_point_tpm(p)
        la = lasing_fixed_point(p)
        return p, nl, la
    (p, nl, la), dt = _timed(run)
    zero_tol = 1e-9 * (p.gamma + p.gamma_c)
    ev = la.eigenvalues
    zero = np.abs(ev.real) < zero_tol
    nl_max = np.max(nl.eigenvalues.real)
    la_max = np.max(ev.real[~zero]) if np.any(~zero) else -np.inf
    ok = nl_max < 0 and zero.sum() == 1 and la_max < 0
    detail = (f"NL max Re={nl_max:.4g}; L zero modes={int(zero.sum())} "
              f"(|Re|<{zero_tol:.1e}), other max Re={la_max:.4g}, |beta|={la.amplitude:.4g}")
    return Outcome(3, ok, detail, dt, 30)


def criterion_4() -> Outcome:
    br, _ = tpm_branch(25, 0.0)

    def run():
        r_fold, x_fold = br.fold
        p = ModelParams()
        b2 = lasing_fixed_point(p.with_(r=2 * r_fold)).amplitude
        _, r_th = cim_threshold_analytic(p)
        c1 = abs(cim_lasing_state(p.with_(r=1.001 * r_th))[0][0])
        c2 = abs(cim_lasing_state(p.with_(r=2 * r_th))[0][0])
        return abs(x_fold[0]) / b2, c1 / c2
    (tpm_ratio, cim_ratio), dt = _timed(run)
    ok = tpm_ratio > 0.05 and cim_ratio < 1e-3
    detail = (f"TPM |beta|(fold)/|beta|(2 r_fold)={tpm_ratio:.4f} (need >0.05); "
              f"CIM |beta|(1.001 r_th)/|beta|(2 r_th)={cim_ratio:.4f} (need <1e-3)")
    return Outcome(4, ok, detail, dt, 120)


def criterion_5() -> Outcome:
    def run():
        base = load("fig3a").params
        rt = tpm_threshold_analytic(base).r_th_analytic
        p = base.with_(r=1.5 * rt)
        st = schawlow_townes(p, lasing_fixed_point(p), r_threshold=rt)
        nl = g1_from_regression(regression_system_tpm_nl(p, nonlasing_fixed_point_tpm(p)))
        _, rc = cim_threshold_analytic(base)
        taus = []
        for f in (0.99, 0.5):
            q = base.with_(r=f * rc)
            taus.append(g1_from_regression(
                regression_system_cim_nl(q, nonlasing_fixed_point_cim(q))).tau_c)
        return st.tau_c, nl.tau_c, taus[0] / taus[1]
    (t_l, t_nl, cim_ratio), dt = _timed(run)
    ok = t_l / t_nl > 1e3 and cim_ratio > 10
    detail = (f"TPM tau_c L/NL={t_l:.4g}/{t_nl:.4g}={t_l / t_nl:.3g} (need >1e3); "
              f"CIM NL tau_c(0.99 r_th)/tau_c(0.5 r_th)={cim_ratio:.3g} (need >10)")
    return Outcome(5, ok, detail, dt, 30)


def criterion_6() -> Outcome:
    def run():
        rows = []
        base = ModelParams(n_dots=500, r=8e5)
        for dnu in (-1e4, -5e3, 0.0, 5e3, 1e4):
            p = base.with_(delta_nu=dnu)
            traj, omega0 = lasing_trajectory(p, "tpm", settle=50.0, window=100.0)
            res = power_spectrum(traj, 100.0, p, frame_offset=omega0)
            avg = time_average_frequency(traj, 100.0, p)
            vals = (res.peak_freq, avg, res.omega_cim)
            spread = (max(vals) - min(vals)) / res.bin_width
            rows.append((dnu, res.peak_freq, avg, res.omega_cim, spread))
        return rows
    rows, dt = _timed(run)
    ok = all(s <= 1.0 for *_, s in rows)
    detail = "; ".join(f"dnu={d:g}: peak={pk:.4f} avg={a:.4f} cim={c:.4f} spread={s:.2f} bins"
                       for d, pk, a, c, s in rows)
    return Outcome(6, ok, detail, dt, 300)


def criterion_7() -> Outcome:
    rng = np.random.default_rng(7)

    def identities():
        worst = 0.0
        s = rng.normal(size=(4, 10_000)) + 1j * rng.normal(size=(4, 10_000))
        i, j, k, l = s
        d3 = decorrelate3(i, j, k, j * k, i * k, i * j) - i * j * k
        worst = max(worst, np.max(np.abs(d3) / np.maximum(1, np.abs(i * j * k))))
        pairs = (i * j, i * k, i * l, j * k, j * l, k * l)
        d4 = decorrelate4(s, pairs, (j * k * l, i * k * l, i * j * l, i * j * k)) - i * j * k * l
        worst = max(worst, np.max(np.abs(d4) / np.maximum(1, np.abs(i * j * k * l))))
        ones = np.ones(10_000)
        worst = max(worst, np.max(np.abs(decorrelate3(*[ones] * 6) - 1)),
                    np.max(np.abs(decorrelate4([ones] * 4, [ones] * 6, [ones] * 4) - 1)))
        pr = rng.normal(size=(6, 10_000)) + 1j * rng.normal(size=(6, 10_000))
        tr = rng.normal(size=(4, 10_000)) + 1j * rng.normal(size=(4, 10_000))
        zero = np.zeros(10_000)
        d = decorrelate4([zero] * 4, pr, tr) - (pr[0] * pr[5] + pr[1] * pr[4] + pr[2] * pr[3])
        worst = max(worst, np.max(np.abs(d)),
                    np.max(np.abs(decorrelate3(zero, zero, zero, *pr[:3]))))
        return worst

    def dynamics():
        p = ModelParams(r=2e5, nu=20.0, delta_nu=50.0, mu=0.02)
        cfg = IntegratorConfig(rel_tol=1e-9, abs_tol=1e-9)
        herm, frame = 0.0, 0.0
        t1 = 0.1
        for _ in range(20):
            x = 0.5 * (rng.normal(size=12) + 1j * rng.normal(size=12))
            for idx in (2, 3, 8, 10):
                x[idx] = abs(x[idx].real)
            x[2] = rng.uniform(0.1, 0.9)
            rot = integrate(lambda z: tpm_rhs(z, p), x, (0.0, t1), cfg)
            herm = max(herm, np.max(np.abs(rot.states[:, [2, 3, 8, 10]].imag)))
            lab = integrate(lambda z: tpm_rhs_lab(z, p), x, (0.0, t1), cfg)
            mapped = to_rotating_frame(lab.final, p.nu, t1)
            scale = cfg.rel_tol * np.abs(rot.final) + cfg.abs_tol
            frame = max(frame, np.max(np.abs(mapped - rot.final) / scale))
        return herm, frame

    worst, dt1 = _timed(identities)
    (herm, frame), dt2 = _timed(dynamics)
    ok = worst < 1e-12 and herm < 1e-9 and frame < 10
    detail = (f"decorrelation identities max err={worst:.2e} (1e4 draws, tol 1e-12); "
              f"Hermitian imag max={herm:.2e} (tol 1e-9); lab vs rotating "
              f"={frame:.2f} x tolerance (need <10), 20 states")
    return Outcome(7, ok, detail, dt1 + dt2, 60)


def criterion_8() -> Outcome:
    def run():
        gaps = []
        for n_dots in (25, 100, 500):
            br, _ = tpm_branch(n_dots, 0.05)
            p = ModelParams(n_dots=n_dots, mu=0.05, r=2 * br.fold[0])
            bt = lasing_fixed_point(p).amplitude
            bc = abs(cim_lasing_state(p)[0][0])
            gaps.append((n_dots, abs(bt - bc) / bc))
        return gaps
    gaps, dt = _timed(run)
    g = [x for _, x in gaps]
    ok = all(a > b for a, b in zip(g, g[1:]))
    detail = ", ".join(f"N={n}: |dbeta|/beta_CIM={x:.4f}" for n, x in gaps)
    return Outcome(8, ok, detail + " (need strictly decreasing)", dt, 300)


def criterion_9() -> Outcome:
    def run():
        branches = {mu: tpm_branch(25, mu)[0] for mu in (0.0, 0.05)}
        positive = min(min(q.gen_std for q in b.points if q.stability == "stable")
                       for b in branches.values())
        r_lo = max(b.fold[0] for b in branches.values()) * 1.05
        r_hi = min(max(b.r) for b in branches.values())
        rows = []
        for r in np.geomspace(r_lo, r_hi, 4):
            stds = [lasing_fixed_point(ModelParams(mu=mu, r=r)).gen_std for mu in (0.0, 0.05)]
            rows.append((r, *stds))
        return positive, rows
    (positive, rows), dt = _timed(run)
    increasing = all(s05 > s0 for _, s0, s05 in rows)
    ok = positive > 0 and increasing
    detail = (f"min std on stable branch={positive:.4g} (need >0); "
              + "; ".join(f"r={r:.4g}: std(mu=0)={a:.4g} std(mu=0.05)={b:.4g}"
                          for r, a, b in rows)
              + " (need std to grow with mu)")
    return Outcome(9, ok, detail, dt, 60)


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9]


@pytest.mark.slow
@pytest.mark.parametrize("criterion", CRITERIA, ids=[f"criterion_{k}" for k in range(1, 10)])
def test_acceptance(criterion):
    outcome = _report(criterion())
    assert outcome.passed, outcome.line()


if __name__ == "__main__":
    results = [_report(c()) for c in CRITERIA]
    sys.exit(0 if all(r.passed for r in results) else 1)

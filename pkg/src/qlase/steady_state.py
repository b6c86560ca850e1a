"""Fixed points, linear stability, thresholds and pump continuation.

All Newton and eigenvalue work happens on the real system ``y = [Re x, Im x]``.
Lasing states are relative equilibria: in the frame rotating at ``nu`` they
turn at a constant rate ``omega`` (zero at zero detuning), so they are solved
as fixed points of ``rhs(x) + i*omega*W*x`` with ``W`` the phase weights and
the gauge fixed by ``Im(beta) = 0``.  ``omega`` takes the place of
``Im(beta)`` in the unknown vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .model import (CIM_PHASE_WEIGHTS, TPM_PHASE_WEIGHTS, CimState, ModelParams,
                    TpmState, cim_rhs, coherent_seed, generalized_std, tpm_rhs)
from .integrator import IntegratorConfig, integrate_to_steady
from .jacobian import (EXACT_FD, jacobian_fd, jacobian_fd_real, realified, to_complex,
                       to_real)

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    pass


class ThresholdError(ValueError):
    """Parameters for which the threshold formula has no meaning."""


# ---------------------------------------------------------------------------
# gauge-pinned formulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Gauge:
    """Phase symmetry data: weights of each variable and the pinned entry."""

    weights: np.ndarray
    pin: int = 0

    @classmethod
    def for_dim(cls, dim: int) -> "Gauge":
        if dim == 12:
            return cls(TPM_PHASE_WEIGHTS)
        if dim == 5:
            return cls(CIM_PHASE_WEIGHTS)
        raise ValueError(f"no gauge known for dimension {dim}")

    def pack(self, x, omega: float) -> np.ndarray:
        y = to_real(x)
        y[len(x) + self.pin] = omega
        return y

    def unpack(self, u):
        u = np.asarray(u, dtype=float)
        d = u.shape[0] // 2
        omega = u[d + self.pin]
        y = u.copy()
        y[d + self.pin] = 0.0
        return to_complex(y), omega

    def co_rotating(self, rhs: Callable, omega: float) -> Callable:
        """Vector field seen from a frame turning at ``omega``."""
        w = self.weights

        def f(x):
            x = np.asarray(x, dtype=complex)
            ww = w.reshape((-1,) + (1,) * (x.ndim - 1))
            return rhs(x) + 1j * omega * ww * x
        return f

    def residual(self, rhs: Callable) -> Callable:
        def F(u):
            x, omega = self.unpack(u)
            return to_real(self.co_rotating(rhs, omega)(x))
        return F

    def generator(self, x) -> np.ndarray:
        """Tangent of the gauge orbit at ``x`` in Re/Im coordinates."""
        return to_real(1j * self.weights * np.asarray(x, dtype=complex))


# ---------------------------------------------------------------------------
# fixed points and stability
# ---------------------------------------------------------------------------

@dataclass
class FixedPoint:
    params: ModelParams
    state: np.ndarray
    residual: float
    eigenvalues: np.ndarray | None = None
    stability: str | None = None
    zero_mode_count: int | None = None
    omega: float = 0.0
    model: str = "tpm"
    relative_residual: float | None = None

    @property
    def amplitude(self) -> float:
        return float(abs(self.state[0]))

    @property
    def gen_std(self) -> float:
        return generalized_std(self.state) if len(self.state) == 12 else 0.0

    @property
    def is_lasing(self) -> bool:
        return self.amplitude > 0

    def named(self):
        cls = TpmState if len(self.state) == 12 else CimState
        return cls.from_array(self.state)


def default_zero_tol(params: ModelParams) -> float:
    return 1e-9 * (params.gamma + params.gamma_c)


def stability(rhs: Callable, x, zero_tol: float, omega: float = 0.0):
    """Eigenvalues of the real Jacobian at ``x`` and a stability label.

    Modes with ``|Re lambda| < zero_tol`` count as zero modes.  The point is
    ``stable`` if every other mode has ``Re lambda < 0``, ``unstable`` if any
    has ``Re lambda > 0``.  For lasing states pass the rotation rate
    ``omega`` so the Jacobian is taken in the co-rotating frame.
    """
    x = np.asarray(x, dtype=complex)
    f = Gauge.for_dim(len(x)).co_rotating(rhs, omega) if omega else rhs
    J = jacobian_fd(f, x, **EXACT_FD)
    try:
        ev = np.linalg.eigvals(J)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"eigensolver failed: {exc}") from exc
    ev = ev[np.argsort(-ev.real)]
    zero = np.abs(ev.real) < zero_tol
    nz = int(zero.sum())
    if np.any(ev.real[~zero] > 0):
        label = "unstable"
    elif nz:
        label = "marginal" if nz > 1 else "stable"
    else:
        label = "stable"
    return ev, label, nz


def term_scale(J, u) -> np.ndarray:
    """Per-equation magnitude ``sum_j |J_ij u_j|``, the size of the terms that cancel."""
    return np.abs(J) @ np.abs(u)


def _newton(F, u, tol, max_iter):
    """Damped Newton with row/column scaling on a square real system.

    Stops when ``max|F| < tol`` or when the residual relative to the size of
    the cancelling terms reaches round-off (``< 1e-13``) and steps stop
    shrinking it.  Returns ``(u, max|F|, scaled residual)``.
    """
    u = np.asarray(u, dtype=float)
    r = F(u)
    res = np.max(np.abs(r))
    floor = 1e-12 * max(1.0, np.max(np.abs(u)))
    for it in range(max_iter):
        J = jacobian_fd_real(F, u, **EXACT_FD)
        su = np.maximum(np.abs(u), floor)
        sf = term_scale(J, su) + 1e-300
        rel = np.max(np.abs(r) / sf)
        if res < tol or rel < 1e-14:
            return u, res, rel
        Js = J * su[None, :] / sf[:, None]
        try:
            du = su * np.linalg.solve(Js, -r / sf)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"singular Jacobian at iteration {it}") from exc
        if not np.all(np.isfinite(du)):
            raise ConvergenceError(f"singular Jacobian at iteration {it}")
        lam = 1.0
        while True:
            u_new = u + lam * du
            r_new = F(u_new)
            rel_new = np.max(np.abs(r_new) / sf)
            if np.isfinite(rel_new) and rel_new < rel * (1 - 1e-4 * lam):
                break
            lam *= 0.5
            if lam < 1e-6:
                if rel < 1e-12:
                    return u, res, rel
                raise ConvergenceError(f"Newton stalled at residual {res:.3e} "
                                       f"(relative {rel:.3e})")
        u, r = u_new, r_new
        res = np.max(np.abs(r))
    J = jacobian_fd_real(F, u, **EXACT_FD)
    rel = np.max(np.abs(r) / (term_scale(J, np.maximum(np.abs(u), floor)) + 1e-300))
    if res < tol or rel < 1e-12:
        return u, res, rel
    raise ConvergenceError(f"no convergence after {max_iter} iterations (residual {res:.3e})")


def newton_fixed_point(rhs: Callable, guess, tol: float = 1e-9, max_iter: int = 50, *,
                       params: ModelParams | None = None, pin_gauge: bool | None = None,
                       omega: float = 0.0, model: str = "tpm",
                       zero_tol: float | None = None) -> FixedPoint:
    """Polish ``guess`` to a zero of ``rhs`` with damped Newton.

    With ``pin_gauge`` (default: when ``|beta| > 0``) the state is first
    rotated so that ``beta`` is real, ``Im(beta)`` is held at zero and the
    rotation rate ``omega`` becomes an unknown.  The returned residual is
    that of the co-rotating vector field.
    """
    x = np.asarray(guess, dtype=complex)
    if not np.all(np.isfinite(x)):
        raise ValueError("guess is not finite")
    if pin_gauge is None:
        pin_gauge = abs(x[0]) > 0
    if pin_gauge:
        gauge = Gauge.for_dim(len(x))
        if abs(x[0]) == 0:
            raise ConvergenceError("cannot pin the gauge of a state with beta = 0")
        phase = np.exp(-1j * np.angle(x[0]) * gauge.weights)
        u0 = gauge.pack(x * phase, omega)
        u, res, rel = _newton(gauge.residual(rhs), u0, tol, max_iter)
        x, omega = gauge.unpack(u)
    else:
        F = realified(rhs)
        u, res, rel = _newton(F, to_real(x), tol, max_iter)
        x, omega = to_complex(u), 0.0
    fp = FixedPoint(params, x, float(res), omega=float(omega), model=model,
                    relative_residual=float(rel))
    if params is not None:
        zt = zero_tol if zero_tol is not None else default_zero_tol(params)
        fp.eigenvalues, fp.stability, fp.zero_mode_count = stability(rhs, x, zt, omega)
    return fp


# ---------------------------------------------------------------------------
# non-lasing solutions
# ---------------------------------------------------------------------------

def _k_factor(params: ModelParams, n, photon_electron: bool) -> float:
    N = params.n_dots
    s = N / (2.0 * params.gamma_c)
    if photon_electron:
        s += (N - 1) / (2.0 * params.gamma * (1.0 + params.mu))
    return 1.0 - params.gamma_g * (2.0 * n - 1.0) * s


def _pump_of_n(params: ModelParams, n, photon_electron: bool) -> float:
    """Pump giving population ``n`` on a non-lasing branch."""
    k = _k_factor(params, n, photon_electron)
    return (params.gamma_n + params.gamma_g / k) * n / (1.0 - n)


def _n_ceiling(params: ModelParams, photon_electron: bool) -> float:
    """Population where the non-lasing photon number diverges (K = 0), capped at 1."""
    N = params.n_dots
    s = N / (2.0 * params.gamma_c)
    if photon_electron:
        s += (N - 1) / (2.0 * params.gamma * (1.0 + params.mu))
    return min(1.0, 0.5 * (1.0 + 1.0 / (params.gamma_g * s)))


def _solve_population(params: ModelParams, photon_electron: bool) -> float:
    if params.r == 0:
        return 0.0
    hi = _n_ceiling(params, photon_electron)
    f = lambda n: _pump_of_n(params, n, photon_electron) - params.r
    # r(n) runs from 0 to +inf on [0, hi); shrink hi until f > 0
    b = hi * (1.0 - 1e-16)
    eps = 1e-15
    while not f(b) > 0:
        eps *= 10.0
        if eps > 1e-2:
            raise ConvergenceError("no physical population root")
        b = hi - eps * max(hi, 1e-300)
    return brentq(f, 0.0, b, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=500)


def _nonlasing_incoherent(params: ModelParams, n: float, photon_electron: bool):
    """``m, pi, cvv`` on the non-lasing branch as functions of ``n``."""
    N, g = params.n_dots, params.g
    if n == 0:
        return 0.0, 0j, 0.0
    k = _k_factor(params, n, photon_electron)
    re_pi = params.gamma_g * n / (2.0 * g * k)
    m = N * g * re_pi / params.gamma_c
    cvv = g * (2.0 * n - 1.0) * re_pi / (params.gamma * (1.0 + params.mu)) if photon_electron else 0.0
    pi = g * (n + m * (2.0 * n - 1.0) + (N - 1) * cvv) / (params.gamma + params.gamma_c
                                                         + 1j * params.delta_nu)
    return m, pi, cvv


def nonlasing_fixed_point_cim(params: ModelParams, *, with_stability: bool = True) -> FixedPoint:
    """Closed-form incoherent CIM solution (``beta = p = 0``)."""
    n = _solve_population(params, photon_electron=False)
    m, pi, _ = _nonlasing_incoherent(params, n, photon_electron=False)
    x = np.array([0, 0, n, m, pi], dtype=complex)
    rhs = lambda z: cim_rhs(z, params)
    fp = FixedPoint(params, x, float(np.max(np.abs(rhs(x)))), model="cim")
    if with_stability:
        fp.eigenvalues, fp.stability, fp.zero_mode_count = stability(
            rhs, x, default_zero_tol(params))
    return fp


def nonlasing_fixed_point_tpm(params: ModelParams, *, with_stability: bool = True) -> FixedPoint:
    """Closed-form incoherent TPM solution.

    All phase-carrying variables vanish; ``n`` solves the pump relation
    ``r = (Gamma_n + Gamma_g/K(n)) n/(1-n)`` and ``d4 = n^2``.
    """
    n = _solve_population(params, photon_electron=True)
    m, pi, cvv = _nonlasing_incoherent(params, n, photon_electron=True)
    x = np.zeros(12, dtype=complex)
    x[2], x[3], x[4], x[8], x[10] = n, m, pi, cvv, n * n
    rhs = lambda z: tpm_rhs(z, params)
    fp = FixedPoint(params, x, float(np.max(np.abs(rhs(x)))), model="tpm")
    if with_stability:
        fp.eigenvalues, fp.stability, fp.zero_mode_count = stability(
            rhs, x, default_zero_tol(params))
    return fp


def pump_for_population(params: ModelParams, n: float, model: str = "tpm") -> float:
    """Inverse of the non-lasing population relation."""
    return _pump_of_n(params, n, photon_electron=(model == "tpm"))


# ---------------------------------------------------------------------------
# analytic thresholds
# ---------------------------------------------------------------------------

@dataclass
class ThresholdReport:
    gamma_n: float
    gamma_g: float
    k_factor: float
    n_th: float
    r_th_analytic: float
    r_th_numeric: float | None = None
    relative_gap: float | None = None
    model: str = "tpm"
    params: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "model": self.model,
            "gamma_n": self.gamma_n,
            "gamma_g": self.gamma_g,
            "k_factor": self.k_factor,
            "n_th": self.n_th,
            "r_th_analytic": self.r_th_analytic,
            "r_th_numeric": self.r_th_numeric,
            "relative_gap": self.relative_gap,
            "params": self.params,
        }

    def with_numeric(self, r_fold: float) -> "ThresholdReport":
        self.r_th_numeric = float(r_fold)
        self.relative_gap = abs(r_fold - self.r_th_analytic) / self.r_th_analytic
        return self


def cim_threshold_population(params: ModelParams) -> float:
    """Upper-level population at the CIM lasing threshold."""
    p = params
    return 0.5 * (1.0 + p.gamma_c * p.gamma / (p.n_dots * p.g**2)
                  * (1.0 + (p.delta_nu / (p.gamma_c + p.gamma)) ** 2))


def cim_threshold_analytic(params: ModelParams):
    """``(n_th, r)`` where the CIM non-lasing branch reaches ``n_th``.

    Raises
    ------
    ThresholdError
        If ``n_th >= 1``: no lasing possible.
    """
    n_th = cim_threshold_population(params)
    if not n_th < 1.0:
        raise ThresholdError(f"no lasing possible: threshold population {n_th:.6g} >= 1")
    return n_th, _pump_of_n(params, n_th, photon_electron=False)


def tpm_threshold_analytic(params: ModelParams) -> ThresholdReport:
    """Analytic TPM threshold: the TPM pump relation evaluated at the CIM ``n_th``.

    Raises
    ------
    ThresholdError
        If ``n_th >= 1`` or ``K <= 0``.
    """
    n_th = cim_threshold_population(params)
    if not n_th < 1.0:
        raise ThresholdError(f"no lasing possible: threshold population {n_th:.6g} >= 1")
    k = _k_factor(params, n_th, photon_electron=True)
    if not k > 0:
        raise ThresholdError(f"K = {k:.6g} <= 0: threshold formula outside its validity")
    r_th = (params.gamma_n + params.gamma_g / k) * n_th / (1.0 - n_th)
    return ThresholdReport(params.gamma_n, params.gamma_g, k, n_th, r_th,
                           params=params.as_dict())


def cim_lasing_state(params: ModelParams):
    """Closed-form CIM lasing state at ``params.r`` (``None`` below threshold).

    Phase chosen with ``beta`` real and positive; in the frame rotating at
    ``nu`` the state turns as ``e^{-i omega t}`` with
    ``omega = -gamma_c * delta_nu / (gamma + gamma_c)`` (pulling towards ``nu_eps``).
    """
    p = params
    N, g, gc, ga, dnu = p.n_dots, p.g, p.gamma_c, p.gamma, p.delta_nu
    n = cim_threshold_population(p)
    if not n < 1.0:
        return None
    omega = -gc * dnu / (ga + gc)
    m = N * (p.r * (1.0 - n) - p.gamma_n * n) / (2.0 * gc)
    # pi from dm = 0 and d(pi) = 0 with |p|^2 = gc^2 |beta|^2/(N g)^2 |1 + ...|
    # p = beta (gc - i omega)/(N g) from the field equation in the turning frame
    ratio = (gc - 1j * omega) / (N * g)
    re_pi = gc * m / (N * g)
    # imaginary part of the pi equation fixes Im(pi); real part fixes |beta|^2
    a = ga + gc + 1j * dnu
    # a*pi = g[n + m(2n-1)] + (N-1) g |ratio|^2 |beta|^2, pi = re_pi + i im_pi
    src_const = g * (n + m * (2.0 * n - 1.0))
    coef = (N - 1) * g * abs(ratio) ** 2
    # real part: (ga+gc) re_pi - dnu im_pi = src_const + coef B
    # imag part: dnu re_pi + (ga+gc) im_pi = 0
    im_pi = -dnu * re_pi / (ga + gc)
    B = ((ga + gc) * re_pi - dnu * im_pi - src_const) / coef
    if not B > 0:
        return None
    beta = math.sqrt(B)
    x = np.array([beta, ratio * beta, n, m, re_pi + 1j * im_pi], dtype=complex)
    return x, omega


def embed_cim(x_cim) -> np.ndarray:
    """TPM state whose extra correlations are the factorised CIM values."""
    beta, p, n, m, pi = np.asarray(x_cim, dtype=complex)
    return np.array([beta, p, n, m, pi, beta * n, beta * beta, beta * p,
                     np.conj(p) * p, p * n, n * n, p * p], dtype=complex)


def lasing_fixed_point(params: ModelParams, model: str = "tpm", *,
                       cfg: IntegratorConfig | None = None, settle_time: float = 2000.0,
                       tol: float = 1e-9, zero_tol: float | None = None) -> FixedPoint:
    """Stable lasing state at ``params.r``.

    The CIM lasing state (closed form) is embedded with factorised
    correlations and polished by gauge-pinned Newton.  If that does not give
    a stable lasing point, the embedding is integrated for ``settle_time``
    first; when the trajectory falls back to the non-lasing state the seed
    amplitude is doubled (up to three times).

    Raises
    ------
    ConvergenceError
        If no lasing state is reached (e.g. below the fold).
    """
    cim = cim_lasing_state(params)
    if cim is None:
        raise ConvergenceError(f"no CIM lasing state to seed from at r={params.r:.6g}")
    x_cim, omega = cim
    if model == "cim":
        rhs = lambda z: cim_rhs(z, params)
        return newton_fixed_point(rhs, x_cim, tol, params=params, omega=omega,
                                  model="cim", zero_tol=zero_tol)
    rhs = lambda z: tpm_rhs(z, params)
    cfg = cfg or IntegratorConfig(rel_tol=1e-8, abs_tol=1e-8)
    seed = embed_cim(x_cim)
    def accept(guess):
        try:
            fp = newton_fixed_point(rhs, guess, tol, params=params, omega=omega,
                                    zero_tol=zero_tol)
        except ConvergenceError:
            return None
        if fp.stability == "stable" and fp.amplitude > 1e-3 * abs(x_cim[0]):
            return fp
        return None

    fp = accept(seed)
    if fp is not None:
        return fp
    for attempt in range(4):
        x = integrate_to_steady(rhs, seed, cfg, max_t=settle_time, steady_tol=1e-12)[0]
        if abs(x[0]) > 1e-3 * abs(seed[0]):
            fp = accept(x)
            if fp is not None:
                return fp
        seed = coherent_seed(nonlasing_fixed_point_tpm(params, with_stability=False).state,
                             abs(x_cim[0]) * 2 ** (attempt + 1))
    raise ConvergenceError(f"no TPM lasing state found at r={params.r:.6g}")


# ---------------------------------------------------------------------------
# continuation
# ---------------------------------------------------------------------------

@dataclass
class BranchPoint:
    r: float
    state: np.ndarray
    omega: float
    eigenvalues: np.ndarray
    stability: str
    zero_mode_count: int

    @property
    def amplitude(self) -> float:
        return float(abs(self.state[0]))

    @property
    def gen_std(self) -> float:
        return generalized_std(self.state) if len(self.state) == 12 else 0.0

    @property
    def leading_re(self) -> float:
        """Largest real part among the non-gauge modes."""
        ev = self.eigenvalues
        if self.zero_mode_count:
            keep = np.ones(len(ev), bool)
            keep[np.argmin(np.abs(ev.real))] = False
            ev = ev[keep]
        return float(np.max(ev.real))


@dataclass
class Branch:
    points: list[BranchPoint]
    fold: tuple[float, np.ndarray] | None = None
    model: str = "tpm"
    diagnostics: list[str] = field(default_factory=list)

    @property
    def r(self) -> np.ndarray:
        return np.array([p.r for p in self.points])

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([p.amplitude for p in self.points])


@dataclass(frozen=True)
class StepConfig:
    ds: float = 0.02
    ds_min: float = 1e-7
    ds_max: float = 0.1
    max_points: int = 2000
    newton_tol: float = 1e-9
    newton_max_iter: int = 12
    fold_rtol: float = 1e-6
    min_amplitude: float = 1e-6


class _PinnedSystem:
    """Gauge-pinned steady-state equations with the pump as extra unknown.

    Works in scaled coordinates ``z = (u / s_u, r / s_r)``; ``s_u`` is fixed
    from the seed so all entries are O(1) along the branch.
    """

    def __init__(self, rhs_factory, params: ModelParams, gauge: Gauge, u0, r0):
        self.rhs_factory = rhs_factory
        self.params = params
        self.gauge = gauge
        self.su = np.maximum(np.abs(u0), 1e-3 * np.max(np.abs(u0)))
        self.sr = float(r0)
        # residual scale: size of the largest term in each equation at the seed
        self.sf = None

    def split(self, z):
        return z[:-1] * self.su, z[-1] * self.sr

    def join(self, u, r):
        return np.concatenate([np.asarray(u) / self.su, [r / self.sr]])

    def F(self, z):
        u, r = self.split(z)
        rhs = self.rhs_factory(self.params.with_(r=r))
        return self.gauge.residual(rhs)(u) / self.sf

    def jac(self, z):
        return jacobian_fd_real(self.F, z, **EXACT_FD)


def _tangent(J, prev=None):
    """Unit null vector of the n x (n+1) Jacobian, oriented like ``prev``."""
    _, _, vt = np.linalg.svd(J)
    t = vt[-1]
    if prev is not None and np.dot(t, prev) < 0:
        t = -t
    return t / np.linalg.norm(t)


def continue_branch(rhs_factory, seed: FixedPoint, r_range: Sequence[float],
                    step_cfg: StepConfig | None = None, *, direction: int = -1,
                    zero_tol: float | None = None) -> Branch:
    """Pseudo-arclength continuation of a lasing branch in the pump ``r``.

    Parameters
    ----------
    rhs_factory : callable
        ``params -> (x -> dx/dt)``, e.g. ``lambda p: lambda x: tpm_rhs(x, p)``.
    seed : FixedPoint
        Converged lasing state (``beta != 0``).
    r_range : (r_min, r_max)
        Continuation stops when ``r`` leaves this interval.
    direction : -1 or +1
        Initial direction in ``r``.

    The predictor is the secant through the last two points (the tangent at
    the first), the corrector Newton on the arclength-augmented system.  A
    fold is flagged when ``dr/ds`` changes sign and refined by bisection on
    the arclength until the bracketing pumps agree to ``fold_rtol``.
    """
    cfg = step_cfg or StepConfig()
    params = seed.params
    gauge = Gauge.for_dim(len(seed.state))
    zt = zero_tol if zero_tol is not None else default_zero_tol(params)
    r_lo, r_hi = map(float, r_range)
    if abs(seed.state[0]) == 0:
        raise ValueError("continuation needs a lasing seed (beta != 0)")

    x0 = seed.state * np.exp(-1j * np.angle(seed.state[0]) * gauge.weights)
    u0 = gauge.pack(x0, seed.omega)
    sysm = _PinnedSystem(rhs_factory, params, gauge, u0, params.r)
    F0 = gauge.residual(rhs_factory(params))
    sysm.sf = term_scale(jacobian_fd_real(F0, u0, **EXACT_FD), sysm.su) + 1e-300

    def make_point(z):
        u, r = sysm.split(z)
        x, omega = gauge.unpack(u)
        p = params.with_(r=r)
        ev, lab, nz = stability(rhs_factory(p), x, zt, omega)
        return BranchPoint(r, x, omega, ev, lab, nz)

    def correct(z_pred, t, z_prev, ds):
        z = z_pred.copy()
        for _ in range(cfg.newton_max_iter):
            Fz = sysm.F(z)
            arc = np.dot(z - z_prev, t) - ds
            res = np.concatenate([Fz, [arc]])
            J = np.vstack([sysm.jac(z), t])
            dz = np.linalg.solve(J, -res)
            z = z + dz
            if np.max(np.abs(dz)) < 1e-11 * max(1.0, np.max(np.abs(z))):
                break
        Fz = sysm.F(z)
        u, r = sysm.split(z)
        x, omega = gauge.unpack(u)
        true_res = np.max(np.abs(gauge.co_rotating(rhs_factory(params.with_(r=r)), omega)(x)))
        ok = np.all(np.isfinite(z)) and np.max(np.abs(Fz)) < 1e-9
        return z, ok, true_res

    z = sysm.join(u0, params.r)
    J = sysm.jac(z)
    t = _tangent(J)
    if np.sign(t[-1]) != np.sign(direction):
        t = -t
    points = [make_point(z)]
    diagnostics = []
    ds = cfg.ds
    fold = None
    tangents = [t]
    zs = [z]

    while len(points) < cfg.max_points:
        z_pred = z + ds * t
        try:
            z_new, ok, _ = correct(z_pred, t, z, ds)
        except np.linalg.LinAlgError:
            ok = False
        if not ok:
            ds *= 0.5
            if ds < cfg.ds_min:
                diagnostics.append(f"corrector diverged near r={points[-1].r:.6g}; branch truncated")
                log.warning(diagnostics[-1])
                break
            continue
        t_new = _tangent(sysm.jac(z_new), t)
        if fold is None and np.sign(t_new[-1]) != np.sign(t[-1]) and t[-1] != 0:
            fold = _refine_fold(sysm, correct, z, t, ds, cfg)
            if fold is not None:
                fp_z, fp_r = fold
                u, _ = sysm.split(fp_z)
                fold = (fp_r, gauge.unpack(u)[0])
        z, t = z_new, t_new
        zs.append(z)
        tangents.append(t)
        pt = make_point(z)
        points.append(pt)
        if not (r_lo <= pt.r <= r_hi) or pt.amplitude < cfg.min_amplitude:
            break
        ds = min(ds * 1.3, cfg.ds_max)

    return Branch(points, fold, model="tpm" if len(seed.state) == 12 else "cim",
                  diagnostics=diagnostics)


def _refine_fold(sysm, correct, z0, t0, ds, cfg):
    """Bisect the arclength between ``z0`` and the step that crossed the fold."""
    lo, hi = 0.0, ds
    r_lo = sysm.split(z0)[1]
    z_hi, ok, _ = correct(z0 + hi * t0, t0, z0, hi)
    r_hi = sysm.split(z_hi)[1]
    best = (z0, r_lo)
    sign0 = np.sign(t0[-1])
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        z_mid, ok, _ = correct(z0 + mid * t0, t0, z0, mid)
        if not ok:
            break
        t_mid = _tangent(sysm.jac(z_mid), t0)
        r_mid = sysm.split(z_mid)[1]
        if np.sign(t_mid[-1]) == sign0:
            lo, r_lo = mid, r_mid
        else:
            hi, r_hi = mid, r_mid
        # the fold is the extremum of r: keep the most extreme corrected point
        if (sign0 < 0 and r_mid < best[1]) or (sign0 > 0 and r_mid > best[1]):
            best = (z_mid, r_mid)
        if abs(r_hi - r_lo) <= cfg.fold_rtol * abs(r_mid) * 1e-3 or hi - lo < 1e-14:
            break
    return best

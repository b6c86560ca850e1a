"""Adaptive time integration of the (stiff) expectation-value equations.

Complex states are integrated as real vectors ``[Re x, Im x]``.  The default
method is the 3-stage Radau IIA scheme (order 5, L-stable) with a simplified
Newton iteration; ``adaptive-explicit`` uses Dormand-Prince 8(5,3) and is kept
for cross-checks.

The Newton Jacobian defaults to a five-point central stencil with a large
step.  The model right-hand sides are low-degree polynomials, for which that
stencil is exact; scipy's own one-sided estimate loses too many digits when
photon numbers reach 1e7.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
import logging
import math
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .jacobian import EXACT_FD, jacobian_fd

log = logging.getLogger(__name__)

METHODS = {"adaptive-implicit": "Radau", "adaptive-explicit": "DOP853"}
JACOBIANS = ("stencil", "numerical")


class IntegrationError(RuntimeError):
    """Raised when the integrator cannot continue."""

    def __init__(self, message: str, t_fail: float | None = None):
        super().__init__(message)
        self.t_fail = t_fail


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_step: float = math.inf
    initial_step: float | None = None
    method: str = "adaptive-implicit"
    jacobian: str = "stencil"

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")
        if self.initial_step is not None and not self.initial_step > 0:
            raise ValueError("initial_step must be positive")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {sorted(METHODS)}")
        if self.jacobian not in JACOBIANS:
            raise ValueError(f"unknown jacobian {self.jacobian!r}; choose from {JACOBIANS}")


@dataclass
class Trajectory:
    """Accepted integration steps plus an optional dense interpolant."""

    times: np.ndarray
    states: np.ndarray  # shape (len(times), dim), complex
    dense: bool = False
    n_steps: int = 0
    n_rhs: int = 0
    _sol: Callable | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.times) != len(self.states):
            raise ValueError("times and states differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def __call__(self, t) -> np.ndarray:
        """Interpolated state(s) at ``t``; needs ``dense=True``."""
        if self._sol is None:
            raise ValueError("trajectory has no dense output; integrate with dense=True")
        y = self._sol(np.asarray(t, dtype=float))
        dim = y.shape[0] // 2
        return (y[:dim] + 1j * y[dim:]).T

    def sample(self, ts, components=None, chunk: int = 1 << 16) -> np.ndarray:
        """Dense-output values at ``ts``, optionally only some components.

        Evaluated in chunks so long, finely sampled windows stay cheap in memory.
        """
        if self._sol is None:
            raise ValueError("trajectory has no dense output; integrate with dense=True")
        ts = np.asarray(ts, dtype=float)
        dim = self.states.shape[1]
        idx = np.arange(dim) if components is None else np.asarray(components)
        out = np.empty((len(ts), len(idx)), dtype=complex)
        for k in range(0, len(ts), chunk):
            y = self._sol(ts[k:k + chunk])
            out[k:k + chunk] = (y[idx] + 1j * y[dim + idx]).T
        return out

    def resample(self, t0: float, t1: float, n: int, components=None):
        """``n`` uniformly spaced samples on ``[t0, t1)``."""
        ts = t0 + (t1 - t0) * np.arange(n) / n
        return ts, self.sample(ts, components)

    def to_csv(self, path, names=None, header_lines=()):
        """Write ``t`` followed by Re/Im columns of every state entry."""
        dim = self.states.shape[1]
        names = list(names) if names is not None else [f"x{i}" for i in range(dim)]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["t"] + [f"{part}_{s}" for s in names for part in ("re", "im")])
            for t, x in zip(self.times, self.states):
                row = [t]
                for v in x:
                    row += [v.real, v.imag]
                w.writerow([f"{v:.15e}" for v in row])


def _realify(rhs, dim):
    def f(t, y):
        z = y[:dim] + 1j * y[dim:]
        dz = rhs(z) if not _takes_time(rhs) else rhs(t, z)
        return np.concatenate([dz.real, dz.imag])

    return f


def _stencil_jac(rhs, dim):
    def jac(t, y):
        f = (lambda z: rhs(t, z)) if _takes_time(rhs) else rhs
        return jacobian_fd(f, y[:dim] + 1j * y[dim:], **EXACT_FD)

    return jac


def _takes_time(rhs) -> bool:
    return getattr(rhs, "time_dependent", False)


def integrate(rhs, s0, t_span, cfg: IntegratorConfig | None = None, *,
              dense: bool = False, t_eval=None) -> Trajectory:
    """Integrate ``dx/dt = rhs(x)`` for a complex state vector.

    ``rhs`` is called as ``rhs(x)``; set ``rhs.time_dependent = True`` to get
    ``rhs(t, x)`` instead.

    Raises
    ------
    IntegrationError
        On step-size underflow (the message names the time reached) or when
        the state stops being finite.
    """
    cfg = cfg or IntegratorConfig()
    t0, t1 = map(float, t_span)
    if not t1 > t0:
        raise ValueError(f"need t1 > t0, got {t_span}")
    s0 = np.asarray(s0, dtype=complex)
    if not np.all(np.isfinite(s0)):
        raise IntegrationError("initial state is not finite", t0)
    dim = s0.shape[0]
    y0 = np.concatenate([s0.real, s0.imag])
    kw = dict(rtol=cfg.rel_tol, atol=cfg.abs_tol, max_step=cfg.max_step)
    if cfg.initial_step is not None:
        kw["first_step"] = cfg.initial_step
    if METHODS[cfg.method] == "Radau" and cfg.jacobian == "stencil":
        kw["jac"] = _stencil_jac(rhs, dim)
    with np.errstate(over="ignore", invalid="ignore"):
        sol = solve_ivp(_realify(rhs, dim), (t0, t1), y0, method=METHODS[cfg.method],
                        dense_output=dense, t_eval=t_eval, vectorized=True, **kw)
    ys = sol.y
    if sol.status < 0:
        t_fail = float(sol.t[-1]) if len(sol.t) else t0
        raise IntegrationError(f"integration failed at t={t_fail:.6g}: {sol.message}", t_fail)
    if not np.all(np.isfinite(ys)):
        bad = int(np.argmax(~np.all(np.isfinite(ys), axis=0)))
        t_fail = float(sol.t[bad])
        raise IntegrationError(f"state became non-finite at t={t_fail:.6g}", t_fail)
    states = (ys[:dim] + 1j * ys[dim:]).T
    return Trajectory(np.asarray(sol.t), states, dense=dense, n_steps=len(sol.t) - 1
                      if t_eval is None else -1, n_rhs=int(sol.nfev),
                      _sol=sol.sol if dense else None)


def integrate_to_steady(rhs, s0, cfg: IntegratorConfig | None = None, max_t: float = 1e4,
                        steady_tol: float = 1e-8, chunk: float | None = None):
    """Integrate until ``max|rhs(x)| < steady_tol`` or ``max_t`` is reached.

    The residual is checked at the end of each chunk of time, chunks growing
    geometrically from ``chunk`` (default ``max_t / 1000``).

    Returns
    -------
    state, converged, t_reached
    """
    if not steady_tol > 0:
        raise ValueError("steady_tol must be positive")
    x = np.asarray(s0, dtype=complex)
    t = 0.0
    dt = chunk if chunk is not None else max_t / 1000.0
    while True:
        if np.max(np.abs(rhs(x))) < steady_tol:
            return x, True, t
        if t >= max_t:
            return x, False, t
        t_next = min(t + dt, max_t)
        x = integrate(rhs, x, (t, t_next), cfg).final
        t = t_next
        dt *= 2.0

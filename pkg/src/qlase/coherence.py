"""First-order field correlation, coherence time and Schawlow-Townes linewidth.

Non-lasing solutions are handled with the quantum regression theorem: the
two-time correlations ``x(tau) = <b^+(t) O_i(t + tau)>`` obey ``x' = A x``
with ``A`` built from steady-state expectation values, and
``g1(tau) = x_1(tau) / x_1(0)``.  Lasing solutions carry a gauge zero mode
that makes this linear theory degenerate, so their coherence time is
estimated from the Schawlow-Townes formula instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math

import numpy as np
from scipy.integrate import solve_ivp

from .model import ModelParams
from .steady_state import FixedPoint

log = logging.getLogger(__name__)

METHODS = ("regression-eigendecomposition", "regression-integration", "schawlow-townes")

# indices of the fields that vanish on a non-lasing TPM point
_TPM_COHERENT = (0, 1, 5, 6, 7, 9, 11)


class DegenerateNormalizationError(ValueError):
    """Raised when ``g1`` cannot be normalised because ``x_1(0) = 0``."""


@dataclass
class CorrelationSeries:
    """Sampled ``g1(tau)`` and the coherence time ``2 * int_0^inf |g1|^2``."""

    taus: np.ndarray
    g1: np.ndarray
    tau_c: float
    method: str
    diagnostics: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if len(self.taus) != len(self.g1):
            raise ValueError("taus and g1 differ in length")


@dataclass
class RegressionSystem:
    """Linear system ``x' = A x + q`` for the two-time correlations."""

    a_matrix: np.ndarray
    x0: np.ndarray
    q_vector: np.ndarray | None = None

    def __post_init__(self):
        self.a_matrix = np.atleast_2d(np.asarray(self.a_matrix, dtype=complex))
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=complex))
        n = self.x0.shape[0]
        if self.q_vector is None:
            self.q_vector = np.zeros(n, dtype=complex)
        self.q_vector = np.asarray(self.q_vector, dtype=complex)
        if self.a_matrix.shape != (n, n) or self.q_vector.shape != (n,):
            raise ValueError(f"inconsistent dimensions: A {self.a_matrix.shape}, "
                             f"x0 {self.x0.shape}, q {self.q_vector.shape}")

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.a_matrix)


def _require_nonlasing(fp: FixedPoint, idx, what: str):
    x = np.asarray(fp.state)
    scale = 1.0 + np.max(np.abs(x))
    if np.max(np.abs(x[list(idx)])) > 1e-12 * scale:
        raise ValueError(f"{what} needs a non-lasing fixed point "
                         f"(|beta| = {abs(x[0]):.3g})")


def regression_system_cim_nl(params: ModelParams, fp: FixedPoint) -> RegressionSystem:
    """Regression system of the non-lasing CIM point, ``x = [<b^+ b>, <b^+ v^+c>]``."""
    if len(fp.state) != 5:
        raise ValueError("expected a CIM fixed point (5 variables)")
    _require_nonlasing(fp, (0, 1), "regression_system_cim_nl")
    _, _, n, m, pi = fp.state
    n = n.real
    g, N = params.g, params.n_dots
    a = np.array([[-params.gamma_c, g * N],
                  [g * (2.0 * n - 1.0), -(params.gamma - 1j * params.delta_nu)]])
    return RegressionSystem(a, [m.real, np.conj(pi)])


def regression_system_tpm_nl(params: ModelParams, fp: FixedPoint) -> RegressionSystem:
    """Regression system of the non-lasing TPM point.

    ``x = [<b^+ b>, <b^+ v^+c>, <b^+ b c^+c>, <b^+ (v^+c)(c^+c)>]``; the
    equal-time values of the last two factorise to ``n m`` and ``n pi*``.
    """
    if len(fp.state) != 12:
        raise ValueError("expected a TPM fixed point (12 variables)")
    _require_nonlasing(fp, _TPM_COHERENT, "regression_system_tpm_nl")
    _, _, n, m, pi, _, _, _, cvv, _, d4, _ = fp.state
    n, m = n.real, m.real
    if m == 0:
        raise DegenerateNormalizationError("photon number is zero; g1 is undefined")
    g, N = params.g, params.n_dots
    gc, ga, gnr = params.gamma_c, params.gamma, params.gamma_nr
    dnu = params.delta_nu
    pic = np.conj(pi)
    feed = -params.gamma_nl * n + params.r * (1.0 - n)
    a = np.array([
        [-gc, N * g, 0.0, 0.0],
        [-g, -(ga - 1j * dnu), 2.0 * g, 0.0],
        [-3.0 * g * pic + feed, -g * m, -(gc + gnr), (N - 1) * g],
        [2.0 * g * (d4 - 2.0 * n * n) - g * cvv, -g * pi - 2.0 * g * pic + feed,
         4.0 * g * n - g, -(ga * (1.0 + params.mu) + gnr - 1j * dnu)],
    ], dtype=complex)
    return RegressionSystem(a, [m, pic, n * m, n * pic])


def _separated(lam: np.ndarray, tol: float = 1e-10) -> bool:
    scale = max(1.0, float(np.max(np.abs(lam))))
    if len(lam) < 2:
        return True
    d = np.abs(lam[:, None] - lam[None, :])
    np.fill_diagonal(d, np.inf)
    return bool(np.min(d) > tol * scale)


def _taus(tau_max, n_samples):
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    return np.linspace(0.0, tau_max, n_samples)


def _g1_eigen(sys: RegressionSystem, tau_max, n_samples):
    lam, V = np.linalg.eig(sys.a_matrix)
    coef = np.linalg.solve(V, sys.x0)
    c = V[0, :] * coef / sys.x0[0]
    if tau_max is None:
        tau_max = 10.0 / np.min(-lam.real)
    taus = _taus(tau_max, n_samples)
    g1 = np.exp(np.outer(taus, lam)) @ c
    s = lam[:, None] + np.conj(lam)[None, :]
    tau_c = float(np.real(2.0 * np.sum(-np.outer(c, np.conj(c)) / s)))
    return taus, g1, tau_c


def _g1_integrate(sys: RegressionSystem, tau_max, n_samples, rtol=1e-10, atol=1e-13):
    """Stiff integration of ``x' = A x`` with ``|g1|^2`` accumulated alongside."""
    A, x0 = sys.a_matrix, sys.x0 / sys.x0[0]
    n = len(x0)
    Ar = np.block([[A.real, -A.imag], [A.imag, A.real]])

    def f(_, y):
        z = Ar @ y[:2 * n]
        return np.concatenate([z, [y[0] ** 2 + y[n] ** 2]])

    def jac(_, y):
        J = np.zeros((2 * n + 1, 2 * n + 1))
        J[:2 * n, :2 * n] = Ar
        J[-1, 0], J[-1, n] = 2 * y[0], 2 * y[n]
        return J

    y0 = np.concatenate([x0.real, x0.imag, [0.0]])
    slow = -np.max(np.linalg.eigvals(A).real)

    def decayed(_, y):
        return np.linalg.norm(y[:2 * n]) - 1e-8
    decayed.terminal = True
    tail = solve_ivp(f, (0.0, 100.0 / slow), y0, method="Radau", jac=jac,
                     rtol=rtol, atol=atol, events=decayed)
    tau_c = 2.0 * float(tail.y[-1, -1])
    if tau_max is None:
        tau_max = 10.0 / slow
    taus = _taus(tau_max, n_samples)
    sol = solve_ivp(f, (0.0, tau_max), y0, method="Radau", jac=jac, rtol=rtol, atol=atol,
                    t_eval=taus)
    g1 = sol.y[0] + 1j * sol.y[n]
    return taus, g1, tau_c


def g1_from_regression(sys: RegressionSystem, tau_max: float | None = None,
                       n_samples: int = 512, method: str = "auto") -> CorrelationSeries:
    """Normalised first-order correlation from a regression system.

    ``method`` is ``"auto"`` (eigen-expansion unless ``A`` is defective or
    has near-coincident eigenvalues), ``"eigen"`` or ``"integrate"``.  When
    ``tau_max`` is omitted it is set to ten times the slowest decay time.

    A system with a non-decaying mode returns ``tau_c = inf`` and a
    "diverging correlation" diagnostic.
    """
    if method not in ("auto", "eigen", "integrate"):
        raise ValueError(f"unknown method {method!r}")
    if sys.x0[0] == 0:
        raise DegenerateNormalizationError("x0[0] = 0; g1 is undefined")
    if np.any(sys.q_vector != 0):
        raise ValueError("regression with q != 0 (coherent solutions) is not supported")
    lam = sys.eigenvalues
    diagnostics = []
    if np.max(lam.real) >= 0:
        msg = f"diverging correlation: eigenvalue {lam[np.argmax(lam.real)]:.6g} has Re >= 0"
        log.warning(msg)
        taus = _taus(tau_max if tau_max is not None else 1.0, n_samples)
        g1 = np.full(n_samples, np.nan, dtype=complex)
        g1[0] = 1.0
        return CorrelationSeries(taus, g1, math.inf, "regression-eigendecomposition", [msg])
    use_eigen = method == "eigen"
    if method == "auto":
        use_eigen = _separated(lam) and np.linalg.cond(np.linalg.eig(sys.a_matrix)[1]) < 1e8
        if not use_eigen:
            msg = "defective or near-degenerate regression matrix; using integration"
            log.warning(msg)
            diagnostics.append(msg)
    if use_eigen:
        taus, g1, tau_c = _g1_eigen(sys, tau_max, n_samples)
        name = "regression-eigendecomposition"
    else:
        taus, g1, tau_c = _g1_integrate(sys, tau_max, n_samples)
        name = "regression-integration"
    g1[0] = 1.0
    return CorrelationSeries(taus, g1, tau_c, name, diagnostics)


@dataclass(frozen=True)
class LinewidthEstimate:
    linewidth: float
    tau_c: float
    valid: bool
    diagnostics: tuple[str, ...] = ()

    def series(self) -> CorrelationSeries:
        """Single-point series tagged with the Schawlow-Townes method."""
        return CorrelationSeries(np.zeros(1), np.ones(1, complex), self.tau_c,
                                 "schawlow-townes", list(self.diagnostics))


def schawlow_townes(params: ModelParams, fp: FixedPoint,
                    r_threshold: float | None = None) -> LinewidthEstimate:
    """Schawlow-Townes linewidth ``Gamma`` (units of ``gamma_nr``) and ``tau_c = 1/Gamma``.

    Violated preconditions (no field, ``n <= 1/2``, pump less than 10 %
    above ``r_threshold``) are reported through ``valid`` and
    ``diagnostics``; the value is still returned when finite.
    """
    b2 = abs(fp.state[0]) ** 2
    n = float(np.real(fp.state[2]))
    diag = []
    if b2 == 0:
        diag.append("no coherent field (|beta| = 0)")
    if n <= 0.5:
        diag.append(f"population n = {n:.6g} <= 1/2")
    if r_threshold is not None and params.r < 1.1 * r_threshold:
        diag.append(f"pump r = {params.r:.6g} is less than 10% above threshold {r_threshold:.6g}")
    if b2 == 0 or n <= 0.5:
        return LinewidthEstimate(math.nan, math.nan, False, tuple(diag))
    gc, ga = params.gamma_c, params.gamma
    gamma = ((gc / params.gamma_nr) / (4.0 * b2) * n / (2.0 * n - 1.0)
             * (ga / (ga + gc / 2.0)) ** 2)
    for d in diag:
        log.warning("Schawlow-Townes estimate outside validity: %s", d)
    return LinewidthEstimate(gamma, 1.0 / gamma, not diag, tuple(diag))

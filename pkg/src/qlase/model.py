"""Expectation-value equations for a quantum-dot laser with N identical emitters.

Two closures of the operator hierarchy are provided:

* the coherent-incoherent model (CIM), five variables
  ``beta, p, n, m, pi``;
* the two-particle model (TPM), which adds ``theta, bb, psi, cvv, t4, d4, v4``
  and keeps every two-particle correlation.

Operator content of each variable (one-particle fermionic operators are the
pairs ``c^+c``, ``v^+c`` and ``c^+v`` of a single dot; two-dot products always
refer to distinct dots)::

    beta  <b>              theta <b c^+c>          cvv <(c^+v)(v^+c)>
    p     <v^+c>           bb    <b b>             t4  <(v^+c)(c^+c)>
    n     <c^+c>           psi   <b v^+c>          d4  <(c^+c)(c^+c)>
    m     <b^+b>                                   v4  <(v^+c)(v^+c)>
    pi    <b c^+v>

Conjugate expectation values are never stored.  They follow from
``<A^+> = <A>*`` (see ``CONJUGATES``).

All right-hand sides take complex arrays with the variable index first, so a
batch of states of shape ``(12, k)`` is evaluated in one call.  The coupling
``g`` is taken real.
"""

from __future__ import annotations

from dataclasses import astuple, dataclass, field, fields, replace
import math

import numpy as np

CIM_FIELDS = ("beta", "p", "n", "m", "pi")
TPM_FIELDS = CIM_FIELDS + ("theta", "bb", "psi", "cvv", "t4", "d4", "v4")

# Phase weight of every variable under the gauge action beta -> e^{i phi} beta,
# which is also the power of e^{i nu t} in the lab -> rotating frame map.
TPM_PHASE_WEIGHTS = np.array([1, 1, 0, 0, 0, 1, 2, 2, 0, 1, 0, 2])
CIM_PHASE_WEIGHTS = TPM_PHASE_WEIGHTS[:5]

# Conjugate symbols used in the equations, resolved to (stored field, conjugated?).
CONJUGATES = {
    "<b^+>": ("beta", True),
    "<c^+v>": ("p", True),
    "<b^+ v^+c>": ("pi", True),
    "<b^+ c^+v>": ("psi", True),
    "<b^+ c^+c>": ("theta", True),
    "<b^+b^+>": ("bb", True),
    "<(c^+v)(c^+v)>": ("v4", True),
    "<(c^+c)(c^+v)>": ("t4", True),
}


@dataclass(frozen=True)
class ModelParams:
    """Rates and frequencies of the laser model, normalised to ``gamma_nr``.

    Exactly two of ``nu``, ``nu_eps`` and ``delta_nu`` need to be given;
    the third is filled in so that ``delta_nu == nu - nu_eps``.

    ``time_unit`` is the physical value of ``gamma_nr`` in s^-1 and is only
    used when converting results to SI.
    """

    g: float = 70.0
    gamma: float = 1.0e4
    gamma_c: float = 10.0
    gamma_nr: float = 1.0
    gamma_nl: float = 0.0
    r: float = 0.0
    n_dots: int = 25
    mu: float = 0.0
    nu: float | None = 0.0
    nu_eps: float | None = None
    delta_nu: float | None = None
    time_unit: float = 1.0e9

    def __post_init__(self):
        for name in ("g", "gamma", "gamma_c", "gamma_nr"):
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value!r}")
        for name in ("gamma_nl", "r", "mu"):
            value = getattr(self, name)
            if not value >= 0:
                raise ValueError(f"{name} must be non-negative, got {value!r}")
        if int(self.n_dots) != self.n_dots or self.n_dots < 1:
            raise ValueError(f"n_dots must be a positive integer, got {self.n_dots!r}")
        object.__setattr__(self, "n_dots", int(self.n_dots))

        nu, nu_eps, dnu = self.nu, self.nu_eps, self.delta_nu
        given = sum(v is not None for v in (nu, nu_eps, dnu))
        if given < 2:
            if nu is None:
                nu = 0.0
            if nu_eps is None and dnu is None:
                dnu = 0.0
        if nu is None:
            nu = nu_eps + dnu
        elif nu_eps is None:
            nu_eps = nu - (dnu or 0.0)
        elif dnu is not None and not math.isclose(dnu, nu - nu_eps, rel_tol=1e-12, abs_tol=1e-12):
            raise ValueError(
                f"inconsistent detuning: delta_nu={dnu} but nu - nu_eps={nu - nu_eps}"
            )
        object.__setattr__(self, "nu", float(nu))
        object.__setattr__(self, "nu_eps", float(nu_eps))
        object.__setattr__(self, "delta_nu", float(nu - nu_eps))

    def with_(self, **changes) -> "ModelParams":
        """Copy with some fields replaced.

        Changing ``delta_nu`` keeps ``nu`` and moves ``nu_eps``; changing ``nu``
        alone keeps ``delta_nu``.
        """
        if "delta_nu" in changes and "nu_eps" not in changes:
            changes["nu_eps"] = None
        elif "nu" in changes and "nu_eps" not in changes and "delta_nu" not in changes:
            changes["nu_eps"] = None
            changes["delta_nu"] = self.delta_nu
        elif "nu_eps" in changes and "delta_nu" not in changes:
            changes["delta_nu"] = None
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def gamma_n(self) -> float:
        return self.gamma_nr + self.gamma_nl

    @property
    def gamma_g(self) -> float:
        """Effective emission rate into the lasing mode."""
        s = self.gamma + self.gamma_c
        return 2.0 * self.g**2 * s / (s**2 + self.delta_nu**2)

    @property
    def beta_se(self) -> float:
        """Spontaneous-emission fraction into the lasing mode.

        Taken as ``gamma_g / (gamma_g + gamma_nl)``; this is a labelling
        convention, the equations only use ``gamma_nl``.
        """
        return self.gamma_g / (self.gamma_g + self.gamma_nl)

    @staticmethod
    def gamma_nl_for_beta(beta_se: float, g: float = 70.0, gamma: float = 1.0e4,
                          gamma_c: float = 10.0, delta_nu: float = 0.0) -> float:
        """Inverse of :attr:`beta_se`: the ``gamma_nl`` giving a target fraction."""
        if not 0 < beta_se <= 1:
            raise ValueError("beta_se must lie in (0, 1]")
        s = gamma + gamma_c
        gg = 2.0 * g**2 * s / (s**2 + delta_nu**2)
        return gg * (1.0 - beta_se) / beta_se


class _State:
    """Shared array conversion for the named state containers."""

    _fields: tuple[str, ...] = ()

    def to_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=complex)

    @classmethod
    def from_array(cls, x):
        x = np.asarray(x, dtype=complex)
        if x.shape[0] != len(cls._fields):
            raise ValueError(f"{cls.__name__} needs {len(cls._fields)} entries, got {x.shape[0]}")
        return cls(*(complex(v) for v in x[: len(cls._fields)]))

    @classmethod
    def zeros(cls):
        return cls(*([0j] * len(cls._fields)))


@dataclass
class CimState(_State):
    beta: complex = 0j
    p: complex = 0j
    n: complex = 0j
    m: complex = 0j
    pi: complex = 0j

    _fields = CIM_FIELDS


@dataclass
class TpmState(_State):
    beta: complex = 0j
    p: complex = 0j
    n: complex = 0j
    m: complex = 0j
    pi: complex = 0j
    theta: complex = 0j
    bb: complex = 0j
    psi: complex = 0j
    cvv: complex = 0j
    t4: complex = 0j
    d4: complex = 0j
    v4: complex = 0j

    _fields = TPM_FIELDS

    def cim(self) -> CimState:
        return CimState(self.beta, self.p, self.n, self.m, self.pi)


# ---------------------------------------------------------------------------
# cluster-expansion truncation
# ---------------------------------------------------------------------------

def decorrelate3(s_i, s_j, s_k, p_jk, p_ik, p_ij):
    """Disconnected part of ``<O_i O_j O_k>``.

    ``s_*`` are the one-operator expectation values and ``p_ab`` the
    two-operator ones.  Works elementwise on arrays.
    """
    return s_i * p_jk + s_j * p_ik + s_k * p_ij - 2.0 * s_i * s_j * s_k


def decorrelate4(singles, pairs, triples):
    """Disconnected part of ``<O_i O_j O_k O_l>``.

    Parameters
    ----------
    singles : sequence of 4
        ``<O_i>, <O_j>, <O_k>, <O_l>``.
    pairs : sequence of 6
        ``<O_iO_j>, <O_iO_k>, <O_iO_l>, <O_jO_k>, <O_jO_l>, <O_kO_l>``.
    triples : sequence of 4
        Full three-operator values ``<O_jO_kO_l>, <O_iO_kO_l>, <O_iO_jO_l>,
        <O_iO_jO_k>``, i.e. the one omitting ``O_i``, ``O_j``, ``O_k``, ``O_l``
        respectively.
    """
    i, j, k, l = singles
    ij, ik, il, jk, jl, kl = pairs
    t_i, t_j, t_k, t_l = triples
    return (
        i * t_i + j * t_j + k * t_k + l * t_l
        + ij * kl + ik * jl + il * jk
        - 2.0 * (i * j * kl + ij * k * l + i * k * jl + ik * j * l + i * l * jk + il * j * k)
        + 6.0 * i * j * k * l
    )


def _tpm_correlations(x):
    """All disconnected three-operator terms of the TPM equations.

    Each entry is written as ``decorrelate3`` over the operator grouping
    (photon operator first, then the two single-dot pair operators), with the
    conjugates taken from ``CONJUGATES``.
    """
    beta, p, n, m, pi, theta, bb, psi, cvv, t4, d4, v4 = x
    bc, pc = np.conj(beta), np.conj(p)
    pic, thc, t4c = np.conj(pi), np.conj(theta), np.conj(t4)
    return {
        # <b^+ b (c^+c)>: beta* theta + beta theta* + n m - 2|beta|^2 n
        "bdag_b_cc": decorrelate3(bc, beta, n, theta, thc, m),
        # <b b (c^+v)>: 2 beta pi + p* bb - 2 beta^2 p*
        "b_b_cv": decorrelate3(beta, beta, pc, pi, pi, bb),
        # <b^+ b (v^+c)>: beta* psi + beta pi* + p m - 2|beta|^2 p
        "bdag_b_vc": decorrelate3(bc, beta, p, psi, pic, m),
        # <b b (c^+c)>: 2 beta theta + n bb - 2 beta^2 n
        "b_b_cc": decorrelate3(beta, beta, n, theta, theta, bb),
        # <b^+ (v^+c)(c^+c)>: beta* t4 + p theta* + n pi* - 2 beta* p n
        "bdag_vc_cc": decorrelate3(bc, p, n, t4, thc, pic),
        # <b (c^+c)(c^+c)>: beta d4 + 2 n theta - 2 beta n^2
        "b_cc_cc": decorrelate3(beta, n, n, d4, theta, theta),
        # <b (c^+v)(v^+c)>: beta cvv + p* psi + p pi - 2 beta |p|^2
        "b_cv_vc": decorrelate3(beta, pc, p, cvv, psi, pi),
        # <b^+ (v^+c)(v^+c)>: beta* v4 + 2 p pi* - 2 beta* p^2
        "bdag_vc_vc": decorrelate3(bc, p, p, v4, pic, pic),
        # <b (v^+c)(c^+c)>: beta t4 + p theta + n psi - 2 beta p n
        "b_vc_cc": decorrelate3(beta, p, n, t4, theta, psi),
        # <b (c^+v)(c^+c)>: conjugate of bdag_vc_cc; kept explicit for d4
        "b_cv_cc": decorrelate3(beta, pc, n, t4c, theta, pi),
    }


def _as_array(state):
    if isinstance(state, _State):
        return state.to_array(), type(state)
    return np.asarray(state, dtype=complex), None


def _wrap(dx, kind):
    return kind.from_array(dx) if kind is not None else dx


def _tpm_rhs(x, params: ModelParams, lab: bool):
    beta, p, n, m, pi, theta, bb, psi, cvv, t4, d4, v4 = x
    g, N = params.g, params.n_dots
    gc, ga, gnr = params.gamma_c, params.gamma, params.gamma_nr
    dnu = params.delta_nu
    gmu = ga * (1.0 + params.mu)
    if lab:
        w_b, w_p = 1j * params.nu, 1j * params.nu_eps
        w_bp = 1j * (params.nu + params.nu_eps)
    else:
        # rotating frame: beta-like variables lose i*nu, p-like ones get -i*dnu
        w_b, w_p, w_bp = 0.0, -1j * dnu, -1j * dnu
    # net in-scattering per dot from the wetting layer and non-lasing modes
    feed = -params.gamma_nl * n + params.r * (1.0 - n)
    D = _tpm_correlations(x)
    pic = np.conj(pi)
    two_re_pi = pi + pic

    dx = np.empty_like(x)
    dx[0] = -(gc + w_b) * beta + N * g * p
    dx[1] = -(ga + w_p) * p + g * (2.0 * theta - beta)
    dx[2] = -gnr * n - g * two_re_pi + feed
    dx[3] = -2.0 * gc * m + N * g * two_re_pi
    dx[4] = (-(ga + gc + 1j * dnu) * pi
             + g * (n + 2.0 * D["bdag_b_cc"] - m) + (N - 1) * g * cvv)
    dx[5] = (-(gc + gnr + w_b) * theta - g * D["b_b_cv"] - g * D["bdag_b_vc"]
             + (N - 1) * g * t4 + beta * feed)
    dx[6] = -2.0 * (gc + w_b) * bb + 2.0 * N * g * psi
    dx[7] = (-(gc + ga + w_bp) * psi + g * (2.0 * D["b_b_cc"] - bb)
             + (N - 1) * g * v4)
    dx[8] = (-2.0 * gmu * cvv + g * (2.0 * D["bdag_vc_cc"] - pic)
             + g * (2.0 * D["b_cv_cc"] - pi))
    dx[9] = (-(gmu + gnr + w_p) * t4 + g * (2.0 * D["b_cc_cc"] - theta)
             - g * D["b_cv_vc"] - g * D["bdag_vc_vc"] + p * feed)
    dx[10] = (-2.0 * gnr * d4 - (2.0 * g * D["b_cv_cc"] + np.conj(2.0 * g * D["b_cv_cc"]))
              + 2.0 * n * feed)
    dx[11] = -2.0 * (gmu + w_p) * v4 + 2.0 * g * (2.0 * D["b_vc_cc"] - psi)
    return dx


def tpm_rhs(state, params: ModelParams):
    """Time derivative of the TPM variables in the frame rotating at ``nu``.

    Accepts a :class:`TpmState` (returns one) or a complex array whose first
    axis has length 12 (returns an array of the same shape).
    """
    x, kind = _as_array(state)
    return _wrap(_tpm_rhs(x, params, lab=False), kind)


def tpm_rhs_lab(state, params: ModelParams):
    """Time derivative of the TPM variables in the laboratory frame."""
    x, kind = _as_array(state)
    return _wrap(_tpm_rhs(x, params, lab=True), kind)


def cim_rhs(state, params: ModelParams):
    """Time derivative of the CIM variables in the rotating frame.

    The CIM closes ``<b c^+c>`` as ``beta n`` and ``<(c^+v)(v^+c)>`` as
    ``|p|^2``.
    """
    x, kind = _as_array(state)
    beta, p, n, m, pi = x
    g, N = params.g, params.n_dots
    gc, ga = params.gamma_c, params.gamma
    dnu = params.delta_nu
    two_re_pi = pi + np.conj(pi)

    dx = np.empty_like(x)
    dx[0] = -gc * beta + N * g * p
    dx[1] = -(ga - 1j * dnu) * p + g * beta * (2.0 * n - 1.0)
    dx[2] = -params.gamma_n * n - g * two_re_pi + params.r * (1.0 - n)
    dx[3] = -2.0 * gc * m + N * g * two_re_pi
    dx[4] = (-(ga + gc + 1j * dnu) * pi + g * (n + m * (2.0 * n - 1.0))
             + (N - 1) * g * np.conj(p) * p)
    return _wrap(dx, kind)


def cim_rhs_lab(state, params: ModelParams):
    """Time derivative of the CIM variables in the laboratory frame."""
    x, kind = _as_array(state)
    w = CIM_PHASE_WEIGHTS.reshape((-1,) + (1,) * (x.ndim - 1))
    dx = cim_rhs(x, params) - 1j * params.nu * w * x
    return _wrap(dx, kind)


def to_rotating_frame(state, nu: float, t: float):
    """Map lab-frame expectation values to the frame rotating at ``nu``.

    ``beta, p, theta, t4`` pick up ``e^{i nu t}``; ``bb, psi, v4`` pick up
    ``e^{2 i nu t}``; the remaining variables are unchanged.
    """
    x, kind = _as_array(state)
    w = TPM_PHASE_WEIGHTS if x.shape[0] == 12 else CIM_PHASE_WEIGHTS
    phase = np.exp(1j * nu * t * w)
    phase = phase.reshape((-1,) + (1,) * (x.ndim - 1))
    return _wrap(x * phase, kind)


def to_lab_frame(state, nu: float, t: float):
    return to_rotating_frame(state, -nu, t)


def gauge_rotate(state, phi: float):
    """Apply the global phase symmetry of the equations."""
    return to_rotating_frame(state, 1.0, phi)


def generalized_std(state) -> float:
    """``sqrt(|<bb> - <b>^2|)``; zero for a Glauber coherent field."""
    if isinstance(state, _State):
        beta, bb = state.beta, state.bb
    else:
        beta, bb = state[0], state[6]
    return float(np.sqrt(np.abs(bb - beta**2)))


def coherent_seed(base, amplitude: complex):
    """Put a coherent field of the given amplitude on top of an incoherent state.

    The field-dependent correlations are set to their factorised values
    (``bb = beta^2``, ``theta = beta n``, ``m += |beta|^2``), which is the
    natural finite-amplitude perturbation of a non-lasing state.
    """
    x, kind = _as_array(base)
    x = x.copy()
    a = complex(amplitude)
    x[0] = a
    x[3] = x[3] + abs(a) ** 2
    if x.shape[0] == 12:
        x[5] = a * x[2]
        x[6] = a * a
    return _wrap(x, kind)

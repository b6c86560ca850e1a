"""Laser frequency from steady-state expectation values and from the field spectrum."""

from __future__ import annotations

from dataclasses import dataclass, field
import csv
import json
import logging
import math

import numpy as np

from .integrator import IntegratorConfig, Trajectory, integrate
from .model import ModelParams, cim_rhs, tpm_rhs
from .steady_state import Gauge, cim_lasing_state, embed_cim

log = logging.getLogger(__name__)


class FrequencyError(ValueError):
    """The frequency formula is undefined (vanishing ``Re(p* beta)``)."""


def laser_frequency(state, params: ModelParams) -> float:
    """``nu + gamma_c Im(p* beta) / Re(p* beta)`` for a single-mode lasing state.

    ``p* beta`` is unchanged by a common rotation of ``beta`` and ``p``, so
    the state may be given in the lab or the rotating frame.
    """
    x = np.asarray(state)
    z = np.conj(x[1]) * x[0]
    if not abs(z.real) > 1e-300 or abs(z.real) < 1e-12 * abs(z):
        raise FrequencyError("Re(p* beta) vanishes; the state is not lasing")
    return float(params.nu + params.gamma_c * z.imag / z.real)


def cim_frequency(params: ModelParams) -> float:
    """Closed-form CIM laser frequency ``nu + gamma_c dnu / (gamma_c + gamma)``."""
    return params.nu + params.gamma_c * params.delta_nu / (params.gamma_c + params.gamma)


@dataclass
class SpectrumResult:
    freqs: np.ndarray
    psd: np.ndarray
    peak_freq: float
    omega_formula: float
    omega_cim: float
    bin_width: float = math.nan
    parseval_error: float = math.nan
    diagnostics: list[str] = field(default_factory=list)

    def __post_init__(self):
        if np.any(self.psd < 0):
            raise ValueError("psd must be nonnegative")

    def summary(self) -> dict:
        return {"peak_freq": self.peak_freq, "omega_formula": self.omega_formula,
                "omega_cim": self.omega_cim, "bin_width": self.bin_width,
                "parseval_error": self.parseval_error, "diagnostics": list(self.diagnostics)}

    def to_csv(self, path, header_lines=()):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["freq", "psd"])
            for f, p in zip(self.freqs, self.psd):
                w.writerow([f"{f:.15e}", f"{p:.15e}"])

    def to_json(self, path, extra=None):
        doc = dict(extra or {})
        doc.update(self.summary())
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)


def _window_samples(traj: Trajectory, window: float, dt: float | None, components=(0, 1)):
    t1 = float(traj.times[-1])
    if not 0 < window <= t1 - float(traj.times[0]) + 1e-12 * max(1.0, abs(t1)):
        raise ValueError(f"window {window:g} must be positive and within the trajectory")
    if traj.dense:
        if dt is None:
            raise ValueError("a sampling step is needed to resample a dense trajectory")
        n = max(2, int(math.ceil(window / dt)))
        return traj.resample(t1 - window, t1, n, components)
    t, x = traj.times, traj.states[:, list(components)]
    keep = t >= t1 - window * (1 + 1e-12)
    t, x = t[keep], x[keep]
    # drop the closing point so the samples tile [t1 - window, t1)
    t, x = t[:-1], x[:-1]
    steps = np.diff(t)
    if len(t) < 2 or np.max(np.abs(steps - steps[0])) > 1e-9 * steps[0]:
        raise ValueError("trajectory is not uniformly sampled; integrate with dense=True")
    return t, x


def sampling_step(params: ModelParams, window: float, samples_per_period: int = 16) -> float:
    """Step giving ``samples_per_period`` samples per period of the fastest expected tone.

    The tone is taken no slower than ``gamma_c`` so that a resonant laser is
    still sampled finely enough to see its transients.
    """
    w = max(abs(params.delta_nu), abs(params.nu) + abs(params.delta_nu), params.gamma_c,
            2 * math.pi / window)
    return 2 * math.pi / (samples_per_period * w)


def power_spectrum(traj: Trajectory, window: float, params: ModelParams, *,
                   frame: str = "rotating", frame_offset: float = 0.0,
                   dt: float | None = None) -> SpectrumResult:
    """Power spectrum of ``beta`` over the trailing ``window`` of ``traj``.

    A rotating-frame trajectory (``frame="rotating"``) is mapped to the lab
    frame as ``beta_rot(t) e^{-i nu t}``; if it was integrated in a frame
    turning ``frame_offset`` faster than ``nu``, the factor becomes
    ``e^{-i (nu + frame_offset) t}``.  The frequency axis counts a tone
    ``e^{-i w t}`` at ``+w``.  A Hann window is applied before the transform;
    ``psd`` is scaled so that its sum equals the mean of ``|beta|^2`` over
    the window, and ``parseval_error`` checks the raw transform against that
    mean.
    """
    if frame not in ("rotating", "lab"):
        raise ValueError("frame must be 'rotating' or 'lab'")
    if dt is None and traj.dense:
        dt = sampling_step(params, window)
    t, x = _window_samples(traj, window, dt)
    beta = np.asarray(x)[:, 0]
    if frame == "rotating" and (params.nu or frame_offset):
        beta = beta * np.exp(-1j * (params.nu + frame_offset) * t)
    n = len(beta)
    step = t[1] - t[0]
    span = n * step
    diagnostics = []
    if params.delta_nu and span < 10 * 2 * math.pi / abs(params.delta_nu):
        msg = (f"window {span:g} is shorter than 10 periods of the detuning; "
               "frequency resolution is poor")
        log.warning(msg)
        diagnostics.append(msg)

    power = float(np.mean(np.abs(beta) ** 2))
    raw = np.abs(np.fft.fft(beta)) ** 2 / n ** 2
    parseval = abs(raw.sum() - power) / power if power > 0 else 0.0
    if parseval > 1e-6:
        diagnostics.append(f"Parseval check failed: relative error {parseval:.3g}")

    hann = np.hanning(n + 1)[:-1]  # periodic Hann window
    spec = np.abs(np.fft.fft(beta * hann)) ** 2
    total = spec.sum()
    psd = spec * (power / total) if total > 0 else spec
    # fft bin k is the tone e^{+2 pi i k t / span}, i.e. frequency -2 pi k / span
    freqs = -2 * np.pi * np.fft.fftfreq(n, d=step)
    order = np.argsort(freqs, kind="stable")
    freqs, psd = freqs[order], psd[order]
    peak = float(freqs[int(np.argmax(psd))])
    try:
        omega = laser_frequency(traj.final, params)
    except FrequencyError:
        omega = math.nan
        diagnostics.append("final state is not lasing; omega_formula undefined")
    return SpectrumResult(freqs, psd, peak, omega, cim_frequency(params),
                          2 * np.pi / span, parseval, diagnostics)


def time_average_frequency(traj: Trajectory, window: float, params: ModelParams,
                           n_samples: int = 1000) -> float:
    """Mean of :func:`laser_frequency` over uniform samples of the trailing window."""
    if traj.dense:
        _, x = traj.resample(traj.times[-1] - window, traj.times[-1], n_samples, (0, 1))
    else:
        _, x = _window_samples(traj, window, None)
    return float(np.mean([laser_frequency(s, params) for s in x]))


def lasing_trajectory(params: ModelParams, model: str = "tpm", *, settle: float = 50.0,
                      window: float = 100.0, cfg: IntegratorConfig | None = None):
    """Integrate from the CIM lasing state for ``settle + window`` time units.

    The run uses a frame turning at ``nu + omega0``, with ``omega0`` the CIM
    frequency offset, so the field is nearly stationary and the step size is
    not limited by the optical phase.  Returns ``(trajectory, omega0)``; pass
    ``omega0`` as ``frame_offset`` to :func:`power_spectrum`.
    """
    cim = cim_lasing_state(params)
    if cim is None:
        raise FrequencyError(f"no lasing state to seed from at r={params.r:g}")
    x_cim, omega0 = cim
    if model == "tpm":
        seed, rhs = embed_cim(x_cim), (lambda z: tpm_rhs(z, params))
    elif model == "cim":
        seed, rhs = x_cim, (lambda z: cim_rhs(z, params))
    else:
        raise ValueError(f"unknown model {model!r}")
    f = Gauge.for_dim(len(seed)).co_rotating(rhs, omega0)
    cfg = cfg or IntegratorConfig(rel_tol=1e-8, abs_tol=1e-8)
    return integrate(f, seed, (0.0, settle + window), cfg, dense=True), omega0

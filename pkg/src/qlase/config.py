"""Run configuration: flat dotted keys from TOML files and ``--set`` overrides."""

from __future__ import annotations

from dataclasses import dataclass, field
import json
from pathlib import Path
import sys
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .integrator import METHODS, IntegratorConfig
from .model import ModelParams

PRESET_DIR = Path(__file__).with_name("presets")
PRESETS = ("fig1a", "fig1b", "fig2", "fig3a", "fig3b", "fig4")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


# every accepted key with its default; ``None`` means "not set"
DEFAULTS: dict[str, Any] = {
    "model": "tpm",
    "frame": "rotating",
    "params.g": 70.0,
    "params.gamma": 1.0e4,
    "params.gamma_c": 10.0,
    "params.gamma_nr": 1.0,
    "params.gamma_nl": 0.0,
    "params.beta_se": None,
    "params.r": 0.0,
    "params.n_dots": 25,
    "params.mu": 0.0,
    "params.nu": 0.0,
    "params.nu_eps": None,
    "params.delta_nu": None,
    "params.time_unit": 1.0e9,
    "integrator.rel_tol": 1e-8,
    "integrator.abs_tol": 1e-8,
    "integrator.max_step": None,
    "integrator.initial_step": None,
    "integrator.method": "adaptive-implicit",
    "integrator.jacobian": "stencil",
    "seed.kind": "zero",
    "seed.amplitude": 0.0,
    "simulate.t_end": 100.0,
    "simulate.samples": 0,
    "sweep.r_min": None,
    "sweep.r_max": None,
    "sweep.points": 21,
    "sweep.scale": "linear",
    "sweep.units": "absolute",
    "sweep.models": None,
    "sweep.mu": None,
    "branch.mu": None,
    "branch.r_min": 0.3,
    "branch.r_max": 4.0,
    "branch.seed_factor": 3.0,
    "branch.ds": 0.02,
    "branch.max_points": 2000,
    "coherence.r_min": 0.1,
    "coherence.r_max": 10.0,
    "coherence.points": 41,
    "coherence.scale": "log",
    "coherence.mu": 0.0,
    "spectrum.detunings": [-1.0e4, -5.0e3, 0.0, 5.0e3, 1.0e4],
    "spectrum.runs": ["cim", "tpm:0.0", "tpm:0.05"],
    "spectrum.settle": 50.0,
    "spectrum.window": 100.0,
    "spectrum.psd_bins": 256,
    "threshold.numeric": True,
    "output.dir": "out",
    "output.format": "csv",
}

_CHOICES = {
    "model": ("cim", "tpm"),
    "frame": ("rotating", "lab"),
    "integrator.method": tuple(METHODS),
    "integrator.jacobian": ("stencil", "numerical"),
    "seed.kind": ("zero", "finite-amplitude", "cim-lasing"),
    "sweep.scale": ("linear", "log"),
    "sweep.units": ("absolute", "threshold"),
    "coherence.scale": ("linear", "log"),
    "output.format": ("csv", "json"),
}


def flatten(tree: dict, prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def parse_value(text: str) -> Any:
    """TOML value syntax (numbers, booleans, arrays, quoted strings); bare words stay strings."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def parse_override(item: str) -> tuple[str, Any]:
    key, sep, value = item.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
    return key.strip(), parse_value(value.strip())


def load_file(path) -> dict[str, Any]:
    """Flat key/value mapping from a TOML file, a JSON file or a preset name.

    JSON files are accepted so that the configuration embedded in an output
    file can be fed back in unchanged.
    """
    p = Path(path)
    if not p.exists() and (PRESET_DIR / f"{path}.toml").exists():
        p = PRESET_DIR / f"{path}.toml"
    try:
        with open(p, "rb") as fh:
            if p.suffix == ".json":
                return flatten(json.load(fh))
            return flatten(tomllib.load(fh))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


@dataclass
class RunConfig:
    """Resolved configuration.  ``values`` holds every key, defaults included."""

    values: dict[str, Any]
    params: ModelParams
    integrator: IntegratorConfig
    extra: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    @property
    def model(self) -> str:
        return self.values["model"]

    def to_json(self) -> str:
        return json.dumps(self.values, sort_keys=True)

    def sweep_bounds(self) -> tuple[float, float, int, str]:
        v = self.values
        lo, hi, n = v["sweep.r_min"], v["sweep.r_max"], v["sweep.points"]
        if lo is None or hi is None:
            raise ConfigError("sweep.r_min and sweep.r_max are required for this command")
        if not (lo > 0 and hi > 0):
            raise ConfigError("sweep.r_min, sweep.r_max: must be positive")
        if not hi > lo:
            raise ConfigError(f"sweep.r_max: must exceed sweep.r_min ({hi} <= {lo})")
        if not n >= 1:
            raise ConfigError("sweep.points: must be at least 1")
        return float(lo), float(hi), int(n), v["sweep.scale"]


# keys that default to "not set" but take a number when given
_OPTIONAL_NUMBERS = {"params.beta_se": 1.0, "params.nu_eps": 0.0, "params.delta_nu": 0.0,
                     "integrator.initial_step": 1.0, "integrator.max_step": 1.0,
                     "sweep.r_min": 1.0, "sweep.r_max": 1.0}


def _check_types(values: dict):
    for key, default in DEFAULTS.items():
        v = values[key]
        if v is None:
            continue
        default = _OPTIONAL_NUMBERS.get(key, default)
        if key in _CHOICES and v not in _CHOICES[key]:
            raise ConfigError(f"{key}: must be one of {list(_CHOICES[key])}, got {v!r}")
        if isinstance(default, bool):
            if not isinstance(v, bool):
                raise ConfigError(f"{key}: expected true/false, got {v!r}")
        elif isinstance(default, (int, float)) and not isinstance(default, bool):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{key}: expected a number, got {v!r}")
            if isinstance(default, int) and not isinstance(default, float) and v != int(v):
                raise ConfigError(f"{key}: expected an integer, got {v!r}")
        elif isinstance(default, list) and not isinstance(v, list):
            raise ConfigError(f"{key}: expected a list, got {v!r}")


def _as_float_list(values, key):
    v = values[key]
    if v is None:
        return None
    if not isinstance(v, list):
        v = [v]
    try:
        return [float(x) for x in v]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: expected numbers, got {v!r}") from exc


def resolve(file_values: dict | None = None, overrides: list[tuple[str, Any]] = ()) -> RunConfig:
    """Merge defaults, file values and overrides (in that order) and validate."""
    values = dict(DEFAULTS)
    for source in (dict(file_values or {}), dict(overrides)):
        for key, v in source.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown key {key!r}")
            values[key] = v
    _check_types(values)
    for key in ("sweep.mu", "branch.mu", "spectrum.detunings"):
        values[key] = _as_float_list(values, key)

    pkw = {k.split(".", 1)[1]: values[k] for k in DEFAULTS if k.startswith("params.")}
    beta_se = pkw.pop("beta_se")
    if beta_se is not None:
        dnu = pkw["delta_nu"] if pkw["delta_nu"] is not None else 0.0
        try:
            gnl = ModelParams.gamma_nl_for_beta(beta_se, pkw["g"], pkw["gamma"],
                                                pkw["gamma_c"], dnu)
        except ValueError as exc:
            raise ConfigError(f"params.beta_se: {exc}") from exc
        given = pkw["gamma_nl"]
        if given not in (0, 0.0) and abs(given - gnl) > 1e-9 * max(1.0, gnl):
            raise ConfigError("params.beta_se: conflicts with params.gamma_nl; give only one")
        pkw["gamma_nl"] = gnl
    try:
        params = ModelParams(**pkw)
    except ValueError as exc:
        raise ConfigError(f"params: {exc}") from exc
    ikw = {k.split(".", 1)[1]: values[k] for k in DEFAULTS if k.startswith("integrator.")}
    if ikw["max_step"] is None:
        ikw["max_step"] = float("inf")
    try:
        integ = IntegratorConfig(**ikw)
    except ValueError as exc:
        raise ConfigError(f"integrator: {exc}") from exc
    if values["simulate.t_end"] <= 0:
        raise ConfigError("simulate.t_end: must be positive")
    if values["simulate.samples"] < 0:
        raise ConfigError("simulate.samples: must be non-negative")
    if values["spectrum.window"] <= 0 or values["spectrum.settle"] < 0:
        raise ConfigError("spectrum.window: must be positive (and spectrum.settle >= 0)")
    for key in ("branch.r_min", "branch.r_max", "coherence.r_min", "coherence.r_max"):
        if not values[key] > 0:
            raise ConfigError(f"{key}: must be positive")
    for lo, hi in (("branch.r_min", "branch.r_max"), ("coherence.r_min", "coherence.r_max")):
        if not values[hi] > values[lo]:
            raise ConfigError(f"{hi}: must exceed {lo}")
    # record the derived detuning fields so the embedded config is complete
    values["params.gamma_nl"] = params.gamma_nl
    values["params.nu"], values["params.nu_eps"] = params.nu, params.nu_eps
    values["params.delta_nu"] = params.delta_nu
    return RunConfig(values, params, integ)


def load(config_path=None, overrides: list[str] = ()) -> RunConfig:
    file_values = load_file(config_path) if config_path else {}
    return resolve(file_values, [parse_override(s) for s in overrides])

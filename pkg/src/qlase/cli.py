"""Command-line entry point: ``qlase {simulate,sweep,branch,coherence,spectrum,threshold}``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 sweep finished with some failed points.
"""

from __future__ import annotations

import argparse
from concurrent.futures import ProcessPoolExecutor
import csv
import hashlib
import json
import logging
import math
import os
from pathlib import Path
import sys

import numpy as np

from . import __version__
from .coherence import (g1_from_regression, regression_system_cim_nl, regression_system_tpm_nl,
                        schawlow_townes)
from .config import ConfigError, RunConfig, load
from .integrator import IntegrationError, integrate
from .model import (CIM_FIELDS, TPM_FIELDS, ModelParams, cim_rhs, cim_rhs_lab, coherent_seed,
                    generalized_std, tpm_rhs, tpm_rhs_lab)
from .spectrum import (FrequencyError, lasing_trajectory, power_spectrum,
                       time_average_frequency)
from .steady_state import (ConvergenceError, StepConfig, ThresholdError, cim_lasing_state,
                           cim_threshold_analytic, continue_branch, embed_cim,
                           lasing_fixed_point, nonlasing_fixed_point_cim,
                           nonlasing_fixed_point_tpm, tpm_threshold_analytic)

log = logging.getLogger("qlase")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_PARTIAL = 0, 1, 2, 3
NUMERICAL_ERRORS = (IntegrationError, ConvergenceError, ThresholdError, FrequencyError,
                    np.linalg.LinAlgError, FloatingPointError, OverflowError)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def build_id() -> str:
    """Hash of the package sources; identical for every run of one build."""
    h = hashlib.sha1()
    for path in sorted(Path(__file__).parent.rglob("*")):
        if path.suffix in (".py", ".toml") and path.is_file():
            h.update(path.name.encode())
            h.update(path.read_bytes())
    return h.hexdigest()[:12]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.15e}"
    return str(v)


def _json_safe(v):
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_json_safe(x) for x in v.tolist()]
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    return v


class Output:
    """Writes tables and reports into the output directory, each with the config embedded."""

    def __init__(self, cfg: RunConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.dir = Path(cfg["output.dir"])
        self.format = cfg["output.format"]
        self.build = build_id()
        self.dir.mkdir(parents=True, exist_ok=True)
        self.written: list[Path] = []

    def _meta(self) -> dict:
        return {"command": self.command, "version": __version__, "build": self.build,
                "config": self.cfg.values}

    def table(self, stem: str, columns: list[str], rows: list[dict], notes=()) -> Path:
        if self.format == "json":
            path = self.dir / f"{stem}.json"
            doc = dict(self._meta(), notes=list(notes), columns=columns,
                       rows=[[r.get(c) for c in columns] for r in rows])
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(_json_safe(doc), fh, indent=1)
        else:
            path = self.dir / f"{stem}.csv"
            with open(path, "w", newline="", encoding="utf-8") as fh:
                fh.write(f"# qlase {__version__} build {self.build} command {self.command}\n")
                fh.write(f"# config = {self.cfg.to_json()}\n")
                for note in notes:
                    fh.write(f"# {note}\n")
                w = csv.writer(fh)
                w.writerow(columns)
                for r in rows:
                    w.writerow([_fmt(r.get(c)) for c in columns])
        self.written.append(path)
        return path

    def report(self, stem: str, doc: dict) -> Path:
        path = self.dir / f"{stem}.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(_json_safe(dict(self._meta(), **doc)), fh, indent=1)
        self.written.append(path)
        return path


def _pool_map(fn, items, jobs: int):
    """Map preserving input order; a process pool when ``jobs > 1``."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _grid(lo, hi, n, scale):
    if n == 1:
        return np.array([lo])
    return np.geomspace(lo, hi, n) if scale == "log" else np.linspace(lo, hi, n)


def _mu_tag(mu: float) -> str:
    return f"mu{mu:g}"


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _seed(cfg: RunConfig) -> np.ndarray:
    dim = 12 if cfg.model == "tpm" else 5
    kind = cfg["seed.kind"]
    if kind == "zero":
        return np.zeros(dim, dtype=complex)
    if kind == "finite-amplitude":
        return coherent_seed(np.zeros(dim, dtype=complex), cfg["seed.amplitude"])
    cim = cim_lasing_state(cfg.params)
    if cim is None:
        raise ConfigError("seed.kind: 'cim-lasing' needs a pump above the CIM threshold")
    x = cim[0]
    return embed_cim(x) if dim == 12 else x


def cmd_simulate(cfg: RunConfig, jobs: int = 1) -> int:
    p = cfg.params
    lab = cfg["frame"] == "lab"
    if cfg.model == "tpm":
        rhs, names = (lambda z: tpm_rhs_lab(z, p)) if lab else (lambda z: tpm_rhs(z, p)), TPM_FIELDS
    else:
        rhs, names = (lambda z: cim_rhs_lab(z, p)) if lab else (lambda z: cim_rhs(z, p)), CIM_FIELDS
    s0 = _seed(cfg)
    t_end, samples = cfg["simulate.t_end"], int(cfg["simulate.samples"])
    traj = integrate(rhs, s0, (0.0, t_end), cfg.integrator, dense=samples > 0)
    if samples > 0:
        ts = np.linspace(0.0, t_end, samples)
        times, states = ts, traj.sample(ts)
    else:
        times, states = traj.times, traj.states
    out = Output(cfg, "simulate")
    cols = ["t"] + [f"{part}_{n}" for n in names for part in ("re", "im")]
    rows = []
    for t, x in zip(times, states):
        row = {"t": t}
        for n, v in zip(names, x):
            row[f"re_{n}"], row[f"im_{n}"] = v.real, v.imag
        rows.append(row)
    out.table("trajectory", cols, rows)
    final = traj.final
    out.report("simulate", {
        "model": cfg.model, "frame": cfg["frame"], "seed": {"kind": cfg["seed.kind"],
                                                            "amplitude": cfg["seed.amplitude"]},
        "params": p.as_dict(), "n_steps": traj.n_steps, "n_rhs": traj.n_rhs,
        "final_beta_abs": abs(final[0]),
        "final_generalized_std": generalized_std(final) if len(final) == 12 else 0.0,
    })
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def sweep_point(task) -> dict:
    """Stable steady state at one pump; the lasing state is preferred when it exists."""
    params, model = task
    row = {"r": params.r, "model": model, "mu": params.mu if model == "tpm" else None}
    try:
        try:
            fp = lasing_fixed_point(params, model)
            branch = "L"
        except ConvergenceError:
            fp = (nonlasing_fixed_point_tpm(params) if model == "tpm"
                  else nonlasing_fixed_point_cim(params))
            branch = "NL"
        x = fp.state
        row.update(branch=branch, beta_abs=abs(x[0]),
                   generalized_std=generalized_std(x) if len(x) == 12 else 0.0,
                   n=x[2].real, m=x[3].real, omega=fp.omega, stability=fp.stability,
                   status="ok")
    except (*NUMERICAL_ERRORS, ValueError) as exc:
        row.update(status=f"failed: {exc}")
    return row


SWEEP_COLUMNS = ["r", "branch", "beta_abs", "generalized_std", "n", "m", "omega",
                 "stability", "status"]


def cmd_sweep(cfg: RunConfig, jobs: int = 1) -> int:
    lo, hi, n, scale = cfg.sweep_bounds()
    models = cfg["sweep.models"] or [cfg.model]
    for m in models:
        if m not in ("cim", "tpm"):
            raise ConfigError(f"sweep.models: unknown model {m!r}")
    mus = cfg["sweep.mu"] or [cfg.params.mu]
    runs = []
    for m in models:
        for mu in (mus if m == "tpm" else [mus[0]]):
            p = cfg.params.with_(mu=mu)
            scale_r = 1.0
            if cfg["sweep.units"] == "threshold":
                scale_r = tpm_threshold_analytic(p).r_th_analytic
            runs.append((m, mu, [p.with_(r=float(r) * scale_r) for r in _grid(lo, hi, n, scale)]))
    tasks = [(p, m) for m, _, ps in runs for p in ps]
    results = _pool_map(sweep_point, tasks, jobs)
    out = Output(cfg, "sweep")
    failed, k = 0, 0
    for m, mu, ps in runs:
        rows = results[k:k + len(ps)]
        k += len(ps)
        failed += sum(r["status"] != "ok" for r in rows)
        stem = f"sweep_{m}" + (f"_{_mu_tag(mu)}" if m == "tpm" else "")
        out.table(stem, SWEEP_COLUMNS, rows, notes=[
            f"model={m} mu={mu if m == 'tpm' else 'n/a'} n_dots={cfg.params.n_dots}",
            "branch: L = lasing state reached from a finite-amplitude seed, NL = non-lasing",
        ])
    if failed:
        log.warning("%d sweep points failed", failed)
        return EXIT_PARTIAL
    return EXIT_OK


# ---------------------------------------------------------------------------
# branch
# ---------------------------------------------------------------------------

def _tpm_factory(p):
    return lambda z: tpm_rhs(z, p)


BRANCH_COLUMNS = ["r", "beta_abs", "generalized_std", "n", "m", "omega", "stability",
                  "leading_re"]


def branch_run(task):
    """Continuation of the TPM lasing branch for one ``mu``; returns rows and a report."""
    params, vals = task
    rep = tpm_threshold_analytic(params)
    rt = rep.r_th_analytic
    fp = lasing_fixed_point(params.with_(r=vals["branch.seed_factor"] * rt))
    step = StepConfig(ds=vals["branch.ds"], max_points=int(vals["branch.max_points"]))
    br = continue_branch(_tpm_factory, fp, (vals["branch.r_min"] * rt, vals["branch.r_max"] * rt),
                         step)
    pts = br.points
    rows = [{"r": q.r, "beta_abs": q.amplitude, "generalized_std": q.gen_std,
             "n": q.state[2].real, "m": q.state[3].real, "omega": q.omega,
             "stability": q.stability, "leading_re": q.leading_re} for q in pts]
    doc = rep.as_dict()
    if br.fold is not None:
        rep.with_numeric(br.fold[0])
        doc = rep.as_dict()
        doc["beta_abs_at_fold"] = float(abs(br.fold[1][0]))
    else:
        doc["fold"] = "not found in range"
    doc["diagnostics"] = list(br.diagnostics)
    return rows, doc


def cmd_branch(cfg: RunConfig, jobs: int = 1) -> int:
    out = Output(cfg, "branch")
    mus = cfg["branch.mu"] or [cfg.params.mu]
    if cfg.model == "cim":
        # the CIM lasing state grows from zero amplitude: no fold to locate
        n_th, r_th = cim_threshold_analytic(cfg.params)
        rows = []
        for r in r_th * np.linspace(1.0, cfg["branch.r_max"], 60)[1:]:
            x, omega = cim_lasing_state(cfg.params.with_(r=float(r)))
            rows.append({"r": r, "beta_abs": abs(x[0]), "generalized_std": 0.0, "n": x[2].real,
                         "m": x[3].real, "omega": omega, "stability": "stable",
                         "leading_re": None})
        out.table("branch_cim", BRANCH_COLUMNS, rows)
        out.report("threshold_cim", {"model": "cim", "n_th": n_th, "r_th_analytic": r_th,
                                     "r_th_numeric": None, "fold": "no fold",
                                     "note": "CIM lasing starts at zero amplitude"})
        return EXIT_OK
    results = _pool_map(branch_run, [(cfg.params.with_(mu=mu), cfg.values) for mu in mus], jobs)
    folds = []
    for mu, (rows, doc) in zip(mus, results):
        out.table(f"branch_tpm_{_mu_tag(mu)}", BRANCH_COLUMNS, rows,
                  notes=[f"mu={mu} n_dots={cfg.params.n_dots}; points in continuation order"])
        out.report(f"threshold_tpm_{_mu_tag(mu)}", doc)
        folds.append(doc.get("r_th_numeric"))
    out.report("branch_summary", {"mu": mus, "r_fold": folds,
                                  "r_th_analytic": [d["r_th_analytic"] for _, d in results]})
    return EXIT_OK


# ---------------------------------------------------------------------------
# coherence
# ---------------------------------------------------------------------------

COHERENCE_COLUMNS = ["r", "tau_c", "method", "branch", "model", "valid"]


def coherence_point(task) -> list[dict]:
    params, r_cim, r_tpm = task
    r = params.r
    rows = []

    def add(tau, method, branch, model, valid=True):
        rows.append({"r": r, "tau_c": tau, "method": method, "branch": branch, "model": model,
                     "valid": valid})

    try:
        if r < r_cim:
            fp = nonlasing_fixed_point_cim(params, with_stability=False)
            s = g1_from_regression(regression_system_cim_nl(params, fp))
            add(s.tau_c, s.method, "NL", "CIM")
        fp = nonlasing_fixed_point_tpm(params, with_stability=False)
        s = g1_from_regression(regression_system_tpm_nl(params, fp))
        add(s.tau_c, s.method, "NL", "TPM")
        if r >= 1.1 * r_cim:
            fp = lasing_fixed_point(params, "cim")
            st = schawlow_townes(params, fp, r_cim)
            add(st.tau_c, "schawlow-townes", "L", "CIM", st.valid)
        if r >= 1.1 * r_tpm:
            fp = lasing_fixed_point(params)
            st = schawlow_townes(params, fp, r_tpm)
            add(st.tau_c, "schawlow-townes", "L", "TPM", st.valid)
    except (*NUMERICAL_ERRORS, ValueError) as exc:
        rows.append({"r": r, "tau_c": None, "method": f"failed: {exc}", "branch": None,
                     "model": None, "valid": False})
    return rows


def cmd_coherence(cfg: RunConfig, jobs: int = 1) -> int:
    p = cfg.params.with_(mu=cfg["coherence.mu"])
    _, r_cim = cim_threshold_analytic(p)
    rep = tpm_threshold_analytic(p)
    r_tpm = rep.r_th_analytic
    grid = _grid(cfg["coherence.r_min"], cfg["coherence.r_max"], int(cfg["coherence.points"]),
                 cfg["coherence.scale"]) * r_tpm
    results = _pool_map(coherence_point, [(p.with_(r=float(r)), r_cim, r_tpm) for r in grid], jobs)
    rows = [row for rs in results for row in rs]
    failed = sum(row["method"].startswith("failed") for row in rows)
    out = Output(cfg, "coherence")
    out.table("coherence", COHERENCE_COLUMNS, rows, notes=[
        f"n_dots={p.n_dots} mu={p.mu} beta_se={p.beta_se:.6g}",
        "CIM NL rows stop at the CIM threshold, where the correlation time diverges",
        "lasing rows start 10% above the respective threshold",
    ])
    try:
        fold = continue_branch(_tpm_factory, lasing_fixed_point(p.with_(r=3 * r_tpm)),
                               (0.3 * r_tpm, 4 * r_tpm)).fold
        r_fold = fold[0] if fold else None
    except NUMERICAL_ERRORS as exc:
        log.warning("fold not located: %s", exc)
        r_fold = None
    out.report("coherence_markers", {
        "r_th_cim": r_cim, "r_th_tpm_analytic": r_tpm, "r_fold_tpm": r_fold,
        "cim_nl_divergence": {"r": r_cim, "marker": "tau_c diverges at the CIM threshold"},
    })
    return EXIT_PARTIAL if failed else EXIT_OK


# ---------------------------------------------------------------------------
# spectrum
# ---------------------------------------------------------------------------

SPECTRUM_COLUMNS = ["delta_nu", "model", "mu", "peak_freq", "omega_formula", "omega_time_avg",
                    "omega_cim", "bin_width", "peak_vs_formula_bins", "peak_vs_cim_bins",
                    "status"]


def _parse_run(spec: str) -> tuple[str, float | None]:
    model, _, mu = spec.partition(":")
    if model not in ("cim", "tpm"):
        raise ConfigError(f"spectrum.runs: unknown model in {spec!r}")
    try:
        return model, (float(mu) if mu else None)
    except ValueError as exc:
        raise ConfigError(f"spectrum.runs: bad mu in {spec!r}") from exc


def spectrum_point(task):
    params, model, settle, window, icfg = task
    row = {"delta_nu": params.delta_nu, "model": model,
           "mu": params.mu if model == "tpm" else None}
    try:
        traj, om = lasing_trajectory(params, model, settle=settle, window=window, cfg=icfg)
        sp = power_spectrum(traj, window, params, frame_offset=om)
        avg = time_average_frequency(traj, window, params)
        row.update(peak_freq=sp.peak_freq, omega_formula=sp.omega_formula, omega_time_avg=avg,
                   omega_cim=sp.omega_cim, bin_width=sp.bin_width,
                   peak_vs_formula_bins=abs(sp.peak_freq - avg) / sp.bin_width,
                   peak_vs_cim_bins=abs(sp.peak_freq - sp.omega_cim) / sp.bin_width,
                   status="ok")
        return row, sp
    except (*NUMERICAL_ERRORS, ValueError) as exc:
        row["status"] = f"failed: {exc}"
        return row, None


def cmd_spectrum(cfg: RunConfig, jobs: int = 1) -> int:
    runs = [_parse_run(s) for s in cfg["spectrum.runs"]]
    dets = cfg["spectrum.detunings"]
    settle, window = cfg["spectrum.settle"], cfg["spectrum.window"]
    tasks = []
    for model, mu in runs:
        for d in dets:
            p = cfg.params.with_(delta_nu=d)
            if mu is not None:
                p = p.with_(mu=mu)
            tasks.append((p, model, settle, window, cfg.integrator))
    results = _pool_map(spectrum_point, tasks, jobs)
    out = Output(cfg, "spectrum")
    out.table("frequency", SPECTRUM_COLUMNS, [r for r, _ in results], notes=[
        f"r={cfg.params.r} n_dots={cfg.params.n_dots} window={window} settle={settle}",
        "frequencies are lab-frame; a tone exp(-i w t) is counted at +w",
    ])
    nb = int(cfg["spectrum.psd_bins"])
    for (row, sp) in results:
        if sp is None:
            continue
        tag = f"{row['model']}" + (f"_{_mu_tag(row['mu'])}" if row["mu"] is not None else "")
        stem = f"psd_{tag}_dnu{row['delta_nu']:g}"
        freqs, psd = sp.freqs, sp.psd
        if nb > 0:
            k = int(np.argmax(psd))
            sl = slice(max(0, k - nb), k + nb + 1)
            freqs, psd = freqs[sl], psd[sl]
        out.table(stem, ["freq", "psd"], [{"freq": f, "psd": v} for f, v in zip(freqs, psd)],
                  notes=[f"bins within {nb} of the peak" if nb > 0 else "all bins"])
        out.report(stem, sp.summary())
    failed = sum(r["status"] != "ok" for r, _ in results)
    return EXIT_PARTIAL if failed else EXIT_OK


# ---------------------------------------------------------------------------
# threshold
# ---------------------------------------------------------------------------

def cmd_threshold(cfg: RunConfig, jobs: int = 1) -> int:
    p = cfg.params
    out = Output(cfg, "threshold")
    n_th, r_cim = cim_threshold_analytic(p)
    rep = tpm_threshold_analytic(p)
    if cfg["threshold.numeric"]:
        rt = rep.r_th_analytic
        br = continue_branch(_tpm_factory, lasing_fixed_point(p.with_(r=3 * rt)),
                             (0.3 * rt, 4 * rt))
        if br.fold is None:
            raise ConvergenceError("no fold found between 0.3 and 4 times the analytic threshold")
        rep.with_numeric(br.fold[0])
    doc = rep.as_dict()
    doc["cim"] = {"n_th": n_th, "r_th": r_cim}
    out.report("threshold", doc)
    if cfg["output.format"] == "csv":
        cols = ["model", "n_th", "r_th_analytic", "r_th_numeric", "relative_gap"]
        out.table("threshold", cols, [
            {"model": "cim", "n_th": n_th, "r_th_analytic": r_cim},
            {"model": "tpm", "n_th": rep.n_th, "r_th_analytic": rep.r_th_analytic,
             "r_th_numeric": rep.r_th_numeric, "relative_gap": rep.relative_gap},
        ])
    print(json.dumps(_json_safe({k: doc[k] for k in ("n_th", "r_th_analytic", "r_th_numeric",
                                                      "relative_gap")})))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "branch": cmd_branch,
    "coherence": cmd_coherence,
    "spectrum": cmd_spectrum,
    "threshold": cmd_threshold,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="TOML (or JSON) config file, or a preset name such as fig2")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override one config key (repeatable)")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--format", choices=("csv", "json"), help="table format")
    common.add_argument("--jobs", type=int, default=1, metavar="INT",
                        help="worker processes for sweep points")
    parser = argparse.ArgumentParser(prog="qlase", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"qlase {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=fn.__doc__ or name)
    return parser


def _setup_logging():
    level = os.environ.get("QLASE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    overrides = list(args.overrides)
    if args.out is not None:
        overrides.append(f"output.dir = {json.dumps(args.out)}")
    if args.format is not None:
        overrides.append(f"output.format = {json.dumps(args.format)}")
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs: must be at least 1")
        cfg = load(args.config, overrides)
        return COMMANDS[args.command](cfg, args.jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

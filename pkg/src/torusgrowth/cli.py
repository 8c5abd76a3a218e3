"""Scenario-driven command line for the transport-growth laboratory.

Each experiment is one JSON scenario file naming the vector field (inline
mode table or a separate file), the drift/coupling parameters, the solver
configuration, and an initial state, e.g.

    {"name": "gradient-growth",
     "kind": "growth",
     "field": {"dim": 2, "modes": [[1, 0, 0, 0.0, 0.0, -0.5, 0.0],
                                   [0, 1, 0, 0.0, 0.0, 0.0, -0.5]]},
     "solver": {"band": 32, "dt": 0.01, "t_final": 6.0, "sample_every": 20},
     "initial_state": {"kind": "wave_packet", "center": [3.14159265, 0.0],
                       "freq": [0, 8]},
     "sigmas": [0.25, 0.5],
     "out": "runs/gradient"}

Run with `torusgrowth growth --scenario file.json`.  Every run writes a
manifest listing the emitted artifacts (CSV time series, JSON reports,
gnuplot-ready .dat files) plus version information; the same scenario and
seed reproduce byte-identical CSV output.  Unknown scenario keys are
rejected.  Exit codes: 0 success, 1 scenario error, 2 numerical failure,
3 certification refuted.
"""

import argparse
import hashlib
import json
import os
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, fields as dataclass_fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .escape import EscapeParams, build_escape, certify_escape
from .fields import FourierVectorField
from .msanalysis import certify_morse_smale
from .normalform import (
    NormalFormTransform,
    conjugation_residual,
    resonant_average,
)
from .quantize import SpectralState, wave_packet
from .solver import (
    ConfigError,
    NumericalFailure,
    SimulationConfig,
    fit_growth_rate,
    solve,
)

EXIT_OK = 0
EXIT_SCENARIO = 1
EXIT_NUMERICAL = 2
EXIT_REFUTED = 3

THREADS_ENV = "TORUSGROWTH_THREADS"

VERBS = {
    "simulate": "integrate the transport equation and record norm series",
    "ms-check": "classify the critical elements of an autonomous field",
    "escape-build": "construct escape-function grids for a certified field",
    "escape-certify": "build and certify an escape function by sampling",
    "normal-form": "solve the homological equation and measure the "
                   "conjugation residual",
    "growth": "fit exponential growth rates of Sobolev norms",
    "sweep": "run a growth experiment over a parameter grid",
}


class ScenarioError(Exception):
    """A scenario file is missing, malformed, or out of documented range."""


# ----------------------------------------------------------------------
# scenario loading and validation
# ----------------------------------------------------------------------

_TOP_KEYS = ("name", "kind", "field", "field_file", "perturbation", "nu",
             "epsilon", "epsilons", "sigmas", "solver", "initial_state",
             "escape", "grid", "fit_window", "seed", "out")
_SOLVER_KEYS = ("band", "dt", "t_final", "sample_every", "cfl_limit")
_STATE_KEYS = ("kind", "center", "freq", "width", "modes")
_GRID_KEYS = ("epsilons", "sigmas", "freqs")
_ESCAPE_KEYS = tuple(f.name for f in dataclass_fields(EscapeParams))


def _check_keys(section, allowed, where):
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ScenarioError(f"{where}: unknown keys {unknown}; "
                            f"allowed: {sorted(allowed)}")


def _require(section, key, where):
    if key not in section:
        raise ScenarioError(f"{where}: missing required key '{key}'")
    return section[key]


def _number(x, where, lo=None, hi=None, integer=False):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ScenarioError(f"{where}: expected a number, got {x!r}")
    if integer and int(x) != x:
        raise ScenarioError(f"{where}: expected an integer, got {x!r}")
    if lo is not None and x < lo:
        raise ScenarioError(f"{where}: {x} below documented minimum {lo}")
    if hi is not None and x > hi:
        raise ScenarioError(f"{where}: {x} above documented maximum {hi}")
    return int(x) if integer else float(x)


def load_scenario(path, verb):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    try:
        sc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(sc, dict):
        raise ScenarioError(f"{path}: scenario must be a JSON object")
    _check_keys(sc, _TOP_KEYS, "scenario")
    kind = sc.get("kind")
    if kind is not None and kind != verb:
        raise ScenarioError(
            f"scenario kind {kind!r} does not match the requested verb "
            f"{verb!r}")
    if kind is not None and kind not in VERBS:
        raise ScenarioError(f"unknown experiment kind {kind!r}")
    if "field" in sc and "field_file" in sc:
        raise ScenarioError("give either 'field' or 'field_file', not both")
    if "solver" in sc:
        _check_keys(sc["solver"], _SOLVER_KEYS, "solver")
        band = _require(sc["solver"], "band", "solver")
        for b in band if isinstance(band, list) else [band]:
            _number(b, "solver.band", lo=1, hi=1024, integer=True)
        if isinstance(band, list) and len(band) != 2:
            raise ScenarioError("solver.band is an integer or [n1, n2]")
        _number(_require(sc["solver"], "dt", "solver"), "solver.dt",
                lo=1e-6, hi=1.0)
        _number(_require(sc["solver"], "t_final", "solver"),
                "solver.t_final", lo=1e-6, hi=1e4)
        if "sample_every" in sc["solver"]:
            _number(sc["solver"]["sample_every"], "solver.sample_every",
                    lo=1, integer=True)
    if "initial_state" in sc:
        _check_keys(sc["initial_state"], _STATE_KEYS, "initial_state")
    if "escape" in sc:
        _check_keys(sc["escape"], _ESCAPE_KEYS, "escape")
    if "grid" in sc:
        _check_keys(sc["grid"], _GRID_KEYS, "grid")
    if "epsilon" in sc:
        _number(sc["epsilon"], "epsilon", lo=0.0, hi=1.0)
    for key in ("epsilons", "sigmas"):
        if key in sc:
            if not isinstance(sc[key], list):
                raise ScenarioError(f"{key} must be a list")
            hi = 1.0 if key == "epsilons" else 8.0
            for i, v in enumerate(sc[key]):
                _number(v, f"{key}[{i}]", lo=0.0, hi=hi)
    if "nu" in sc:
        if (not isinstance(sc["nu"], list)
                or any(_number(v, "nu", integer=True) is None
                       for v in sc["nu"])):
            raise ScenarioError("nu must be a list of integers")
    if "seed" in sc:
        _number(sc["seed"], "seed", lo=0, integer=True)
    if "fit_window" in sc:
        win = sc["fit_window"]
        if not (isinstance(win, list) and len(win) == 2):
            raise ScenarioError("fit_window must be [t_min, t_max]")
        if _number(win[0], "fit_window") >= _number(win[1], "fit_window"):
            raise ScenarioError("fit_window must be increasing")
    return sc


def _field_from(sc, key, where, base_dir):
    if key in sc:
        spec = sc[key]
    elif key + "_file" in sc:
        fpath = Path(base_dir) / sc[key + "_file"]
        try:
            spec = json.loads(fpath.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ScenarioError(f"cannot load {key} from {fpath}: {exc}") \
                from exc
    else:
        return None
    try:
        return FourierVectorField.from_dict(spec)
    except (KeyError, ValueError, TypeError, IndexError) as exc:
        raise ScenarioError(f"{where}: bad mode table: {exc}") from exc


def _state_from(sc, band):
    spec = _require(sc, "initial_state", "scenario")
    kind = spec.get("kind", "wave_packet")
    if kind == "wave_packet":
        freq = _require(spec, "freq", "initial_state")
        center = spec.get("center", [np.pi, np.pi])
        width = _number(spec.get("width", 0.8), "initial_state.width",
                        lo=0.05, hi=5.0)
        u = wave_packet(2, band, center, freq, width=width)
    elif kind == "modes":
        rows = _require(spec, "modes", "initial_state")
        table = {}
        for row in rows:
            if len(row) != 4:
                raise ScenarioError(
                    "initial_state.modes rows are [k1, k2, re, im]")
            table[(int(row[0]), int(row[1]))] = row[2] + 1j * row[3]
        try:
            u = SpectralState.from_modes(2, band, table)
        except ValueError as exc:
            raise ScenarioError(f"initial_state: {exc}") from exc
    else:
        raise ScenarioError(f"unknown initial_state kind {kind!r}")
    norm = u.l2_norm()
    if norm == 0.0:
        raise ScenarioError("initial state is identically zero")
    return (1.0 / norm) * u


def _dynamics_from(sc, base_dir):
    """Drift field, perturbation, epsilon, and co-moving nu, validated."""
    V = _field_from(sc, "field", "field", base_dir)
    P = _field_from(sc, "perturbation", "perturbation", base_dir)
    nu = tuple(int(v) for v in sc["nu"]) if "nu" in sc else None
    eps = float(sc.get("epsilon", 0.0))
    if P is not None and "epsilon" not in sc:
        raise ScenarioError("a perturbation needs an explicit epsilon")
    if V is None:
        if nu is None:
            raise ScenarioError("scenario needs a 'field' (or 'nu' for a "
                                "constant drift)")
        V = FourierVectorField.constant(np.asarray(nu, dtype=float))
        comoving = nu
    else:
        comoving = None
    return V, P, eps, comoving


# ----------------------------------------------------------------------
# artifact writers (all output funnels through these)
# ----------------------------------------------------------------------

def _fmt(x):
    return format(float(x), ".17g")


def _write_csv(path, columns):
    """columns: list of (name, sequence); floats serialized canonically."""
    n = len(columns[0][1])
    lines = [",".join(name for name, _ in columns)]
    for i in range(n):
        lines.append(",".join(
            col[i] if isinstance(col[i], str) else _fmt(col[i])
            for _, col in columns))
    path.write_text("\n".join(lines) + "\n")


def _write_dat(path, columns, title):
    """Gnuplot-ready: commented header, whitespace-separated columns."""
    n = len(columns[0][1])
    lines = [f"# {title}", "# " + "  ".join(name for name, _ in columns)]
    for i in range(n):
        lines.append("  ".join(_fmt(col[i]) for _, col in columns))
    path.write_text("\n".join(lines) + "\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON-serializable: {type(obj).__name__}")


def _write_json(path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True,
                               default=_json_default) + "\n")


def _series_artifacts(out, run, sigmas, title):
    ts = run.series
    columns = [("t", ts.times), ("l2", ts.l2)]
    columns += [(f"sobolev_{s:g}", ts.sobolev[s]) for s in sigmas]
    _write_csv(out / "series.csv", columns)
    _write_dat(out / "series.dat", columns, title)
    return ["series.csv", "series.dat"]


# ----------------------------------------------------------------------
# verb handlers: each returns (exit_code, artifacts, report, warnings)
# ----------------------------------------------------------------------

def _solver_config(sc, sigmas, eps, comoving):
    solver = _require(sc, "solver", "scenario")
    band = solver["band"]
    band = tuple(int(b) for b in band) if isinstance(band, list) \
        else int(band)
    return SimulationConfig(
        band=band, dt=float(solver["dt"]),
        t_final=float(solver["t_final"]), epsilon=eps,
        nu=None if comoving is None else tuple(float(v) for v in comoving),
        sigmas=tuple(float(s) for s in sigmas),
        sample_every=int(solver.get("sample_every", 10)),
        cfl_limit=float(solver.get("cfl_limit", 2.0)),
        store_states=False)


def _run_simulate(sc, out, opts):
    V, P, eps, comoving = _dynamics_from(sc, opts.base_dir)
    sigmas = [float(s) for s in sc.get("sigmas", [1.0])]
    config = _solver_config(sc, sigmas, eps, comoving)
    u0 = _state_from(sc, config.band)
    run = solve(V, u0, config, perturbation=P)
    artifacts = _series_artifacts(out, run, sigmas, sc.get("name", "run"))
    report = {
        "epsilon": eps,
        "l2_drift": run.l2_drift,
        "dt": run.dt,
        "grid_shape": list(run.grid_shape),
        "final_l2": run.final_state.l2_norm(),
        "samples": len(run.series.times),
    }
    _write_json(out / "simulate.json", report)
    return EXIT_OK, artifacts + ["simulate.json"], report, 0


def _finite_or_none(x):
    x = float(x)
    return x if np.isfinite(x) else None


def _ms_report_dict(report):
    return {
        "certified": report.certified,
        "reasons": list(report.reasons),
        "critical_points": [
            {"point": [round(float(v), 12) for v in c.point],
             "kind": c.kind,
             "eigenvalues_re": c.eigenvalues.real.tolist(),
             "eigenvalues_im": c.eigenvalues.imag.tolist(),
             "index": c.index}
            for c in report.critical_points],
        "cycles": len(report.cycles.orbits),
        "unresolved_seeds": int(len(report.cycles.unresolved)),
        "connections": {
            "found": report.connections.found,
            "closest_approach":
                _finite_or_none(report.connections.closest_approach),
            "hits": [[int(i), int(j), float(g)]
                     for i, j, g in report.connections.hits],
        },
        "omega_fraction": report.omega_fraction,
        "index_sum": report.index_sum,
    }


def _certified_report(sc, opts):
    V, _, _, _ = _dynamics_from(sc, opts.base_dir)
    if not V.is_autonomous():
        raise ScenarioError("structural analysis needs an autonomous field")
    return V, certify_morse_smale(V, seed=opts.seed)


def _run_ms_check(sc, out, opts):
    _, report = _certified_report(sc, opts)
    payload = _ms_report_dict(report)
    _write_json(out / "ms_report.json", payload)
    if opts.verbose:
        print(report.summary(), file=sys.stderr)
    code = EXIT_OK if report.certified else EXIT_REFUTED
    return code, ["ms_report.json"], payload, 0


def _escape_params(sc):
    overrides = dict(sc.get("escape", {}))
    try:
        return EscapeParams(**{**asdict(EscapeParams()), **overrides})
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"escape parameters: {exc}") from exc


def _run_escape_build(sc, out, opts):
    V, report = _certified_report(sc, opts)
    if not report.certified:
        payload = _ms_report_dict(report)
        _write_json(out / "ms_report.json", payload)
        return EXIT_REFUTED, ["ms_report.json"], payload, 0
    params = _escape_params(sc)
    data = build_escape(V, report, params=params)
    data.save(out / "escape_data.npz")
    payload = {
        "params": asdict(params),
        "order_function_range": [float(np.min(data.m)),
                                 float(np.max(data.m))],
        "saddles": len(report.saddles),
        "sinks": len(report.sinks),
        "sources": len(report.sources),
    }
    _write_json(out / "escape_build.json", payload)
    return EXIT_OK, ["escape_data.npz", "escape_build.json"], payload, 0


def _run_escape_certify(sc, out, opts):
    V, report = _certified_report(sc, opts)
    if not report.certified:
        payload = _ms_report_dict(report)
        _write_json(out / "ms_report.json", payload)
        return EXIT_REFUTED, ["ms_report.json"], payload, 0
    params = _escape_params(sc)
    data = build_escape(V, report, params=params)
    data.save(out / "escape_data.npz")
    sigmas = [float(s) for s in sc.get("sigmas", [params.sigma])]
    payload, passed_all = {"certificates": []}, True
    for sigma in sigmas:
        cert = certify_escape(data, V=V, sigma=sigma)
        passed = cert.passed()
        passed_all = passed_all and passed
        payload["certificates"].append({**asdict(cert), "passed": passed})
        if opts.verbose:
            print(cert.summary(), file=sys.stderr)
    payload["passed"] = passed_all
    _write_json(out / "escape_certificate.json", payload)
    code = EXIT_OK if passed_all else EXIT_REFUTED
    return code, ["escape_data.npz", "escape_certificate.json"], payload, 0


def _run_normal_form(sc, out, opts):
    V, P, eps, _ = _dynamics_from(sc, opts.base_dir)
    if P is not None:
        raise ScenarioError("normal-form scenarios put the time-periodic "
                            "field under 'field'")
    nu = _require(sc, "nu", "scenario")
    if "epsilon" not in sc:
        raise ScenarioError("normal-form scenarios need an epsilon")
    solver = _require(sc, "solver", "scenario")
    band = solver["band"]
    band = tuple(int(b) for b in band) if isinstance(band, list) \
        else int(band)
    u0 = _state_from(sc, band)
    tr = NormalFormTransform.from_field(V, nu, eps)
    ax = np.linspace(0.0, 2.0 * np.pi, 48, endpoint=False)
    pts = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1).reshape(-1, 2)
    min_det = min(float(np.min(tr.det_jacobian(t, pts)))
                  for t in np.linspace(0.0, 2.0 * np.pi, 9))
    series = conjugation_residual(
        V, nu, eps, u0, t_final=float(solver["t_final"]),
        dt=float(solver["dt"]),
        sample_every=int(solver.get("sample_every", 10)))
    inv_band = max(1, V.space_band + 2)
    inv_fit = FourierVectorField.from_callable(
        lambda y: tr.inverse_displacement(0.0, y), 2, band=inv_band)
    fit_err = float(np.max(np.abs(
        inv_fit.value(0.0, pts) - tr.inverse_displacement(0.0, pts))))
    columns = [("t", series.times), ("residual", series.residual),
               ("v_l2", series.v_l2), ("tail", series.tail)]
    _write_csv(out / "residual.csv", columns)
    _write_dat(out / "residual.dat", columns, sc.get("name", "normal-form"))
    payload = {
        "nu": [int(v) for v in nu],
        "epsilon": eps,
        "beta": tr.beta.to_dict(),
        "inverse_displacement_t0": inv_fit.to_dict(),
        "inverse_fit_error": fit_err,
        "det_threshold": tr.det_threshold,
        "min_det": min_det,
        "resonant_average": resonant_average(V, nu).to_dict(),
        "sup_residual": series.sup,
    }
    _write_json(out / "normal_form.json", payload)
    return (EXIT_OK, ["residual.csv", "residual.dat", "normal_form.json"],
            payload, 0)


def _rate_fits(run, sigmas, window):
    t_min, t_max = (None, None) if window is None else window
    fits = {}
    for s in sigmas:
        fit = fit_growth_rate(run.series.times, run.series.sobolev[s],
                              t_min=t_min, t_max=t_max)
        fits[f"{s:g}"] = {
            "rate": fit.rate, "log_amplitude": fit.log_amplitude,
            "rms_residual": fit.rms_residual, "n_points": fit.n_points,
            "window": list(fit.window)}
    return fits


def _run_growth(sc, out, opts):
    V, P, eps, comoving = _dynamics_from(sc, opts.base_dir)
    sigmas = [float(s) for s in _require(sc, "sigmas", "scenario")]
    if not sigmas:
        raise ScenarioError("growth needs at least one sigma")
    config = _solver_config(sc, sigmas, eps, comoving)
    u0 = _state_from(sc, config.band)
    run = solve(V, u0, config, perturbation=P)
    artifacts = _series_artifacts(out, run, sigmas, sc.get("name", "growth"))
    report = {
        "epsilon": eps,
        "l2_drift": run.l2_drift,
        "rates": _rate_fits(run, sigmas, sc.get("fit_window")),
    }
    _write_json(out / "growth.json", report)
    return EXIT_OK, artifacts + ["growth.json"], report, 0


def _run_sweep(sc, out, opts):
    grid = sc.get("grid", {})
    state_spec = _require(sc, "initial_state", "scenario")
    epsilons = grid.get("epsilons",
                        [sc["epsilon"]] if "epsilon" in sc else [0.0])
    sigmas = grid.get("sigmas", sc.get("sigmas", [1.0]))
    freqs = grid.get("freqs")
    if freqs is None:
        if "freq" not in state_spec:
            raise ScenarioError("sweep needs initial_state.freq or "
                                "grid.freqs")
        freqs = [state_spec["freq"]]
    for i, v in enumerate(epsilons):
        _number(v, f"grid.epsilons[{i}]", lo=0.0, hi=1.0)
    for i, v in enumerate(sigmas):
        _number(v, f"grid.sigmas[{i}]", lo=0.0, hi=8.0)
    window = sc.get("fit_window")

    def run_cell(eps, freq):
        cell = dict(sc)
        cell.pop("grid", None)
        cell["epsilon"] = float(eps)
        cell["initial_state"] = dict(state_spec, freq=list(freq))
        V, P, _, comoving = _dynamics_from(cell, opts.base_dir)
        config = _solver_config(cell, sigmas, float(eps), comoving)
        u0 = _state_from(cell, config.band)
        run = solve(V, u0, config, perturbation=P)
        return run.l2_drift, _rate_fits(run, [float(s) for s in sigmas],
                                        window)

    cells = [(e, f) for e in epsilons for f in freqs]
    results = [None] * len(cells)

    def worker(i):
        eps, freq = cells[i]
        try:
            results[i] = ("ok", run_cell(eps, freq))
        except (NumericalFailure, ConfigError, ValueError) as exc:
            results[i] = ("failed", str(exc))

    if cells:
        n_workers = max(1, min(opts.threads, len(cells)))
        if n_workers == 1:
            for i in range(len(cells)):
                worker(i)
        else:
            with ThreadPoolExecutor(max_workers=n_workers) as pool:
                list(pool.map(worker, range(len(cells))))

    rows, warnings = [], 0
    for (eps, freq), outcome in zip(cells, results):
        h = 1.0 / max(1.0, float(np.hypot(*freq)))
        if outcome[0] == "ok":
            drift, fits = outcome[1]
            for s in sigmas:
                fit = fits[f"{float(s):g}"]
                rows.append({
                    "epsilon": float(eps), "sigma": float(s), "h": h,
                    "rate": fit["rate"], "rms_residual": fit["rms_residual"],
                    "l2_drift": drift, "status": "ok", "message": ""})
        else:
            warnings += 1
            msg = outcome[1].replace(",", ";").replace("\n", " ")
            for s in sigmas:
                rows.append({
                    "epsilon": float(eps), "sigma": float(s), "h": h,
                    "rate": float("nan"), "rms_residual": float("nan"),
                    "l2_drift": float("nan"), "status": "failed",
                    "message": msg})
    names = ["epsilon", "sigma", "h", "rate", "rms_residual", "l2_drift",
             "status", "message"]
    columns = [(n, [row[n] for row in rows]) for n in names]
    if rows:
        _write_csv(out / "sweep.csv", columns)
    else:
        (out / "sweep.csv").write_text(",".join(names) + "\n")
    clean_rows = [{k: (None if isinstance(v, float) and not np.isfinite(v)
                       else v) for k, v in row.items()} for row in rows]
    payload = {"cells": len(cells), "failed_cells": warnings,
               "rows": clean_rows}
    _write_json(out / "sweep.json", payload)
    return EXIT_OK, ["sweep.csv", "sweep.json"], payload, warnings


_HANDLERS = {
    "simulate": _run_simulate,
    "ms-check": _run_ms_check,
    "escape-build": _run_escape_build,
    "escape-certify": _run_escape_certify,
    "normal-form": _run_normal_form,
    "growth": _run_growth,
    "sweep": _run_sweep,
}


# ----------------------------------------------------------------------
# entry point
# ----------------------------------------------------------------------

class _Options:
    def __init__(self, seed, threads, verbose, base_dir):
        self.seed = seed
        self.threads = threads
        self.verbose = verbose
        self.base_dir = base_dir


def _resolve_threads(flag):
    if flag is not None:
        if flag < 1:
            raise ScenarioError("--threads must be >= 1")
        return flag
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ScenarioError(
                f"{THREADS_ENV}={env!r} is not an integer") from exc
    return 1


def _manifest(sc, verb, seed, artifacts, warnings):
    blob = json.dumps(sc, sort_keys=True, separators=(",", ":"))
    return {
        "name": sc.get("name", "unnamed"),
        "kind": verb,
        "config_hash": hashlib.sha256(blob.encode()).hexdigest(),
        "seed": seed,
        "versions": {
            "torusgrowth": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "artifacts": sorted(artifacts),
        "warnings": warnings,
    }


def build_parser():
    parser = argparse.ArgumentParser(
        prog="torusgrowth",
        description="scenario-driven experiments on torus transport growth")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, help_text in VERBS.items():
        s = sub.add_parser(verb, help=help_text)
        s.add_argument("--scenario", required=True,
                       help="path to the scenario JSON file")
        s.add_argument("--out", default=None,
                       help="output directory (default: the scenario's "
                            "'out', else runs/<name>)")
        s.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed")
        s.add_argument("--threads", type=int, default=None,
                       help=f"sweep worker threads (default 1; env "
                            f"{THREADS_ENV} overrides)")
        s.add_argument("--verbose", action="store_true",
                       help="print progress summaries to stderr")
    return parser


def _fail(out, code, exc):
    kind = {EXIT_SCENARIO: "scenario", EXIT_NUMERICAL: "numerical",
            EXIT_REFUTED: "refuted"}[code]
    payload = {"error": {"kind": kind, "type": type(exc).__name__,
                         "message": str(exc)},
               "exit_code": code}
    if out is not None:
        try:
            _write_json(out / "error.json", payload)
        except OSError:
            pass
    print(f"torusgrowth: {kind} error: {exc}", file=sys.stderr)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    out = None
    try:
        sc = load_scenario(args.scenario, args.verb)
        out_path = args.out or sc.get("out") or f"runs/{sc.get('name', 'run')}"
        out = Path(out_path)
        out.mkdir(parents=True, exist_ok=True)
        seed = args.seed if args.seed is not None else int(sc.get("seed", 0))
        opts = _Options(seed=seed, threads=_resolve_threads(args.threads),
                        verbose=args.verbose,
                        base_dir=Path(args.scenario).parent)
        code, artifacts, _, warnings = _HANDLERS[args.verb](sc, out, opts)
        manifest = _manifest(sc, args.verb, seed, artifacts, warnings)
        _write_json(out / "manifest.json", manifest)
        if args.verbose or warnings:
            print(f"torusgrowth: {args.verb} finished with exit code {code}"
                  f" ({warnings} warnings); artifacts in {out}",
                  file=sys.stderr)
        return code
    except ScenarioError as exc:
        return _fail(out, EXIT_SCENARIO, exc)
    except ConfigError as exc:
        return _fail(out, EXIT_SCENARIO, exc)
    except NumericalFailure as exc:
        return _fail(out, EXIT_NUMERICAL, exc)
    except ValueError as exc:
        return _fail(out, EXIT_SCENARIO, exc)
    except RuntimeError as exc:
        # non-convergent iterations (e.g. the inverse displacement fixed
        # point) count as numerical failures, not crashes
        return _fail(out, EXIT_NUMERICAL, exc)


if __name__ == "__main__":
    sys.exit(main())

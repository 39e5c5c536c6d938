"""Command-line experiment runner.

Every subcommand reads a JSON config (``--config``), applies flag overrides,
writes CSV/JSON artifacts into the output directory and finishes with a
``manifest.json`` holding the resolved config, seed, library versions, wall
time and a hash of the numeric outputs. Identical config and seed give
byte-identical numeric outputs.

    python -m fmo_control optimize --cost eps_B --seed 1 --out runs/b
    python -m fmo_control reproduce fig5
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import math
import os
import platform
import sys
import time
import zlib
from pathlib import Path

import numpy as np

from fmo_control import __version__
from fmo_control.analysis import (
    TransportScenario,
    distribution_overlap_error,
    transport_curve,
    transport_distribution,
)
from fmo_control.ensemble import (
    EnsembleError,
    Orientation,
    cone_orientations,
    dark_target,
    disorder_orientations,
    dodecahedron_orientations,
    ensemble_evaluate,
    ensemble_mean_density,
    fidelity,
    random_orientations,
    write_matrix_csv,
)
from fmo_control.model import ModelError, bright_state, build_fmo_model, site_state
from fmo_control.optimizer import COSTS, CostSpec, OptimizationResult, SearchOptions, optimize_pulse
from fmo_control.propagator import IntegrationError, propagate
from fmo_control.pulse import (
    PulseParams,
    gaussian_pulse,
    pulse_from_dict,
    sample_frequencies,
    save_pulse,
    write_envelope_csv,
)
from fmo_control.thermo import (
    OrientingField,
    RotorSpec,
    SphereGrid,
    boltzmann_orientation_pdf,
    cone_population_fraction,
    energy_landscape,
    landscape_argmax,
    max_rabi,
    moment_of_inertia,
    rotation_time,
)

log = logging.getLogger("fmo_control")

OUT_ENV = "FMO_CONTROL_OUT"
SCALES = {"ci": {"n": 200, "restarts": 8}, "paper": {"n": 10000, "restarts": 1000}}
STOCHASTIC = {"optimize", "ensemble", "probe", "transport"}

COMMON = {"seed": None, "output_dir": None, "scale": "ci", "threads": 1, "model": {}}

DEFAULTS = {
    "simulate": {
        "initial": "site1",
        "gammas": [0.0, 0.01, 0.1, 1.0, 10.0, 100.0, 1000.0],
        "t_end": 10.0,
        "dt": 0.002,
        "n_points": 101,
        "write_trajectories": False,
    },
    "optimize": {
        "cost": "eps_B",
        "gamma": 1.0,
        "t_pulse": None,
        "restarts": None,
        "orientations": "single",
        "cone_opening": 0.1 * math.pi,
        "cone_n": 21,
        "method": "subplex",
        "max_evals": 20000,
        "xtol": 1e-6,
        "ftol": 1e-6,
        "e0": 15.0,
        "e0_max": 15.0,
        "m": 7,
        "dt": 1e-3,
        "omega_window": [-1500.0, 2500.0],
        "start": None,
    },
    "ensemble": {
        "pulse": None,
        "cost": "eps_B",
        "gamma": 1.0,
        "sampler": "disorder",
        "eta": 1.0,
        "recipe": "literal",
        "cone_opening": 0.1 * math.pi,
        "n": None,
        "bins": 50,
        "dt": 1e-4,
        "fidelity_target": "auto",
    },
    "orient": {
        "omega_l": -1000.0,
        "e0": 70.0,
        "temperatures": [10.0, 25.0, 50.0, 77.0, 100.0, 150.0, 200.0, 250.0, 300.0, 400.0],
        "openings": [0.2 * math.pi, 0.5 * math.pi],
        "pdf_temperature": 300.0,
        "n_theta": 181,
        "n_phi": 360,
        "mass": 15e-23,
        "radius": 2e-9,
        "e_thermal": 0.025,
    },
    "probe": {
        "gamma": 1.0,
        "t_pulse": 0.125,
        "e0": 15.0,
        "restarts": None,
        "gaussian_restarts": 4,
        "cone_opening": 0.1 * math.pi,
        "cone_n": 21,
        "n": None,
        "threshold": 0.2,
        "max_evals": 20000,
        "dt": 1e-3,
        "eval_dt": 1e-4,
    },
    "transport": {
        "states": ["B", "D", "minus"],
        "gammas": [0.0, 1.0],
        "horizon": 2.0,
        "n_points": 201,
        "pulse_b": None,
        "pulse_d": None,
        "distribution": False,
        "n": None,
        "recipe": "literal",
        "eta": 1.0,
        "gamma": 1.0,
        "t": 2.0,
        "bins": 50,
    },
}


class ConfigError(ValueError):
    pass


# --- config -------------------------------------------------------------------


def resolve_config(command: str, file_cfg: dict | None = None, overrides: dict | None = None) -> dict:
    """Defaults < config file < flags. Unknown keys raise ConfigError naming the key."""
    cfg = copy.deepcopy({**COMMON, **DEFAULTS[command]})
    for source in (file_cfg or {}, overrides or {}):
        for key, value in source.items():
            if key not in cfg:
                raise ConfigError(f"unknown config key {key!r} for {command!r}")
            cfg[key] = value
    if cfg["scale"] not in SCALES:
        raise ConfigError(f"scale must be one of {sorted(SCALES)}")
    for key in ("n", "restarts"):
        if key in cfg and cfg[key] is None:
            cfg[key] = SCALES[cfg["scale"]][key]
    if command in STOCHASTIC and cfg["seed"] is None:
        raise ConfigError(f"'seed' is required for {command!r}")
    if cfg["seed"] is not None and (not isinstance(cfg["seed"], int) or cfg["seed"] < 0):
        raise ConfigError("'seed' must be a non-negative integer")
    if not isinstance(cfg["threads"], int) or cfg["threads"] < 1:
        raise ConfigError("'threads' must be a positive integer")
    return cfg


def substream(seed: int, name: str) -> np.random.SeedSequence:
    """Named, order-independent child stream of the run seed."""
    return np.random.SeedSequence([seed, zlib.crc32(name.encode())])


def _model(cfg):
    try:
        return build_fmo_model(cfg["model"] or None)
    except ModelError as exc:
        raise ConfigError(f"model: {exc}") from exc


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def _write_rows(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])
    return path


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _load_any_pulse(path):
    d = json.loads(Path(path).read_text())
    if "best_params" in d:
        d = d["best_params"]
    return pulse_from_dict(d)


# --- subcommands --------------------------------------------------------------


def cmd_simulate(cfg, out: Path) -> list[Path]:
    """Sink yield at t_end for each dephasing rate."""
    model = _model(cfg)
    rho0 = _initial_state(cfg["initial"], model)
    rows, files = [], []
    for i, g in enumerate(cfg["gammas"]):
        n = cfg["n_points"] - 1
        steps = max(n, math.ceil(cfg["t_end"] / cfg["dt"] / n) * n)
        traj = propagate(rho0, model.with_dephasing(g), dt=cfg["t_end"] / steps, t_end=cfg["t_end"], stride=steps // n)
        rows.append((g, traj.p_sink[-1]))
        if cfg["write_trajectories"]:
            files.append(out / f"trajectory_{i}.csv")
            traj.to_csv(files[-1])
    return [_write_rows(out / "simulate.csv", ["gamma", "p_sink"], rows), *files]


def _initial_state(name, model):
    from fmo_control.analysis import exact_state

    if name == "ground":
        from fmo_control.model import ground_state

        return ground_state()
    if isinstance(name, str) and name.startswith("site") and name[4:].isdigit():
        return site_state(int(name[4:]))
    try:
        return exact_state(name, model)
    except ValueError as exc:
        raise ConfigError(f"initial: {exc}") from exc


def _orientation_set(kind, cfg, seed):
    if kind == "single":
        return None
    if kind == "dodecahedron":
        return dodecahedron_orientations()
    if kind == "cone":
        return cone_orientations(Orientation(mode="tilt"), cfg["cone_opening"], cfg["cone_n"], substream(seed, "cone-opt"))
    raise ConfigError(f"orientations must be single, dodecahedron or cone, not {kind!r}")


def run_optimization(cfg, seed, model, starts=None) -> OptimizationResult:
    if cfg["cost"] not in COSTS:
        raise ConfigError(f"cost must be one of {sorted(COSTS)}")
    t_pulse = cfg["t_pulse"] or (0.125 if cfg["cost"] == "eps_P" else 0.25)
    spec = CostSpec(
        kind=cfg["cost"],
        model=model,
        gamma=cfg["gamma"],
        t_pulse=t_pulse,
        orientations=_orientation_set(cfg["orientations"], cfg, seed),
        dt=cfg["dt"],
    )
    opts = SearchOptions(
        method=cfg["method"],
        xtol=cfg["xtol"],
        ftol=cfg["ftol"],
        max_evals=cfg["max_evals"],
        e0=cfg["e0"],
        m=cfg["m"],
        omega_window=tuple(cfg["omega_window"]) if cfg["omega_window"] else None,
    )
    return optimize_pulse(spec, cfg["restarts"], seed, cfg["e0_max"], opts, workers=cfg["threads"], starts=starts)


def cmd_optimize(cfg, out: Path) -> list[Path]:
    starts = [_load_any_pulse(cfg["start"])] if cfg["start"] else None
    res = run_optimization(cfg, cfg["seed"], _model(cfg), starts)
    log.info("best %s = %.5f after %d evaluations", cfg["cost"], res.best_cost, res.evaluations_total)
    files = [out / "result.json", out / "pulse.json", out / "envelope.csv"]
    res.save(files[0])
    save_pulse(res.best_params, files[1])
    write_envelope_csv(res.best_params, files[2])
    return files


def _sample_orientations(cfg, n, seed):
    s = cfg["sampler"]
    if s == "disorder":
        return disorder_orientations(Orientation(), cfg["eta"], n, substream(seed, "disorder"))
    if s == "random":
        return random_orientations(n, substream(seed, "random"), recipe=cfg["recipe"])
    if s == "cone":
        return cone_orientations(Orientation(mode="tilt"), cfg["cone_opening"], n, substream(seed, "cone-eval"))
    if s == "dodecahedron":
        return dodecahedron_orientations()
    raise ConfigError(f"sampler must be disorder, random, cone or dodecahedron, not {s!r}")


def _fidelity_target(cfg):
    t = cfg["fidelity_target"]
    if t == "auto":
        t = {"eps_B": "B", "eps_D": "D"}.get(cfg["cost"])
    if t is None or t == "none":
        return None
    if t == "B":
        return bright_state()
    if t == "D":
        return dark_target()
    raise ConfigError(f"fidelity_target must be auto, B, D or none, not {t!r}")


def evaluate_ensemble(pulse, cfg, seed, model, out: Path, prefix: str = "") -> dict:
    """Distribution, per-sample CSV, histogram and mean density for one pulse."""
    orients = _sample_orientations(cfg, cfg["n"], seed)
    initial = site_state(3) if cfg["cost"] == "eps_P" else None
    t_end = 0.125 if cfg["cost"] == "eps_P" and pulse.t_total == 0.125 else None
    dist = ensemble_evaluate(pulse, orients, cfg["cost"], model, cfg["gamma"], cfg["dt"], t_end, initial, cfg["bins"], cfg["threads"])
    _write_rows(
        out / f"{prefix}samples.csv",
        ["index", "theta", "phi", "mode", "cost"],
        ((str(i), o.theta, o.phi, o.mode, v) for i, (o, v) in enumerate(zip(orients, dist.values))),
    )
    dist.write_histogram_csv(out / f"{prefix}histogram.csv")
    summary = {"mean": dist.mean, "stddev": dist.stddev, "stderr": dist.stderr, "n": len(dist.values)}
    target = _fidelity_target(cfg)
    if target is not None:
        mean, modulus = ensemble_mean_density(pulse, orients, model, cfg["gamma"], None, cfg["dt"])
        write_matrix_csv(modulus, out / f"{prefix}mean_density.csv")
        summary["fidelity"] = fidelity(mean, target)
    _write_json(out / f"{prefix}summary.json", summary)
    return summary


def cmd_ensemble(cfg, out: Path) -> list[Path]:
    if not cfg["pulse"]:
        raise ConfigError("'pulse' (path to a pulse or result JSON) is required")
    if cfg["cost"] not in COSTS:
        raise ConfigError(f"cost must be one of {sorted(COSTS)}")
    summary = evaluate_ensemble(_load_any_pulse(cfg["pulse"]), cfg, cfg["seed"], _model(cfg), out)
    log.info("ensemble mean %s = %.4f", cfg["cost"], summary["mean"])
    return sorted(p for p in out.iterdir() if p.suffix in (".csv", ".json") and p.name != "manifest.json")


def cmd_orient(cfg, out: Path) -> list[Path]:
    model = _model(cfg)
    field = OrientingField(cfg["omega_l"], cfg["e0"])
    grid = SphereGrid.make(cfg["n_theta"], cfg["n_phi"])
    delta = energy_landscape(field, model, grid)
    th, ph = grid.mesh()
    f1 = _write_rows(out / "landscape.csv", ["theta", "phi", "delta"], zip(th.ravel(), ph.ravel(), delta.ravel()))
    pdf = boltzmann_orientation_pdf(field, model, cfg["pdf_temperature"], grid)
    f_pdf = _write_rows(out / "pdf.csv", ["theta", "phi", "prob", "density"], zip(th.ravel(), ph.ravel(), pdf.prob.ravel(), pdf.density.ravel()))
    rows = []
    for temp in cfg["temperatures"]:
        rows.append([temp] + [cone_population_fraction(field, model, temp, a, grid) for a in cfg["openings"]])
    f2 = _write_rows(out / "fractions.csv", ["T_K"] + [f"opening_{a:.6g}" for a in cfg["openings"]], rows)
    rotor = RotorSpec(cfg["mass"], cfg["radius"], cfg["e_thermal"])
    am = landscape_argmax(field, model, grid)
    summary = {
        "argmax_theta": am[0],
        "argmax_phi": am[1],
        "max_rabi": float(np.max(max_rabi(th, ph, field.e0, model))),
        "min_detuning": float(np.min(np.abs(model.site_energies - field.omega_l))),
        "moment_of_inertia": moment_of_inertia(rotor),
        "rotation_time_s": rotation_time(rotor),
        "pdf_mode": list(pdf.mode()),
    }
    return [f1, f_pdf, f2, _write_json(out / "summary.json", summary)]


def run_probe(cfg, seed, model, out: Path) -> dict:
    """Gaussian probe (polarization and width searched on one complex) versus a
    shaped probe optimized over a cone of orientations."""
    base = {
        **DEFAULTS["optimize"],
        "cost": "eps_P",
        "gamma": cfg["gamma"],
        "t_pulse": cfg["t_pulse"],
        "e0": cfg["e0"],
        "e0_max": cfg["e0"],
        "max_evals": cfg["max_evals"],
        "dt": cfg["dt"],
        "threads": cfg["threads"],
    }
    gauss = run_optimization({**base, "m": 0, "restarts": cfg["gaussian_restarts"]}, seed, model)
    g = gauss.best_params
    nu = sample_frequencies(7, cfg["t_pulse"], substream(seed, "probe-start"))
    start = PulseParams(g.e0, g.t0, g.sigma, np.zeros(7), np.zeros(7), nu, g.omega_l, g.dtheta, g.dphi, g.t_total)
    shaped = run_optimization(
        {**base, "orientations": "cone", "cone_opening": cfg["cone_opening"], "cone_n": cfg["cone_n"], "restarts": cfg["restarts"]},
        seed,
        model,
        starts=[start],
    )
    save_pulse(g, out / "gaussian_pulse.json")
    save_pulse(shaped.best_params, out / "shaped_pulse.json")
    write_envelope_csv(g, out / "gaussian_envelope.csv")
    write_envelope_csv(shaped.best_params, out / "shaped_envelope.csv")
    ens = {"cost": "eps_P", "gamma": cfg["gamma"], "sampler": "cone", "cone_opening": cfg["cone_opening"], "n": cfg["n"],
           "bins": 50, "dt": cfg["eval_dt"], "fidelity_target": "none", "threads": cfg["threads"]}
    sg = evaluate_ensemble(g, ens, seed, model, out, "gaussian_")
    ss = evaluate_ensemble(shaped.best_params, ens, seed, model, out, "shaped_")
    vals_g = np.loadtxt(out / "gaussian_samples.csv", delimiter=",", skiprows=1, usecols=4, ndmin=1)
    vals_s = np.loadtxt(out / "shaped_samples.csv", delimiter=",", skiprows=1, usecols=4, ndmin=1)
    summary = {
        "gaussian_single_cost": gauss.best_cost,
        "shaped_cone_cost": shaped.best_cost,
        "gaussian_mean": sg["mean"],
        "shaped_mean": ss["mean"],
        "gaussian_mass_below": float(np.mean(vals_g < cfg["threshold"])),
        "shaped_mass_below": float(np.mean(vals_s < cfg["threshold"])),
        "threshold": cfg["threshold"],
    }
    _write_json(out / "probe_summary.json", summary)
    return summary


def cmd_probe(cfg, out: Path) -> list[Path]:
    run_probe(cfg, cfg["seed"], _model(cfg), out)
    return sorted(p for p in out.iterdir() if p.suffix in (".csv", ".json") and p.name != "manifest.json")


def cmd_transport(cfg, out: Path) -> list[Path]:
    model = _model(cfg)
    curves, names = [], []
    scen = []
    for g in cfg["gammas"]:
        for s in cfg["states"]:
            scen.append((f"{s}@{g:g}", TransportScenario(s, g, cfg["horizon"], n_points=cfg["n_points"])))
        for label, key in (("prepared_B", "pulse_b"), ("prepared_D", "pulse_d")):
            if cfg[key]:
                p = _load_any_pulse(cfg[key])
                scen.append((f"{label}@{g:g}", TransportScenario("prepared", g, cfg["horizon"], pulse=p, n_points=cfg["n_points"])))
    for name, s in scen:
        traj = transport_curve(s, model)
        names.append(name)
        curves.append(traj.p_sink)
    files = [_write_rows(out / "curves.csv", ["t"] + names, zip(traj.times, *curves))]
    if cfg["distribution"]:
        if not (cfg["pulse_b"] and cfg["pulse_d"]):
            raise ConfigError("distribution needs both 'pulse_b' and 'pulse_d'")
        orients = _disorder_or_random(cfg, cfg["n"], cfg["seed"])
        db, dd = transport_distribution(
            _load_any_pulse(cfg["pulse_b"]), _load_any_pulse(cfg["pulse_d"]), orients, model, cfg["gamma"], cfg["t"],
            bins=cfg["bins"], workers=cfg["threads"],
        )
        db.write_histogram_csv(out / "histogram_B.csv")
        dd.write_histogram_csv(out / "histogram_D.csv")
        summary = {"mean_B": db.mean, "mean_D": dd.mean, "overlap_error": distribution_overlap_error(db, dd), "n": cfg["n"]}
        files += [out / "histogram_B.csv", out / "histogram_D.csv", _write_json(out / "distribution.json", summary)]
    return files


def _disorder_or_random(cfg, n, seed):
    if cfg["recipe"] == "isotropic":
        return random_orientations(n, substream(seed, "random"), recipe="isotropic")
    return disorder_orientations(Orientation(), cfg["eta"], n, substream(seed, "disorder"))


COMMANDS = {
    "simulate": cmd_simulate,
    "optimize": cmd_optimize,
    "ensemble": cmd_ensemble,
    "orient": cmd_orient,
    "probe": cmd_probe,
    "transport": cmd_transport,
}


# --- manifest -----------------------------------------------------------------


def _versions() -> dict:
    import numba

    return {
        "fmo_control": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "numba": numba.__version__,
    }


def write_manifest(out: Path, command: str, cfg: dict, files, wall_time: float) -> Path:
    digests = {}
    for f in sorted({Path(f) for f in files}, key=lambda p: str(p)):
        digests[str(f.relative_to(out))] = hashlib.sha256(f.read_bytes()).hexdigest()
    combined = hashlib.sha256(json.dumps(digests, sort_keys=True).encode()).hexdigest()
    manifest = {
        "command": command,
        "config": cfg,
        "seed": cfg.get("seed"),
        "versions": _versions(),
        "wall_time_s": wall_time,
        "outputs": digests,
        "hash": combined,
    }
    return _write_json(out / "manifest.json", manifest)


def run(command: str, cfg: dict) -> Path:
    """Execute one subcommand with a resolved config; returns the manifest path."""
    out = Path(cfg["output_dir"] or os.environ.get(OUT_ENV, "fmo_out"))
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    files = COMMANDS[command](cfg, out)
    return write_manifest(out, command, {**cfg, "output_dir": str(out)}, files, time.perf_counter() - t0)


# --- figure recipes -----------------------------------------------------------

FIGURES = {
    "fig2": "sink yield at 10 ps versus dephasing, start on site 1",
    "fig3": "optimal and Gaussian bright-state pulses, eps_B distributions at 1% and 100% disorder",
    "fig4": "optimal and Gaussian dark-state pulses, eps_D distributions at 1% and 100% disorder",
    "fig5": "efficiency curves for B, D and |-> at gamma = 0 and 1, plus pulse-prepared curves",
    "fig6": "sink-yield distributions at 2 ps after B and D preparation, with overlap error",
    "fig7": "dark-state pulses optimized over the dodecahedron and over a 0.1 pi cone",
    "fig8": "probe: Gaussian versus cone-optimized shaped probe",
    "fig12": "cone population fraction versus temperature",
    "fig13": "mean density modulus, optimal bright-state pulse (1%, 100% disorder)",
    "fig14": "mean density modulus, Gaussian bright-state pulse",
    "fig15": "mean density modulus, optimal dark-state pulse",
    "fig16": "mean density modulus, Gaussian dark-state pulse",
}


def comparison_gaussian(p: PulseParams) -> PulseParams:
    """Unshaped reference: default Gaussian at the carrier and polarization of ``p``."""
    return gaussian_pulse(e0=p.e0, omega_l=p.omega_l, dtheta=p.dtheta, dphi=p.dphi, t_total=p.t_total)


def _cached_optimization(out: Path, cfg: dict, seed: int, model) -> OptimizationResult:
    """Reuse out/result.json when it was produced by the same config."""
    key = hashlib.sha256(json.dumps({**cfg, "seed": seed}, sort_keys=True).encode()).hexdigest()
    res_path, key_path = out / "result.json", out / "result.key"
    if res_path.exists() and key_path.exists() and key_path.read_text() == key:
        return OptimizationResult.load(res_path)
    out.mkdir(parents=True, exist_ok=True)
    res = run_optimization(cfg, seed, model)
    res.save(res_path)
    save_pulse(res.best_params, out / "pulse.json")
    write_envelope_csv(res.best_params, out / "envelope.csv")
    key_path.write_text(key)
    return res


def _pump(out: Path, cost: str, base: dict, seed: int, model, threads: int) -> PulseParams:
    cfg = {**COMMON, **DEFAULTS["optimize"], "cost": cost, "restarts": base["restarts"], "threads": threads}
    cfg.pop("output_dir")
    return _cached_optimization(out / f"opt_{cost}", cfg, seed, model).best_params


def _pump_ensembles(out, cost, base, seed, model, threads, which=("optimal", "gaussian")):
    pulse = _pump(out, cost, base, seed, model, threads)
    pulses = {"optimal": pulse, "gaussian": comparison_gaussian(pulse)}
    result = {}
    for name in which:
        save_pulse(pulses[name], out / f"{name}_{cost}_pulse.json")
        for eta, tag in ((0.01, "eta1"), (1.0, "eta100")):
            ens = {"cost": cost, "gamma": 1.0, "sampler": "disorder", "eta": eta, "n": base["n"], "bins": 50,
                   "dt": 1e-4, "fidelity_target": "auto", "threads": threads}
            result[f"{name}_{tag}"] = evaluate_ensemble(pulses[name], ens, seed, model, out, f"{name}_{cost}_{tag}_")
    _write_json(out / f"{cost}_ensembles.json", result)
    return result


def reproduce(figure: str, base: dict) -> Path:
    """Run a canned recipe; ``base`` carries seed, scale, threads and output_dir."""
    if figure not in FIGURES:
        raise ConfigError(f"unknown figure {figure!r}; valid: {', '.join(FIGURES)}")
    seed = 0 if base.get("seed") is None else base["seed"]
    scale = SCALES[base.get("scale") or "ci"]
    threads = base.get("threads", 1)
    root = Path(base.get("output_dir") or os.environ.get(OUT_ENV, "fmo_out"))
    out = root / figure
    out.mkdir(parents=True, exist_ok=True)
    model = build_fmo_model()
    t0 = time.perf_counter()
    common = {"seed": seed, "scale": base.get("scale") or "ci", "threads": threads, "output_dir": str(out)}
    if figure == "fig2":
        cfg = resolve_config("simulate", {"gammas": [0.0, 0.1, 1.0, 10.0, 100.0, 1000.0], "write_trajectories": True}, common)
        files = cmd_simulate(cfg, out)
    elif figure == "fig12":
        files = cmd_orient(resolve_config("orient", {}, common), out)
    elif figure in ("fig3", "fig13", "fig14"):
        _pump_ensembles(root, "eps_B", scale, seed, model, threads)
        files = _collect(root, "eps_B", out)
    elif figure in ("fig4", "fig15", "fig16"):
        _pump_ensembles(root, "eps_D", scale, seed, model, threads)
        files = _collect(root, "eps_D", out)
    elif figure == "fig5":
        pb = _pump(root, "eps_B", scale, seed, model, threads)
        pd = _pump(root, "eps_D", scale, seed, model, threads)
        save_pulse(pb, out / "pulse_B.json")
        save_pulse(pd, out / "pulse_D.json")
        cfg = resolve_config("transport", {"pulse_b": str(out / "pulse_B.json"), "pulse_d": str(out / "pulse_D.json")}, common)
        files = cmd_transport(cfg, out)
    elif figure == "fig6":
        pb = _pump(root, "eps_B", scale, seed, model, threads)
        pd = _pump(root, "eps_D", scale, seed, model, threads)
        save_pulse(pb, out / "pulse_B.json")
        save_pulse(pd, out / "pulse_D.json")
        cfg = resolve_config(
            "transport",
            {"pulse_b": str(out / "pulse_B.json"), "pulse_d": str(out / "pulse_D.json"), "distribution": True, "states": [], "gammas": [1.0]},
            common,
        )
        files = cmd_transport(cfg, out)
    elif figure == "fig7":
        files = _fig7(root, out, scale, seed, model, threads)
    elif figure == "fig8":
        cfg = resolve_config("probe", {}, common)
        files = cmd_probe(cfg, out)
    files = [Path(f) for f in files if Path(f).parent == out]
    return write_manifest(out, f"reproduce {figure}", {"figure": figure, **common}, files, time.perf_counter() - t0)


def _collect(root: Path, cost: str, out: Path) -> list[Path]:
    import shutil

    files = []
    for f in sorted(root.glob(f"*_{cost}_*")):
        if f.is_file():
            files.append(Path(shutil.copy(f, out / f.name)))
    return files


def _fig7(root, out, scale, seed, model, threads):
    single = _pump(root, "eps_D", scale, seed, model, threads)
    base = {**COMMON, **DEFAULTS["optimize"], "cost": "eps_D", "threads": threads, "restarts": max(2, scale["restarts"] // 4)}
    base.pop("output_dir")
    dod = _cached_optimization(root / "opt_eps_D_dodecahedron", {**base, "orientations": "dodecahedron"}, seed, model).best_params
    cone = _cached_optimization(root / "opt_eps_D_cone", {**base, "orientations": "cone"}, seed, model).best_params
    summary = {}
    for name, pulse in (("single", single), ("dodecahedron", dod), ("cone", cone)):
        save_pulse(pulse, out / f"{name}_pulse.json")
        sampler = "cone" if name == "cone" else "random"
        ens = {"cost": "eps_D", "gamma": 1.0, "sampler": sampler, "recipe": "isotropic", "cone_opening": 0.1 * math.pi,
               "n": scale["n"], "bins": 50, "dt": 1e-4, "fidelity_target": "none", "threads": threads}
        summary[name] = evaluate_ensemble(pulse, ens, seed, model, out, f"{name}_")
    _write_json(out / "fig7_summary.json", summary)
    return sorted(out.glob("*.csv")) + sorted(out.glob("*.json"))


# --- argument parsing ---------------------------------------------------------


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fmo-control", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", dest="output_dir", help=f"output directory (default ${OUT_ENV} or ./fmo_out)")
        p.add_argument("--threads", type=int, help="worker processes")
        g = p.add_mutually_exclusive_group()
        g.add_argument("--ci", dest="scale", action="store_const", const="ci", help="reduced sample/restart counts")
        g.add_argument("--paper", dest="scale", action="store_const", const="paper", help="full-scale counts (hours)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key (JSON value)")
        p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")

    for name in COMMANDS:
        p = sub.add_parser(name, help=(COMMANDS[name].__doc__ or name).strip().split("\n")[0])
        common(p)
        if name in ("optimize", "ensemble"):
            p.add_argument("--cost", choices=sorted(COSTS))
        if name == "ensemble":
            p.add_argument("--pulse")
    p = sub.add_parser("reproduce", help="run a canned figure recipe")
    p.add_argument("figure", nargs="?", help="figure id; omit to list")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", dest="output_dir")
    p.add_argument("--threads", type=int, default=1)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--ci", dest="scale", action="store_const", const="ci")
    g.add_argument("--paper", dest="scale", action="store_const", const="paper")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "reproduce":
            if not args.figure:
                for k, v in FIGURES.items():
                    print(f"{k:6s} {v}")
                return 0
            path = reproduce(args.figure, vars(args))
            print(path)
            return 0
        file_cfg = json.loads(args.config.read_text()) if args.config else {}
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        flags = {k: getattr(args, k) for k in ("seed", "output_dir", "threads", "scale", "cost", "pulse") if getattr(args, k, None) is not None}
        for item in args.set:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            flags[key] = _parse_value(value)
        cfg = resolve_config(args.command, file_cfg, flags)
        if args.print_config:
            print(json.dumps(cfg, indent=2, sort_keys=True))
            return 0
        print(run(args.command, cfg))
        return 0
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (IntegrationError, EnsembleError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

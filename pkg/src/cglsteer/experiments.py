"""Experiment configuration, presets and run orchestration.

Configs are JSON.  Durations carry an ``_s`` suffix (seconds of model
time).  Every run directory holds the CSV outputs, a copy of the resolved
config and ``manifest.json`` with sha256 checksums of every output.
"""
from __future__ import annotations

import copy
import datetime as _dt
import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import (
    BlowUpError,
    CGLParams,
    ControlSchedule,
    ControlSegment,
    SolverConfig,
    resolve,
    standard_field,
    write_trajectory_csv,
)
from .saturation import (
    FrequencySet,
    check_Q_condition,
    saturation_chain,
    saturation_report,
    standard_frequency_set,
)
from .spectral import (
    GridSpec,
    SpectralField,
    TrigPolynomial,
    analyze,
    exp_multiplier,
    load_field,
    read_trig,
    save_field,
    sobolev_norm,
    write_trig,
)
from .synthesis import (
    MollifierSpec,
    SynthesisConfig,
    execute_and_refine,
    limit_probe,
    log_log_slope,
    null_control_schedule,
    phase_coupling,
    same_argument_target,
    worker_count,
    write_refinement_csv,
)

CSV_SCHEMA_VERSION = 1
KINDS = ("simulate", "verify-limit", "null-control", "phase-control", "saturation-report", "same-argument")


class ConfigError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    pass


# --- presets ----------------------------------------------------------------

_BASE_PARAMS = {"V": 0.5, "nu": 0.0, "mu": 0.5, "sigma": 1, "r1": 1.0, "r2": 0.0, "Q": "standard"}
_SYNTH_SOLVER = {"d": 1, "n_per_dim": 128, "s": 1, "dt_max_s": 1e-4, "substep_policy": "fixed", "min_substeps": 4}

PRESETS: dict[str, dict] = {
    "constant-decay": {
        "kind": "simulate",
        "seed": 0,
        "params": {"V": 0.0, "nu": 0.0, "mu": 0.5, "sigma": 1, "r1": 1.0, "r2": 0.0, "Q": "standard"},
        "solver": {"d": 1, "n_per_dim": 16, "s": 1, "dt_max_s": 1e-3},
        "initial": {"terms": [[0, 1.0, 0.0]]},
        "experiment": {"T_s": 1.0, "n_samples": 21, "oracle": "constant"},
    },
    "verify-limit": {
        "kind": "verify-limit",
        "seed": 0,
        "params": dict(_BASE_PARAMS),
        "solver": dict(_SYNTH_SOLVER),
        "initial": {"terms": [[0, 1.0, 0.0], [1, 0.0, 0.2]]},
        "experiment": {
            "nus": [0.0, 1.0],
            "deltas_s": [0.1, 0.05, 0.025, 0.0125, 0.00625],
            "cases": [
                {"name": "constant-shift", "phi": [], "u": [0.5, 0.0, 0.0]},
                {"name": "one-minus-cos", "phi": [[0, 1.0, 0.0], [1, -1.0, 0.0]], "u": [0.0, 0.0, 0.0]},
            ],
        },
    },
    "null-control": {
        "kind": "null-control",
        "seed": 0,
        "params": dict(_BASE_PARAMS),
        "solver": {"d": 1, "n_per_dim": 64, "s": 1, "dt_max_s": 1e-4, "substep_policy": "fixed", "min_substeps": 4},
        "synthesis": {"delta0_s": 0.02},
        "initial": {"terms": [[0, 1.0, 0.0], [1, 0.3, 0.0]]},
        "experiment": {"T_s": 0.5, "eps_factor": 0.1, "r1": 1.0, "r2_values": [0.0, -1.0, 3.0]},
    },
    "phase-control-l0": {
        "kind": "phase-control",
        "seed": 0,
        "params": dict(_BASE_PARAMS),
        "solver": dict(_SYNTH_SOLVER),
        "synthesis": {"delta0_s": 0.01, "error_budget": 0.05, "time_cap_s": 0.2, "max_refinements": 6},
        "initial": {"terms": [[0, 1.0, 0.0], [1, 0.0, 0.2]]},
        "target": {"terms": [[0, 0.4, 0.0], [1, 0.0, 0.2]]},
        "experiment": {"nus": [0.0, 1.0], "chain_levels": 1},
    },
    "phase-control-l1": {
        "kind": "phase-control",
        "seed": 0,
        "params": dict(_BASE_PARAMS),
        "solver": dict(_SYNTH_SOLVER),
        "synthesis": {
            "delta0_s": 0.02,
            "delta_shrink": 0.5,
            "inner_ratio": 0.05,
            "error_budget": 0.1,
            "time_cap_s": 0.5,
            "max_refinements": 6,
        },
        "initial": {"terms": [[0, 1.0, 0.0], [1, 0.0, 0.2]]},
        "target": {"terms": [[2, 0.3, 0.0]]},
        "experiment": {"nus": [0.0], "chain_levels": 1},
    },
    "saturation-report": {
        "kind": "saturation-report",
        "seed": 0,
        "params": {"Q": "standard"},
        "solver": {"d": 2},
        "experiment": {"frequency_set": "standard", "sigma": 1, "levels": 2},
    },
    "same-argument": {
        "kind": "same-argument",
        "seed": 0,
        "params": dict(_BASE_PARAMS),
        "solver": {"d": 1, "n_per_dim": 64, "s": 1, "dt_max_s": 1e-4, "substep_policy": "fixed", "min_substeps": 4},
        "synthesis": {"delta0_s": 0.01, "error_budget": 0.01, "time_cap_s": 0.5},
        "initial": {"terms": [[0, 1.0, 0.0], [1, 0.3, 0.0]]},
        "target": {"log_ratio": [[1, 0.3, 0.0]]},
        "experiment": {"eta": 0.1, "degree_cap": 4, "chain_levels": 1},
    },
}


def preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
    return copy.deepcopy(PRESETS[name])


# --- config parsing ---------------------------------------------------------

@dataclass
class ExperimentConfig:
    kind: str
    raw: dict
    params: CGLParams
    solver: SolverConfig
    synthesis: SynthesisConfig
    seed: int
    experiment: dict
    base_dir: Path

    def initial_state(self) -> SpectralField:
        return _state_from_spec(self.raw.get("initial"), self.solver.grid, self.base_dir, "initial")

    def target_poly(self, key: str = "target") -> TrigPolynomial:
        spec = self.raw.get(key)
        if spec is None:
            raise ConfigError(f"missing '{key}' section")
        return _trig_from_spec(spec, self.solver.grid.d, self.base_dir, key)


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def _trig_from_terms(terms, d: int, where: str) -> TrigPolynomial:
    _require(isinstance(terms, list), f"{where}: terms must be a list")
    out = {}
    for row in terms:
        _require(isinstance(row, list) and len(row) == d + 2, f"{where}: each term needs {d} integers plus cos and sin")
        k = tuple(row[:d])
        _require(all(isinstance(c, int) for c in k), f"{where}: wavevector entries must be integers")
        _require(all(isinstance(c, (int, float)) for c in row[d:]), f"{where}: coefficients must be numbers")
        a, b = out.get(k, (0.0, 0.0))
        out[k] = (a + float(row[d]), b + float(row[d + 1]))
    return TrigPolynomial(d, out)


def _trig_from_spec(spec, d: int, base: Path, where: str) -> TrigPolynomial:
    _require(isinstance(spec, dict), f"{where} must be an object")
    if "terms" in spec:
        return _trig_from_terms(spec["terms"], d, where)
    if "file" in spec:
        path = base / spec["file"]
        _require(path.is_file(), f"{where}: file {path} does not exist")
        try:
            return read_trig(path, d)
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    raise ConfigError(f"{where}: expected 'terms' or 'file'")


def _state_from_spec(spec, grid: GridSpec, base: Path, where: str) -> SpectralField:
    _require(spec is not None, f"missing '{where}' section")
    if isinstance(spec, dict) and "field_file" in spec:
        path = base / spec["field_file"]
        _require(path.is_file(), f"{where}: file {path} does not exist")
        f = load_field(path)
        _require(f.grid.d == grid.d and f.grid.n_per_dim == grid.n_per_dim, f"{where}: field grid does not match solver grid")
        return SpectralField(grid, f.coeffs, f.real)
    poly = _trig_from_spec(spec, grid.d, base, where)
    return analyze(grid, poly.evaluate(grid).astype(complex))


def _q_from_spec(spec, d: int):
    if spec in (None, "standard"):
        return standard_field(d)
    _require(isinstance(spec, list) and spec, "params.Q must be 'standard' or a list of term lists")
    return tuple(_trig_from_terms(t, d, "params.Q") for t in spec)


def _num(section: dict, key: str, default, where: str, kind=float):
    val = section.get(key, default)
    if kind is int:
        _require(isinstance(val, int) and not isinstance(val, bool), f"{where}.{key} must be an integer")
    elif kind is float:
        _require(isinstance(val, (int, float)) and not isinstance(val, bool), f"{where}.{key} must be a number")
        val = float(val)
        _require(math.isfinite(val), f"{where}.{key} must be finite")
    return val


def parse_config(raw: dict, base_dir: Path | str = ".", seed: int | None = None) -> ExperimentConfig:
    """Validate a config dict and build the typed objects; raises ConfigError."""
    _require(isinstance(raw, dict), "config must be a JSON object")
    raw = copy.deepcopy(raw)
    kind = raw.get("kind")
    _require(kind in KINDS, f"kind must be one of {KINDS}, got {kind!r}")
    if seed is not None:
        raw["seed"] = seed
    raw.setdefault("seed", 0)
    _require(isinstance(raw["seed"], int) and not isinstance(raw["seed"], bool), "seed must be an integer")
    for sect in ("params", "solver", "synthesis", "experiment"):
        raw.setdefault(sect, {})
        _require(isinstance(raw[sect], dict), f"{sect} must be an object")
    base_dir = Path(base_dir)
    sv = raw["solver"]
    d = _num(sv, "d", 1, "solver", int)
    n = _num(sv, "n_per_dim", GridSpec.default(d).n_per_dim if d >= 1 else 64, "solver", int)
    pv = raw["params"]
    try:
        grid = GridSpec(d, n)
        params = CGLParams(
            V=_num(pv, "V", 0.0, "params"),
            nu=_num(pv, "nu", 0.0, "params"),
            mu=_num(pv, "mu", 0.0, "params"),
            sigma=_num(pv, "sigma", 1, "params", int),
            r1=_num(pv, "r1", 1.0, "params"),
            r2=_num(pv, "r2", 0.0, "params"),
            Q=_q_from_spec(pv.get("Q"), d),
        )
        thr = sv.get("blowup_threshold")
        _require(thr is None or isinstance(thr, (int, float)), "solver.blowup_threshold must be a number or null")
        solver = SolverConfig(
            grid=grid,
            s=_num(sv, "s", max(1, d // 2 + 1), "solver", int),
            dt_max=_num(sv, "dt_max_s", 1e-2, "solver"),
            blowup_threshold=thr,
            substep_policy=sv.get("substep_policy", "control-scaled"),
            min_substeps=_num(sv, "min_substeps", 1, "solver", int),
            disable_nonlinearity=bool(sv.get("disable_nonlinearity", False)),
        )
        yv = raw["synthesis"]
        synth = SynthesisConfig(
            delta0=_num(yv, "delta0_s", 0.02, "synthesis"),
            delta_shrink=_num(yv, "delta_shrink", 0.5, "synthesis"),
            max_refinements=_num(yv, "max_refinements", 6, "synthesis", int),
            error_budget=_num(yv, "error_budget", 0.05, "synthesis"),
            budget_split=yv.get("budget_split", "equal-per-segment"),
            inner_ratio=_num(yv, "inner_ratio", 0.05, "synthesis"),
            exponent_cap=_num(yv, "exponent_cap", 30.0, "synthesis"),
            time_cap=_num(yv, "time_cap_s", 0.5, "synthesis"),
        )
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    cfg = ExperimentConfig(kind, raw, params, solver, synth, raw["seed"], raw["experiment"], base_dir)
    _validate_kind(cfg)
    return cfg


def _validate_kind(cfg: ExperimentConfig):
    ex = cfg.experiment
    if cfg.kind != "saturation-report":
        cfg.initial_state()
    if cfg.kind == "simulate":
        _require(_num(ex, "T_s", 1.0, "experiment") >= 0, "experiment.T_s must be >= 0")
        sched = ex.get("schedule", [])
        _require(isinstance(sched, list), "experiment.schedule must be a list of [duration_s, u...] rows")
        for row in sched:
            _require(isinstance(row, list) and len(row) == 1 + cfg.params.q, "schedule rows need duration plus one entry per Q direction")
    elif cfg.kind == "verify-limit":
        ds = ex.get("deltas_s")
        _require(isinstance(ds, list) and len(ds) >= 2, "experiment.deltas_s needs at least two values")
        _require(all(b < a for a, b in zip(ds, ds[1:])), "experiment.deltas_s must be strictly decreasing")
        _require(isinstance(ex.get("cases"), list) and ex["cases"], "experiment.cases must be a non-empty list")
        for case in ex["cases"]:
            _require(len(case.get("u", [])) == cfg.params.q, "each case needs u with one entry per Q direction")
            _trig_from_terms(case.get("phi", []), cfg.params.d, "case.phi")
    elif cfg.kind == "null-control":
        _require(_num(ex, "T_s", 0.5, "experiment") > 0, "experiment.T_s must be positive")
        _require(_num(ex, "eps_factor", 0.1, "experiment") > 0, "experiment.eps_factor must be positive")
    elif cfg.kind == "phase-control":
        cfg.target_poly()
    elif cfg.kind == "saturation-report":
        _frequency_set(cfg)
    elif cfg.kind == "same-argument":
        tg = cfg.raw.get("target")
        _require(isinstance(tg, dict), "missing 'target' section")
        if "log_ratio" in tg:
            _trig_from_terms(tg["log_ratio"], cfg.params.d, "target.log_ratio")
        else:
            _state_from_spec(tg, cfg.solver.grid, cfg.base_dir, "target")


def _frequency_set(cfg: ExperimentConfig) -> FrequencySet:
    fs = cfg.experiment.get("frequency_set", "standard")
    d = cfg.solver.grid.d
    if fs == "standard":
        return standard_frequency_set(d)
    _require(isinstance(fs, list) and fs, "experiment.frequency_set must be 'standard' or a list of vectors")
    try:
        return FrequencySet(d, tuple(tuple(v) for v in fs))
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path=None, preset_name=None, seed=None) -> ExperimentConfig:
    if (path is None) == (preset_name is None):
        raise ConfigError("give exactly one of --config or --preset")
    if preset_name is not None:
        return parse_config(preset(preset_name), ".", seed)
    path = Path(path)
    _require(path.is_file(), f"config file {path} does not exist")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return parse_config(raw, path.parent, seed)


# --- experiment runners -----------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(v) for v in r) + "\n")


def _run_simulate(cfg: ExperimentConfig, out: Path) -> dict:
    ex = cfg.experiment
    T = float(ex.get("T_s", 1.0))
    psi0 = cfg.initial_state()
    segs = [(float(r[0]), tuple(float(v) for v in r[1:])) for r in ex.get("schedule", [])]
    sched = ControlSchedule(tuple(ControlSegment(dur, u) for dur, u in segs), cfg.params.r1, cfg.params.r2)
    n_samples = int(ex.get("n_samples", 11))
    times = [T * j / (n_samples - 1) for j in range(n_samples)] if n_samples > 1 else [T]
    try:
        traj = resolve(psi0, sched, T, cfg.params, cfg.solver, sample_times=times)
    except BlowUpError as exc:
        if exc.trajectory is not None:
            write_trajectory_csv(out / "trajectory.csv", exc.trajectory)
        raise NumericalFailure(str(exc)) from exc
    write_trajectory_csv(out / "trajectory.csv", traj)
    header = ["t", "mean_re", "mean_im", "modulus", "phase"]
    oracle = ex.get("oracle") == "constant"
    if oracle:
        header += ["modulus_exact", "phase_exact"]
    rows = []
    rho0 = abs(psi0.coeffs.flat[0])
    ph0 = math.atan2(psi0.coeffs.flat[0].imag, psi0.coeffs.flat[0].real)
    sig, mu = cfg.params.sigma, cfg.params.mu
    prev = ph0
    for t in sorted(traj.samples):
        c = complex(traj.samples[t].coeffs.flat[0])
        ph = math.atan2(c.imag, c.real)
        ph = prev + (ph - prev + math.pi) % (2 * math.pi) - math.pi
        prev = ph
        row = [t, c.real, c.imag, abs(c), ph]
        if oracle:
            g = 1 + 2 * sig * rho0 ** (2 * sig) * t
            row += [rho0 * g ** (-1 / (2 * sig)), ph0 - mu / (2 * sig) * math.log(g)]
        rows.append(row)
    _write_csv(out / "modes.csv", header, rows)
    if ex.get("save_final", False):
        save_field(out / "final.cglf", traj.final)
    summary = {"T": T, "final_hs_norm": traj.hs_norm[-1]}
    if oracle:
        summary["max_modulus_error"] = max(abs(r[3] - r[5]) for r in rows)
        summary["max_phase_error"] = max(abs(r[4] - r[6]) for r in rows)
    return summary


def _run_verify_limit(cfg: ExperimentConfig, out: Path) -> dict:
    ex = cfg.experiment
    psi0 = cfg.initial_state()
    deltas = [float(x) for x in ex["deltas_s"]]
    rows, summ = [], []
    for nu in ex.get("nus", [cfg.params.nu]):
        r1, r2 = phase_coupling(float(nu))
        p = replace(cfg.params, nu=float(nu), r1=r1, r2=r2)
        for case in ex["cases"]:
            phi = _trig_from_terms(case.get("phi", []), p.d, "case.phi")
            table = limit_probe(psi0, phi, case["u"], p, cfg.solver, deltas, branch=int(case.get("branch", 1)))
            for r in table:
                rows.append([case["name"], float(nu), r.delta, r.error, r.rel_error, r.blowup])
            errs = [r.error for r in table]
            summ.append([
                case["name"], float(nu), log_log_slope(table), errs[-1] / errs[0],
                all(b < a for a, b in zip(errs, errs[1:])), errs[-1] < errs[0],
            ])
    _write_csv(out / "limit.csv", ["case", "nu", "delta", "error", "rel_error", "blowup"], rows)
    _write_csv(out / "limit_summary.csv", ["case", "nu", "slope", "ratio_last_first", "monotone", "last_below_first"], summ)
    return {"cases": len(summ), "max_ratio": max(s[3] for s in summ), "slopes": [s[2] for s in summ]}


def _run_null_control(cfg: ExperimentConfig, out: Path) -> dict:
    ex = cfg.experiment
    psi0 = cfg.initial_state()
    T = float(ex.get("T_s", 0.5))
    norm0 = sobolev_norm(psi0, cfg.solver.s)
    eps = float(ex.get("eps_factor", 0.1)) * norm0
    r1 = float(ex.get("r1", cfg.params.r1))
    rows, hist = [], []
    failed = []
    for r2 in ex.get("r2_values", [cfg.params.r2]):
        res = null_control_schedule(psi0, eps, T, r1, float(r2), cfg.params, cfg.solver, cfg.synthesis)
        rows.append([float(r2), r1, res.c, res.delta if res.delta is not None else "", T, eps, res.final_norm, res.converged])
        for d_, fn in res.history:
            hist.append([float(r2), d_, fn])
        if not res.converged:
            failed.append(r2)
    _write_csv(out / "null_control.csv", ["r2", "r1", "c", "delta", "T", "eps", "final_hs_norm", "converged"], rows)
    _write_csv(out / "null_control_history.csv", ["r2", "delta", "final_hs_norm"], hist)
    summary = {"eps": eps, "worst_final_over_eps": max(r[6] / eps for r in rows)}
    if failed:
        raise NumericalFailure(f"null control not reached for r2 in {failed}", summary)
    return summary


def _chain_for(cfg: ExperimentConfig):
    levels = int(cfg.experiment.get("chain_levels", 1))
    return saturation_chain(standard_frequency_set(cfg.params.d).subspace(), levels)


def _run_phase_control(cfg: ExperimentConfig, out: Path) -> dict:
    psi0 = cfg.initial_state()
    theta = cfg.target_poly()
    chain = _chain_for(cfg)
    rows = []
    failed = []
    for nu in cfg.experiment.get("nus", [cfg.params.nu]):
        nu = float(nu)
        res = execute_and_refine(theta, psi0, chain, nu, cfg.params, cfg.solver, cfg.synthesis, seed=cfg.seed)
        tag = _nu_tag(nu)
        write_refinement_csv(out / f"refinement_{tag}.csv", res)
        (out / f"plan_{tag}.json").write_text(res.plan.to_json() + "\n")
        rows.append([nu, res.plan.level, " ".join(repr(d) for d in res.deltas), res.T, res.error, res.rel_error,
                     res.node_budget, res.converged])
        if not res.converged:
            failed.append(nu)
    _write_csv(out / "phase_control.csv",
               ["nu", "level", "deltas", "T", "error", "rel_error", "node_budget", "converged"], rows)
    summary = {"worst_rel_error": max(r[5] for r in rows), "max_T": max(r[3] for r in rows)}
    if failed:
        raise NumericalFailure(f"phase control not converged for nu in {failed}", summary)
    return summary


def _nu_tag(nu: float) -> str:
    return "nu" + repr(nu).replace("-", "m").replace(".", "p")


def _run_saturation(cfg: ExperimentConfig, out: Path) -> dict:
    I = _frequency_set(cfg)
    sigma = int(cfg.experiment.get("sigma", 1))
    levels = int(cfg.experiment.get("levels", 2))
    text = saturation_report(I, sigma, levels, Q=cfg.params.Q)
    (out / "saturation.csv").write_text(text)
    chain = saturation_chain(I.subspace(), levels)
    verdict = "saturating,true" in text
    return {"saturating": verdict, "Q_condition": check_Q_condition(cfg.params.Q, I),
            "dims": [h.dim for h in chain.levels]}


def _run_same_argument(cfg: ExperimentConfig, out: Path) -> dict:
    ex = cfg.experiment
    psi0 = cfg.initial_state()
    tg = cfg.raw["target"]
    if "log_ratio" in tg:
        lr = _trig_from_terms(tg["log_ratio"], cfg.params.d, "target.log_ratio")
        psi1 = exp_multiplier(lr, 1.0, psi0)
    else:
        psi1 = _state_from_spec(tg, cfg.solver.grid, cfg.base_dir, "target")
    spec = MollifierSpec(float(ex.get("eta", 0.1)))
    theta = same_argument_target(psi0, psi1, spec, int(ex.get("degree_cap", 4)))
    write_trig(out / "target.trig", theta)
    res = execute_and_refine(theta, psi0, _chain_for(cfg), 0.0, cfg.params, cfg.solver, cfg.synthesis, seed=cfg.seed)
    write_refinement_csv(out / "refinement.csv", res)
    (out / "plan.json").write_text(res.plan.to_json() + "\n")
    d0 = sobolev_norm(psi0 - psi1, 0)
    d1 = sobolev_norm(res.final - psi1, 0)
    _write_csv(out / "same_argument.csv", ["initial_l2_distance", "final_l2_distance", "ratio", "T", "converged"],
               [[d0, d1, d1 / d0 if d0 else 0.0, res.T, res.converged]])
    return {"ratio": d1 / d0 if d0 else 0.0, "T": res.T}


_RUNNERS = {
    "simulate": _run_simulate,
    "verify-limit": _run_verify_limit,
    "null-control": _run_null_control,
    "phase-control": _run_phase_control,
    "saturation-report": _run_saturation,
    "same-argument": _run_same_argument,
}


# --- run directory ----------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _atomic_write(path: Path, text: str):
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


@dataclass
class RunResult:
    status: int
    out_dir: Path
    summary: dict
    message: str = ""


def run(cfg: ExperimentConfig, out_dir) -> RunResult:
    """Execute one experiment into out_dir; status 0 on success, 3 on numerical failure."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.raw, indent=2, sort_keys=True) + "\n")
    started = _now()
    t0 = time.perf_counter()
    status, message, summary = 0, "ok", {}
    try:
        summary = _RUNNERS[cfg.kind](cfg, out)
    except NumericalFailure as exc:
        status, message = 3, str(exc.args[0])
        if len(exc.args) > 1:
            summary = exc.args[1]
    except BlowUpError as exc:
        status, message = 3, str(exc)
    wall = time.perf_counter() - t0
    outputs = {
        p.name: _sha256(p)
        for p in sorted(out.iterdir())
        if p.is_file() and p.name != "manifest.json" and not p.name.endswith(".tmp")
    }
    manifest = {
        "artifact_version": __version__,
        "csv_schema_version": CSV_SCHEMA_VERSION,
        "kind": cfg.kind,
        "seed": cfg.seed,
        "config": cfg.raw,
        "started": started,
        "finished": _now(),
        "wall_time_s": wall,
        "threads": worker_count(),
        "status": status,
        "message": message,
        "summary": _jsonable(summary),
        "outputs": outputs,
    }
    _atomic_write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return RunResult(status, out, summary, message)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


# --- plot data --------------------------------------------------------------

def _read_csv(path: Path):
    lines = path.read_text().splitlines()
    if not lines:
        return [], []
    header = lines[0].split(",")
    return header, [ln.split(",") for ln in lines[1:] if ln]


def _write_columns(path: Path, comment: str, rows):
    with open(path, "w") as fh:
        fh.write(f"# {comment}\n")
        for r in rows:
            fh.write(" ".join(str(v) for v in r) + "\n")


def emit_plotdata(run_dir) -> list[Path]:
    """Whitespace-separated column files under run_dir/plotdata."""
    run_dir = Path(run_dir)
    man = run_dir / "manifest.json"
    if not man.is_file():
        raise ConfigError(f"{run_dir} is not a completed run directory")
    kind = json.loads(man.read_text())["kind"]
    pd = run_dir / "plotdata"
    pd.mkdir(exist_ok=True)
    written = []
    traj = run_dir / "trajectory.csv"
    if traj.is_file():
        header, rows = _read_csv(traj)
        for col in ("hs_norm", "l2_norm", "max_modulus"):
            j = header.index(col)
            p = pd / f"t_vs_{col}.dat"
            _write_columns(p, f"t {col}", [(r[0], r[j]) for r in rows])
            written.append(p)
    if kind == "verify-limit":
        header, rows = _read_csv(run_dir / "limit.csv")
        groups: dict = {}
        for r in rows:
            groups.setdefault((r[0], r[1]), []).append(r)
        for (case, nu), rs in groups.items():
            p = pd / f"limit_{case}_{_nu_tag(float(nu))}.dat"
            _write_columns(p, "delta error", [(r[2], r[3]) for r in rs])
            written.append(p)
    if kind in ("phase-control", "same-argument"):
        for ref in sorted(run_dir.glob("refinement*.csv")):
            header, rows = _read_csv(ref)
            top = {}
            for r in rows:
                top[(r[0], r[3], r[4])] = r[2]  # last level listed is the top level
            p = pd / (ref.stem + ".dat")
            _write_columns(p, "delta_top error", [(dl, err) for (it, T, err), dl in top.items()])
            written.append(p)
    return written

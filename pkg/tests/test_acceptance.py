"""Acceptance gate A1-A11.

Each test records a single PASS/FAIL line (printed in the terminal summary)
and then asserts.  Tolerances are pinned as module constants.
"""
import csv
import itertools
import math
import time

import numpy as np

from cglsteer.dynamics import (
    CGLParams,
    ControlSchedule,
    ControlSegment,
    SolverConfig,
    picard_reference,
    resolve,
    stability_probe,
    standard_field,
)
from cglsteer.experiments import parse_config, preset, run
from cglsteer.saturation import (
    FrequencySet,
    decompose,
    frequency_space,
    grow,
    is_saturating,
    standard_frequency_set,
)
from cglsteer.spectral import GridSpec, SpectralField, analyze, sobolev_norm

A1_REL_TOL, A1_RUNTIME = 1e-10, 1.0
A2_TOL, A2_ORDER = 1e-6, (1.7, 2.3)
A3_TOL, A3_PSI_BOUND, A3_T = 1e-6, 0.5, 0.05
A4_RATIO, A4_SLOPE, A4_RUNTIME = 0.05, (0.15, 0.6), 60.0
A4_DELTAS = [0.1, 0.05, 0.025, 0.0125, 0.00625]
A5_EPS_FACTOR, A5_T, A5_RUNTIME = 0.1, 0.5, 60.0
A6_REL, A6_T = 0.05, 0.2
A7_REL, A7_T = 0.1, 0.5
A8_BASIS_TOL, A8_RESIDUAL, A8_TARGETS = 1e-10, 1e-8, 50
A9_FACTOR = 10.0
A10_FACTOR = 0.1


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_A1_exact_linear_flow(acceptance):
    t0 = time.perf_counter()
    worst = 0.0
    cases = 0
    for d, n in ((1, 16), (2, 16)):
        g = GridSpec(d, n)
        ks = [k for k in itertools.product(range(-4, 5), repeat=d) if sum(c * c for c in k) <= 16]
        for V, nu in itertools.product((0.0, 1.0), (0.0, 1.0, -2.0)):
            p = CGLParams(V=V, nu=nu, Q=standard_field(d))
            cfg = SolverConfig(grid=g, s=d // 2 + 1, dt_max=0.25, disable_nonlinearity=True)
            for k in ks:
                out = resolve(SpectralField.mode(g, k), ControlSchedule(), 1.0, p, cfg).final
                ksq = sum(c * c for c in k)
                exact = SpectralField.mode(g, k, np.exp(V - complex(1, nu) * ksq))
                worst = max(worst, sobolev_norm(out - exact, cfg.s) / sobolev_norm(exact, cfg.s))
                cases += 1
    elapsed = time.perf_counter() - t0
    ok = worst < A1_REL_TOL and elapsed < A1_RUNTIME
    acceptance("A1", ok, f"{cases} modes, max rel H^s error {worst:.2e} (< {A1_REL_TOL:g}), {elapsed:.2f}s (< {A1_RUNTIME:g}s)")
    assert ok


def _a2_state(dt):
    g = GridSpec(1, 32)
    x = g.points[0]
    psi0 = analyze(g, 1 + 0.3 * np.cos(x) + 0.2j * np.sin(2 * x))
    p = CGLParams(V=0.5, nu=1.0, mu=0.5)
    cfg = SolverConfig(grid=g, dt_max=dt, substep_policy="fixed")
    return resolve(psi0, ControlSchedule.constant(0.5, (0.3, 0.5, -0.2)), 0.5, p, cfg).final


def test_A2_nonlinear_oracle_and_order(acceptance):
    mu = 0.5
    g = GridSpec(1, 16)
    worst_mod = worst_ph = 0.0
    for rho0, sigma in itertools.product((0.5, 1.0, 2.0), (1, 2)):
        p = CGLParams(V=0.0, mu=mu, sigma=sigma)
        fac = 1 + 2 * sigma * rho0 ** (2 * sigma) * 1.0
        rho_exact = rho0 * fac ** (-1 / (2 * sigma))
        ph_exact = -(mu / (2 * sigma)) * math.log(fac)
        for dt in (0.1, 0.01, 0.001):
            cfg = SolverConfig(grid=g, dt_max=dt)
            c = resolve(SpectralField.constant(g, rho0), ControlSchedule(), 1.0, p, cfg).final.coeff((0,))
            worst_mod = max(worst_mod, abs(abs(c) - rho_exact))
            worst_ph = max(worst_ph, abs(math.atan2(c.imag, c.real) - ph_exact))
    states = [_a2_state(dt) for dt in (1 / 16, 1 / 32, 1 / 64, 1 / 128)]
    diffs = [sobolev_norm(a - b, 1) for a, b in zip(states, states[1:])]
    orders = [math.log2(a / b) for a, b in zip(diffs, diffs[1:])]
    ok = worst_mod < A2_TOL and worst_ph < A2_TOL and all(A2_ORDER[0] <= o <= A2_ORDER[1] for o in orders)
    acceptance("A2", ok, f"modulus err {worst_mod:.1e}, phase err {worst_ph:.1e} (< {A2_TOL:g}); "
                         f"splitting orders {', '.join(f'{o:.3f}' for o in orders)} (in {list(A2_ORDER)})")
    assert ok


def test_A3_picard_cross_check(acceptance):
    g = GridSpec(1, 32)
    x = g.points[0]
    psi0 = analyze(g, 0.3 + 0.2 * np.cos(x) + 0.1j * np.sin(2 * x))
    norm0 = sobolev_norm(psi0, 1)
    p = CGLParams(V=0.5, nu=1.0, mu=0.5, sigma=1)
    cfg = SolverConfig(grid=g, dt_max=1e-3)
    sched = ControlSchedule.constant(A3_T, (0.3, -0.2, 0.1))
    dist = sobolev_norm(resolve(psi0, sched, A3_T, p, cfg).final - picard_reference(psi0, sched, A3_T, p, cfg), 1)
    ok = norm0 <= A3_PSI_BOUND and dist < A3_TOL
    acceptance("A3", ok, f"||psi0||_1 = {norm0:.3f}, resolve vs Picard H^1 distance {dist:.2e} (< {A3_TOL:g})")
    assert ok


def _run_preset(name, out, seed=0):
    res = run(parse_config(preset(name), seed=seed), out)
    return res


def test_A4_conjugated_limit(acceptance, tmp_path):
    cfg = preset("verify-limit")
    assert cfg["experiment"]["deltas_s"] == A4_DELTAS
    t0 = time.perf_counter()
    res = run(parse_config(cfg), tmp_path / "a4")
    elapsed = time.perf_counter() - t0
    rows = read_rows(tmp_path / "a4" / "limit.csv")
    details, ok = [], res.status == 0 and elapsed < A4_RUNTIME
    for s in read_rows(tmp_path / "a4" / "limit_summary.csv"):
        errs = [float(r["error"]) for r in rows if r["case"] == s["case"] and r["nu"] == s["nu"]]
        strict = all(b < a for a, b in zip(errs, errs[1:]))
        ratio, slope = float(s["ratio_last_first"]), float(s["slope"])
        case_ok = strict and ratio < A4_RATIO and A4_SLOPE[0] <= slope <= A4_SLOPE[1]
        ok = ok and case_ok
        details.append(f"{s['case']} nu={float(s['nu']):g}: decreasing={strict} ratio={ratio:.3f} slope={slope:.3f}")
    acceptance("A4", ok, "; ".join(details) + f" (need ratio < {A4_RATIO}, slope in {list(A4_SLOPE)}), {elapsed:.1f}s")
    assert ok


def test_A5_null_control(acceptance, tmp_path):
    t0 = time.perf_counter()
    res = _run_preset("null-control", tmp_path / "a5")
    elapsed = time.perf_counter() - t0
    rows = read_rows(tmp_path / "a5" / "null_control.csv")
    cfg = parse_config(preset("null-control"))
    psi0 = cfg.initial_state()
    eps = A5_EPS_FACTOR * sobolev_norm(psi0, cfg.solver.s)
    finals = {float(r["r2"]): float(r["final_hs_norm"]) for r in rows}
    ok = (res.status == 0 and set(finals) == {0.0, -1.0, 3.0} and all(v < eps for v in finals.values())
          and float(rows[0]["T"]) == A5_T and elapsed < A5_RUNTIME)
    acceptance("A5", ok, ", ".join(f"r2={k:g}: ||psi(T)||={v:.4f}" for k, v in finals.items())
               + f" (eps = {eps:.4f}), {elapsed:.1f}s")
    assert ok


def test_A6_phase_control_level0(acceptance, tmp_path):
    res = _run_preset("phase-control-l0", tmp_path / "a6")
    rows = read_rows(tmp_path / "a6" / "phase_control.csv")
    ok = res.status == 0 and {float(r["nu"]) for r in rows} == {0.0, 1.0}
    ok = ok and all(int(r["level"]) == 0 and float(r["rel_error"]) < A6_REL and float(r["T"]) < A6_T
                    and r["converged"] == "1" for r in rows)
    acceptance("A6", ok, ", ".join(f"nu={float(r['nu']):g}: rel err {float(r['rel_error']):.4f} T={float(r['T']):.4f}"
                                   for r in rows) + f" (need < {A6_REL}, T < {A6_T})")
    assert ok


def test_A7_phase_control_level1(acceptance, tmp_path):
    res = _run_preset("phase-control-l1", tmp_path / "a7")
    rows = read_rows(tmp_path / "a7" / "phase_control.csv")
    ok = res.status == 0 and all(int(r["level"]) == 1 and float(r["rel_error"]) < A7_REL and float(r["T"]) < A7_T
                                 and r["converged"] == "1" for r in rows) and rows
    acceptance("A7", bool(ok), ", ".join(f"nu={float(r['nu']):g}: rel err {float(r['rel_error']):.4f} "
                                         f"T={float(r['T']):.4f} deltas=({r['deltas']})" for r in rows)
               + f" (need < {A7_REL}, T < {A7_T})")
    assert ok


def test_A8_saturation_algebra(acceptance):
    H0 = standard_frequency_set(1).subspace()
    H1 = grow(H0)
    full = frequency_space(1, 2)
    basis_ok = H1.dim == 5 and H1.includes(full, A8_BASIS_TOL) and full.includes(H1, A8_BASIS_TOL)
    sat_ok = all(is_saturating(standard_frequency_set(d), s) for d in (1, 2, 3) for s in (1, 2))
    neg_ok = not is_saturating(FrequencySet(2, ((1, 0), (0, 1))), 1)
    rng = np.random.default_rng(2024)
    worst = 0.0
    for i in range(A8_TARGETS):
        theta = H1.combine(rng.standard_normal(H1.dim))
        worst = max(worst, decompose(theta, H0, seed=i).residual)
    ok = basis_ok and sat_ok and neg_ok and worst < A8_RESIDUAL
    acceptance("A8", ok, f"dim H_1 = {H1.dim} matches degree-2 space: {basis_ok}; K saturating d=1..3, sigma=1,2: {sat_ok}; "
                         f"{{e1,e2}} rejected: {neg_ok}; worst residual over {A8_TARGETS} targets {worst:.1e} (< {A8_RESIDUAL:g})")
    assert ok


def test_A9_stability(acceptance):
    g = GridSpec(1, 64)
    x = g.points[0]
    psi0 = analyze(g, 1 + 0.3 * np.cos(x) + 0.1j * np.sin(x))
    p = CGLParams(V=0.5, nu=1.0, mu=0.5)
    cfg = SolverConfig(grid=g, dt_max=1e-3)
    u = ControlSchedule((ControlSegment(0.2, (0.5, 0.3, -0.2)), ControlSegment(0.3, (-0.4, 0.0, 0.6))))
    ratios = []
    for eps in (1e-2, 1e-3, 1e-4, 1e-5):
        dpsi = analyze(g, eps * (np.sin(2 * x) + 0.5j * np.cos(3 * x)))
        ratios.append(stability_probe(psi0, dpsi, u, eps * np.array([1.0, -0.5, 0.3]), 0.5, p, cfg))
    spread = max(ratios) / min(ratios)
    ok = min(ratios) > 0 and spread < A9_FACTOR
    acceptance("A9", ok, "ratios " + ", ".join(f"{r:.4f}" for r in ratios) + f" over 3 decades, spread {spread:.3f} (< {A9_FACTOR:g})")
    assert ok


def test_A10_same_argument(acceptance, tmp_path):
    res = _run_preset("same-argument", tmp_path / "a10")
    row = read_rows(tmp_path / "a10" / "same_argument.csv")[0]
    ratio = float(row["ratio"])
    ok = res.status == 0 and ratio < A10_FACTOR
    acceptance("A10", ok, f"||psi(T)-psi1||/||psi0-psi1|| = {ratio:.4f} (< {A10_FACTOR:g}), T={float(row['T']):.4f}")
    assert ok


def test_A11_determinism(acceptance, tmp_path):
    same = []
    for name in ("verify-limit", "phase-control-l1"):
        _run_preset(name, tmp_path / f"{name}-1", seed=11)
        _run_preset(name, tmp_path / f"{name}-2", seed=11)
        for f in sorted((tmp_path / f"{name}-1").glob("*.csv")):
            same.append((name, f.name, f.read_bytes() == (tmp_path / f"{name}-2" / f.name).read_bytes()))
    ok = bool(same) and all(s for *_, s in same)
    acceptance("A11", ok, f"{sum(s for *_, s in same)}/{len(same)} CSV files byte-identical across reruns")
    assert ok

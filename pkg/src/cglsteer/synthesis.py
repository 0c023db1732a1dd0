"""Control synthesis: null control, recursive phase control, and the
conjugated small-time limit.

All multiplier targets are handled in "coupling space": a plan for the
polynomial Phi approximately maps psi0 to exp((r1 + i r2) Phi) psi0.  For
phase control (r1 + i r2) = (1 - i nu)/(1 + nu^2), so reaching
exp((1 - i nu) theta) psi0 means planning for Phi = (1 + nu^2) theta.
"""
from __future__ import annotations

import cmath
import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import (
    BlowUpError,
    CGLParams,
    ControlSchedule,
    ControlSegment,
    SolverConfig,
    control_potential,
    resolve,
)
from .saturation import (
    SaturationChain,
    decompose,
)
from .spectral import (
    GridSpec,
    SpectralField,
    TrigPolynomial,
    analyze,
    b_operator,
    exp_multiplier,
    sobolev_norm,
    synthesize,
)

__all__ = [
    "ConjugationCoeffs",
    "SynthesisConfig",
    "MollifierSpec",
    "PlanNode",
    "PhasePlan",
    "ExecutionResult",
    "LimitRow",
    "SynthesisError",
    "UnsupportedControlError",
    "TimeCapError",
    "ArgumentMismatchError",
    "conjugation_coeffs",
    "phase_coupling",
    "potential_coordinates",
    "limit_probe",
    "log_log_slope",
    "NullControlResult",
    "phase_target",
    "write_refinement_csv",
    "null_control_schedule",
    "phase_plan",
    "execute_and_refine",
    "same_argument_target",
    "smooth_cutoff",
    "worker_count",
]


class SynthesisError(RuntimeError):
    pass


class UnsupportedControlError(SynthesisError):
    pass


class TimeCapError(SynthesisError):
    pass


class ArgumentMismatchError(ValueError):
    pass


def worker_count() -> int:
    """Thread cap for concurrent refinement candidates (CGL_STEER_THREADS)."""
    raw = os.environ.get("CGL_STEER_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass(frozen=True)
class ConjugationCoeffs:
    a: float
    b: float

    @property
    def value(self) -> complex:
        return complex(self.a, self.b)


def conjugation_coeffs(r1: float, r2: float, nu: float, branch: int = 1) -> ConjugationCoeffs:
    """Principal root of (a + ib)^2 = (r1 + i r2)/(1 + i nu); branch=-1 flips it."""
    if branch not in (1, -1):
        raise ValueError("branch must be +1 or -1")
    w = branch * cmath.sqrt(complex(r1, r2) / complex(1.0, nu))
    return ConjugationCoeffs(w.real, w.imag)


def phase_coupling(nu: float) -> tuple[float, float]:
    """(r1, r2) for which a + ib = r1 + i r2 = (1 - i nu)/(1 + nu^2)."""
    den = 1.0 + nu * nu
    return 1.0 / den, -nu / den


@dataclass(frozen=True)
class SynthesisConfig:
    delta0: float = 0.02
    delta_shrink: float = 0.5
    max_refinements: int = 6
    error_budget: float = 0.05
    budget_split: str = "equal-per-segment"
    inner_ratio: float = 0.05
    exponent_cap: float = 30.0
    time_cap: float = 0.5

    def __post_init__(self):
        if not self.delta0 > 0:
            raise ValueError("delta0 must be positive")
        if not 0 < self.delta_shrink < 1:
            raise ValueError("delta_shrink must lie in (0, 1)")
        if self.max_refinements < 0:
            raise ValueError("max_refinements must be >= 0")
        if not self.error_budget > 0:
            raise ValueError("error_budget must be positive")
        if self.budget_split != "equal-per-segment":
            raise ValueError(f"unknown budget split {self.budget_split!r}")
        if not 0 < self.inner_ratio <= 1:
            raise ValueError("inner_ratio must lie in (0, 1]")
        if not self.exponent_cap > 0 or not self.time_cap > 0:
            raise ValueError("exponent_cap and time_cap must be positive")

    def initial_deltas(self, level: int) -> tuple[float, ...]:
        """delta per level 0..level; the top level starts at delta0."""
        return tuple(self.delta0 * self.inner_ratio ** (level - j) for j in range(level + 1))


# --- level-0 building block -------------------------------------------------

def potential_coordinates(phi: TrigPolynomial, params: CGLParams, tol: float = 1e-10) -> tuple[float, ...]:
    """u with <u, Q> = phi (least squares; raises if phi is outside span Q)."""
    basis = list(params.Q)
    if phi.is_zero():
        return (0.0,) * params.q
    pts = _probe_points(phi, basis)
    cols = np.array([[q.evaluate_at(x) for q in basis] for x in pts])
    rhs = np.array([phi.evaluate_at(x) for x in pts])
    u, *_ = np.linalg.lstsq(cols, rhs, rcond=None)
    out = TrigPolynomial.zero(phi.d)
    for uj, q in zip(u, basis):
        out = out + float(uj) * q
    if (out - phi).coefficient_norm() > tol * max(1.0, phi.coefficient_norm()):
        raise SynthesisError("target is not in span(Q)")
    return tuple(float(x) for x in u)


def _probe_points(phi, basis):
    deg = max([phi.degree] + [q.degree for q in basis])
    n = 1
    while n < 2 * deg + 2:
        n *= 2
    grid = GridSpec(phi.d, max(4, n))
    return [tuple(float(p[idx]) for p in grid.points) for idx in np.ndindex(grid.shape)]


# --- limit probe ------------------------------------------------------------

@dataclass
class LimitRow:
    delta: float
    error: float
    rel_error: float
    blowup: bool


def limit_probe(psi0: SpectralField, phi: TrigPolynomial, u, params: CGLParams,
                config: SolverConfig, deltas, branch: int = 1) -> list[LimitRow]:
    """Distance between exp(z phi) R_delta(exp(-z phi) psi0, u/delta) and
    exp((r1 + i r2)(B(phi) + <u, Q>)) psi0, z = (a + ib) delta^(-1/2).

    A blow-up at one delta is recorded in its row (error = inf).
    """
    deltas = [float(x) for x in deltas]
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ValueError("deltas must be strictly decreasing")
    if phi.grid_min(config.grid) < -1e-12:
        raise ValueError("phi must be nonnegative on the grid")
    u = tuple(float(x) for x in u)
    ab = conjugation_coeffs(params.r1, params.r2, params.nu, branch).value
    pot = control_potential(u, params)
    target = exp_multiplier(b_operator(phi) + pot, params.coupling, psi0)
    tnorm = sobolev_norm(target, config.s)
    rows = []
    for delta in deltas:
        z = ab / math.sqrt(delta)
        start = exp_multiplier(phi, -z, psi0)
        sched = ControlSchedule.constant(delta, tuple(x / delta for x in u), params.r1, params.r2)
        try:
            end = resolve(start, sched, delta, params, config).final
        except BlowUpError:
            rows.append(LimitRow(delta, math.inf, math.inf, True))
            continue
        out = exp_multiplier(phi, z, end)
        err = sobolev_norm(out - target, config.s)
        rows.append(LimitRow(delta, err, err / tnorm if tnorm else err, False))
    return rows


def log_log_slope(rows) -> float:
    """Least-squares slope of log(error) against log(delta)."""
    pts = [(math.log(r.delta), math.log(r.error)) for r in rows if r.error > 0 and math.isfinite(r.error)]
    if len(pts) < 2:
        return math.nan
    x, y = np.array(pts).T
    return float(np.polyfit(x, y, 1)[0])


# --- null control -----------------------------------------------------------

@dataclass
class NullControlResult:
    schedule: ControlSchedule
    c: float
    delta: float | None
    final_norm: float
    converged: bool
    history: list[tuple[float, float]] = field(default_factory=list)


def null_control_schedule(psi0: SpectralField, eps: float, T: float, r1: float, r2: float,
                          params: CGLParams, config: SolverConfig,
                          synth: SynthesisConfig | None = None) -> NullControlResult:
    """Kick the state down with a short large constant control, then let it evolve.

    c is chosen with exp(c r1) ||psi0||_s = 0.4 eps; delta starts at
    synth.delta0 (capped at T/2) and shrinks until ||psi(T)||_s < eps.
    """
    synth = synth or SynthesisConfig()
    if not eps > 0:
        raise ValueError("eps must be positive")
    if not T > 0:
        raise ValueError("T must be positive")
    if r1 == 0:
        raise UnsupportedControlError("r1 = 0: the amplitude cannot be reduced by a constant kick")
    s = config.s
    norm0 = sobolev_norm(psi0, s)
    if norm0 == 0:
        return NullControlResult(ControlSchedule((), r1, r2), 0.0, None, 0.0, True)
    p = replace(params, r1=r1, r2=r2)
    if eps > 2 * norm0:
        c = 0.0
        sched = ControlSchedule((ControlSegment(T, (0.0,) * p.q),), r1, r2)
        fin = sobolev_norm(resolve(psi0, sched, T, p, config).final, s)
        return NullControlResult(sched, 0.0, None, fin, fin < eps, [(T, fin)])
    c = math.log(0.4 * eps / norm0) / r1
    uc = potential_coordinates(TrigPolynomial.constant(p.d, c), p)
    delta = min(synth.delta0, T / 2)
    history = []
    best = None
    for _ in range(synth.max_refinements + 1):
        sched = ControlSchedule(
            (ControlSegment(delta, tuple(x / delta for x in uc)), ControlSegment(T - delta, (0.0,) * p.q)),
            r1, r2,
        )
        try:
            fin = sobolev_norm(resolve(psi0, sched, T, p, config).final, s)
        except BlowUpError:
            fin = math.inf
        history.append((delta, fin))
        if best is None or fin < best.final_norm:
            best = NullControlResult(sched, c, delta, fin, fin < eps, history)
        if fin < eps:
            break
        delta *= synth.delta_shrink
    best.history = history
    return best


# --- phase plans ------------------------------------------------------------

@dataclass
class PlanNode:
    """One node of a phase plan.

    kind "constant": a level-0 segment (tau, u/tau) realizing exp(c Phi).
    kind "branch": conjugated free segment; children are the down plan,
    the free segment, and the up plan.  kind "sum": children realize the
    B-parts in order, then the level-0 remainder.
    """
    kind: str
    level: int
    target: TrigPolynomial
    delta: float
    children: list["PlanNode"] = field(default_factory=list)
    u: tuple[float, ...] = ()
    shift: float = 0.0
    exponent: float = 0.0

    def segments(self, q: int) -> list[ControlSegment]:
        if self.kind == "constant":
            if self.target.is_zero():
                return []
            return [ControlSegment(self.delta, tuple(x / self.delta for x in self.u))]
        if self.kind == "free":
            return [ControlSegment(self.delta, (0.0,) * q)]
        out = []
        for ch in self.children:
            out += ch.segments(q)
        return out

    def max_exponent(self) -> float:
        return max([self.exponent] + [c.max_exponent() for c in self.children])

    def to_dict(self) -> dict:
        out = {
            "type": self.kind,
            "level": self.level,
            "delta": self.delta,
            "target": _trig_json(self.target),
        }
        if self.kind == "constant":
            out["u"] = list(self.u)
        if self.kind == "branch":
            out["shift"] = self.shift
            out["exponent"] = self.exponent
        if self.children:
            out["children"] = [c.to_dict() for c in self.children]
        return out


def _trig_json(p: TrigPolynomial) -> list:
    return [[list(k), a, b] for k, (a, b) in sorted(p.terms.items())]


@dataclass
class PhasePlan:
    theta: TrigPolynomial
    level: int
    tree: PlanNode | None
    flattened: ControlSchedule
    deltas: tuple[float, ...]
    nu: float

    @property
    def T(self) -> float:
        return self.flattened.total_duration

    def to_json(self) -> str:
        return json.dumps(
            {
                "theta": _trig_json(self.theta),
                "level": self.level,
                "nu": self.nu,
                "deltas": list(self.deltas),
                "T": self.T,
                "coupling": [self.flattened.r1, self.flattened.r2],
                "tree": None if self.tree is None else self.tree.to_dict(),
                "segments": [[s.duration, list(s.u)] for s in self.flattened.segments],
            },
            indent=2,
            sort_keys=True,
        )


class _Planner:
    def __init__(self, chain: SaturationChain, params: CGLParams, grid: GridSpec, seed: int):
        self.chain = chain
        self.params = params
        self.grid = grid
        self.seed = seed
        self._decomp: dict = {}

    def decomposition(self, phi: TrigPolynomial, level: int):
        key = (level, tuple(sorted(phi.terms.items())))
        if key not in self._decomp:
            self._decomp[key] = decompose(phi, self.chain.levels[level - 1], seed=self.seed)
        return self._decomp[key]

    def level_of(self, phi: TrigPolynomial) -> int:
        lv = self.chain.level_of(phi, tol=1e-9)
        if lv is None:
            raise SynthesisError(f"target is outside H_{self.chain.depth}")
        return lv

    def build(self, phi: TrigPolynomial, level: int, deltas) -> PlanNode:
        if level == 0:
            u = potential_coordinates(phi, self.params)
            return PlanNode("constant", 0, phi, deltas[0], u=u)
        dec = self.decomposition(phi, level)
        coupling = self.params.coupling
        children = []
        dl = deltas[level]
        for part in dec.parts:
            shift = -part.grid_min(self.grid) + 1e-6
            tilde = part + TrigPolynomial.constant(phi.d, shift)
            scale = 1.0 / math.sqrt(dl)
            down_t = tilde * (-scale)
            up_t = tilde * scale
            sub_down = self.build(down_t, self.level_of(down_t), deltas)
            sub_up = self.build(up_t, self.level_of(up_t), deltas)
            free = PlanNode("free", level, TrigPolynomial.zero(phi.d), dl)
            expo = abs(coupling.real) * scale * tilde.sup_norm(self.grid)
            children.append(
                PlanNode("branch", level, b_operator(tilde), dl, [sub_down, free, sub_up],
                         shift=shift, exponent=expo)
            )
        rest = dec.theta0
        children.append(self.build(rest, self.level_of(rest), deltas))
        return PlanNode("sum", level, phi, dl, children)


def phase_plan(theta: TrigPolynomial, psi0: SpectralField | None, chain: SaturationChain, nu: float,
               params: CGLParams, synth: SynthesisConfig | None = None,
               deltas=None, seed: int = 0) -> PhasePlan:
    """Piecewise-constant schedule steering psi0 approximately to exp((1 - i nu) theta) psi0."""
    synth = synth or SynthesisConfig()
    r1, r2 = phase_coupling(nu)
    p = replace(params, nu=nu, r1=r1, r2=r2)
    grid = psi0.grid if psi0 is not None else GridSpec.default(theta.d)
    if theta.is_zero():
        return PhasePlan(theta, 0, None, ControlSchedule((), r1, r2), (), nu)
    phi = theta * (1.0 + nu * nu)
    planner = _Planner(chain, p, grid, seed)
    level = planner.level_of(phi)
    if deltas is None:
        deltas = synth.initial_deltas(level)
    deltas = tuple(float(x) for x in deltas)
    if len(deltas) != level + 1:
        raise ValueError(f"need {level + 1} deltas, got {len(deltas)}")
    tree = planner.build(phi, level, deltas)
    sched = ControlSchedule(tuple(tree.segments(p.q)), r1, r2)
    return PhasePlan(theta, level, tree, sched, deltas, nu)


@dataclass
class ExecutionResult:
    final: SpectralField
    error: float
    rel_error: float
    deltas: tuple[float, ...]
    T: float
    converged: bool
    plan: PhasePlan
    history: list[dict] = field(default_factory=list)
    node_budget: float = 0.0

    def __iter__(self):
        return iter((self.final, self.error, self.deltas))


def phase_target(psi0: SpectralField, theta: TrigPolynomial, nu: float) -> SpectralField:
    return exp_multiplier(theta, complex(1.0, -nu), psi0)


def _run_plan(plan: PhasePlan, psi0, params, config, target, tnorm):
    p = replace(params, nu=plan.nu, r1=plan.flattened.r1, r2=plan.flattened.r2)
    try:
        fin = resolve(psi0, plan.flattened, plan.T, p, config).final
    except BlowUpError as exc:
        return None, math.inf, exc
    err = sobolev_norm(fin - target, config.s)
    return fin, err, None


def execute_and_refine(theta: TrigPolynomial, psi0: SpectralField, chain: SaturationChain, nu: float,
                       params: CGLParams, config: SolverConfig,
                       synth: SynthesisConfig | None = None, seed: int = 0) -> ExecutionResult:
    """Build, run and refine a phase plan until the relative H^s error to
    exp((1 - i nu) theta) psi0 is within synth.error_budget.

    Each refinement tries shrinking one level's delta (deepest level first),
    discarding candidates that break the exponent or time cap; the first
    candidate meeting the budget wins, otherwise the lowest error is kept.
    """
    synth = synth or SynthesisConfig()
    target = phase_target(psi0, theta, nu)
    tnorm = sobolev_norm(target, config.s) or 1.0
    plan = phase_plan(theta, psi0, chain, nu, params, synth, seed=seed)
    if plan.tree is None:
        return ExecutionResult(psi0, 0.0, 0.0, (), 0.0, True, plan, [], synth.error_budget)
    n_nodes = len(plan.tree.children) if plan.tree.kind == "sum" else 1
    node_budget = synth.error_budget / n_nodes

    def admissible(pl):
        return pl.T < synth.time_cap and pl.tree.max_exponent() <= synth.exponent_cap

    fin, err, exc = _run_plan(plan, psi0, params, config, target, tnorm)
    history = [_hist_row(0, plan, err, tnorm, exc)]
    best = (plan, fin, err)
    cur = plan
    workers = worker_count()
    for it in range(1, synth.max_refinements + 1):
        if best[2] / tnorm <= synth.error_budget and admissible(best[0]):
            break
        cands = []
        for lv in range(cur.level + 1):
            ds = list(cur.deltas)
            ds[lv] *= synth.delta_shrink
            cand = phase_plan(theta, psi0, chain, nu, params, synth, deltas=ds, seed=seed)
            if admissible(cand):
                cands.append(cand)
        if not cands:
            break
        if workers > 1 and len(cands) > 1:
            with ThreadPoolExecutor(max_workers=workers) as ex:
                outs = list(ex.map(lambda pl: _run_plan(pl, psi0, params, config, target, tnorm), cands))
        else:
            outs = [_run_plan(pl, psi0, params, config, target, tnorm) for pl in cands]
        chosen = None
        for pl, (f, e, x) in zip(cands, outs):
            history.append(_hist_row(it, pl, e, tnorm, x))
            if chosen is None and e / tnorm <= synth.error_budget:
                chosen = (pl, f, e)
        if chosen is None:
            j = min(range(len(cands)), key=lambda i: outs[i][1])
            chosen = (cands[j], outs[j][0], outs[j][1])
        cur = chosen[0]
        if chosen[2] < best[2]:
            best = chosen
    plan, fin, err = best
    rel = err / tnorm
    ok = rel <= synth.error_budget and plan.T < synth.time_cap
    if fin is None:
        fin = psi0
    return ExecutionResult(fin, err, rel, plan.deltas, plan.T, ok, plan, history, node_budget)


def _hist_row(it, plan, err, tnorm, exc) -> dict:
    return {
        "refinement": it,
        "deltas": list(plan.deltas),
        "T": plan.T,
        "error": err,
        "rel_error": err / tnorm,
        "blowup": exc is not None,
    }


def write_refinement_csv(path, result: ExecutionResult) -> None:
    """One row per (candidate, level): refinement, level, delta, T, error, rel_error, blowup."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["refinement", "level", "delta", "T", "error", "rel_error", "blowup"])
        for row in result.history:
            for lv, d in enumerate(row["deltas"]):
                w.writerow([row["refinement"], lv, repr(d), repr(row["T"]), repr(row["error"]),
                            repr(row["rel_error"]), int(row["blowup"])])


# --- same-argument targets --------------------------------------------------

@dataclass(frozen=True)
class MollifierSpec:
    eta: float = 0.1
    zero_tol: float = 1e-8
    floor: float = 1e-12

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")


def smooth_cutoff(dist: np.ndarray, eta: float) -> np.ndarray:
    """C-infinity step: 0 for dist <= eta, 1 for dist >= 2 eta."""
    t = np.clip((np.asarray(dist, dtype=float) - eta) / eta, 0.0, 1.0)

    def f(x):
        out = np.zeros_like(x)
        pos = x > 0
        out[pos] = np.exp(-1.0 / x[pos])
        return out

    a, b = f(t), f(1.0 - t)
    return a / (a + b)


def _torus_distance(grid: GridSpec, mask: np.ndarray) -> np.ndarray:
    pts = np.stack([p.ravel() for p in grid.points], axis=1)
    zeros = pts[mask.ravel()]
    if len(zeros) == 0:
        return np.full(grid.shape, np.inf)
    diff = np.abs(pts[:, None, :] - zeros[None, :, :])
    diff = np.minimum(diff, 2 * np.pi - diff)
    return np.sqrt((diff**2).sum(-1)).min(axis=1).reshape(grid.shape)


def same_argument_target(psi0: SpectralField, psi1: SpectralField, spec: MollifierSpec,
                         degree_cap: int, arg_tol: float = 1e-6) -> TrigPolynomial:
    """Real phase target phi with exp(phi) psi0 ~ psi1 for states sharing their argument."""
    if psi0.grid != psi1.grid:
        raise ValueError("states live on different grids")
    grid = psi0.grid
    v0, v1 = synthesize(psi0), synthesize(psi1)
    m0, m1 = np.abs(v0), np.abs(v1)
    scale = max(m0.max(), m1.max(), 1.0)
    zero = np.minimum(m0, m1) <= spec.zero_tol * scale
    rho = smooth_cutoff(_torus_distance(grid, zero), spec.eta)
    supp = rho > 0
    if np.any(supp & ((m0 < spec.floor) | (m1 < spec.floor))):
        raise ArgumentMismatchError("modulus below floor inside the cutoff support")
    mism = np.abs(np.angle(v1[supp] * np.conj(v0[supp])))
    if mism.size and mism.max() > arg_tol:
        raise ArgumentMismatchError(f"arguments differ by up to {mism.max():.3e}")
    logr = np.zeros(grid.shape)
    logr[supp] = np.log(m1[supp] / m0[supp])
    phi = TrigPolynomial.from_field(analyze(grid, rho * logr, real=True), degree_cap)
    # drop round-off so level detection in the chain sees the true support
    cut = 1e-13 * max(1.0, float(np.abs(logr).max()))
    terms = {k: (a if abs(a) > cut else 0.0, b if abs(b) > cut else 0.0) for k, (a, b) in phi.terms.items()}
    return TrigPolynomial(phi.d, terms)

"""Time integration of the bilinearly controlled CGL equation.

    d/dt psi = V psi + (1 + i nu) Lap psi - (1 + i mu) |psi|^(2 sigma) psi
               + (r1 + i r2) <u(t), Q(x)> psi

Every sub-flow is integrated exactly: the linear part is a Fourier
multiplier, and the pointwise part (nonlinearity plus control potential) is a
Bernoulli equation in the modulus with a closed-form solution.  A step is the
symmetric composition linear(h/2), pointwise(h), linear(h/2).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .spectral import (
    GridSpec,
    SpectralField,
    TrigPolynomial,
    exp_multiplier,
    sobolev_norm,
    synthesize,
)

__all__ = [
    "CGLParams",
    "SolverConfig",
    "ControlSegment",
    "ControlSchedule",
    "Trajectory",
    "BlowUpError",
    "NonContractionError",
    "standard_field",
    "control_potential",
    "linear_propagator",
    "nonlinear_flow",
    "control_flow",
    "step",
    "resolve",
    "picard_reference",
    "stability_probe",
    "write_trajectory_csv",
    "smallest_sobolev_index",
]


class BlowUpError(RuntimeError):
    """H^s norm exceeded the blow-up threshold.

    This is threshold exceedance on a finite grid, not proven divergence.
    """

    def __init__(self, t: float, norm: float, threshold: float, trajectory=None, segment=None):
        super().__init__(
            f"H^s norm {norm:.3e} exceeded threshold {threshold:.3e} at t={t:.6g}"
        )
        self.t = t
        self.norm = norm
        self.threshold = threshold
        self.trajectory = trajectory
        self.segment = segment


class NonContractionError(RuntimeError):
    pass


def smallest_sobolev_index(d: int) -> int:
    """Smallest integer strictly greater than d/2."""
    return d // 2 + 1


def standard_field(d: int) -> tuple[TrigPolynomial, ...]:
    """Q = (1, sin<k,x>, cos<k,x> for k in K) with K = {e_1..e_{d-1}, (1,..,1)}."""
    ks = [tuple(1 if i == j else 0 for i in range(d)) for j in range(d - 1)]
    ks.append((1,) * d)
    q = [TrigPolynomial.constant(d, 1.0)]
    for k in ks:
        q.append(TrigPolynomial.sin(k))
        q.append(TrigPolynomial.cos(k))
    return tuple(q)


@dataclass(frozen=True)
class CGLParams:
    V: float = 0.0
    nu: float = 0.0
    mu: float = 0.0
    sigma: int = 1
    r1: float = 1.0
    r2: float = 0.0
    Q: tuple = field(default_factory=lambda: standard_field(1))

    def __post_init__(self):
        if self.V < 0:
            raise ValueError(f"V must be >= 0, got {self.V}")
        if int(self.sigma) != self.sigma or self.sigma < 1:
            raise ValueError(f"sigma must be a positive integer, got {self.sigma}")
        if len(self.Q) < 1:
            raise ValueError("at least one control direction is required")
        object.__setattr__(self, "Q", tuple(self.Q))
        d = self.Q[0].d
        if any(q.d != d for q in self.Q):
            raise ValueError("control directions have inconsistent dimensions")

    @property
    def q(self) -> int:
        return len(self.Q)

    @property
    def d(self) -> int:
        return self.Q[0].d

    @property
    def coupling(self) -> complex:
        return complex(self.r1, self.r2)


@dataclass(frozen=True)
class SolverConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    s: int = 1
    dt_max: float = 1e-2
    blowup_threshold: float | None = None
    substep_policy: str = "control-scaled"
    min_substeps: int = 1
    # test hook: drop -(1+i mu)|psi|^{2 sigma} psi entirely
    disable_nonlinearity: bool = False

    def __post_init__(self):
        sd = smallest_sobolev_index(self.grid.d)
        if self.s < sd:
            raise ValueError(f"Sobolev index s={self.s} below s_d={sd} for d={self.grid.d}")
        if self.dt_max <= 0:
            raise ValueError("dt_max must be positive")
        if self.blowup_threshold is not None and self.blowup_threshold <= 0:
            raise ValueError("blowup_threshold must be positive")
        if self.substep_policy not in ("fixed", "control-scaled"):
            raise ValueError(f"unknown substep policy {self.substep_policy!r}")
        if self.min_substeps < 1:
            raise ValueError("min_substeps must be >= 1")


@dataclass(frozen=True)
class ControlSegment:
    duration: float
    u: tuple[float, ...]

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError(f"segment duration must be positive, got {self.duration}")
        u = tuple(float(x) for x in self.u)
        if not all(math.isfinite(x) for x in u):
            raise ValueError("control amplitudes must be finite")
        object.__setattr__(self, "u", u)


@dataclass(frozen=True)
class ControlSchedule:
    segments: tuple[ControlSegment, ...] = ()
    r1: float = 1.0
    r2: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))

    @property
    def total_duration(self) -> float:
        return math.fsum(s.duration for s in self.segments)

    @classmethod
    def constant(cls, duration: float, u, r1=1.0, r2=0.0) -> "ControlSchedule":
        return cls((ControlSegment(duration, tuple(u)),), r1, r2)

    def __add__(self, other: "ControlSchedule") -> "ControlSchedule":
        if (self.r1, self.r2) != (other.r1, other.r2):
            raise ValueError("cannot concatenate schedules with different couplings")
        return ControlSchedule(self.segments + other.segments, self.r1, self.r2)

    def with_coupling(self, r1: float, r2: float) -> "ControlSchedule":
        """Same dynamics expressed with coupling (r1, r2).

        Only possible when (r1 + i r2) is a real multiple of the current
        coupling; controls are rescaled by that factor.
        """
        old, new = complex(self.r1, self.r2), complex(r1, r2)
        if new == 0:
            raise ValueError("target coupling must be nonzero")
        lam = old / new
        if abs(lam.imag) > 1e-12 * abs(lam):
            raise ValueError("couplings are not real multiples of each other")
        lam = lam.real
        segs = tuple(ControlSegment(s.duration, tuple(lam * x for x in s.u)) for s in self.segments)
        return ControlSchedule(segs, r1, r2)

    def u_l2_norm(self) -> float:
        return math.sqrt(math.fsum(s.duration * sum(x * x for x in s.u) for s in self.segments))


def _params_for(schedule: ControlSchedule, params: CGLParams) -> CGLParams:
    if (schedule.r1, schedule.r2) == (params.r1, params.r2):
        return params
    return replace(params, r1=schedule.r1, r2=schedule.r2)


def control_potential(u, params: CGLParams) -> TrigPolynomial:
    """<u, Q> as a trig polynomial."""
    u = tuple(u)
    if len(u) != params.q:
        raise ValueError(f"control has {len(u)} components, Q has {params.q}")
    out = TrigPolynomial.zero(params.d)
    for uj, qj in zip(u, params.Q):
        if uj:
            out = out + uj * qj
    return out


# --- exact sub-flows --------------------------------------------------------

def _linear_symbol(grid: GridSpec, params: CGLParams, t: float) -> np.ndarray:
    return np.exp((params.V - complex(1.0, params.nu) * grid.ksq) * t)


def linear_propagator(psi: SpectralField, t: float, params: CGLParams) -> SpectralField:
    """Exact flow of d/dt psi = V psi + (1 + i nu) Lap psi."""
    if t < 0:
        raise ValueError("linear propagator is only defined forward in time")
    if t == 0:
        return SpectralField(psi.grid, psi.coeffs.copy(), psi.real)
    return SpectralField(psi.grid, psi.coeffs * _linear_symbol(psi.grid, params, t), psi.real and params.nu == 0)


def _log_phi1(x: np.ndarray) -> np.ndarray:
    """log((exp(x) - 1) / x), stable for all real x."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < 1e-6
    big = x > 50.0
    mid = ~small & ~big
    out[small] = x[small] / 2
    out[big] = x[big] - np.log(x[big])
    xm = x[mid]
    out[mid] = np.log(np.expm1(xm) / xm)
    return out


def _pointwise_flow(vals: np.ndarray, rate: np.ndarray | complex, t: float, params: CGLParams,
                    nonlinear: bool) -> np.ndarray:
    """Exact solution at time t of d/dt psi = (rate - (1+i mu)|psi|^{2 sigma}) psi, pointwise.

    With alpha = Re(rate) the modulus obeys rho' = alpha rho - rho^{2 sigma + 1},
    whose solution is rho0 e^{alpha t} (1 + E)^{-1/(2 sigma)} where
    E = rho0^{2 sigma} (e^{2 sigma alpha t} - 1) / alpha.  The phase gains
    Im(rate) t - mu/(2 sigma) log(1 + E).
    """
    rate = np.asarray(rate, dtype=np.complex128)
    if not nonlinear:
        return vals * np.exp(rate * t)
    two_s = 2 * params.sigma
    alpha = np.broadcast_to(rate.real, vals.shape)
    beta = np.broadcast_to(rate.imag, vals.shape)
    rho2 = vals.real**2 + vals.imag**2
    with np.errstate(divide="ignore"):
        log_p = params.sigma * np.log(rho2)
    log_e = log_p + math.log(two_s * t) + _log_phi1(two_s * alpha * t)
    log1p_e = np.logaddexp(0.0, log_e)
    expo = alpha * t - log1p_e / two_s + 1j * (beta * t - params.mu * log1p_e / two_s)
    return vals * np.exp(expo)


def _dealias_increment(base: np.ndarray, incr_vals: np.ndarray, grid: GridSpec) -> np.ndarray:
    """base coefficients plus the dealiased transform of a grid increment."""
    inc = np.fft.fftn(incr_vals) / grid.size
    return base + np.where(grid.dealias_mask, inc, 0)


def nonlinear_flow(psi: SpectralField, t: float, params: CGLParams) -> SpectralField:
    """Exact pointwise flow of d/dt psi = -(1 + i mu)|psi|^{2 sigma} psi.

    The change it induces is truncated to the dealiased band; modes of psi
    itself are left alone.
    """
    if t < 0:
        raise ValueError("nonlinear flow is only integrated forward in time")
    if t == 0:
        return SpectralField(psi.grid, psi.coeffs.copy(), psi.real)
    vals = synthesize(psi)
    new = _pointwise_flow(vals, 0.0, t, params, nonlinear=True)
    coeffs = _dealias_increment(psi.coeffs, new - vals, psi.grid)
    return SpectralField(psi.grid, coeffs, psi.real and params.mu == 0)


def control_flow(psi: SpectralField, u, t: float, params: CGLParams) -> SpectralField:
    """Multiply by exp((r1 + i r2) <u, Q(x)> t) on the grid."""
    if t < 0:
        raise ValueError("control flow is only integrated forward in time")
    pot = control_potential(u, params)
    if t == 0 or pot.is_zero():
        return SpectralField(psi.grid, psi.coeffs.copy(), psi.real)
    return exp_multiplier(pot, params.coupling * t, psi)


class _Integrator:
    """Strang stepping with cached symbols and potentials for one grid/params pair."""

    def __init__(self, params: CGLParams, config: SolverConfig):
        self.params = params
        self.config = config
        self.grid = config.grid
        if params.d != self.grid.d:
            raise ValueError(f"Q is {params.d}-dimensional but grid has d={self.grid.d}")
        self._q_vals = np.stack([q.evaluate(self.grid) for q in params.Q])
        self._symbols: dict[float, np.ndarray] = {}
        self._weights = (1.0 + self.grid.ksq) ** config.s
        self.nonlinear = not config.disable_nonlinearity

    def potential(self, u) -> np.ndarray | None:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.params.q,):
            raise ValueError(f"control has shape {u.shape}, expected ({self.params.q},)")
        if not np.any(u):
            return None
        return np.tensordot(u, self._q_vals, axes=1)

    def half_symbol(self, h: float) -> np.ndarray:
        sym = self._symbols.get(h)
        if sym is None:
            if len(self._symbols) > 64:
                self._symbols.clear()
            sym = _linear_symbol(self.grid, self.params, h / 2)
            self._symbols[h] = sym
        return sym

    def hs_norm(self, coeffs: np.ndarray) -> float:
        return float(np.sqrt(np.sum(self._weights * (coeffs.real**2 + coeffs.imag**2))))

    def max_substep(self, pot: np.ndarray | None) -> float:
        if self.config.substep_policy == "fixed" or pot is None:
            return self.config.dt_max
        return self.config.dt_max / (1.0 + abs(self.params.coupling) * float(np.max(np.abs(pot))))

    def step(self, coeffs: np.ndarray, pot: np.ndarray | None, h: float) -> np.ndarray:
        sym = self.half_symbol(h)
        c = coeffs * sym
        if pot is None and not self.nonlinear:
            return c * sym
        vals = np.fft.ifftn(c) * self.grid.size
        rate = 0.0 if pot is None else self.params.coupling * pot
        if pot is None:
            base_c = c
            base_vals = vals
        else:
            base_vals = vals * np.exp(rate * h)
            base_c = np.fft.fftn(base_vals) / self.grid.size
        if self.nonlinear:
            new_vals = _pointwise_flow(vals, rate, h, self.params, nonlinear=True)
            base_c = _dealias_increment(base_c, new_vals - base_vals, self.grid)
        return base_c * sym


def _default_threshold(psi0: SpectralField, config: SolverConfig) -> float:
    if config.blowup_threshold is not None:
        return config.blowup_threshold
    return 1e6 * max(1.0, sobolev_norm(psi0, config.s))


def step(psi: SpectralField, u, dt: float, params: CGLParams, config: SolverConfig,
         threshold: float | None = None) -> SpectralField:
    """One Strang step linear(dt/2) o pointwise(dt) o linear(dt/2)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    integ = _Integrator(params, config)
    out = integ.step(psi.coeffs, integ.potential(u), dt)
    if threshold is None:
        threshold = _default_threshold(psi, config)
    norm = integ.hs_norm(out)
    if not norm <= threshold:
        raise BlowUpError(dt, norm, threshold)
    return SpectralField(psi.grid, out, psi.real and params.nu == 0 and params.mu == 0 and not np.any(u))


# --- schedules -> substeps --------------------------------------------------

def _pieces(schedule: ControlSchedule, T: float, q: int, breaks: Sequence[float]):
    """Yield (t0, t1, u, segment_index) pieces covering [0, T].

    Pieces stop at segment ends and at every time in ``breaks``.  After the
    last segment the control is zero (segment_index None).
    """
    bounds = []
    t = 0.0
    for i, seg in enumerate(schedule.segments):
        if t >= T:
            break
        t1 = min(t + seg.duration, T)
        bounds.append((t, t1, seg.u, i))
        t = t1
    if t < T:
        bounds.append((t, T, (0.0,) * q, None))
    cuts = sorted(b for b in set(breaks) if 0 < b < T)
    for t0, t1, u, i in bounds:
        inner = [c for c in cuts if t0 < c < t1]
        edges = [t0, *inner, t1]
        for a, b in zip(edges[:-1], edges[1:]):
            if b > a:
                yield a, b, u, i


def _substeps(integ: _Integrator, t0: float, t1: float, pot) -> tuple[int, float]:
    length = t1 - t0
    n = max(integ.config.min_substeps, math.ceil(length / integ.max_substep(pot) - 1e-9))
    return n, length / n


@dataclass
class Trajectory:
    times: list[float] = field(default_factory=list)
    hs_norm: list[float] = field(default_factory=list)
    l2_norm: list[float] = field(default_factory=list)
    max_modulus: list[float] = field(default_factory=list)
    samples: dict[float, SpectralField] = field(default_factory=dict)
    final: SpectralField | None = None
    T: float = 0.0

    def record(self, t: float, f: SpectralField, s: int):
        self.times.append(t)
        self.hs_norm.append(sobolev_norm(f, s))
        self.l2_norm.append(sobolev_norm(f, 0))
        self.max_modulus.append(float(np.max(np.abs(synthesize(f)))))

    def rows(self):
        return list(zip(self.times, self.hs_norm, self.l2_norm, self.max_modulus))


def resolve(psi0: SpectralField, schedule: ControlSchedule, T: float | None, params: CGLParams,
            config: SolverConfig, sample_times: Sequence[float] = (), record_steps: bool = False,
            threshold: float | None = None) -> Trajectory:
    """Resolving operator R_T(psi0, (u, r1, r2)).

    Controls are piecewise constant per segment and zero after the schedule
    ends.  States at ``sample_times`` are stored in ``trajectory.samples``;
    norm rows are recorded at 0, at every sample time, every segment end and
    T (plus every substep with ``record_steps``).
    """
    if psi0.grid != config.grid:
        raise ValueError("initial state lives on a different grid than the solver config")
    if T is None:
        T = schedule.total_duration
    if T < 0:
        raise ValueError("final time must be nonnegative")
    params = _params_for(schedule, params)
    integ = _Integrator(params, config)
    if threshold is None:
        threshold = _default_threshold(psi0, config)
    samples = sorted(set(float(t) for t in sample_times if 0 <= t <= T))
    traj = Trajectory(T=T)
    traj.record(0.0, psi0, config.s)
    real = psi0.real and params.nu == 0 and params.mu == 0 and params.r2 == 0
    if 0.0 in samples:
        traj.samples[0.0] = psi0
    coeffs = psi0.coeffs.copy()
    for t0, t1, u, seg in _pieces(schedule, T, params.q, samples):
        pot = integ.potential(u)
        n, h = _substeps(integ, t0, t1, pot)
        for j in range(n):
            coeffs = integ.step(coeffs, pot, h)
            norm = integ.hs_norm(coeffs)
            t = t1 if j == n - 1 else t0 + (j + 1) * h
            if not norm <= threshold:
                traj.final = SpectralField(psi0.grid, coeffs, False)
                raise BlowUpError(t, norm, threshold, trajectory=traj, segment=seg)
            if record_steps and j < n - 1:
                traj.record(t, SpectralField(psi0.grid, coeffs, real), config.s)
        state = SpectralField(psi0.grid, coeffs.copy(), real)
        traj.record(t1, state, config.s)
        if t1 in samples:
            traj.samples[t1] = state
    traj.final = SpectralField(psi0.grid, coeffs, real)
    return traj


def picard_reference(psi0: SpectralField, schedule: ControlSchedule, T: float | None,
                     params: CGLParams, config: SolverConfig, iterations: int = 50,
                     tol: float = 1e-13) -> SpectralField:
    """Fixed-point iteration of the mild (Duhamel) formulation.

    psi(t) = S(t) psi0 + int_0^t S(t - tau) N(tau, psi(tau)) dtau, with S the
    exact linear semigroup and the integral taken by the midpoint rule on the
    same substep grid ``resolve`` uses.
    """
    if T is None:
        T = schedule.total_duration
    params = _params_for(schedule, params)
    integ = _Integrator(params, config)
    grid = config.grid
    steps = []
    for t0, t1, u, _ in _pieces(schedule, T, params.q, ()):
        pot = integ.potential(u)
        n, h = _substeps(integ, t0, t1, pot)
        steps.extend([(h, pot)] * n)

    def nonlinear_term(c: np.ndarray, pot) -> np.ndarray:
        vals = np.fft.ifftn(c) * grid.size
        out = np.zeros_like(c)
        if integ.nonlinear:
            nl = -complex(1.0, params.mu) * (vals.real**2 + vals.imag**2) ** params.sigma * vals
            out = np.where(grid.dealias_mask, np.fft.fftn(nl) / grid.size, 0)
        if pot is not None:
            out = out + np.fft.fftn(params.coupling * pot * vals) / grid.size
        return out

    # initial guess: free linear evolution
    nodes = [psi0.coeffs.copy()]
    for h, _ in steps:
        sym = integ.half_symbol(h)
        nodes.append(nodes[-1] * sym * sym)

    scale = max(1.0, max(integ.hs_norm(c) for c in nodes))
    prev_diff = math.inf
    stalls = 0
    for _ in range(iterations):
        new = [psi0.coeffs.copy()]
        for m, (h, pot) in enumerate(steps):
            sym = integ.half_symbol(h)
            mid = 0.5 * (nodes[m] + nodes[m + 1])
            new.append(new[-1] * sym * sym + h * sym * nonlinear_term(mid, pot))
        diff = max(integ.hs_norm(a - b) for a, b in zip(new, nodes))
        nodes = new
        if diff <= tol * scale:
            break
        if diff >= prev_diff:
            stalls += 1
            if stalls >= 3:
                raise NonContractionError(
                    f"Picard iterates stopped contracting (successive difference {diff:.3e})"
                )
        else:
            stalls = 0
        prev_diff = diff
    return SpectralField(grid, nodes[-1], False)


def stability_probe(psi0: SpectralField, dpsi0: SpectralField, u, du, T: float,
                    params: CGLParams, config: SolverConfig, n_samples: int = 21) -> float:
    """Empirical Lipschitz ratio of the resolving operator.

    ``u`` is a ControlSchedule or a constant control vector on [0, T]; ``du``
    is a constant vector added to every segment.  Returns
    sup_t ||R(psi0 + dpsi0, u + du) - R(psi0, u)||_s / (||dpsi0||_s + ||du||_{L2}),
    with 0/0 read as 0.
    """
    if isinstance(u, ControlSchedule):
        base = u
    else:
        base = ControlSchedule.constant(T, u, params.r1, params.r2)
    du = np.asarray(du, dtype=float)
    pert = ControlSchedule(
        tuple(ControlSegment(s.duration, tuple(np.asarray(s.u) + du)) for s in base.segments),
        base.r1,
        base.r2,
    )
    du_norm = float(np.linalg.norm(du)) * math.sqrt(min(T, base.total_duration))
    denom = sobolev_norm(dpsi0, config.s) + du_norm
    times = list(np.linspace(0.0, T, n_samples))
    ref = resolve(psi0, base, T, params, config, sample_times=times)
    alt = resolve(psi0 + dpsi0, pert, T, params, config, sample_times=times)
    num = max(sobolev_norm(alt.samples[t] - ref.samples[t], config.s) for t in ref.samples)
    if denom == 0:
        return 0.0
    return num / denom


def write_trajectory_csv(path, traj: Trajectory) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "hs_norm", "l2_norm", "max_modulus"])
        for row in traj.rows():
            w.writerow([repr(float(x)) for x in row])

"""Fourier representation of fields and real trigonometric polynomials on the torus.

Conventions
-----------
The torus is ``R^d / 2 pi Z^d`` with the normalized measure, so the Fourier
coefficient of ``f`` is the grid mean of ``f(x) exp(-i<k,x>)`` and the zero
mode of a field is its mean value.  Coefficient arrays use numpy's FFT
ordering along every axis.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from pathlib import Path

import numpy as np

__all__ = [
    "GridSpec",
    "SpectralField",
    "TrigPolynomial",
    "analyze",
    "synthesize",
    "sobolev_norm",
    "gradient",
    "b_operator",
    "pointwise_multiply",
    "exp_multiplier",
    "canonical_wavevector",
    "save_field",
    "load_field",
    "write_trig",
    "read_trig",
    "GridMismatchError",
    "ExponentRangeError",
]

# exp() of anything above this overflows float64
_MAX_EXPONENT = 700.0


class GridMismatchError(ValueError):
    pass


class ExponentRangeError(OverflowError):
    """Raised when exp(z * phi) would leave the float64 range."""


def canonical_wavevector(k) -> tuple[int, ...]:
    """Representative of {k, -k} whose first nonzero component is positive."""
    k = tuple(int(c) for c in k)
    for c in k:
        if c > 0:
            return k
        if c < 0:
            return tuple(-c for c in k)
    return k


@dataclass(frozen=True)
class GridSpec:
    d: int = 1
    n_per_dim: int = 64
    dealias_fraction: Fraction | float = Fraction(2, 3)

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"dimension must be >= 1, got {self.d}")
        n = self.n_per_dim
        if n < 4 or n & (n - 1):
            raise ValueError(f"n_per_dim must be a power of two >= 4, got {n}")
        if not 0 < self.dealias_fraction <= 1:
            raise ValueError("dealias_fraction must lie in (0, 1]")

    @classmethod
    def default(cls, d: int = 1) -> "GridSpec":
        return cls(d=d, n_per_dim=64 if d == 1 else 32)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_per_dim,) * self.d

    @property
    def size(self) -> int:
        return self.n_per_dim**self.d

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Integer wavenumber arrays, one per axis, broadcast to the full grid."""
        n = self.n_per_dim
        k1 = np.fft.fftfreq(n, d=1.0 / n).round().astype(np.int64)
        return tuple(np.meshgrid(*([k1] * self.d), indexing="ij"))

    @cached_property
    def ksq(self) -> np.ndarray:
        return sum(k * k for k in self.wavenumbers)

    @cached_property
    def points(self) -> tuple[np.ndarray, ...]:
        n = self.n_per_dim
        x1 = 2.0 * np.pi * np.arange(n) / n
        return tuple(np.meshgrid(*([x1] * self.d), indexing="ij"))

    @cached_property
    def dealias_cutoff(self) -> int:
        return int(math.floor(float(self.dealias_fraction) * self.n_per_dim / 2))

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        c = self.dealias_cutoff
        mask = np.ones(self.shape, dtype=bool)
        for k in self.wavenumbers:
            mask &= np.abs(k) <= c
        return mask

    @cached_property
    def retained_mask(self) -> np.ndarray:
        half = self.n_per_dim // 2
        mask = np.ones(self.shape, dtype=bool)
        for k in self.wavenumbers:
            mask &= np.abs(k) <= half - 1
        return mask

    def index_of(self, k) -> tuple[int, ...]:
        """Array index of wavevector ``k`` in FFT ordering."""
        n = self.n_per_dim
        if len(k) != self.d:
            raise ValueError(f"wavevector {k} has wrong dimension for d={self.d}")
        if any(abs(c) > n // 2 - 1 for c in k):
            raise ValueError(f"wavevector {k} outside the retained lattice")
        return tuple(int(c) % n for c in k)


class SpectralField:
    """Complex field stored by its Fourier coefficients.

    ``real`` flags fields known to be real-valued (conjugate-symmetric
    coefficients); operations that cannot guarantee it clear the flag.
    """

    __slots__ = ("grid", "coeffs", "real")

    def __init__(self, grid: GridSpec, coeffs: np.ndarray, real: bool = False):
        coeffs = np.asarray(coeffs, dtype=np.complex128)
        if coeffs.shape != grid.shape:
            raise GridMismatchError(
                f"coefficient array shape {coeffs.shape} does not match grid {grid.shape}"
            )
        self.grid = grid
        self.coeffs = coeffs
        self.real = real

    @classmethod
    def zeros(cls, grid: GridSpec) -> "SpectralField":
        return cls(grid, np.zeros(grid.shape, dtype=np.complex128), real=True)

    @classmethod
    def constant(cls, grid: GridSpec, value: complex) -> "SpectralField":
        c = np.zeros(grid.shape, dtype=np.complex128)
        c[(0,) * grid.d] = value
        return cls(grid, c, real=complex(value).imag == 0)

    @classmethod
    def mode(cls, grid: GridSpec, k, amplitude: complex = 1.0) -> "SpectralField":
        """``amplitude * exp(i<k,x>)``."""
        c = np.zeros(grid.shape, dtype=np.complex128)
        c[grid.index_of(k)] = amplitude
        return cls(grid, c, real=not any(k) and complex(amplitude).imag == 0)

    def coeff(self, k) -> complex:
        return complex(self.coeffs[self.grid.index_of(k)])

    def values(self) -> np.ndarray:
        return synthesize(self)

    def _check(self, other: "SpectralField"):
        if other.grid != self.grid:
            raise GridMismatchError(f"grid mismatch: {self.grid} vs {other.grid}")

    def __add__(self, other):
        if isinstance(other, SpectralField):
            self._check(other)
            return SpectralField(self.grid, self.coeffs + other.coeffs, self.real and other.real)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, SpectralField):
            self._check(other)
            return SpectralField(self.grid, self.coeffs - other.coeffs, self.real and other.real)
        return NotImplemented

    def __neg__(self):
        return SpectralField(self.grid, -self.coeffs, self.real)

    def __mul__(self, scalar):
        if isinstance(scalar, SpectralField):
            return pointwise_multiply(self, scalar)
        scalar = complex(scalar)
        return SpectralField(self.grid, self.coeffs * scalar, self.real and scalar.imag == 0)

    __rmul__ = __mul__

    def __repr__(self):
        return f"SpectralField(grid={self.grid}, real={self.real})"


def analyze(grid: GridSpec, values, real: bool | None = None) -> SpectralField:
    """Forward transform of grid samples; the zero mode is the mean value.

    All ``n_per_dim**d`` coefficients are kept, so ``synthesize`` inverts this
    exactly; truncation to the dealiased band happens only in products.
    """
    values = np.asarray(values)
    if values.shape != grid.shape:
        raise ValueError(f"expected samples of shape {grid.shape}, got {values.shape}")
    if real is None:
        real = not np.iscomplexobj(values) or not np.any(values.imag)
    coeffs = np.fft.fftn(values) / grid.size
    return SpectralField(grid, coeffs, real=bool(real))


def synthesize(f: SpectralField) -> np.ndarray:
    values = np.fft.ifftn(f.coeffs) * f.grid.size
    if f.real:
        return values.real.astype(np.complex128)
    return values


def sobolev_norm(f: SpectralField, s: int = 0) -> float:
    """(sum_k (1+|k|^2)^s |f_k|^2)^(1/2)."""
    if s < 0:
        raise ValueError("Sobolev index must be nonnegative")
    w = (1.0 + f.grid.ksq) ** s
    return float(np.sqrt(np.sum(w * np.abs(f.coeffs) ** 2)))


def pointwise_multiply(f: SpectralField, g: SpectralField) -> SpectralField:
    """Dealiased product: inputs and output are truncated to the dealias band."""
    f._check(g)
    mask = f.grid.dealias_mask
    fv = np.fft.ifftn(np.where(mask, f.coeffs, 0))
    gv = np.fft.ifftn(np.where(mask, g.coeffs, 0))
    out = np.fft.fftn(fv * gv) * f.grid.size
    out[~mask] = 0
    return SpectralField(f.grid, out, real=f.real and g.real)


def exp_multiplier(phi: "TrigPolynomial", z: complex, psi: SpectralField) -> SpectralField:
    """Grid product ``exp(z * phi(x)) * psi(x)``, not truncated (aliasing aside)."""
    z = complex(z)
    if z == 0:
        return SpectralField(psi.grid, psi.coeffs.copy(), psi.real)
    phi_vals = phi.evaluate(psi.grid)
    expo = z.real * phi_vals
    top = float(np.max(expo))
    if top > _MAX_EXPONENT:
        raise ExponentRangeError(
            f"Re(z)*phi reaches {top:.3g} (> {_MAX_EXPONENT}); exp() would overflow"
        )
    vals = synthesize(psi) * np.exp(z * phi_vals)
    return analyze(psi.grid, vals, real=psi.real and z.imag == 0)


class TrigPolynomial:
    """Real trigonometric polynomial ``sum_k a_k cos<k,x> + b_k sin<k,x>``.

    ``terms`` maps canonical wavevectors (first nonzero component positive,
    or the zero vector) to ``(cos_coeff, sin_coeff)``.
    """

    __slots__ = ("d", "terms")

    def __init__(self, d: int, terms=None):
        self.d = int(d)
        clean: dict[tuple[int, ...], tuple[float, float]] = {}
        for k, (a, b) in (terms or {}).items():
            if len(k) != self.d:
                raise ValueError(f"wavevector {k} has wrong dimension for d={self.d}")
            ck = canonical_wavevector(k)
            if ck != tuple(int(c) for c in k):
                # sin flips sign under k -> -k
                b = -b
            if not any(ck):
                b = 0.0
            a0, b0 = clean.get(ck, (0.0, 0.0))
            clean[ck] = (a0 + float(a), b0 + float(b))
        self.terms = {k: v for k, v in clean.items() if v != (0.0, 0.0)}

    # construction helpers
    @classmethod
    def constant(cls, d: int, c: float = 1.0) -> "TrigPolynomial":
        return cls(d, {(0,) * d: (c, 0.0)})

    @classmethod
    def cos(cls, k, amplitude: float = 1.0) -> "TrigPolynomial":
        return cls(len(k), {tuple(k): (amplitude, 0.0)})

    @classmethod
    def sin(cls, k, amplitude: float = 1.0) -> "TrigPolynomial":
        return cls(len(k), {tuple(k): (0.0, amplitude)})

    @classmethod
    def zero(cls, d: int) -> "TrigPolynomial":
        return cls(d)

    @classmethod
    def from_field(cls, f: SpectralField, degree_cap: int | None = None) -> "TrigPolynomial":
        """Real part of ``f`` as a trig polynomial, optionally truncated to ``max|k_i| <= degree_cap``."""
        grid = f.grid
        half = grid.n_per_dim // 2
        n = grid.n_per_dim
        keys = set()
        for idx in zip(*np.nonzero(f.coeffs)):
            k = tuple(int(kk[idx]) for kk in grid.wavenumbers)
            if any(abs(c) >= half for c in k):
                continue
            if degree_cap is not None and max((abs(c) for c in k), default=0) > degree_cap:
                continue
            keys.add(canonical_wavevector(k))
        terms = {}
        for k in sorted(keys):
            c_plus = f.coeffs[tuple(c % n for c in k)]
            if not any(k):
                terms[k] = (float(c_plus.real), 0.0)
                continue
            c_minus = f.coeffs[tuple((-c) % n for c in k)]
            # a cos + b sin  <->  (a - ib)/2 e^{ikx} + (a + ib)/2 e^{-ikx}
            hat = 0.5 * (c_plus + np.conj(c_minus))
            terms[k] = (float(2 * hat.real), float(-2 * hat.imag))
        return cls(grid.d, terms)

    # exponential form {k: c_k}, conjugate symmetric
    def _to_exp(self) -> dict[tuple[int, ...], complex]:
        out: dict[tuple[int, ...], complex] = {}
        for k, (a, b) in self.terms.items():
            if not any(k):
                out[k] = complex(a)
            else:
                out[k] = complex(a, -b) / 2
                out[tuple(-c for c in k)] = complex(a, b) / 2
        return out

    @classmethod
    def _from_exp(cls, d: int, coeffs: dict) -> "TrigPolynomial":
        terms = {}
        for k, c in coeffs.items():
            if canonical_wavevector(k) != k:
                continue
            if not any(k):
                terms[k] = (c.real, 0.0)
            else:
                terms[k] = (2 * c.real, -2 * c.imag)
        return cls(d, terms)

    # arithmetic
    def _check(self, other: "TrigPolynomial"):
        if other.d != self.d:
            raise ValueError(f"dimension mismatch: {self.d} vs {other.d}")

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = TrigPolynomial.constant(self.d, other)
        if not isinstance(other, TrigPolynomial):
            return NotImplemented
        self._check(other)
        terms = dict(self.terms)
        for k, (a, b) in other.terms.items():
            a0, b0 = terms.get(k, (0.0, 0.0))
            terms[k] = (a0 + a, b0 + b)
        return TrigPolynomial(self.d, terms)

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, TrigPolynomial):
            return self.product(other)
        other = float(other)
        return TrigPolynomial(self.d, {k: (a * other, b * other) for k, (a, b) in self.terms.items()})

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * (1.0 / float(other))

    def product(self, other: "TrigPolynomial") -> "TrigPolynomial":
        """Exact product by convolution of exponential coefficients."""
        self._check(other)
        e1, e2 = self._to_exp(), other._to_exp()
        out: dict[tuple[int, ...], complex] = {}
        for k1, c1 in e1.items():
            for k2, c2 in e2.items():
                k = tuple(a + b for a, b in zip(k1, k2))
                out[k] = out.get(k, 0j) + c1 * c2
        return TrigPolynomial._from_exp(self.d, out)

    # queries
    @property
    def degree(self) -> int:
        return max((max(abs(c) for c in k) if k else 0 for k in self.terms), default=0)

    def frequencies(self) -> list[tuple[int, ...]]:
        return sorted(self.terms)

    def is_zero(self, tol: float = 0.0) -> bool:
        return all(abs(a) <= tol and abs(b) <= tol for a, b in self.terms.values())

    def coefficient_norm(self) -> float:
        """L2 norm under the normalized measure."""
        tot = 0.0
        for k, (a, b) in self.terms.items():
            tot += a * a if not any(k) else 0.5 * (a * a + b * b)
        return math.sqrt(tot)

    def evaluate(self, grid: GridSpec) -> np.ndarray:
        if grid.d != self.d:
            raise ValueError(f"polynomial of dimension {self.d} on grid of dimension {grid.d}")
        x = grid.points
        out = np.zeros(grid.shape)
        for k, (a, b) in self.terms.items():
            arg = sum(c * xi for c, xi in zip(k, x)) if any(k) else 0.0
            if a:
                out = out + a * np.cos(arg)
            if b:
                out = out + b * np.sin(arg)
        return out

    def evaluate_at(self, x) -> float:
        x = np.asarray(x, dtype=float)
        tot = 0.0
        for k, (a, b) in self.terms.items():
            arg = float(np.dot(k, x))
            tot += a * math.cos(arg) + b * math.sin(arg)
        return tot

    def to_field(self, grid: GridSpec) -> SpectralField:
        c = np.zeros(grid.shape, dtype=np.complex128)
        for k, v in self._to_exp().items():
            c[grid.index_of(k)] += v
        return SpectralField(grid, c, real=True)

    def grid_min(self, grid: GridSpec) -> float:
        return float(np.min(self.evaluate(grid)))

    def sup_norm(self, grid: GridSpec) -> float:
        return float(np.max(np.abs(self.evaluate(grid))))

    def allclose(self, other: "TrigPolynomial", atol: float = 1e-12) -> bool:
        return (self - other).is_zero(atol)

    def __eq__(self, other):
        if not isinstance(other, TrigPolynomial):
            return NotImplemented
        return self.d == other.d and self.terms == other.terms

    __hash__ = None

    def __repr__(self):
        parts = []
        for k in sorted(self.terms):
            a, b = self.terms[k]
            if not any(k):
                parts.append(f"{a:.6g}")
                continue
            if a:
                parts.append(f"{a:.6g}*cos{k}")
            if b:
                parts.append(f"{b:.6g}*sin{k}")
        return f"TrigPolynomial(d={self.d}: {' + '.join(parts) or '0'})"


def gradient(phi: TrigPolynomial) -> list[TrigPolynomial]:
    comps = []
    for j in range(phi.d):
        terms = {}
        for k, (a, b) in phi.terms.items():
            if k[j]:
                # d/dx_j (a cos + b sin) = k_j (b cos - a sin)
                terms[k] = (k[j] * b, -k[j] * a)
        comps.append(TrigPolynomial(phi.d, terms))
    return comps


def b_operator(phi: TrigPolynomial) -> TrigPolynomial:
    """Squared gradient ``sum_j (d_j phi)^2``, expanded symbolically."""
    out = TrigPolynomial.zero(phi.d)
    for g in gradient(phi):
        out = out + g.product(g)
    return out


# --- file formats -----------------------------------------------------------

_MAGIC = b"CGLF"
_VERSION = 1
_HEADER = struct.Struct("<4sHHIB")


def save_field(path, f: SpectralField) -> None:
    """Binary snapshot: header then little-endian (re, im) float64 pairs.

    Coefficients are written in row-major order over the lattice
    ``k_i = -n/2 .. n/2-1`` on every axis.
    """
    g = f.grid
    body = np.fft.fftshift(f.coeffs)
    pairs = np.empty(body.shape + (2,), dtype="<f8")
    pairs[..., 0] = body.real
    pairs[..., 1] = body.imag
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, g.d, g.n_per_dim, int(f.real)))
        fh.write(pairs.tobytes(order="C"))


def load_field(path, dealias_fraction=Fraction(2, 3)) -> SpectralField:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated field file")
    magic, version, d, n, real = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    grid = GridSpec(d=d, n_per_dim=n, dealias_fraction=dealias_fraction)
    expected = grid.size * 16
    body = raw[_HEADER.size:]
    if len(body) != expected:
        raise ValueError(f"{path}: expected {expected} coefficient bytes, found {len(body)}")
    pairs = np.frombuffer(body, dtype="<f8").reshape(grid.shape + (2,))
    coeffs = np.fft.ifftshift(pairs[..., 0] + 1j * pairs[..., 1])
    return SpectralField(grid, coeffs, real=bool(real))


def write_trig(path, phi: TrigPolynomial) -> None:
    lines = [f"# d={phi.d}; columns: k_1 .. k_d cos_coeff sin_coeff"]
    for k in sorted(phi.terms):
        a, b = phi.terms[k]
        lines.append(" ".join(str(c) for c in k) + f" {a!r} {b!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def parse_trig(text: str, d: int | None = None) -> TrigPolynomial:
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) < 3:
            raise ValueError(f"line {lineno}: expected 'k_1 .. k_d cos sin'")
        k = tuple(int(c) for c in fields[:-2])
        rows.append((k, float(fields[-2]), float(fields[-1])))
    if d is None:
        if not rows:
            raise ValueError("empty trig polynomial file and no dimension given")
        d = len(rows[0][0])
    poly = TrigPolynomial.zero(d)
    for k, a, b in rows:
        if len(k) != d:
            raise ValueError(f"wavevector {k} inconsistent with d={d}")
        poly = poly + TrigPolynomial(d, {k: (a, b)})
    return poly


def read_trig(path, d: int | None = None) -> TrigPolynomial:
    return parse_trig(Path(path).read_text(), d)

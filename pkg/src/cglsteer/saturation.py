"""Saturating subspaces of trigonometric polynomials.

Covers the generator / orthogonality-chain test for frequency sets, the
growth map H -> F(H) built from gradient products, the chain H_0, H_1, ...,
and numerical decomposition of a target as theta_0 + sum_j B(theta_j).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .spectral import TrigPolynomial, b_operator, canonical_wavevector, gradient

__all__ = [
    "FrequencySet",
    "SubspaceBasis",
    "SaturationChain",
    "Decomposition",
    "DecompositionError",
    "frequency_space",
    "standard_frequency_set",
    "is_generator",
    "chain_condition",
    "is_saturating",
    "check_Q_condition",
    "grow",
    "saturation_chain",
    "decompose",
    "saturation_report",
]

RANK_RTOL = 1e-9


class DecompositionError(RuntimeError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class FrequencySet:
    d: int
    vectors: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        vecs = tuple(tuple(int(c) for c in v) for v in self.vectors)
        for v in vecs:
            if len(v) != self.d:
                raise ValueError(f"vector {v} does not have dimension {self.d}")
            if not any(v):
                raise ValueError("frequency sets may not contain the zero vector")
        if len(set(vecs)) != len(vecs):
            raise ValueError("duplicate vectors in frequency set")
        object.__setattr__(self, "vectors", vecs)

    def __iter__(self):
        return iter(self.vectors)

    def __len__(self):
        return len(self.vectors)

    def subspace(self) -> "SubspaceBasis":
        """H(I) = span{1, sin<k,x>, cos<k,x> : k in I}."""
        basis = [TrigPolynomial.constant(self.d)]
        for k in self.vectors:
            basis.append(TrigPolynomial.sin(k))
            basis.append(TrigPolynomial.cos(k))
        return SubspaceBasis.from_spanning(basis)


def standard_frequency_set(d: int) -> FrequencySet:
    """K = {e_1, ..., e_{d-1}, (1, ..., 1)}."""
    vecs = [tuple(1 if i == j else 0 for i in range(d)) for j in range(d - 1)]
    vecs.append((1,) * d)
    return FrequencySet(d, tuple(vecs))


# --- coefficient space -------------------------------------------------------

class _Features:
    """Orthonormal coordinates for trig polynomials under the normalized L2 product.

    Coordinates are 1 for the constant and 1/sqrt(2) cos/sin scalings for
    the rest, so Euclidean norms of vectors equal L2 norms of functions.
    """

    def __init__(self, d: int, polys=()):
        self.d = d
        self.index: dict[tuple[tuple[int, ...], int], int] = {}
        self.keys: list[tuple[tuple[int, ...], int]] = []
        for p in polys:
            self.add(p)

    def add(self, p: TrigPolynomial):
        for k in sorted(p.terms):
            kinds = (0,) if not any(k) else (0, 1)
            for kind in kinds:
                key = (k, kind)
                if key not in self.index:
                    self.index[key] = len(self.keys)
                    self.keys.append(key)

    def __len__(self):
        return len(self.keys)

    @staticmethod
    def _weight(k) -> float:
        return 1.0 if not any(k) else math.sqrt(0.5)

    def vector(self, p: TrigPolynomial) -> np.ndarray:
        v = np.zeros(len(self.keys))
        for k, (a, b) in p.terms.items():
            w = self._weight(k)
            if a:
                v[self.index[(k, 0)]] = a * w
            if b:
                v[self.index[(k, 1)]] = b * w
        return v

    def poly(self, v: np.ndarray, tol: float = 0.0) -> TrigPolynomial:
        terms: dict = {}
        for (k, kind), x in zip(self.keys, v):
            if abs(x) <= tol:
                continue
            a, b = terms.get(k, (0.0, 0.0))
            val = float(x) / self._weight(k)
            terms[k] = (val, b) if kind == 0 else (a, val)
        return TrigPolynomial(self.d, terms)


def _row_basis(vectors: np.ndarray) -> np.ndarray:
    """Orthonormal rows spanning the row space, rank cut at RANK_RTOL."""
    if vectors.size == 0:
        return np.zeros((0, vectors.shape[1] if vectors.ndim == 2 else 0))
    _, sv, vt = np.linalg.svd(vectors, full_matrices=False)
    if sv.size == 0 or sv[0] == 0:
        return np.zeros((0, vectors.shape[1]))
    rank = int(np.sum(sv > RANK_RTOL * sv[0]))
    return vt[:rank]


def _rref(rows: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Reduced row echelon form with partial pivoting; canonical basis of a span."""
    a = rows.copy()
    m, n = a.shape
    r = 0
    for c in range(n):
        if r == m:
            break
        p = r + int(np.argmax(np.abs(a[r:, c])))
        if abs(a[p, c]) <= tol:
            a[r:, c] = 0.0
            continue
        a[[r, p]] = a[[p, r]]
        a[r] /= a[r, c]
        for i in range(m):
            if i != r:
                a[i] -= a[i, c] * a[r]
        r += 1
    a[np.abs(a) < tol] = 0.0
    return a[:r]


@dataclass
class SubspaceBasis:
    basis: list[TrigPolynomial]
    d: int = field(init=False)

    def __post_init__(self):
        if not self.basis:
            raise ValueError("a subspace basis needs at least one element")
        self.d = self.basis[0].d
        feats = _Features(self.d, self.basis)
        mat = np.array([feats.vector(b) for b in self.basis])
        rank = _row_basis(mat).shape[0]
        if rank != len(self.basis):
            raise ValueError(
                f"basis elements are linearly dependent (rank {rank} < {len(self.basis)})"
            )

    @classmethod
    def from_spanning(cls, polys) -> "SubspaceBasis":
        """Canonical (row-reduced) basis of span(polys)."""
        polys = list(polys)
        feats = _Features(polys[0].d, polys)
        mat = np.array([feats.vector(p) for p in polys])
        rows = _rref(_row_basis(mat))
        return cls([feats.poly(r) for r in rows])

    @property
    def dim(self) -> int:
        return len(self.basis)

    def frequencies(self) -> list[tuple[int, ...]]:
        out = set()
        for b in self.basis:
            out.update(b.terms)
        return sorted(out)

    def degree(self) -> int:
        return max(b.degree for b in self.basis)

    def _frame(self, extra=()):
        feats = _Features(self.d, list(self.basis) + list(extra))
        mat = np.array([feats.vector(b) for b in self.basis])
        return feats, mat

    def projection_residual(self, theta: TrigPolynomial) -> float:
        """L2 distance from theta to the subspace."""
        feats, mat = self._frame([theta])
        onb = _row_basis(mat)
        v = feats.vector(theta)
        return float(np.linalg.norm(v - onb.T @ (onb @ v)))

    def contains(self, theta: TrigPolynomial, tol: float = 1e-10) -> bool:
        return self.projection_residual(theta) <= tol * max(1.0, theta.coefficient_norm())

    def coordinates(self, theta: TrigPolynomial) -> tuple[np.ndarray, float]:
        """Least-squares coefficients of theta in this basis, and the residual."""
        feats, mat = self._frame([theta])
        v = feats.vector(theta)
        coef, *_ = np.linalg.lstsq(mat.T, v, rcond=None)
        return coef, float(np.linalg.norm(mat.T @ coef - v))

    def combine(self, coef) -> TrigPolynomial:
        out = TrigPolynomial.zero(self.d)
        for c, b in zip(coef, self.basis):
            if c:
                out = out + float(c) * b
        return out

    def includes(self, other: "SubspaceBasis", tol: float = 1e-10) -> bool:
        return all(self.contains(b, tol) for b in other.basis)


@dataclass
class SaturationChain:
    levels: list[SubspaceBasis]

    def __post_init__(self):
        for j in range(len(self.levels) - 1):
            if not self.levels[j + 1].includes(self.levels[j]):
                raise ValueError(f"level {j} is not contained in level {j + 1}")

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    def level_of(self, theta: TrigPolynomial, tol: float = 1e-10) -> int | None:
        """Lowest level whose span contains theta (None if outside the chain)."""
        for j, h in enumerate(self.levels):
            if h.contains(theta, tol):
                return j
        return None


@dataclass
class Decomposition:
    theta0: TrigPolynomial
    parts: list[TrigPolynomial]
    residual: float

    def reconstruct(self) -> TrigPolynomial:
        out = self.theta0
        for p in self.parts:
            out = out + b_operator(p)
        return out


# --- frequency-set criteria -------------------------------------------------

def _hermite_rows(vectors) -> list[list[int]]:
    """Integer row reduction (Euclid on pivots) to echelon form; exact."""
    rows = [list(v) for v in vectors]
    if not rows:
        return []
    d = len(rows[0])
    out = []
    col = 0
    while rows and col < d:
        nz = [r for r in rows if r[col] != 0]
        zero = [r for r in rows if r[col] == 0]
        while len(nz) > 1:
            nz.sort(key=lambda r: abs(r[col]))
            piv = nz[0]
            rest = []
            for r in nz[1:]:
                q = r[col] // piv[col]
                r = [a - q * b for a, b in zip(r, piv)]
                (rest if r[col] != 0 else zero).append(r)
            nz = [piv] + rest
        if nz:
            piv = nz[0]
            if piv[col] < 0:
                piv = [-a for a in piv]
            out.append(piv)
        rows = [r for r in zero if any(r)]
        col += 1
    return out


def is_generator(I: FrequencySet) -> bool:
    """True iff the integer span of I is all of Z^d."""
    ech = _hermite_rows(I.vectors)
    if len(ech) != I.d:
        return False
    # echelon rows are square upper-triangular here; unimodular iff pivots are 1
    return all(row[i] == 1 for i, row in enumerate(ech))


def _dot(a, b) -> int:
    return sum(x * y for x, y in zip(a, b))


def chain_condition(I: FrequencySet, sigma: int):
    """For each ordered pair (l, m) look for n_1..n_sigma in I with
    l.n_1 != 0, n_j.n_{j+1} != 0 and n_sigma.m != 0.

    Returns ``(verdict, witnesses)`` with ``witnesses[(l, m)]`` a tuple of
    chain vectors or None when no chain exists.
    """
    if sigma < 1:
        raise ValueError("sigma must be >= 1")
    vecs = I.vectors
    witnesses: dict = {}
    for l in vecs:
        # layer j: vectors reachable as n_j, with a predecessor for the witness
        layer = {n: None for n in vecs if _dot(l, n) != 0}
        history = [layer]
        for _ in range(sigma - 1):
            nxt = {}
            for n in vecs:
                for p in layer:
                    if _dot(p, n) != 0:
                        nxt[n] = p
                        break
            layer = nxt
            history.append(layer)
        for m in vecs:
            end = next((n for n in vecs if n in layer and _dot(n, m) != 0), None)
            if end is None:
                witnesses[(l, m)] = None
                continue
            chain = [end]
            for j in range(sigma - 1, 0, -1):
                chain.append(history[j][chain[-1]])
            witnesses[(l, m)] = tuple(reversed(chain))
    verdict = all(w is not None for w in witnesses.values())
    return verdict, witnesses


def is_saturating(I: FrequencySet, sigma: int) -> bool:
    return is_generator(I) and chain_condition(I, sigma)[0]


def check_Q_condition(Q, K: FrequencySet, tol: float = 1e-10) -> bool:
    """Whether 1 and sin<x,k>, cos<x,k> (k in K) all lie in span(Q)."""
    span = SubspaceBasis.from_spanning(Q)
    needed = [TrigPolynomial.constant(K.d)]
    for k in K:
        needed += [TrigPolynomial.sin(k), TrigPolynomial.cos(k)]
    return all(span.projection_residual(t) < tol for t in needed)


# --- growth map -------------------------------------------------------------

def grow(H: SubspaceBasis) -> SubspaceBasis:
    """Basis of H + span{grad(theta_i) . grad(theta_j)}, row-reduced.

    B is quadratic, so polarization turns values of B on H into exactly these
    bilinear gradient products.
    """
    grads = [gradient(b) for b in H.basis]
    cands = list(H.basis)
    for i in range(H.dim):
        for j in range(i, H.dim):
            prod = TrigPolynomial.zero(H.d)
            for gi, gj in zip(grads[i], grads[j]):
                prod = prod + gi.product(gj)
            if not prod.is_zero():
                cands.append(prod)
    return SubspaceBasis.from_spanning(cands)


def saturation_chain(H0: SubspaceBasis, N: int) -> SaturationChain:
    if N < 0:
        raise ValueError("N must be >= 0")
    levels = [H0]
    for _ in range(N):
        levels.append(grow(levels[-1]))
    return SaturationChain(levels)


# --- decomposition ----------------------------------------------------------

def _gradient_gram(H: SubspaceBasis, feats: _Features) -> np.ndarray:
    """G[a, b] = feature vector of grad(e_a) . grad(e_b)."""
    grads = [gradient(b) for b in H.basis]
    m = H.dim
    prods = {}
    for a in range(m):
        for b in range(a, m):
            p = TrigPolynomial.zero(H.d)
            for ga, gb in zip(grads[a], grads[b]):
                p = p + ga.product(gb)
            prods[(a, b)] = p
            feats.add(p)
    G = np.zeros((m, m, len(feats)))
    for (a, b), p in prods.items():
        G[a, b] = G[b, a] = feats.vector(p)
    return G


def _solve_parts(G, target, proj, n, init, max_iter=300, tol=1e-13):
    """Levenberg-Marquardt on r(C) = P(target - sum_j B(C[:, j]))."""
    m = G.shape[0]
    C = init.copy()
    Gp = np.einsum("abf,gf->abg", G, proj)  # project once

    def resid(C):
        y = np.einsum("aj,bj,abf->f", C, C, Gp)
        return proj @ target - y

    r = resid(C)
    cost = float(r @ r)
    lam = 1e-3
    for _ in range(max_iter):
        if cost <= tol**2:
            break
        # d y / d C[a, j] = 2 sum_b G[a, b] C[b, j]
        J = -2.0 * np.einsum("abf,bj->faj", Gp, C).reshape(len(r), m * n)
        JtJ = J.T @ J
        g = J.T @ r
        improved = False
        for _ in range(30):
            A = JtJ + lam * (np.diag(np.diag(JtJ)) + 1e-12 * np.eye(m * n))
            try:
                delta = np.linalg.solve(A, -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            Cn = C + delta.reshape(m, n)
            rn = resid(Cn)
            cn = float(rn @ rn)
            if cn < cost:
                C, r, cost = Cn, rn, cn
                lam = max(lam / 3, 1e-12)
                improved = True
                break
            lam *= 4
        if not improved:
            break
    return C, math.sqrt(cost)


def _spectral_seed(G, target, proj, n):
    """Seed from the positive part of the min-norm symmetric solution M of
    P(target) = sum_ab M_ab P(G_ab): each eigenpair gives one part."""
    m = G.shape[0]
    iu = np.triu_indices(m)
    cols = []
    for a, b in zip(*iu):
        cols.append(proj @ G[a, b] * (1.0 if a == b else 2.0))
    A = np.array(cols).T
    x, *_ = np.linalg.lstsq(A, proj @ target, rcond=None)
    M = np.zeros((m, m))
    M[iu] = x
    M = M + M.T - np.diag(np.diag(M))
    w, v = np.linalg.eigh(M)
    order = np.argsort(w)[::-1][:n]
    return v[:, order] * np.sqrt(np.clip(w[order], 0.0, None))


def _canonical_part(p: TrigPolynomial) -> TrigPolynomial:
    """Drop the constant (B ignores it) and fix the overall sign."""
    terms = {k: v for k, v in p.terms.items() if any(k)}
    for k in sorted(terms):
        a, b = terms[k]
        lead = a if abs(a) > 1e-14 else b
        if abs(lead) > 1e-14:
            if lead < 0:
                terms = {kk: (-x, -y) for kk, (x, y) in terms.items()}
            break
    return TrigPolynomial(p.d, terms)


def decompose(theta: TrigPolynomial, H_prev: SubspaceBasis, n_max: int | None = None,
              tol: float = 1e-10, restarts: int = 8, seed: int = 0) -> Decomposition:
    """Write theta = theta_0 + sum_j B(theta_j) with theta_0, theta_j in H_prev.

    Parts are searched with n = 1, 2, ... up to n_max; for each n a spectral
    seed is tried first, then seeded random restarts.  theta_0 is the L2
    projection of the remainder onto H_prev.
    """
    if theta.d != H_prev.d:
        raise ValueError("dimension mismatch between target and subspace")
    if n_max is None:
        n_max = H_prev.dim
    feats = _Features(theta.d, list(H_prev.basis) + [theta])
    G = _gradient_gram(H_prev, feats)
    target = feats.vector(theta)
    hmat = np.array([feats.vector(b) for b in H_prev.basis])
    onb = _row_basis(hmat)
    proj = np.eye(len(feats)) - onb.T @ onb
    scale = max(1.0, float(np.linalg.norm(target)))

    def finish(C, res):
        parts = []
        for j in range(C.shape[1]):
            p = _canonical_part(H_prev.combine(C[:, j]))
            if not p.is_zero(1e-14):
                parts.append(p)
        rest = feats.vector(theta)
        for p in parts:
            feats.add(b_operator(p))
        rest = feats.vector(theta) - sum((feats.vector(b_operator(p)) for p in parts), np.zeros(len(feats)))
        coef, *_ = np.linalg.lstsq(np.array([feats.vector(b) for b in H_prev.basis]).T, rest, rcond=None)
        theta0 = H_prev.combine(coef)
        recon = Decomposition(theta0, parts, 0.0).reconstruct()
        return Decomposition(theta0, parts, (theta - recon).coefficient_norm())

    if float(np.linalg.norm(proj @ target)) <= tol * scale:
        return finish(np.zeros((H_prev.dim, 0)), 0.0)

    rng = np.random.default_rng(seed)
    best = None
    for n in range(1, n_max + 1):
        inits = [_spectral_seed(G, target, proj, n)]
        inits += [rng.standard_normal((H_prev.dim, n)) * math.sqrt(scale / max(1, n)) for _ in range(restarts)]
        for init in inits:
            C, res = _solve_parts(G, target, proj, n, init)
            if best is None or res < best[1]:
                best = (C, res)
            if res <= tol * scale:
                out = finish(C, res)
                if out.residual <= tol * scale:
                    return out
    out = finish(*best)
    raise DecompositionError(
        f"no decomposition found: best residual {out.residual:.3e} (target likely outside F(H))",
        best=out,
    )


# --- reporting --------------------------------------------------------------

def saturation_report(I: FrequencySet, sigma: int, levels: int = 2,
                      Q=None, decompositions=()) -> str:
    """CSV text: verdicts, chain witnesses, level dimensions, decomposition residuals."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    gen = is_generator(I)
    chain_ok, wit = chain_condition(I, sigma)
    w.writerow(["section", "key", "value"])
    w.writerow(["verdict", "generator", str(gen).lower()])
    w.writerow(["verdict", "chain_condition", str(chain_ok).lower()])
    w.writerow(["verdict", "saturating", str(gen and chain_ok).lower()])
    if Q is not None:
        w.writerow(["verdict", "Q_condition", str(check_Q_condition(Q, I)).lower()])
    for (l, m), chain in wit.items():
        w.writerow(["witness", f"{l}->{m}", "none" if chain is None else " ".join(map(str, chain))])
    chain = saturation_chain(I.subspace(), levels)
    for j, h in enumerate(chain.levels):
        w.writerow(["level", f"H_{j}.dim", h.dim])
        w.writerow(["level", f"H_{j}.frequencies", " ".join(str(k) for k in h.frequencies())])
    for name, dec in decompositions:
        w.writerow(["decomposition", name, repr(dec.residual)])
    return buf.getvalue()


def frequency_space(d: int, degree: int) -> SubspaceBasis:
    """All real trig polynomials with max|k_i| <= degree."""
    basis = [TrigPolynomial.constant(d)]
    seen = set()
    for k in product(range(-degree, degree + 1), repeat=d):
        ck = canonical_wavevector(k)
        if not any(ck) or ck in seen:
            continue
        seen.add(ck)
        basis += [TrigPolynomial.cos(ck), TrigPolynomial.sin(ck)]
    return SubspaceBasis(basis)

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cglsteer.spectral import (
    ExponentRangeError,
    GridMismatchError,
    GridSpec,
    SpectralField,
    TrigPolynomial,
    analyze,
    b_operator,
    exp_multiplier,
    gradient,
    load_field,
    parse_trig,
    pointwise_multiply,
    read_trig,
    save_field,
    sobolev_norm,
    synthesize,
    write_trig,
)

T = TrigPolynomial


def random_field(grid, rng, band=None):
    c = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    if band is not None:
        c = np.where(np.all([np.abs(k) <= band for k in grid.wavenumbers], axis=0), c, 0)
    return SpectralField(grid, c)


# --- grid ---------------------------------------------------------------------

def test_grid_validation():
    with pytest.raises(ValueError):
        GridSpec(1, 48)
    with pytest.raises(ValueError):
        GridSpec(0, 16)
    assert GridSpec.default(1).n_per_dim == 64
    assert GridSpec.default(2).n_per_dim == 32


def test_dealias_cutoff_two_thirds():
    g = GridSpec(1, 64)
    assert g.dealias_cutoff == 21
    assert int(g.dealias_mask.sum()) == 43
    assert GridSpec(1, 64, Fraction(1, 1)).dealias_cutoff == 32


def test_index_of_rejects_nyquist():
    g = GridSpec(1, 16)
    g.index_of((7,))
    with pytest.raises(ValueError):
        g.index_of((8,))


# --- transforms and norms -----------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([(1, 32), (2, 16), (3, 8)]))
def test_roundtrip_exact(seed, dims):
    g = GridSpec(*dims)
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape)
    assert np.max(np.abs(synthesize(analyze(g, vals)) - vals)) < 1e-12 * np.max(np.abs(vals)) + 1e-14


def test_zero_mode_is_mean():
    g = GridSpec(2, 16)
    x, y = g.points
    f = analyze(g, (3 + np.cos(x) * np.sin(2 * y)).astype(complex))
    assert abs(f.coeff((0, 0)) - 3) < 1e-14


def test_sobolev_norm_of_modes():
    g = GridSpec(2, 16)
    f = SpectralField.mode(g, (1, 2), 2.0)
    assert math.isclose(sobolev_norm(f, 0), 2.0)
    assert math.isclose(sobolev_norm(f, 2), 2.0 * 6.0)
    assert math.isclose(sobolev_norm(T.sin((1, 0)).to_field(g), 0), 1 / math.sqrt(2))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_parseval(seed):
    g = GridSpec(1, 32)
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal(32) + 1j * rng.standard_normal(32)
    assert math.isclose(sobolev_norm(analyze(g, vals), 0) ** 2, np.mean(np.abs(vals) ** 2), rel_tol=1e-12)


def test_grid_mismatch():
    a = SpectralField.zeros(GridSpec(1, 16))
    b = SpectralField.zeros(GridSpec(1, 32))
    with pytest.raises(GridMismatchError):
        a + b
    with pytest.raises(GridMismatchError):
        pointwise_multiply(a, b)


# --- products -----------------------------------------------------------------

def _brute_product(f, g):
    """Direct truncated convolution over retained modes."""
    grid = f.grid
    K = grid.dealias_cutoff
    out = np.zeros(grid.shape, complex)
    ks = range(-K, K + 1)
    for k in ks:
        for l in ks:
            m = k + l
            if abs(m) <= K:
                out[grid.index_of((m,))] += f.coeff((k,)) * g.coeff((l,))
    return out


def test_pointwise_multiply_matches_convolution():
    g = GridSpec(1, 32)
    rng = np.random.default_rng(3)
    a, b = random_field(g, rng), random_field(g, rng)
    assert np.max(np.abs(pointwise_multiply(a, b).coeffs - _brute_product(a, b))) < 1e-12


def test_pointwise_multiply_exact_for_band_limited():
    g = GridSpec(1, 64)
    rng = np.random.default_rng(4)
    a, b = random_field(g, rng, band=8), random_field(g, rng, band=8)
    direct = analyze(g, synthesize(a) * synthesize(b))
    assert np.max(np.abs(pointwise_multiply(a, b).coeffs - direct.coeffs)) < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_exp_multiplier_inverse(seed, zr, zi):
    g = GridSpec(1, 64)
    rng = np.random.default_rng(seed)
    psi = random_field(g, rng, band=10)
    phi = T.cos((1,), rng.uniform(-1, 1)) + T.sin((2,), rng.uniform(-1, 1))
    z = complex(zr, zi)
    back = exp_multiplier(phi, -z, exp_multiplier(phi, z, psi))
    assert sobolev_norm(back - psi, 1) < 1e-10 * sobolev_norm(psi, 1)


def test_exp_multiplier_range_guard():
    g = GridSpec(1, 16)
    with pytest.raises(ExponentRangeError):
        exp_multiplier(T.constant(1, 1.0), 800.0, SpectralField.constant(g, 1.0))


# --- trig polynomials ---------------------------------------------------------

def test_canonical_terms():
    p = T(1, {(-2,): (1.0, 1.0)})
    assert p.terms == {(2,): (1.0, -1.0)}
    assert T(2, {(0, 0): (1.0, 5.0)}).terms == {(0, 0): (1.0, 0.0)}
    assert T.cos((1,)) - T.cos((1,)) == T.zero(1)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(-3, 3), st.floats(-2, 2), st.floats(-2, 2)), min_size=1, max_size=4),
       st.lists(st.tuples(st.integers(-3, 3), st.floats(-2, 2), st.floats(-2, 2)), min_size=1, max_size=4))
def test_trig_product_matches_grid(ta, tb):
    g = GridSpec(1, 32)
    p = sum((T(1, {(k,): (a, b)}) for k, a, b in ta), T.zero(1))
    q = sum((T(1, {(k,): (a, b)}) for k, a, b in tb), T.zero(1))
    assert np.allclose(p.product(q).evaluate(g), p.evaluate(g) * q.evaluate(g), atol=1e-12)


def test_b_operator_examples():
    b = b_operator(T.sin((1,)))
    assert b.allclose(T.constant(1, 0.5) + T.cos((2,), 0.5))
    # d=2: B(cos x + sin(x+y)) = sin^2 x + 2 sin x cos(x+y)... check on a grid
    phi = T.cos((1, 0)) + T.sin((1, 1))
    g = GridSpec(2, 16)
    x, y = g.points
    exact = np.sin(x) ** 2 - 2 * np.sin(x) * np.cos(x + y) + 2 * np.cos(x + y) ** 2
    assert np.allclose(b_operator(phi).evaluate(g), exact, atol=1e-12)


def test_b_operator_matches_spectral_derivative():
    g = GridSpec(2, 32)
    phi = T.cos((1, 2), 0.3) + T.sin((2, -1), 0.7) + T.constant(2, 4.0)
    f = phi.to_field(g)
    grads = [synthesize(SpectralField(g, 1j * k * f.coeffs)).real for k in g.wavenumbers]
    brute = sum(gr**2 for gr in grads)
    assert np.allclose(b_operator(phi).evaluate(g), brute, atol=1e-11)
    for gp, gr in zip(gradient(phi), grads):
        assert np.allclose(gp.evaluate(g), gr, atol=1e-11)


def test_from_field_roundtrip():
    g = GridSpec(2, 16)
    p = T.cos((1, -1), 0.5) + T.sin((0, 2), -0.25) + T.constant(2, 1.0)
    assert T.from_field(p.to_field(g)).allclose(p, 1e-13)
    assert T.from_field(p.to_field(g), degree_cap=1).allclose(T.cos((1, -1), 0.5) + T.constant(2, 1.0), 1e-13)


def test_evaluate_at_matches_grid():
    p = T.cos((1, 2), 0.5) + T.sin((3, 0), 1.5)
    g = GridSpec(2, 8)
    vals = p.evaluate(g)
    idx = (3, 5)
    x = tuple(float(pt[idx]) for pt in g.points)
    assert math.isclose(p.evaluate_at(x), vals[idx], abs_tol=1e-13)


# --- file formats -------------------------------------------------------------

def test_field_file_roundtrip(tmp_path):
    g = GridSpec(2, 8)
    f = random_field(g, np.random.default_rng(0))
    save_field(tmp_path / "f.cglf", f)
    h = load_field(tmp_path / "f.cglf")
    assert h.grid == g and np.array_equal(h.coeffs, f.coeffs)
    raw = (tmp_path / "f.cglf").read_bytes()
    assert raw[:4] == b"CGLF"
    (tmp_path / "bad.cglf").write_bytes(raw[:-3])
    with pytest.raises(ValueError):
        load_field(tmp_path / "bad.cglf")


def test_trig_file_roundtrip(tmp_path):
    p = T.cos((1, 0), 0.1) + T.sin((1, 1), -2.5) + T.constant(2, 3.0)
    write_trig(tmp_path / "p.trig", p)
    assert read_trig(tmp_path / "p.trig") == p
    assert parse_trig("# header\n2 0.3 0\n") == T.cos((2,), 0.3)
    with pytest.raises(ValueError):
        parse_trig("1 2\n")

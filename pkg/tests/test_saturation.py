import itertools
import math
from functools import reduce

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cglsteer.dynamics import standard_field
from cglsteer.saturation import (
    DecompositionError,
    FrequencySet,
    SaturationChain,
    SubspaceBasis,
    chain_condition,
    check_Q_condition,
    decompose,
    frequency_space,
    grow,
    is_generator,
    is_saturating,
    saturation_chain,
    saturation_report,
    standard_frequency_set,
)
from cglsteer.spectral import TrigPolynomial, b_operator

T = TrigPolynomial


def det_int(m):
    return round(np.linalg.det(np.array(m, dtype=float)))


def minors_gcd_oracle(vectors, d):
    """Z-span is Z^d iff the gcd of all d x d minors is 1."""
    dets = [abs(det_int(c)) for c in itertools.combinations(vectors, d)]
    return bool(dets) and reduce(math.gcd, dets) == 1


def brute_chain_oracle(vectors, sigma):
    for l in vectors:
        for m in vectors:
            ok = any(
                np.dot(l, ns[0]) != 0
                and all(np.dot(a, b) != 0 for a, b in zip(ns, ns[1:]))
                and np.dot(ns[-1], m) != 0
                for ns in itertools.product(vectors, repeat=sigma)
            )
            if not ok:
                return False
    return True


vec2 = st.tuples(st.integers(-3, 3), st.integers(-3, 3)).filter(any)


@settings(max_examples=60, deadline=None)
@given(st.lists(vec2, min_size=1, max_size=4, unique=True))
def test_generator_matches_minor_gcd(vs):
    assert is_generator(FrequencySet(2, tuple(vs))) == minors_gcd_oracle(vs, 2)


@settings(max_examples=40, deadline=None)
@given(st.lists(vec2, min_size=1, max_size=4, unique=True), st.integers(1, 3))
def test_chain_condition_matches_brute_force(vs, sigma):
    verdict, wit = chain_condition(FrequencySet(2, tuple(vs)), sigma)
    assert verdict == brute_chain_oracle(vs, sigma)
    for (l, m), chain in wit.items():
        if chain is not None:
            assert len(chain) == sigma
            assert np.dot(l, chain[0]) != 0 and np.dot(chain[-1], m) != 0
            assert all(np.dot(a, b) != 0 for a, b in zip(chain, chain[1:]))


def test_generator_examples():
    assert is_generator(FrequencySet(2, ((1, 0), (1, 1))))
    assert not is_generator(FrequencySet(2, ((2, 0), (0, 1))))
    assert is_generator(FrequencySet(2, ((2, 1), (1, 1))))
    assert not is_generator(FrequencySet(3, ((1, 0, 0), (0, 1, 0))))
    assert is_generator(FrequencySet(1, ((2,), (3,))))


@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("sigma", [1, 2])
def test_standard_set_saturating(d, sigma):
    assert is_saturating(standard_frequency_set(d), sigma)


def test_orthogonal_basis_not_saturating():
    I = FrequencySet(2, ((1, 0), (0, 1)))
    assert is_generator(I)
    ok, wit = chain_condition(I, 1)
    assert not ok and wit[((1, 0), (0, 1))] is None
    assert not is_saturating(I, 1)


def test_frequency_set_validation():
    with pytest.raises(ValueError):
        FrequencySet(2, ((0, 0),))
    with pytest.raises(ValueError):
        FrequencySet(2, ((1, 0), (1, 0)))
    with pytest.raises(ValueError):
        FrequencySet(2, ((1, 0, 0),))


def test_q_condition():
    assert check_Q_condition(standard_field(2), standard_frequency_set(2))
    assert not check_Q_condition(standard_field(1)[:2], standard_frequency_set(1))


def test_grow_one_dimension_degree_two():
    H0 = standard_frequency_set(1).subspace()
    H1 = grow(H0)
    assert H0.dim == 3 and H1.dim == 5
    full = frequency_space(1, 2)
    assert H1.includes(full) and full.includes(H1)
    assert saturation_chain(H0, 2).levels[2].dim == 9


def test_grow_two_dimensions_difference_frequency():
    H1 = grow(standard_frequency_set(2).subspace())
    assert H1.contains(T.cos((0, 1)))
    assert H1.contains(T.sin((2, 1)))
    assert not H1.contains(T.cos((1, -1)))


def test_grow_contains_b_of_elements():
    H0 = standard_frequency_set(2).subspace()
    H1 = grow(H0)
    rng = np.random.default_rng(0)
    for _ in range(5):
        theta = H0.combine(rng.standard_normal(H0.dim))
        assert H1.contains(b_operator(theta))


def test_subspace_basis_rejects_dependence():
    with pytest.raises(ValueError):
        SubspaceBasis([T.cos((1,)), T.cos((1,), 2.0)])


def test_chain_nesting_enforced():
    a = SubspaceBasis([T.constant(1)])
    b = SubspaceBasis([T.cos((1,))])
    with pytest.raises(ValueError):
        SaturationChain([a, b])


def test_level_of():
    ch = saturation_chain(standard_frequency_set(1).subspace(), 2)
    assert ch.level_of(T.sin((1,))) == 0
    assert ch.level_of(T.cos((2,))) == 1
    assert ch.level_of(T.cos((4,))) == 2
    assert ch.level_of(T.cos((5,))) is None


def test_decompose_cos2x():
    dec = decompose(T.cos((2,)), standard_frequency_set(1).subspace())
    assert dec.theta0.allclose(T.constant(1, -1.0), 1e-9)
    assert len(dec.parts) == 1
    assert dec.parts[0].allclose(T.sin((1,), math.sqrt(2)), 1e-9)
    assert dec.residual < 1e-12


def test_decompose_sin2x():
    dec = decompose(T.sin((2,)), standard_frequency_set(1).subspace())
    assert dec.theta0.allclose(T.constant(1, -1.0), 1e-9)
    p = dec.parts[0]
    assert p.allclose(T.cos((1,)) - T.sin((1,)), 1e-9) or p.allclose(T.sin((1,)) - T.cos((1,)), 1e-9)


def test_decompose_member_of_h_prev():
    H0 = standard_frequency_set(1).subspace()
    dec = decompose(T.cos((1,), 0.3) + T.constant(1, 2.0), H0)
    assert dec.parts == [] and dec.residual < 1e-14


def test_decompose_outside_fails():
    with pytest.raises(DecompositionError):
        decompose(T.cos((3,)), standard_frequency_set(1).subspace(), restarts=2)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_decompose_random_h1_targets(seed):
    H0 = standard_frequency_set(1).subspace()
    H1 = grow(H0)
    rng = np.random.default_rng(seed)
    theta = H1.combine(rng.standard_normal(H1.dim))
    dec = decompose(theta, H0, seed=seed)
    assert dec.residual < 1e-8
    assert (dec.reconstruct() - theta).coefficient_norm() < 1e-8
    assert all(H0.contains(p) for p in dec.parts) and H0.contains(dec.theta0)


def test_decompose_two_dimensions():
    H0 = standard_frequency_set(2).subspace()
    theta = T.cos((0, 1), 0.4) - T.sin((2, 2), 0.3) + T.cos((1, 1), 0.2)
    dec = decompose(theta, H0, seed=1)
    assert dec.residual < 1e-8


def test_decompose_is_deterministic():
    H0 = standard_frequency_set(2).subspace()
    theta = T.cos((2, 1), 0.7) + T.sin((0, 1), -0.2)
    a = decompose(theta, H0, seed=5)
    b = decompose(theta, H0, seed=5)
    assert [p.terms for p in a.parts] == [p.terms for p in b.parts]


def test_saturation_report_text():
    text = saturation_report(standard_frequency_set(2), 1, 1, Q=standard_field(2))
    assert "verdict,saturating,true" in text
    assert "verdict,Q_condition,true" in text
    assert "level,H_1.dim,13" in text
    text = saturation_report(FrequencySet(2, ((1, 0), (0, 1))), 1, 0)
    assert "verdict,saturating,false" in text and "none" in text

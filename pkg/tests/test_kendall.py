import itertools

import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from ktsearch.kendall import (
    LengthMismatchError,
    RankListError,
    discordant_pairs,
    kt_distance,
    kt_distance_many,
    kt_distance_oracle,
    kt_distance_oracle_many,
    max_pairs,
    normalize,
)

A, B, C, D = 0, 1, 2, 3
TAU1 = [A, B, C, D]
TAU2 = [C, D, A, B]


@st.composite
def perm_pair(draw, min_n=2, max_n=12):
    n = draw(st.integers(min_n, max_n))
    a = draw(st.permutations(range(n)))
    b = draw(st.permutations(range(n)))
    return list(a), list(b)


@st.composite
def perm_triple(draw, n=10):
    return tuple(list(draw(st.permutations(range(n)))) for _ in range(3))


def test_table1_example():
    assert kt_distance(TAU1, TAU2) == 4
    assert kt_distance_oracle(TAU1, TAU2) == 4
    assert set(discordant_pairs(TAU1, TAU2)) == {(A, C), (A, D), (B, C), (B, D)}
    assert normalize(4, 4) == pytest.approx(2 / 3)


def test_identity_and_reversal():
    for n in range(2, 15):
        ident = list(range(n))
        assert kt_distance(ident, ident) == 0
        assert kt_distance(ident, ident[::-1]) == max_pairs(n)


def test_single_adjacent_swap():
    assert kt_distance_oracle([0, 1, 2], [1, 0, 2]) == 1
    assert kt_distance([0, 1, 2], [1, 0, 2]) == 1


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_exhaustive_small_n(n):
    perms = [list(p) for p in itertools.permutations(range(n))]
    for a in perms:
        for b in perms:
            assert kt_distance(a, b) == kt_distance_oracle(a, b)


@settings(max_examples=400, deadline=None)
@given(perm_pair(min_n=5, max_n=12))
def test_matches_oracle(pair):
    a, b = pair
    assert kt_distance(a, b) == kt_distance_oracle(a, b)


def test_bulk_paths_agree():
    rng = np.random.default_rng(11)
    for n in (2, 7, 16, 30):
        q = rng.permutation(n)
        others = np.array([rng.permutation(n) for _ in range(300)])
        fast = kt_distance_many(q, others)
        slow = kt_distance_oracle_many(q, others)
        np.testing.assert_array_equal(fast, slow)
        assert fast[5] == kt_distance_oracle(q, others[5])


@settings(max_examples=300, deadline=None)
@given(perm_triple())
def test_metric_axioms(triple):
    a, b, c = triple
    dab, dba = kt_distance(a, b), kt_distance(b, a)
    assert dab >= 0
    assert dab == dba
    assert (dab == 0) == (a == b)
    assert kt_distance(a, c) <= dab + kt_distance(b, c)


@settings(max_examples=300, deadline=None)
@given(perm_pair(min_n=2, max_n=12), st.data())
def test_adjacent_swap_moves_distance_by_one(pair, data):
    a, b = pair
    i = data.draw(st.integers(0, len(b) - 2))
    b2 = list(b)
    b2[i], b2[i + 1] = b2[i + 1], b2[i]
    assert abs(kt_distance(a, b2) - kt_distance(a, b)) == 1


@settings(max_examples=200, deadline=None)
@given(perm_pair())
def test_normalized_bounds(pair):
    a, b = pair
    n = len(a)
    x = normalize(kt_distance(a, b), n)
    assert 0.0 <= x <= 1.0
    assert (x == 1.0) == (b == a[::-1])


def test_normalize_edges():
    assert normalize(0, 7) == 0.0
    assert normalize(21, 7) == 1.0
    with pytest.raises(ValueError):
        normalize(0, 1)
    with pytest.raises(ValueError):
        normalize(22, 7)


@pytest.mark.parametrize("fn", [kt_distance, kt_distance_oracle])
def test_errors(fn):
    with pytest.raises(LengthMismatchError):
        fn([0, 1, 2], [0, 1])
    with pytest.raises(RankListError):
        fn([0, 1, 1], [0, 1, 2])
    with pytest.raises(RankListError):
        fn([0, 1, 3], [0, 1, 2])
    with pytest.raises(RankListError):
        fn([0], [0])
    # the two error kinds are distinct
    assert not issubclass(LengthMismatchError, RankListError)
    assert not issubclass(RankListError, LengthMismatchError)

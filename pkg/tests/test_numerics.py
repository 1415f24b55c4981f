import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from treecrf_parser.numerics import (DimensionError, SingularMatrixError, as_matrix, inverse,
                                     log_det_and_inverse, lu_factorize, lu_solve,
                                     mmatrix_eliminate, sign_log_det)


def cofactor_det(m):
    m = [list(r) for r in m]
    n = len(m)
    if n == 1:
        return m[0][0]
    return sum((-1) ** j * m[0][j] * cofactor_det([row[:j] + row[j + 1:] for row in m[1:]])
               for j in range(n))


def well_conditioned(rng, n):
    while True:
        m = rng.normal(size=(n, n))
        if np.linalg.cond(m) < 1e4:
            return m


def test_identity_factorization():
    lu = lu_factorize(np.eye(3))
    assert np.array_equal(lu.lower, np.eye(3))
    assert np.array_equal(lu.upper, np.eye(3))
    assert list(lu.perm) == [0, 1, 2]
    assert not lu.singular


def test_swap_matrix_has_negative_sign():
    lu = lu_factorize([[0.0, 1.0], [1.0, 0.0]])
    assert list(lu.perm) == [1, 0]
    assert lu.sign == -1
    assert sign_log_det([[0.0, 1.0], [1.0, 0.0]]) == (-1, 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_reconstruction(seed):
    m = well_conditioned(np.random.default_rng(seed), 5)
    lu = lu_factorize(m)
    assert np.allclose(lu.permutation_matrix @ m, lu.lower @ lu.upper, rtol=1e-9, atol=1e-12)
    assert np.allclose(np.diag(lu.lower), 1.0)
    assert np.allclose(np.triu(lu.lower, 1), 0.0)
    assert np.allclose(np.tril(lu.upper, -1), 0.0)


def test_non_square_rejected():
    for fn in (lu_factorize, sign_log_det, inverse):
        with pytest.raises(DimensionError):
            fn(np.ones((2, 3)))


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        as_matrix([[1.0, np.nan], [0.0, 1.0]])


@pytest.mark.parametrize("n", [1, 2, 4, 7])
def test_identity_log_det(n):
    assert sign_log_det(np.eye(n)) == (1, 0.0)


def test_diagonal_log_det():
    sign, logdet = sign_log_det(np.diag([2.0, 3.0]))
    assert sign == 1 and logdet == pytest.approx(math.log(6.0), abs=1e-15)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_log_det_matches_cofactor_expansion(n):
    rng = np.random.default_rng(100 + n)
    for _ in range(20):
        m = rng.normal(size=(n, n))
        ref = cofactor_det(m.tolist())
        sign, logdet = sign_log_det(m)
        assert sign * math.exp(logdet) == pytest.approx(ref, rel=1e-8)


def test_singular_matrix():
    m = np.array([[1.0, 2.0], [2.0, 4.0]])
    lu = lu_factorize(m)
    assert lu.singular and lu.pivot_index == 1
    assert sign_log_det(m) == (0, -math.inf)
    with pytest.raises(SingularMatrixError) as info:
        inverse(m)
    assert info.value.pivot_index == 1


def test_diagonal_inverse():
    assert np.allclose(inverse(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]))
    assert np.array_equal(inverse(np.eye(4)), np.eye(4))


@pytest.mark.parametrize("seed", range(5))
def test_inverse_product_is_identity(seed):
    m = well_conditioned(np.random.default_rng(seed), 5)
    assert np.max(np.abs(m @ inverse(m) - np.eye(5))) < 1e-8


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_inverse_properties(n, seed):
    m = well_conditioned(np.random.default_rng(seed), n)
    s, ld = sign_log_det(m)
    si, ldi = sign_log_det(inverse(m))
    assert si == s
    assert ldi == pytest.approx(-ld, abs=1e-8)
    assert np.max(np.abs(inverse(inverse(m)) - m)) < 1e-6


def test_lu_solve_and_combined_call():
    rng = np.random.default_rng(3)
    m = well_conditioned(rng, 4)
    b = rng.normal(size=4)
    assert np.allclose(m @ lu_solve(lu_factorize(m), b), b)
    sign, logdet, inv = log_det_and_inverse(m)
    assert (sign, logdet) == sign_log_det(m)
    assert np.allclose(inv, inverse(m))


def dense_from_triplet(off, excess):
    off = off.copy()
    np.fill_diagonal(off, 0.0)
    return np.diag(excess + off.sum(axis=1)) - off


@pytest.mark.parametrize("seed", range(10))
def test_mmatrix_elimination_matches_dense(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    off, excess, b = rng.random((n, n)), rng.random(n), rng.random(n)
    pivots, x = mmatrix_eliminate(off, excess, b)
    w = dense_from_triplet(off, excess)
    assert np.prod(pivots) == pytest.approx(np.linalg.det(w), rel=1e-10)
    assert np.allclose(w @ x, b, atol=1e-12)


def test_mmatrix_elimination_batched():
    rng = np.random.default_rng(7)
    off, excess, b = rng.random((3, 4, 4)), rng.random((3, 4)), rng.random((3, 4))
    pivots, x = mmatrix_eliminate(off, excess, b)
    for k in range(3):
        w = dense_from_triplet(off[k], excess[k])
        assert np.allclose(w @ x[k], b[k])
        assert np.prod(pivots[k]) == pytest.approx(np.linalg.det(w))


def test_mmatrix_elimination_is_accurate_when_nearly_singular():
    eps = 1e-14
    off = np.array([[0.0, 1.0], [1.0, 0.0]])
    pivots, _ = mmatrix_eliminate(off, np.array([eps, 0.0]))
    # dense form [[1 + eps, -1], [-1, 1]] has det eps; LU by subtraction loses it
    assert np.prod(pivots) == pytest.approx(eps, rel=1e-12)


def test_mmatrix_elimination_rejects_singular_and_negative():
    with pytest.raises(SingularMatrixError):
        mmatrix_eliminate(np.array([[0.0, 1.0], [1.0, 0.0]]), np.zeros(2))
    with pytest.raises(ValueError):
        mmatrix_eliminate(-np.ones((2, 2)), np.ones(2))

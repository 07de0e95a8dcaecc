import time
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparsecert.oracles import classical_babel, oracle_babel, oracle_sparse_norm
from sparsecert.sparse import (
    DegenerateMatrixError, OversizeError, reduced_babel, reduced_row_norm, reduced_row_norm_table,
    sparse_norm, sparse_norm_exact, sparse_norm_exact_table, sparse_norm_upper_bound, spectral_norm,
)


def all_pairs(W):
    d_out, d_in = W.shape
    return [(a, b) for a in range(d_out) for b in range(d_in)]


def test_spectral_norm_matches_svd(rng):
    A = rng.standard_normal((50, 7, 5))
    np.testing.assert_allclose(spectral_norm(A), np.linalg.svd(A, compute_uv=False)[:, 0], rtol=1e-10)
    assert spectral_norm(np.zeros((3, 3))) == 0.0
    # repeated top singular value
    assert spectral_norm(np.eye(4)) == pytest.approx(1.0, rel=1e-12)


def test_identity_and_max_entry(rng):
    assert sparse_norm_exact(np.eye(5), (0, 0)) == pytest.approx(1.0, rel=1e-12)
    for _ in range(10):
        W = rng.standard_normal((4, 6))
        assert sparse_norm_exact(W, (3, 5)) == pytest.approx(np.abs(W).max(), rel=1e-12)
        assert sparse_norm_exact(W, (0, 0)) == pytest.approx(np.linalg.norm(W, 2), rel=1e-10)


def test_random_4x4_matches_enumeration(rng):
    W = rng.standard_normal((4, 4))
    best = max(
        np.linalg.norm(W[np.ix_(r, c)], 2)
        for r in combinations(range(4), 3)
        for c in combinations(range(4), 3)
    )
    assert sparse_norm_exact(W, (1, 1)) == pytest.approx(best, rel=1e-10)


def test_table_matches_pairwise(rng):
    for _ in range(5):
        W = rng.standard_normal((rng.integers(1, 6), rng.integers(1, 6)))
        T = sparse_norm_exact_table(W)
        for p in all_pairs(W):
            assert T[p] == pytest.approx(sparse_norm_exact(W, p), rel=1e-10)


def test_oversize_guard():
    with pytest.raises(OversizeError):
        sparse_norm_exact(np.ones((13, 2)), (0, 0))
    value, mode = sparse_norm(np.ones((13, 2)), (1, 0))
    assert mode == "bound" and value >= np.sqrt(2 * 12) - 1e-9


def test_argument_ranges():
    W = np.ones((3, 4))
    with pytest.raises(ValueError):
        sparse_norm_exact(W, (3, 0))
    with pytest.raises(ValueError):
        reduced_row_norm(W, 4)
    with pytest.raises(ValueError):
        reduced_babel(W, (0, -1))


def test_reduced_row_norm_examples(rng):
    W = np.array([[3.0, 4.0]])
    assert reduced_row_norm(W, 0) == 5.0
    assert reduced_row_norm(W, 1) == 4.0
    for _ in range(20):
        W = rng.standard_normal((6, 6))
        table = reduced_row_norm_table(W)
        for s in range(6):
            exact = sparse_norm_exact(W, (5, s))
            assert reduced_row_norm(W, s) == pytest.approx(exact, rel=1e-12)
            assert table[s] == pytest.approx(exact, rel=1e-12)


def test_babel_examples(rng):
    assert reduced_babel(np.eye(4), (0, 0)) == 0.0
    W = rng.standard_normal((5, 3))
    assert reduced_babel(W, (4, 1)) == 0.0
    assert sparse_norm_upper_bound(W, (4, 1)) == reduced_row_norm(W, 1)
    assert sparse_norm_upper_bound(np.eye(4), (0, 0)) == 1.0
    with pytest.raises(DegenerateMatrixError):
        reduced_babel(np.zeros((3, 3)), (0, 0))
    assert sparse_norm_upper_bound(np.zeros((3, 3)), (0, 0)) == 0.0


def test_babel_matches_enumeration(rng):
    for _ in range(20):
        W = rng.standard_normal((5, 5))
        for p in all_pairs(W):
            assert reduced_babel(W, p) == pytest.approx(oracle_babel(W, *p), rel=1e-12, abs=1e-14)


def test_babel_bounded_after_normalization(rng):
    for _ in range(30):
        d_out, d_in = rng.integers(2, 8, 2)
        W = rng.standard_normal((d_out, d_in))
        for s_out, s_in in all_pairs(W):
            Wn = W / reduced_row_norm(W, s_in)
            assert reduced_babel(Wn, (s_out, s_in)) <= d_out - s_out - 1 + 1e-12


def test_classical_babel_special_case(rng):
    """With unit-norm rows, mu_(s_out, 0) is the classical Babel function of the
    columns of W^T at support size d_out - s_out - 1."""
    for _ in range(20):
        W = rng.standard_normal((5, 4))
        W /= np.linalg.norm(W, axis=1, keepdims=True)
        for s_out in range(4):
            p = 5 - s_out - 1
            assert reduced_babel(W, (s_out, 0)) == pytest.approx(classical_babel(W.T, p), abs=1e-12)


def test_upper_bound_sound(rng):
    for _ in range(30):
        W = rng.standard_normal(tuple(rng.integers(1, 7, 2)))
        T = sparse_norm_exact_table(W)
        for p in all_pairs(W):
            assert sparse_norm_upper_bound(W, p) >= T[p] * (1 - 1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.integers(1, 5))
def test_monotone_in_sparsity(seed, d_out, d_in):
    W = np.random.default_rng(seed).standard_normal((d_out, d_in))
    T = sparse_norm_exact_table(W)
    tol = 1e-12 * T[0, 0]
    assert np.all(np.diff(T, axis=0) <= tol)
    assert np.all(np.diff(T, axis=1) <= tol)


def test_oracle_equivalence_200(rng):
    start = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        W = rng.standard_normal(tuple(rng.integers(1, 7, 2)))
        T = sparse_norm_exact_table(W)
        for p in all_pairs(W):
            ref = oracle_sparse_norm(W, *p)
            worst = max(worst, abs(T[p] - ref) / ref)
    assert worst <= 1e-8
    assert time.perf_counter() - start < 60

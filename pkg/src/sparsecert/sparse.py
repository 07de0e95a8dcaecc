"""Sparse induced norms and the reduced Babel function.

The sparse norm ``||W||_(s_out, s_in)`` is the largest spectral norm over all
sub-matrices that drop ``s_out`` rows and ``s_in`` columns. It is computed
exactly by enumeration for small matrices; for anything larger use
:func:`sparse_norm_upper_bound`, which combines the reduced row norm with the
reduced Babel function.
"""

from __future__ import annotations

from itertools import combinations
from typing import NamedTuple

import numpy as np

MAX_EXACT_DIM = 12
_CHUNK_BYTES = 64 * 2**20


class OversizeError(ValueError):
    """Matrix too large for combinatorial enumeration."""


class DegenerateMatrixError(ValueError):
    pass


class SparsityPair(NamedTuple):
    s_out: int
    s_in: int


def _check_pair(W: np.ndarray, s_out: int, s_in: int) -> None:
    d_out, d_in = W.shape
    if not 0 <= s_out <= d_out - 1:
        raise ValueError(f"s_out={s_out} outside [0, {d_out - 1}]")
    if not 0 <= s_in <= d_in - 1:
        raise ValueError(f"s_in={s_in} outside [0, {d_in - 1}]")


def spectral_norm(A, max_iter: int = 10_000, tol: float = 1e-10) -> np.ndarray:
    """Largest singular value of ``A`` (batched over leading axes).

    Power iteration on the smaller Gram matrix ``G``; each step applies
    ``G**8`` (rescaled) and convergence is judged by the relative eigen-residual
    of ``G`` itself. Batch members that do not converge within ``max_iter``
    steps fall back to a symmetric eigensolver on ``G``.
    """
    A = np.asarray(A, dtype=np.float64)
    batch_shape = A.shape[:-2]
    m, n = A.shape[-2:]
    A = A.reshape((-1, m, n))
    G = A.transpose(0, 2, 1) @ A if n <= m else A @ A.transpose(0, 2, 1)
    B, p, _ = G.shape
    lam = np.zeros(B)
    if p == 0 or B == 0:
        return lam.reshape(batch_shape)
    scale = np.linalg.norm(G, axis=(1, 2))
    zero = scale == 0.0
    H = G / np.where(zero, 1.0, scale)[:, None, None]
    for _ in range(3):
        H = H @ H
        H /= np.maximum(np.linalg.norm(H, axis=(1, 2)), 1e-300)[:, None, None]
    v = np.random.default_rng(0).standard_normal(p) + 1.0
    v = np.broadcast_to(v / np.linalg.norm(v), (B, p)).copy()
    active = np.flatnonzero(~zero)
    for _ in range(max(1, max_iter // 8)):
        if active.size == 0:
            break
        va = v[active]
        w = (G[active] @ va[..., None])[..., 0]
        rq = np.einsum("bi,bi->b", va, w)
        res = np.sqrt(np.einsum("bi,bi->b", w - rq[:, None] * va, w - rq[:, None] * va))
        done = res <= tol * np.abs(rq)
        lam[active[done]] = rq[done]
        keep = ~done
        act = active[keep]
        u = (H[act] @ v[act][..., None])[..., 0]
        un = np.sqrt(np.einsum("bi,bi->b", u, u))
        stuck = un == 0.0
        u[stuck] = v[act][stuck]
        v[act] = u / np.where(stuck, 1.0, un)[:, None]
        active = act
    if active.size:
        lam[active] = np.linalg.eigvalsh(G[active])[:, -1]
    return np.sqrt(np.maximum(lam, 0.0)).reshape(batch_shape)


def _subsets(d: int, keep: int) -> np.ndarray:
    return np.array(list(combinations(range(d), keep)), dtype=np.intp).reshape(-1, keep)


def sparse_norm_exact(W, p) -> float:
    """Exact ``||W||_(s_out, s_in)`` by enumerating every retained sub-matrix."""
    W = np.asarray(W, dtype=np.float64)
    s_out, s_in = p
    if max(W.shape) > MAX_EXACT_DIM:
        raise OversizeError(
            f"{W.shape} exceeds the {MAX_EXACT_DIM}x{MAX_EXACT_DIM} enumeration guard; "
            "use sparse_norm_upper_bound"
        )
    _check_pair(W, s_out, s_in)
    d_out, d_in = W.shape
    rows = _subsets(d_out, d_out - s_out)
    cols = _subsets(d_in, d_in - s_in)
    per_sub = rows.shape[1] * cols.shape[1] * 8
    step = max(1, _CHUNK_BYTES // max(per_sub * len(cols), 1))
    best = 0.0
    for i in range(0, len(rows), step):
        r = rows[i : i + step]
        sub = W[r[:, None, :, None], cols[None, :, None, :]]
        best = max(best, float(spectral_norm(sub).max()))
    return best


def sparse_norm_exact_table(W) -> np.ndarray:
    """``table[s_out, s_in] == sparse_norm_exact(W, (s_out, s_in))`` for all pairs.

    Every sub-matrix is represented by masking the dropped rows and columns to
    zero (which leaves its spectral norm unchanged) so that a single batched
    power iteration handles all of them.
    """
    W = np.asarray(W, dtype=np.float64)
    if max(W.shape) > MAX_EXACT_DIM:
        raise OversizeError(f"{W.shape} exceeds the enumeration guard")
    d_out, d_in = W.shape
    row_masks = ((np.arange(2**d_out)[:, None] >> np.arange(d_out)) & 1).astype(bool)
    col_masks = ((np.arange(2**d_in)[:, None] >> np.arange(d_in)) & 1).astype(bool)
    row_masks, col_masks = row_masks[1:], col_masks[1:]
    rsize = row_masks.sum(1)
    csize = col_masks.sum(1)
    table = np.zeros((d_out, d_in))
    step = max(1, _CHUNK_BYTES // (8 * d_out * d_in * len(col_masks)))
    for i in range(0, len(row_masks), step):
        rm = row_masks[i : i + step]
        sub = W[None, None] * rm[:, None, :, None] * col_masks[None, :, None, :]
        norms = spectral_norm(sub)
        for a, ra in enumerate(d_out - rsize[i : i + step]):
            np.maximum.at(table[ra], d_in - csize, norms[a])
    return table


def _topk_sum(a: np.ndarray, k: int) -> np.ndarray:
    """Sum of the ``k`` largest entries along the last axis."""
    d = a.shape[-1]
    if k >= d:
        return a.sum(axis=-1)
    if k <= 0:
        return np.zeros(a.shape[:-1])
    return np.partition(a, d - k, axis=-1)[..., d - k :].sum(axis=-1)


def reduced_row_norm(W, s_in: int) -> float:
    """``||W||_(d_out-1, s_in)``: the largest 2-norm of any row restricted to
    ``d_in - s_in`` of its coordinates."""
    W = np.asarray(W, dtype=np.float64)
    d_in = W.shape[1]
    if not 0 <= s_in <= d_in - 1:
        raise ValueError(f"s_in={s_in} outside [0, {d_in - 1}]")
    return float(np.sqrt(_topk_sum(W * W, d_in - s_in).max()))


def reduced_row_norm_table(W) -> np.ndarray:
    """``table[s] == reduced_row_norm(W, s)`` for every ``s in [0, d_in-1]``."""
    W = np.asarray(W, dtype=np.float64)
    sq = -np.sort(-(W * W), axis=1)
    csum = np.cumsum(sq, axis=1)  # csum[:, j] = sum of the j+1 largest
    keep = csum[:, ::-1]  # keep[:, s] = sum of the d_in - s largest
    return np.sqrt(keep.max(axis=0))


def reduced_inner_products(W, s_in: int) -> np.ndarray:
    """Matrix of ``max_{|J|=d_in-s_in} |<w_i[J], w_j[J]>|`` (zero diagonal)."""
    W = np.asarray(W, dtype=np.float64)
    d_out, d_in = W.shape
    k = d_in - s_in
    A = np.zeros((d_out, d_out))
    step = max(1, _CHUNK_BYTES // (8 * d_out * d_in))
    for i in range(0, d_out, step):
        prod = W[i : i + step, None, :] * W[None, :, :]
        A[i : i + step] = np.maximum(_topk_sum(prod, k), _topk_sum(-prod, k))
    np.fill_diagonal(A, 0.0)
    return A


def reduced_babel(W, p) -> float:
    """Reduced Babel function ``mu_(s_out, s_in)(W)``.

    For each anchor row the best retained set keeps the ``d_out - s_out - 1``
    other rows with the largest reduced inner products, so the maximisation
    over row subsets reduces to a per-row top-k sum. The result is normalised
    by the squared reduced row norm.
    """
    W = np.asarray(W, dtype=np.float64)
    s_out, s_in = p
    _check_pair(W, s_out, s_in)
    d_out = W.shape[0]
    if s_out == d_out - 1:
        return 0.0
    norm = reduced_row_norm(W, s_in)
    if norm == 0.0:
        raise DegenerateMatrixError("reduced row norm is zero")
    A = reduced_inner_products(W, s_in)
    return float(_topk_sum(A, d_out - s_out - 1).max() / norm**2)


def sparse_norm_upper_bound(W, p) -> float:
    """``||W||_(d_out-1, s_in) * sqrt(1 + mu_(s_out, s_in)(W))``."""
    s_out, s_in = p
    W = np.asarray(W, dtype=np.float64)
    _check_pair(W, s_out, s_in)
    if s_out == W.shape[0] - 1:
        return reduced_row_norm(W, s_in)
    norm = reduced_row_norm(W, s_in)
    if norm == 0.0:
        return 0.0
    return norm * float(np.sqrt(1.0 + reduced_babel(W, p)))


def sparse_norm(W, p) -> tuple[float, str]:
    """Exact sparse norm when enumeration is affordable, else the upper bound.

    Returns ``(value, mode)`` with mode ``"exact"`` or ``"bound"``.
    """
    W = np.asarray(W, dtype=np.float64)
    s_out, s_in = p
    if s_out == W.shape[0] - 1:
        return reduced_row_norm(W, s_in), "exact"
    if max(W.shape) <= MAX_EXACT_DIM:
        return sparse_norm_exact(W, p), "exact"
    return sparse_norm_upper_bound(W, p), "bound"

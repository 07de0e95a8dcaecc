"""Best-in-grid hyper-parameter search for the sparsity-aware bound."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bound import EXPANDED, BoundReport, _evaluate, grid_union_delta
from .netcore import Network, forward_batch
from .radius import HyperParams, effective_activity_ratios, kth_largest
from .sparse import reduced_babel, reduced_row_norm, reduced_row_norm_table


@dataclass
class SearchConfig:
    eps_bar_grid: list
    alpha_grid: list
    eta_grid_size: int = 8
    delta: float = 0.05
    mode: str = EXPANDED

    def __post_init__(self):
        self.eps_bar_grid = [float(v) for v in self.eps_bar_grid]
        self.alpha_grid = [float(v) for v in self.alpha_grid]
        if not self.eps_bar_grid or not self.alpha_grid:
            raise ValueError("grids must be non-empty")
        if any(not 0 <= v <= 1 for v in self.eps_bar_grid):
            raise ValueError("eps_bar values must lie in [0, 1]")
        if any(v < 0 for v in self.alpha_grid):
            raise ValueError("alpha values must be non-negative")
        if self.eta_grid_size < 1:
            raise ValueError("eta grid needs at least one point")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")


def eps_schedule(eps_bar: float, K: int) -> list:
    """``eps_k = eps_bar / (K + 2 - k)`` so that the read-out layer gets
    ``eps_bar`` and the first layer ``eps_bar / (K + 1)``."""
    if not 0 <= eps_bar <= 1:
        raise ValueError(f"eps_bar must lie in [0, 1], got {eps_bar}")
    return [eps_bar / (K + 2 - k) for k in range(1, K + 2)]


def eta_grid(d_k: int, s_k: int, size: int) -> np.ndarray:
    return np.linspace(0.0, float(d_k - s_k - 1), size)


def round_eta(value: float, d_k: int, s_k: int, size: int | None) -> float:
    """Smallest grid value not below ``value`` (identity when ``size`` is None)."""
    if size is None:
        return float(value)
    grid = eta_grid(d_k, s_k, size)
    top = grid[-1]
    if value > top:
        if value > top * (1 + 1e-9) + 1e-12:
            raise AssertionError(f"reduced Babel {value} exceeds the grid maximum {top}")
        return float(top)
    return float(grid[np.searchsorted(grid, value, side="left")])


class _EtaCache:
    """Reduced Babel values of (raw) layers keyed by sparsity pair; the
    function is scale invariant so normalization never changes them."""

    def __init__(self, net: Network, eta_grid_size: int | None):
        self.net = net
        self.size = eta_grid_size
        self.cache = {}

    def __call__(self, k: int, s_k: int, s_prev: int) -> float:
        key = (k, s_k, s_prev)
        if key not in self.cache:
            w = self.net.layers[k - 1]
            mu = reduced_babel(w / reduced_row_norm(w, s_prev), (s_k, s_prev))
            self.cache[key] = round_eta(mu, w.shape[0], s_k, self.size)
        return self.cache[key]


def greedy_sparsity(
    net: Network, x, eps: Sequence[float], m_x: float, eta_grid_size: int | None = None,
    eta_fn=None,
) -> list:
    """Largest per-layer sparsity keeping ``r_k > 3 gamma_k``, chosen layer by
    layer by binary search over ``s_k``.

    ``xi_k`` is the reduced row norm of ``W_k`` at the already chosen
    ``s_{k-1}`` and the reduced Babel values of earlier layers are frozen once
    their sparsity is fixed.
    """
    x = np.asarray(x, dtype=np.float64)
    K = net.depth
    eta_fn = eta_fn or _EtaCache(net, eta_grid_size)
    s = [0]
    zeta = float(m_x)
    gamma = 0.0
    act = x
    for k in range(1, K + 1):
        w = net.layers[k - 1]
        gamma = (1 + gamma) * (1 + eps[k - 1]) - 1
        xi = reduced_row_norm(w, s[-1])
        z = w @ act
        u = -z / (xi * zeta)

        def ok(sk):
            return sk == 0 or max(float(kth_largest(u, sk)), 0.0) > 3 * gamma

        s.append(largest_feasible(ok, w.shape[0] - 1))
        if k < K:
            zeta *= xi * math.sqrt(1 + eta_fn(k, s[-1], s[-2]))
        act = np.maximum(z, 0.0)
    return s[1:]


def greedy_sparsity_batch(
    net: Network, X, eps: Sequence[float], m_x: float, eta_grid_size: int | None = None,
    eta_fn=None, pre=None,
) -> np.ndarray:
    """Vectorized :func:`greedy_sparsity` over the rows of ``X``; shape ``(n, K)``."""
    K = net.depth
    if pre is None:
        _, pre, _ = forward_batch(net, X)
    n = pre[0].shape[0]
    eta_fn = eta_fn or _EtaCache(net, eta_grid_size)
    S = np.zeros((n, K), dtype=np.int64)
    s_prev = np.zeros(n, dtype=np.int64)
    zeta = np.full(n, float(m_x))
    gamma = 0.0
    for k in range(1, K + 1):
        w = net.layers[k - 1]
        gamma = (1 + gamma) * (1 + eps[k - 1]) - 1
        xi = reduced_row_norm_table(w)[s_prev]
        u = -pre[k - 1] / (xi * zeta)[:, None]
        # r(s) > t holds exactly for s up to the number of entries above t
        sk = np.minimum((u > 3 * gamma).sum(axis=1), w.shape[0] - 1)
        S[:, k - 1] = sk
        if k < K:
            pairs = np.unique(np.stack([sk, s_prev], axis=1), axis=0)
            lookup = {(int(a), int(b)): eta_fn(k, int(a), int(b)) for a, b in pairs}
            eta = np.array([lookup[(int(a), int(b))] for a, b in zip(sk, s_prev)])
            zeta = zeta * xi * np.sqrt(1 + eta)
        s_prev = sk
    return S


def lower_quantile(values: np.ndarray, level: float) -> int:
    """Largest sample value ``v`` with at most ``level * n`` samples below ``v``."""
    v = np.sort(np.asarray(values))
    n = len(v)
    below = np.searchsorted(v, v, side="left")
    ok = below <= level * n
    return int(v[ok].max())


def largest_feasible(ok, hi: int) -> int:
    """Largest ``s`` in ``[0, hi]`` with ``ok(s)``, given ``ok(0)`` and ``ok``
    monotone (true up to a point, false after)."""
    lo = 0
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if ok(mid):
            lo = mid
        else:
            hi = mid - 1
    return lo


def _shrink_to_budget(fail_at, caps: Sequence[int], alpha: float, K: int) -> list:
    """Layer by layer, largest ``s_k <= caps[k-1]`` keeping
    ``sum_{j<k} F_j + (K-k+1) F_k <= alpha``.

    ``fail_at(k, s_k, prev)`` returns the per-sample prefix failure indicator
    at layer ``k`` given the indicator of earlier layers (None at ``k = 1``).
    It must grow with ``s_k`` and equal ``prev`` at ``s_k = 0``, which makes
    ``s_k = 0`` feasible whenever the previous layer's check passed.
    """
    out, prev, spent = [], None, 0.0
    for k in range(1, K + 1):
        def ok(sk):
            return spent + (K - k + 1) * fail_at(k, sk, prev).mean() <= alpha + 1e-12

        sk = largest_feasible(ok, int(caps[k - 1]))
        prev = fail_at(k, sk, prev)
        spent += float(prev.mean())
        out.append(sk)
    return out


def aggregate_sparsity(per_sample, alpha: float, K: int) -> list:
    """Aggregate per-sample sparsity vectors into one class-wide vector.

    Lower quantile at level ``2 alpha / (K (K - 1))`` for ``K >= 2``, the
    sample minimum for ``K = 1`` or ``alpha = 0``. The result is then shrunk
    until the prefix losses ``F_k = mean 1{exists n <= k: s_n > s_n^(i)}``
    satisfy ``sum_k F_k <= alpha``.
    """
    S = np.atleast_2d(np.asarray(per_sample, dtype=np.int64))
    if S.shape[0] == 0:
        raise ValueError("no per-sample sparsity vectors")
    if S.shape[1] != K:
        raise ValueError(f"vectors have length {S.shape[1]}, expected {K}")
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    if K == 1 or alpha == 0:
        return [int(v) for v in S.min(axis=0)]
    level = 2 * alpha / (K * (K - 1))
    caps = [lower_quantile(S[:, k], level) for k in range(K)]

    def fail_at(k, sk, prev):
        f = S[:, k - 1] < sk
        return f if prev is None else f | prev

    return _shrink_to_budget(fail_at, caps, alpha, K)


def prefix_losses_proxy(S, s_hat) -> list:
    S = np.atleast_2d(np.asarray(S))
    bad = np.logical_or.accumulate(S < np.asarray(s_hat)[None, :], axis=1)
    return [float(v) for v in bad.mean(axis=0)]


def measure_xi_eta(net: Network, s: Sequence[int], eta_grid_size: int | None = None):
    """``xi`` as measured reduced row norms of all K+1 layers and ``eta`` as
    reduced Babel values, rounded up to the grid when ``eta_grid_size`` is set."""
    full = [0] + list(s) + [0]
    xi = [reduced_row_norm(w, full[k]) for k, w in enumerate(net.layers)]
    eta = []
    for k in range(1, len(s) + 1):
        w = net.layers[k - 1]
        mu = reduced_babel(w, (full[k], full[k - 1]))
        eta.append(round_eta(mu, w.shape[0], full[k], eta_grid_size))
    return xi, eta


def normalize_for(net: Network, s: Sequence[int]) -> Network:
    """Rescale every layer to unit reduced row norm at sparsity ``s``; layers
    with zero norm (e.g. a zero prior) are kept as they are."""
    full = [0] + list(s)
    new = []
    for w, sp in zip(net.layers, full):
        c = reduced_row_norm(w, sp)
        new.append(w / c if c > 0 else w)
    return Network(new)


def union_grid_sizes(cfg: SearchConfig, dims: Sequence[int]) -> list:
    """Grid sizes entering the union bound: the eps grid, ``T_eta`` per hidden
    layer and every sparsity vector (``prod d_k``). ``xi`` is fixed to one."""
    K = len(dims) - 2
    return [len(cfg.eps_bar_grid)] + [cfg.eta_grid_size] * K + list(dims[1:-1])


@dataclass
class SearchResult:
    best: BoundReport
    cells: list
    per_sample: dict = field(default_factory=dict)  # eps_bar -> (n, K) sparsity
    kappa: dict = field(default_factory=dict)  # eps_bar -> per-sample kappa
    delta_red: float = 0.0

    def to_dict(self) -> dict:
        return {
            "delta_red": self.delta_red,
            "winner": self.best.to_dict(),
            "cells": [c.to_dict() for c in self.cells],
        }


def certify_config(
    net: Network, prior: Network, X, y, m_x: float, eps_bar: float, s_caps, alpha: float,
    eta_grid_size: int | None, delta: float, mode: str = EXPANDED,
) -> BoundReport:
    """Fix the class for one grid cell and evaluate the bound.

    Layer by layer: shrink ``s_k`` below its cap until the prefix 3-gamma
    losses stay within ``alpha``, normalize, measure ``eta`` and move on.
    """
    K = net.depth
    eps = eps_schedule(eps_bar, K)
    X = np.asarray(X, dtype=np.float64)
    _, pre, _ = forward_batch(net, X)
    gamma = []
    g = 0.0
    for e in eps:
        g = (1 + g) * (1 + e) - 1
        gamma.append(g)
    n = X.shape[0]
    s, eta, zeta = [], [], float(m_x)

    def fail_at(k, sk, prev):
        if sk == 0:
            f = np.zeros(n, dtype=bool)
        else:
            xi = reduced_row_norm(net.layers[k - 1], s[-1] if s else 0)
            r = np.maximum(kth_largest(-pre[k - 1] / (xi * zeta), sk), 0.0)
            f = r < 3 * gamma[k - 1]
        return f if prev is None else f | prev

    # the same budget rule as aggregate_sparsity, now on the true radii;
    # layer k's radius only depends on choices already made
    prev, spent = None, 0.0
    for k in range(1, K + 1):
        def ok(sk):
            return spent + (K - k + 1) * fail_at(k, sk, prev).mean() <= alpha + 1e-12

        sk = largest_feasible(ok, int(s_caps[k - 1]))
        prev = fail_at(k, sk, prev)
        spent += float(prev.mean())
        s_prev = s[-1] if s else 0
        w = net.layers[k - 1]
        mu = reduced_babel(w / reduced_row_norm(w, s_prev), (sk, s_prev))
        eta.append(round_eta(mu, w.shape[0], sk, eta_grid_size))
        # raw weights: the normalized net divides layer k's input by xi_{k-1}
        zeta *= reduced_row_norm(w, s_prev) * math.sqrt(1 + eta[-1])
        s.append(sk)
    norm_net = normalize_for(net, s)
    norm_prior = normalize_for(prior, s)
    xi = [1.0] * (K + 1)
    hp = HyperParams(s, xi, eta, eps)
    report = _evaluate(norm_net, norm_prior, X, y, hp, m_x, delta, mode)
    report.extras.update({"eps_bar": eps_bar, "alpha": alpha, "s_caps": [int(v) for v in s_caps]})
    return report


def best_in_grid(net: Network, prior: Network, X, y, m_x: float, cfg: SearchConfig) -> SearchResult:
    X = np.asarray(X, dtype=np.float64)
    K = net.depth
    delta_red = grid_union_delta(cfg.delta, union_grid_sizes(cfg, net.dims))
    _, pre, _ = forward_batch(net, X)
    eta_fn = _EtaCache(net, cfg.eta_grid_size)
    cells, per_sample, kappa = [], {}, {}
    for eps_bar in cfg.eps_bar_grid:
        eps = eps_schedule(eps_bar, K)
        S = greedy_sparsity_batch(net, X, eps, m_x, eta_fn=eta_fn, pre=pre)
        per_sample[eps_bar] = S
        kappa[eps_bar] = effective_activity_ratios(S, net.dims)
        for alpha in cfg.alpha_grid:
            caps = aggregate_sparsity(S, alpha, K)
            cells.append(
                certify_config(
                    net, prior, X, y, m_x, eps_bar, caps, alpha, cfg.eta_grid_size, delta_red, cfg.mode
                )
            )
    best = min(cells, key=lambda r: r.final_bound_raw)
    return SearchResult(best, cells, per_sample, kappa, delta_red)

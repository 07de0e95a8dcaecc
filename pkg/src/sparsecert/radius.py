"""Layer-wise sparse local radii, derived scales and local neighbourhoods."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .netcore import LayerTrace, Network, ShapeError, forward_batch
from .sparse import reduced_row_norm, sparse_norm


class DegenerateScaleError(ValueError):
    pass


@dataclass
class HyperParams:
    """Base hyper-parameters of the bounded network class.

    ``s`` holds ``s_1..s_K`` (``s_0 = s_{K+1} = 0`` are implicit), ``xi`` holds
    ``xi_1..xi_{K+1}``, ``eta`` holds ``eta_1..eta_K`` and ``eps`` holds
    ``eps_1..eps_{K+1}``.
    """

    s: list
    xi: list
    eta: list
    eps: list

    def __post_init__(self):
        self.s = [int(v) for v in self.s]
        self.xi = [float(v) for v in self.xi]
        self.eta = [float(v) for v in self.eta]
        self.eps = [float(v) for v in self.eps]
        K = len(self.s)
        if len(self.xi) != K + 1 or len(self.eta) != K or len(self.eps) != K + 1:
            raise ValueError(
                f"inconsistent lengths: s={K}, xi={len(self.xi)}, "
                f"eta={len(self.eta)}, eps={len(self.eps)}"
            )
        if any(v < 0 for v in self.s):
            raise ValueError("sparsity levels must be non-negative")
        if any(not v > 0 for v in self.xi):
            raise ValueError("xi must be positive")
        if any(v < 0 for v in self.eta) or any(v < 0 for v in self.eps):
            raise ValueError("eta and eps must be non-negative")

    @property
    def K(self) -> int:
        return len(self.s)

    def full_s(self) -> list:
        """``[s_0, s_1, ..., s_K, s_{K+1}]`` with the fixed zero ends."""
        return [0] + list(self.s) + [0]

    def check_dims(self, dims: Sequence[int]) -> None:
        if len(dims) != self.K + 2:
            raise ShapeError(f"hyper-parameters for K={self.K} but network has {len(dims) - 2}")
        for k, s in enumerate(self.s, start=1):
            if s > dims[k] - 1:
                raise ValueError(f"s_{k}={s} exceeds d_{k}-1={dims[k] - 1}")

    def to_dict(self) -> dict:
        return {"s": self.s, "xi": self.xi, "eta": self.eta, "eps": self.eps}


@dataclass
class DerivedScales:
    zeta: list  # zeta_0 .. zeta_{K+1}
    gamma: list  # gamma_1 .. gamma_{K+1}


@dataclass
class RadiusTrace:
    radii: list  # r_1 .. r_K
    index_sets: list  # I_1 .. I_K as sorted index arrays
    kappa_inputs: list = field(default_factory=list)  # d_k - s_k


def derive_scales(hp: HyperParams, m_x: float) -> DerivedScales:
    if not m_x > 0:
        raise ValueError(f"input norm bound must be positive, got {m_x}")
    K = hp.K
    zeta = [float(m_x)]
    for k in range(K):
        zeta.append(hp.xi[k] * np.sqrt(1.0 + hp.eta[k]) * zeta[-1])
    zeta.append(hp.xi[K] * zeta[-1])
    gamma = []
    prod = 1.0
    for e in hp.eps:
        prod *= 1.0 + e
        gamma.append(prod - 1.0)
    return DerivedScales(zeta, gamma)


def kth_largest(u: np.ndarray, k: int) -> np.ndarray:
    """``k``-th largest entry (1-based) along the last axis."""
    d = u.shape[-1]
    return np.partition(u, d - k, axis=-1)[..., d - k]


def top_indices(u: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest entries, ties broken by lowest index."""
    order = np.argsort(-u, kind="stable")
    return np.sort(order[:k])


def sparse_local_radius(
    net: Network, trace: LayerTrace, hp: HyperParams, scales: DerivedScales
) -> RadiusTrace:
    dims = net.dims
    hp.check_dims(dims)
    radii, sets, kept = [], [], []
    for k in range(1, hp.K + 1):
        s = hp.s[k - 1]
        kept.append(dims[k] - s)
        denom = hp.xi[k - 1] * scales.zeta[k - 1]
        if denom == 0.0:
            raise DegenerateScaleError(f"zero normalisation at layer {k}")
        if s == 0:
            radii.append(np.inf)
            sets.append(np.zeros(0, dtype=np.intp))
            continue
        u = -trace.preactivations[k - 1] / denom
        radii.append(max(float(kth_largest(u, s)), 0.0))
        sets.append(top_indices(u, s))
    return RadiusTrace(radii, sets, kept)


def layer_radii(net: Network, X, hp: HyperParams, scales: DerivedScales, pre=None) -> np.ndarray:
    """Radii for a batch of inputs, shape ``(n, K)``; ``inf`` where ``s_k = 0``."""
    hp.check_dims(net.dims)
    if pre is None:
        _, pre, _ = forward_batch(net, X)
    n = pre[0].shape[0]
    R = np.full((n, hp.K), np.inf)
    for k in range(1, hp.K + 1):
        s = hp.s[k - 1]
        if s == 0:
            continue
        denom = hp.xi[k - 1] * scales.zeta[k - 1]
        if denom == 0.0:
            raise DegenerateScaleError(f"zero normalisation at layer {k}")
        R[:, k - 1] = np.maximum(kth_largest(-pre[k - 1] / denom, s), 0.0)
    return R


def neighbourhood_ratios(center: Network, candidate: Network, hp: HyperParams):
    """Per-layer relative deviations and the norm evaluation mode used.

    Returns ``(ratios, modes)``: ``ratios[k]`` is the quantity that must not
    exceed ``eps_{k+1}``; ``modes[k]`` is ``"exact"`` or ``"bound"``.
    """
    if center.dims != candidate.dims:
        raise ShapeError(f"shape mismatch {center.dims} vs {candidate.dims}")
    hp.check_dims(center.dims)
    s = hp.full_s()
    ratios, modes = [], []
    K = hp.K
    for k in range(1, K + 2):
        delta = candidate.layers[k - 1] - center.layers[k - 1]
        row = reduced_row_norm(delta, s[k - 1]) / hp.xi[k - 1]
        if k == K + 1:
            ratios.append(row)
            modes.append("exact")
            continue
        value, mode = sparse_norm(delta, (s[k], s[k - 1]))
        ratios.append(max(value / (hp.xi[k - 1] * np.sqrt(1.0 + hp.eta[k - 1])), row))
        modes.append(mode)
    return ratios, modes


def in_neighbourhood(center: Network, candidate: Network, hp: HyperParams) -> bool:
    """Membership in the local neighbourhood ``B(center, eps)``.

    Wide layers are checked through the reduced-Babel upper bound on the
    sparse norm, which can only reject true members, never admit outsiders.
    """
    ratios, _ = neighbourhood_ratios(center, candidate, hp)
    return all(r <= e for r, e in zip(ratios, hp.eps))


def sample_gaussian_network(center: Network, sigma: Sequence[float], rng_seed: int) -> Network:
    sigma = [float(v) for v in sigma]
    if len(sigma) != len(center.layers):
        raise ValueError(f"need {len(center.layers)} standard deviations, got {len(sigma)}")
    if any(v < 0 for v in sigma):
        raise ValueError("standard deviations must be non-negative")
    rng = np.random.default_rng(rng_seed)
    return Network(
        [w + sd * rng.standard_normal(w.shape) for w, sd in zip(center.layers, sigma)]
    )


def effective_activity_ratio(s, dims: Sequence[int]) -> float:
    """Fraction of weight area kept by sparsity ``s`` (a vector or RadiusTrace)."""
    if isinstance(s, RadiusTrace):
        kept = [dims[0]] + list(s.kappa_inputs) + [dims[-1]]
    else:
        kept = [dims[0]] + [d - v for d, v in zip(dims[1:-1], s)] + [dims[-1]]
    num = sum(kept[k] * kept[k - 1] for k in range(1, len(dims)))
    den = sum(dims[k] * dims[k - 1] for k in range(1, len(dims)))
    return num / den


def effective_activity_ratios(S: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """Row-wise κ for an ``(n, K)`` array of per-sample sparsity vectors."""
    S = np.atleast_2d(np.asarray(S))
    n = S.shape[0]
    kept = np.concatenate(
        [np.full((n, 1), dims[0]), np.asarray(dims[1:-1])[None, :] - S, np.full((n, 1), dims[-1])],
        axis=1,
    ).astype(np.float64)
    num = (kept[:, 1:] * kept[:, :-1]).sum(axis=1)
    den = sum(dims[k] * dims[k - 1] for k in range(1, len(dims)))
    return num / den

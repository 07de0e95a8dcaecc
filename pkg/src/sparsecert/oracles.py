"""Brute-force oracles and Monte Carlo checks of the sensitivity lemmas.

Nothing here calls the norm, Babel or radius routines of the main modules;
sub-matrix norms come from full SVD enumeration and reduced quantities from
explicit subset scans, so the checks are genuine cross-checks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations

import numpy as np

GUARD = 1e-12  # relative slack for floating point comparisons
SHRINK = 1 - 1e-9  # boundary perturbations stay this fraction inside the set


@dataclass
class McReport:
    name: str
    trials: int
    successes: int
    predicted_prob: float
    standard_error: float
    verdict: str
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "trials": self.trials,
            "successes": self.successes,
            "predicted_prob": self.predicted_prob,
            "standard_error": self.standard_error,
            "verdict": self.verdict,
            "details": self.details,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _deterministic(name, trials, successes, details) -> McReport:
    verdict = "pass" if successes == trials else "fail"
    return McReport(name, trials, successes, 1.0, 0.0, verdict, details)


# ---------------------------------------------------------------- primitives


@lru_cache(maxsize=None)
def _combos(d: int, keep: int) -> np.ndarray:
    return np.array(list(combinations(range(d), keep)), dtype=np.intp).reshape(-1, keep)


@lru_cache(maxsize=None)
def _masks(d: int, keep: int) -> np.ndarray:
    c = _combos(d, keep)
    m = np.zeros((len(c), d))
    m[np.arange(len(c))[:, None], c] = 1.0
    return m


def oracle_sparse_norm(W, s_out: int, s_in: int) -> float:
    """Largest singular value over every ``(d_out-s_out) x (d_in-s_in)`` sub-matrix."""
    W = np.asarray(W, dtype=np.float64)
    d_out, d_in = W.shape
    rows = _combos(d_out, d_out - s_out)
    cols = _combos(d_in, d_in - s_in)
    sub = W[rows[:, None, :, None], cols[None, :, None, :]]
    return float(np.linalg.svd(sub, compute_uv=False)[..., 0].max())


def oracle_row_norm(W, s_in: int) -> float:
    """``max_i max_{|J| = d_in - s_in} ||w_i[J]||`` by scanning column subsets."""
    W = np.asarray(W, dtype=np.float64)
    m = _masks(W.shape[1], W.shape[1] - s_in)
    return float(np.sqrt(((W * W) @ m.T).max()))


def oracle_babel(W, s_out: int, s_in: int) -> float:
    """Reduced Babel function by explicit enumeration of the index sets."""
    W = np.asarray(W, dtype=np.float64)
    d_out, d_in = W.shape
    if s_out == d_out - 1:
        return 0.0
    m = _masks(d_in, d_in - s_in)
    prods = W[:, None, :] * W[None, :, :]
    ip = np.abs(prods @ m.T).max(axis=-1)  # (d_out, d_out)
    best = 0.0
    for J in _combos(d_out, d_out - s_out):
        block = ip[np.ix_(J, J)]
        best = max(best, float((block.sum(axis=1) - np.diag(block)).max()))
    return best / oracle_row_norm(W, s_in) ** 2


def oracle_radius(W, x, s: int, xi: float, zeta: float):
    """Radius and inactive set from a full stable sort of ``-Wx / (xi zeta)``."""
    u = -(np.asarray(W) @ np.asarray(x)) / (xi * zeta)
    if s == 0:
        return math.inf, np.zeros(0, dtype=np.intp)
    order = np.argsort(-u, kind="stable")
    return max(float(u[order[s - 1]]), 0.0), np.sort(order[:s])


def classical_babel(A, p: int) -> float:
    """Classical Babel function ``mu_1(p)`` of the columns of ``A`` (columns
    normalized to unit norm), by scanning every anchor and support."""
    A = np.asarray(A, dtype=np.float64)
    A = A / np.linalg.norm(A, axis=0, keepdims=True)
    G = np.abs(A.T @ A)
    n = G.shape[0]
    best = 0.0
    for j in range(n):
        others = [i for i in range(n) if i != j]
        for S in combinations(others, p):
            best = max(best, float(G[j, list(S)].sum()))
    return best


def _ratio_hidden(D, s_k, s_prev, xi, eta):
    return max(
        oracle_sparse_norm(D, s_k, s_prev) / (xi * math.sqrt(1 + eta)),
        oracle_row_norm(D, s_prev) / xi,
    )


def _relu(v):
    return np.maximum(v, 0.0)


# ------------------------------------------------------ single-layer lemma


def _slr_instance(rng, d0, d1):
    s0 = int(rng.integers(0, d0))
    s1 = int(rng.integers(1, d1))
    x = rng.standard_normal(d0)
    x[rng.choice(d0, s0, replace=False)] = 0.0
    if not np.any(x):
        x[0] = 1.0
    W = rng.standard_normal((d1, d0))
    # push some rows against x so that radii are frequently positive
    push = rng.random(d1) < 0.7
    W[push] -= rng.uniform(0.5, 3.0, push.sum())[:, None] * x / np.linalg.norm(x)
    return W, x, s1, s0


def check_lemma_slr(trials: int = 10_000, dims=(8, 8), seed: int = 0) -> McReport:
    """Three statements of the single-layer stability lemma on random instances.

    Each trial draws ``W``, a sparse ``x``, sparsity levels and corruption
    levels ``(eps0, eps1)`` with ``(1+eps0)(1+eps1) - 1 <= r``, perturbs input
    (on the support of ``x``) and weights to the boundary of the allowed sets,
    and checks every claim. A directed search for counterexamples just past
    the threshold is run alongside to show the check has power.
    """
    d0_max, d1_max = dims
    if max(dims) > 16:
        raise ValueError("dims above 16 are too large for the oracle")
    rng = np.random.default_rng(seed)
    ok = 0
    counts = {"existence": 0, "stability": 0, "radius": 0}
    zero_radius = 0
    power_found = power_tried = 0
    for _ in range(trials):
        d0 = int(rng.integers(2, d0_max + 1))
        d1 = int(rng.integers(2, d1_max + 1))
        W, x, s1, s0 = _slr_instance(rng, d0, d1)
        zeta0 = float(np.linalg.norm(x))
        xi = oracle_row_norm(W, s0)
        eta = oracle_babel(W, s1, s0)
        scale = xi * math.sqrt(1 + eta) * zeta0
        r, I = oracle_radius(W, x, s1, xi, zeta0)
        phi = _relu(W @ x)
        good = True
        # statement 1
        if r > 0:
            if np.any(phi[I] != 0.0) or np.linalg.norm(phi) > scale * (1 + GUARD):
                good = False
                counts["existence"] += 1
        else:
            zero_radius += 1  # existence claim needs r > 0
        # statement 2 at a random point of the admissible region
        g = r * rng.uniform(0.0, 1.0) if rng.random() < 0.9 else r
        eps0 = g * rng.uniform(0.0, 1.0)
        eps1 = (1 + g) / (1 + eps0) - 1
        support = np.flatnonzero(x)
        dx = np.zeros(d0)
        dx[support] = rng.standard_normal(len(support))
        dx *= SHRINK * eps0 * zeta0 / np.linalg.norm(dx)
        x_hat = x + dx
        D = rng.standard_normal((d1, d0))
        if rng.random() < 0.3:  # rank one, aligned with the most fragile rows
            D = np.outer(rng.standard_normal(d1), x + rng.standard_normal(d0) * 0.1)
        D *= SHRINK * eps1 / max(_ratio_hidden(D, s1, s0, xi, eta), 1e-300)
        W_hat = W + D
        if r > 0 and r >= g:
            out_x = _relu(W @ x_hat)
            out_hat = _relu(W_hat @ x_hat)
            stable = np.all(phi[I] == 0) and np.all(out_x[I] == 0) and np.all(out_hat[I] == 0)
            dist_ok = np.linalg.norm(out_hat - phi) <= g * scale * (1 + GUARD) + GUARD * scale
            if not (stable and dist_ok):
                good = False
                counts["stability"] += 1
        # statement 3 holds for any perturbation keeping the support of x
        r_hat, _ = oracle_radius(W_hat, x_hat, s1, xi, zeta0)
        rhs = (1 + np.linalg.norm(x_hat - x) / zeta0) * (1 + oracle_row_norm(D, s0) / xi) - 1
        if abs(r_hat - r) > rhs * (1 + GUARD) + GUARD:
            good = False
            counts["radius"] += 1
        ok += good
        # power: move the boundary row of I just past zero with a row-only change
        if r > 0:
            power_tried += 1
            j = int(np.argsort(-(-(W @ x)), kind="stable")[s1 - 1])
            c = 1.01 * r * xi
            D_pow = np.zeros_like(W)
            D_pow[j] = c * x / zeta0
            if np.any(_relu((W + D_pow) @ x)[I] != 0.0):
                power_found += 1
    details = {
        "violations": counts,
        "zero_radius_trials": zero_radius,
        "power_trials": power_tried,
        "power_counterexamples": power_found,
        "dims": list(dims),
    }
    return _deterministic("lemma_slr", trials, ok, details)


# ------------------------------------------------ multi-layer sensitivity


def _forward(layers, x):
    acts = [x]
    for W in layers[:-1]:
        acts.append(_relu(W @ acts[-1]))
    return acts, layers[-1] @ acts[-1]


def _scales(xi, eta, eps, m_x):
    K = len(eta)
    zeta = [m_x]
    for k in range(K):
        zeta.append(xi[k] * math.sqrt(1 + eta[k]) * zeta[-1])
    zeta.append(xi[K] * zeta[-1])
    gamma, prod = [], 1.0
    for e in eps:
        prod *= 1 + e
        gamma.append(prod - 1)
    return zeta, gamma


def _sample_member(rng, layers, s, xi, eta, eps):
    """A network inside ``B(h, eps)``, each layer at a random fraction of its
    budget (the boundary itself with probability one half)."""
    K = len(s)
    full = [0] + list(s) + [0]
    out = []
    for k, W in enumerate(layers, start=1):
        D = rng.standard_normal(W.shape)
        if k <= K:
            ratio = _ratio_hidden(D, full[k], full[k - 1], xi[k - 1], eta[k - 1])
        else:
            ratio = oracle_row_norm(D, full[k - 1]) / xi[k - 1]
        frac = SHRINK if rng.random() < 0.5 else rng.uniform(0, 1)
        out.append(W + D * (frac * eps[k - 1] / max(ratio, 1e-300)))
    return out


def check_sensitivity_theorems(
    net, hp, data, trials: int = 100, seed: int = 0, m_x: float | None = None
) -> McReport:
    """Reduced-size and reduced-sensitivity claims for members of ``B(h, eps)``.

    Inputs are kept when every layer satisfies ``r_k >= gamma_k`` and
    ``r_k > 0``; the rest are counted as excluded. Each trial samples one
    member and checks all kept inputs; a trial succeeds when no claim fails.
    ``hp`` must be valid for ``net`` (reduced row norms within ``xi``,
    Babel values within ``eta``) and ``m_x`` must bound the input norms.
    """
    layers = [np.asarray(w, dtype=np.float64) for w in (net.layers if hasattr(net, "layers") else net)]
    X = np.asarray(data[0] if isinstance(data, tuple) else data, dtype=np.float64)
    s, xi, eta, eps = list(hp.s), list(hp.xi), list(hp.eta), list(hp.eps)
    K = len(s)
    m_x = float(np.linalg.norm(X, axis=1).max()) if m_x is None else m_x
    zeta, gamma = _scales(xi, eta, eps, m_x)
    rng = np.random.default_rng(seed)
    kept, sets, base = [], [], []
    for x in X:
        acts, out = _forward(layers, x)
        radii, Is = [], []
        for k in range(1, K + 1):
            r, I = oracle_radius(layers[k - 1], acts[k - 1], s[k - 1], xi[k - 1], zeta[k - 1])
            radii.append(r)
            Is.append(I)
        if all(r >= g and r > 0 for r, g in zip(radii, gamma)):
            kept.append(x)
            sets.append(Is)
            base.append((acts, out))
    viol = {"inactive_set": 0, "hidden_distance": 0, "output_distance": 0, "size": 0}
    for (acts, out) in base:
        for k in range(1, K + 1):
            if np.linalg.norm(acts[k]) > zeta[k] * (1 + GUARD):
                viol["size"] += 1
        if np.abs(out).max() > zeta[K + 1] * (1 + GUARD):
            viol["size"] += 1
    ok = 0
    for _ in range(trials):
        member = _sample_member(rng, layers, s, xi, eta, eps)
        good = viol["size"] == 0
        for x, Is, (acts, out) in zip(kept, sets, base):
            hat_acts, hat_out = _forward(member, x)
            for k in range(1, K + 1):
                if np.any(hat_acts[k][Is[k - 1]] != 0.0):
                    viol["inactive_set"] += 1
                    good = False
                tol = zeta[k] * gamma[k - 1] * (1 + GUARD) + GUARD * zeta[k]
                if np.linalg.norm(hat_acts[k] - acts[k]) > tol:
                    viol["hidden_distance"] += 1
                    good = False
            tol = zeta[K + 1] * gamma[K] * (1 + GUARD) + GUARD * zeta[K + 1]
            if np.abs(hat_out - out).max() > tol:
                viol["output_distance"] += 1
                good = False
        ok += good
    details = {"inputs_kept": len(kept), "inputs_excluded": len(X) - len(kept), "violations": viol}
    return _deterministic("sensitivity_theorems", trials, ok, details)


class _Cfg:
    def __init__(self, s, xi, eta, eps):
        self.s, self.xi, self.eta, self.eps = s, xi, eta, eps


def random_sensitivity_suite(
    configs: int = 500, trials_per_config: int = 20, max_dim: int = 6, inputs: int = 8, seed: int = 0
) -> McReport:
    """:func:`check_sensitivity_theorems` over random small networks with
    exactly measured ``xi`` and ``eta``."""
    rng = np.random.default_rng(seed)
    total = ok = kept = excluded = 0
    viol = {}
    for c in range(configs):
        K = int(rng.integers(1, 3))
        dims = [int(v) for v in rng.integers(2, max_dim + 1, K + 2)]
        layers = [rng.standard_normal((dims[k], dims[k - 1])) for k in range(1, K + 2)]
        X = rng.standard_normal((inputs, dims[0]))
        # bias some hidden rows negative so that radii are informative
        for k in range(K):
            layers[k][rng.random(dims[k + 1]) < 0.5] -= 1.5 / math.sqrt(dims[k])
        s = [int(rng.integers(0, d)) for d in dims[1:-1]]
        full = [0] + s + [0]
        xi = [oracle_row_norm(w, full[k]) * rng.uniform(1.0, 1.2) for k, w in enumerate(layers)]
        eta = [oracle_babel(layers[k], full[k + 1], full[k]) * rng.uniform(1.0, 1.2) for k in range(K)]
        eps = list(rng.uniform(0, 0.3, K + 1) * (rng.random() < 0.95))
        rep = check_sensitivity_theorems(
            layers, _Cfg(s, xi, eta, eps), X, trials_per_config, seed=seed * 100_003 + c
        )
        total += rep.trials
        ok += rep.successes
        kept += rep.details["inputs_kept"]
        excluded += rep.details["inputs_excluded"]
        for key, v in rep.details["violations"].items():
            viol[key] = viol.get(key, 0) + v
    details = {"configs": configs, "inputs_kept": kept, "inputs_excluded": excluded, "violations": viol}
    return _deterministic("sensitivity_theorems", total, ok, details)


# ------------------------------------------------------- probabilistic checks

DEFAULT_TUPLES = ((0, 0, 1.0), (1, 1, 2.0), (2, 1, 2.5), (1, 2, 3.0), (3, 3, 1.5), (2, 2, 3.0), (4, 4, 2.0))


def check_gaussian_concentration(
    trials: int = 10_000, dims=(5, 5), sigma: float = 1.0, delta: float = 0.1, seed: int = 0, tuples=None
) -> McReport:
    """Tail bound for sparse norms of i.i.d. Gaussian matrices.

    For every ``(s2, s1, t)`` the exceedance frequency of
    ``sigma (sqrt(d2-s2) + sqrt(d1-s1) + t)`` must not exceed
    ``min(1, C(d2,s2) C(d1,s1) exp(-t^2/2))`` by more than three standard
    errors; the high-probability form at ``delta`` is checked the same way.
    Exceedance is counted with a strict inequality, which is the same event
    up to a null set when ``sigma > 0``.
    """
    d2, d1 = dims
    if max(dims) > 8:
        raise ValueError("dims above 8 are too large for exact sparse norms")
    tuples = DEFAULT_TUPLES if tuples is None else tuples
    tuples = [t for t in tuples if t[0] < d2 and t[1] < d1]
    rng = np.random.default_rng(seed)
    A = sigma * rng.standard_normal((trials, d2, d1))
    rows = []
    worst = None
    passed = True
    total_ok = 0
    pairs = sorted({(a, b) for a, b, _ in tuples} | {(a, b) for a, b, _ in tuples})
    norms = {}
    for s2, s1 in pairs:
        r = _combos(d2, d2 - s2)
        c = _combos(d1, d1 - s1)
        sub = A[:, r[:, None, :, None], c[None, :, None, :]]
        norms[(s2, s1)] = np.linalg.svd(sub, compute_uv=False)[..., 0].max(axis=(1, 2))
    for s2, s1, t in tuples:
        comb = math.comb(d2, s2) * math.comb(d1, s1)
        for kind, level, pred in (
            ("tail", sigma * (math.sqrt(d2 - s2) + math.sqrt(d1 - s1) + t), min(1.0, comb * math.exp(-t * t / 2))),
            ("delta", sigma * (
                math.sqrt(d2 - s2) + math.sqrt(d1 - s1)
                + math.sqrt(2 * math.log(comb) + 2 * math.log(1 / delta))
            ), min(1.0, delta)),
        ):
            exceed = int(np.sum(norms[(s2, s1)] > level))
            emp = exceed / trials
            se = math.sqrt(pred * (1 - pred) / trials)
            good = emp <= pred + 3 * se
            passed &= good
            total_ok += trials - exceed
            rows.append({"s2": s2, "s1": s1, "t": t, "kind": kind, "empirical": emp, "predicted": pred,
                         "standard_error": se, "pass": bool(good)})
            if worst is None or emp - pred > worst[0]:
                worst = (emp - pred, pred, se)
    return McReport(
        "gaussian_concentration",
        trials * len(rows),
        total_ok,
        worst[1] if worst else 1.0,
        worst[2] if worst else 0.0,
        "pass" if passed else "fail",
        {"dims": list(dims), "sigma": sigma, "cases": rows},
    )


def check_posterior_membership(net, hp, m: int, trials: int = 1000, seed: int = 0, sigma=None) -> McReport:
    """Fraction of Gaussian perturbations of ``net`` that land in ``B(h, eps)``.

    ``sigma`` defaults to the calibrated expanded-mode deviations for
    ``m`` samples, whose failure probability is ``(K+1) delta' = 1/sqrt(m)``.
    Pass when the frequency is at least ``1 - 1/sqrt(m) - 3 SE``.
    """
    from .bound import sigma_sparse

    layers = [np.asarray(w, dtype=np.float64) for w in net.layers]
    K = len(layers) - 1
    if sigma is None:
        sigma = sigma_sparse(hp, net.dims, m, "expanded").sigma
    full = [0] + list(hp.s) + [0]
    rng = np.random.default_rng(seed)
    inside = 0
    for _ in range(trials):
        member = True
        for k, (W, sd) in enumerate(zip(layers, sigma), start=1):
            D = sd * rng.standard_normal(W.shape)
            if k <= K:
                ratio = _ratio_hidden(D, full[k], full[k - 1], hp.xi[k - 1], hp.eta[k - 1])
            else:
                ratio = oracle_row_norm(D, full[k - 1]) / hp.xi[k - 1]
            if ratio > hp.eps[k - 1]:
                member = False
        inside += member
    pred = 1 - 1 / math.sqrt(m)
    se = math.sqrt(max(pred * (1 - pred), 0.0) / trials)
    verdict = "pass" if inside / trials >= pred - 3 * se else "fail"
    return McReport(
        "posterior_membership", trials, inside, pred, se, verdict,
        {"frequency": inside / trials, "sigma": [float(v) for v in sigma], "m": m},
    )


def default_membership_case(seed: int = 0, m: int = 10_000):
    """A small 4-wide network with exactly measured hyper-parameters."""
    from .netcore import Network
    from .radius import HyperParams

    rng = np.random.default_rng(seed)
    dims = [4, 4, 4, 3]
    layers = [rng.standard_normal((dims[k], dims[k - 1])) for k in range(1, len(dims))]
    s = [1, 2]
    full = [0] + s + [0]
    xi = [oracle_row_norm(w, full[k]) for k, w in enumerate(layers)]
    eta = [oracle_babel(layers[k], full[k + 1], full[k]) for k in range(2)]
    hp = HyperParams(s, xi, eta, [0.1, 0.2, 0.3])
    return Network(layers), hp, m


def run_suite(trials: int | None = None, seed: int = 0) -> list:
    """Every check at default sizes (or ``trials`` each, for smoke runs)."""
    t = trials
    net, hp, m = default_membership_case(seed)
    return [
        check_lemma_slr(t or 10_000, (8, 8), seed),
        random_sensitivity_suite(
            configs=max(1, (t or 10_000) // 20), trials_per_config=min(20, t or 20), seed=seed
        ),
        check_gaussian_concentration(t or 10_000, (5, 5), 1.0, 0.1, seed),
        check_posterior_membership(net, hp, m, t or 1000, seed),
    ]

"""Sparse norms, reduced Babel values and the bound on a toy network.

Run: python demos/sparse_norm_tour.py
"""

import numpy as np

from sparsecert import Network
from sparsecert.bound import bound_expanded, bound_simplified
from sparsecert.radius import HyperParams, derive_scales, layer_radii
from sparsecert.search import SearchConfig, best_in_grid
from sparsecert.sparse import reduced_babel, sparse_norm_exact_table, sparse_norm_upper_bound

rng = np.random.default_rng(0)

W = rng.standard_normal((5, 4))
T = sparse_norm_exact_table(W)
print("exact sparse norms, rows = s_out, cols = s_in")
print(np.round(T, 3))
print("upper bound at (2, 1):", round(sparse_norm_upper_bound(W, (2, 1)), 3), "exact:", round(T[2, 1], 3))
print("reduced Babel at (2, 1):", round(reduced_babel(W, (2, 1)), 3))

# a small network with a bias towards inactive units
dims = [6, 12, 3]
layers = [rng.standard_normal((dims[k], dims[k - 1])) / np.sqrt(dims[k - 1]) for k in (1, 2)]
layers[0][:6] -= 0.8
net = Network(layers)
prior = Network([w + 0.05 * rng.standard_normal(w.shape) for w in layers])
X = rng.standard_normal((500, 6))
X /= np.linalg.norm(X, axis=1, keepdims=True)
y = np.argmax(np.maximum(X @ layers[0].T, 0) @ layers[1].T, axis=1)

hp = HyperParams([4], [1.5, 1.5], [3.0], [0.05, 0.1])
R = layer_radii(net, X, hp, derive_scales(hp, 1.0))
print("share of inputs with a positive radius at s=4:", float(np.mean(R[:, 0] > 0)))

for fn in (bound_expanded, bound_simplified):
    rep = fn(net, prior, X, y, hp, 1.0, 0.05)
    print(f"{rep.mode:>10}: raw bound {rep.final_bound_raw:.3f}, KL {rep.kl_total:.1f}")

res = best_in_grid(net, prior, X, y, 1.0, SearchConfig([0.01, 0.1, 0.5], [0.0, 0.05]))
b = res.best
print(f"grid search: {b.final_bound_raw:.3f} at eps_bar={b.extras['eps_bar']}, s={b.hp.s}, "
      f"delta_red={res.delta_red:.2e}")

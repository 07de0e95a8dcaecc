"""Train 2-layer MNIST nets, search the bound grid and compare effective
activity ratios across widths.

Run: python demos/mnist_width_study.py [mnist_dir] [width ...]
Takes about 20 s per width-100 net and 75 s per width-500 net.
"""

import sys
from pathlib import Path

import numpy as np

from sparsecert.radius import effective_activity_ratios
from sparsecert.search import SearchConfig, best_in_grid, eps_schedule, greedy_sparsity_batch
from sparsecert.train import TrainConfig, build_priors, load_idx, make_splits, train_model

root = Path(sys.argv[1] if len(sys.argv) > 1 else "/root/data/mnist")
widths = [int(v) for v in sys.argv[2:]] or [100, 500]

raw = load_idx(root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte")
cfg = TrainConfig()
split = make_splits(raw, cfg)
X, y = split.train_set.X, split.train_set.y
grid = SearchConfig([1e-3, 1e-2, 0.1, 1.0], [0.0, 0.05])

for width in widths:
    p0, pd = build_priors([784, width, 10], split, cfg)
    model = train_model(split, pd, cfg)
    acc = np.mean(np.argmax(np.maximum(split.val_set.X @ model.layers[0].T, 0) @ model.layers[1].T, 1)
                  == split.val_set.y)
    S = greedy_sparsity_batch(model, X, eps_schedule(1e-4, 1), split.m_x, eta_grid_size=8)
    kappa = effective_activity_ratios(S, model.dims)
    print(f"width {width}: val acc {acc:.3f}, mean kappa(1e-4) {kappa.mean():.3f}")
    for name, prior in (("data", pd), ("zero", p0)):
        b = best_in_grid(model, prior, X, y, split.m_x, grid).best
        print(f"  {name} prior: raw bound {b.final_bound_raw:.3f} "
              f"(margin risk {b.margin_risk:.3f}, KL {b.kl_total:.3g}, eps_bar {b.extras['eps_bar']:g})")

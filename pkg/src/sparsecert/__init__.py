"""Sparsity-aware PAC-Bayes certification of small ReLU networks."""

import os

__version__ = "0.1.0"

# SPARSE_CERTIFY_THREADS caps BLAS parallelism; it has to be applied before
# numpy loads its BLAS library.
_threads = os.environ.get("SPARSE_CERTIFY_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

from .netcore import (  # noqa: E402
    LayerTrace, Network, empirical_risk, forward, forward_batch, load_checkpoint, margin,
    normalize_layers, save_checkpoint, threshold_loss,
)
from .sparse import (  # noqa: E402
    reduced_babel, reduced_row_norm, sparse_norm, sparse_norm_exact, sparse_norm_upper_bound,
)
from .radius import (  # noqa: E402
    DerivedScales, HyperParams, RadiusTrace, derive_scales, effective_activity_ratio,
    in_neighbourhood, sample_gaussian_network, sparse_local_radius,
)
from .bound import (  # noqa: E402
    BoundReport, alpha_norm, bound_expanded, bound_simplified, grid_union_delta,
    kl_gaussian_layers, sigma_sparse, sparse_loss,
)
from .search import (  # noqa: E402
    SearchConfig, aggregate_sparsity, best_in_grid, eps_schedule, greedy_sparsity,
    measure_xi_eta,
)
from .train import (  # noqa: E402
    Dataset, TrainConfig, build_priors, load_idx, make_splits, synth_dataset, train,
)

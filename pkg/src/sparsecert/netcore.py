"""Bias-free feed-forward ReLU networks: forward passes, margins, checkpoints."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

SPNET_MAGIC = b"SPNET1\0"


class ShapeError(ValueError):
    pass


class DegenerateLayerError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class Network:
    """ReLU MLP ``h(x) = W_{K+1} relu(W_K ... relu(W_1 x))``.

    ``layers[k-1]`` holds ``W_k`` with shape ``(d_k, d_{k-1})``. The last
    entry is the linear read-out onto the ``C`` class scores.
    """

    def __init__(self, layers: Sequence[np.ndarray]):
        mats = tuple(np.array(w, dtype=np.float64, copy=True) for w in layers)
        for w in mats:
            w.setflags(write=False)
        self.layers = mats
        self._validate()

    def __repr__(self):
        return f"Network(dims={self.dims})"

    def _validate(self):
        if len(self.layers) < 2:
            raise ShapeError("network needs at least one hidden layer (K >= 1)")
        for k, w in enumerate(self.layers):
            if w.ndim != 2:
                raise ShapeError(f"layer {k + 1} is not a matrix (ndim={w.ndim})")
            if not np.all(np.isfinite(w)):
                raise ShapeError(f"layer {k + 1} has non-finite entries")
        for k in range(1, len(self.layers)):
            if self.layers[k].shape[1] != self.layers[k - 1].shape[0]:
                raise ShapeError(
                    f"layer {k + 1} expects input dim {self.layers[k].shape[1]}, "
                    f"layer {k} outputs {self.layers[k - 1].shape[0]}"
                )
        if self.layers[-1].shape[0] < 2:
            raise ShapeError("need at least two classes")

    @property
    def depth(self) -> int:
        """Number of hidden layers K."""
        return len(self.layers) - 1

    @property
    def dims(self) -> list[int]:
        """``[d_0, d_1, ..., d_K, C]``."""
        return [self.layers[0].shape[1]] + [w.shape[0] for w in self.layers]

    @property
    def num_params(self) -> int:
        return sum(w.size for w in self.layers)

    def scaled(self, scales: Sequence[float]) -> "Network":
        return Network([w * c for w, c in zip(self.layers, scales)])

    def __eq__(self, other):
        if not isinstance(other, Network) or len(self.layers) != len(other.layers):
            return False
        return all(
            a.shape == b.shape and np.array_equal(a, b)
            for a, b in zip(self.layers, other.layers)
        )

    __hash__ = None


@dataclass
class LayerTrace:
    activations: list  # x_0 ... x_K
    preactivations: list  # W_k x_{k-1}, k = 1..K
    output: np.ndarray


def zeros_like(net: Network) -> Network:
    return Network([np.zeros_like(w) for w in net.layers])


def forward(net: Network, x) -> LayerTrace:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.dims[0]:
        raise ShapeError(f"input has shape {x.shape}, expected ({net.dims[0]},)")
    acts = [x]
    pre = []
    for w in net.layers[:-1]:
        z = w @ acts[-1]
        pre.append(z)
        acts.append(np.maximum(z, 0.0))
    return LayerTrace(acts, pre, net.layers[-1] @ acts[-1])


def forward_batch(net: Network, X) -> tuple[list, list, np.ndarray]:
    """Row-batched forward pass; returns (activations, preactivations, logits)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.dims[0]:
        raise ShapeError(f"batch has shape {X.shape}, expected (n, {net.dims[0]})")
    acts = [X]
    pre = []
    for w in net.layers[:-1]:
        z = acts[-1] @ w.T
        pre.append(z)
        acts.append(np.maximum(z, 0.0))
    return acts, pre, acts[-1] @ net.layers[-1].T


def predict(net: Network, X) -> np.ndarray:
    return np.argmax(forward_batch(net, X)[2], axis=1)


def output_margins(outputs, y) -> np.ndarray:
    """``out[y] - max_{j != y} out[j]`` for each row of ``outputs``."""
    out = np.atleast_2d(np.asarray(outputs, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    n, c = out.shape
    if np.any(y < 0) or np.any(y >= c):
        raise ShapeError(f"labels must lie in [0, {c})")
    rows = np.arange(n)
    correct = out[rows, y]
    others = out.copy()
    others[rows, y] = -np.inf
    return correct - others.max(axis=1)


def margin(net: Network, x, y: int) -> float:
    return float(output_margins(forward(net, x).output, [y])[0])


def margins(net: Network, X, y) -> np.ndarray:
    return output_margins(forward_batch(net, X)[2], y)


def threshold_loss(net: Network, x, y: int, gamma: float) -> int:
    if gamma < 0:
        raise ValueError(f"gamma must be non-negative, got {gamma}")
    return int(margin(net, x, y) < gamma)


def empirical_risk(net: Network, X, y, gamma: float) -> float:
    """Fraction of samples whose margin falls strictly below ``gamma``."""
    if gamma < 0:
        raise ValueError(f"gamma must be non-negative, got {gamma}")
    X = np.asarray(X)
    if X.shape[0] == 0:
        raise ValueError("empirical risk of an empty sample")
    return float(np.mean(margins(net, X, y) < gamma))


def normalize_layers(net: Network, s_prev: Sequence[int], include_last: bool = True):
    """Rescale each layer to unit reduced row norm.

    ``s_prev[k]`` is the input sparsity used for layer ``k+1`` (so
    ``s_prev[0] = s_0 = 0``). Returns ``(normalized, scales)`` with
    ``normalized.layers[k] * scales[k] == net.layers[k]``. The read-out layer
    is rescaled as well unless ``include_last`` is False.
    """
    from .sparse import reduced_row_norm

    s_prev = list(s_prev)
    if len(s_prev) != len(net.layers):
        raise ShapeError(f"need {len(net.layers)} input sparsities, got {len(s_prev)}")
    scales = []
    new = []
    for k, (w, s) in enumerate(zip(net.layers, s_prev)):
        if k == len(net.layers) - 1 and not include_last:
            scales.append(1.0)
            new.append(w)
            continue
        c = reduced_row_norm(w, s)
        if not c > 0:
            raise DegenerateLayerError(f"layer {k + 1} has zero reduced row norm")
        scales.append(c)
        new.append(w / c)
    return Network(new), scales


def save_checkpoint(net: Network, path) -> None:
    buf = [SPNET_MAGIC, struct.pack("<I", len(net.layers))]
    for w in net.layers:
        buf.append(struct.pack("<II", *w.shape))
        buf.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(buf))


def load_checkpoint(path) -> Network:
    data = Path(path).read_bytes()
    n = len(SPNET_MAGIC)
    if data[:n] != SPNET_MAGIC:
        raise CheckpointError(f"{path}: bad magic at offset 0")
    off = n
    if len(data) < off + 4:
        raise CheckpointError(f"{path}: truncated header at offset {off}")
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    layers = []
    for k in range(count):
        if len(data) < off + 8:
            raise CheckpointError(f"{path}: truncated shape of layer {k + 1} at offset {off}")
        rows, cols = struct.unpack_from("<II", data, off)
        off += 8
        nbytes = rows * cols * 8
        if len(data) < off + nbytes:
            raise CheckpointError(f"{path}: truncated weights of layer {k + 1} at offset {off}")
        w = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=off)
        layers.append(w.reshape(rows, cols).astype(np.float64))
        off += nbytes
    if off != len(data):
        raise CheckpointError(f"{path}: {len(data) - off} trailing bytes at offset {off}")
    try:
        return Network(layers)
    except ShapeError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc

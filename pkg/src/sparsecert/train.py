"""Datasets, splits, priors and the SGD trainer."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .netcore import Network, ShapeError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step
        self.loss = loss


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise ShapeError(f"inputs {self.X.shape} and labels {self.y.shape} disagree")

    def __len__(self):
        return self.X.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx])

    @property
    def max_norm(self) -> float:
        return float(np.linalg.norm(self.X, axis=1).max()) if len(self) else 0.0


@dataclass
class TrainConfig:
    steps: int = 5000
    batch_size: int = 100
    learning_rate: float = 0.01
    lam: float = 1.0
    seed: int = 0
    prior_fraction: float = 0.05
    val_fraction: float = 5000 / 60000
    log_every: int = 100

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.log_every < 1:
            raise ValueError("steps must be >= 0, batch size and log interval >= 1")
        if not self.learning_rate > 0 or self.lam < 0:
            raise ValueError("learning rate must be positive and lambda non-negative")
        if not 0 <= self.prior_fraction < 1 or not 0 <= self.val_fraction < 1:
            raise ValueError("fractions must lie in [0, 1)")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class DatasetSplit:
    prior_set: Dataset
    train_set: Dataset
    val_set: Dataset
    m_x: float
    prior_idx: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray

    @property
    def full_train(self) -> Dataset:
        """Training portion including the prior slice."""
        return Dataset(
            np.concatenate([self.prior_set.X, self.train_set.X]),
            np.concatenate([self.prior_set.y, self.train_set.y]),
        )


def load_idx(images_path, labels_path) -> Dataset:
    images_path, labels_path = Path(images_path), Path(labels_path)
    img = images_path.read_bytes()
    lab = labels_path.read_bytes()
    if len(img) < 16:
        raise IdxFormatError(f"{images_path}: truncated header at offset {len(img)}")
    magic, n, rows, cols = struct.unpack_from(">IIII", img, 0)
    if magic != IMAGE_MAGIC:
        raise IdxFormatError(f"{images_path}: bad magic 0x{magic:08x} at offset 0")
    if len(lab) < 8:
        raise IdxFormatError(f"{labels_path}: truncated header at offset {len(lab)}")
    lmagic, ln = struct.unpack_from(">II", lab, 0)
    if lmagic != LABEL_MAGIC:
        raise IdxFormatError(f"{labels_path}: bad magic 0x{lmagic:08x} at offset 0")
    if n != ln:
        raise IdxFormatError(f"count mismatch: {n} images vs {ln} labels")
    need = 16 + n * rows * cols
    if len(img) < need:
        raise IdxFormatError(f"{images_path}: truncated payload at offset {len(img)}, need {need} bytes")
    if len(lab) < 8 + n:
        raise IdxFormatError(f"{labels_path}: truncated payload at offset {len(lab)}, need {8 + n} bytes")
    pix = np.frombuffer(img, dtype=np.uint8, count=n * rows * cols, offset=16)
    X = pix.reshape(n, rows * cols).astype(np.float64) / 255.0
    y = np.frombuffer(lab, dtype=np.uint8, count=n, offset=8).astype(np.int64)
    return Dataset(X, y)


def write_idx(dataset: Dataset, images_path, labels_path, shape=None) -> None:
    """Write ``dataset`` (pixels in [0, 1]) as a pair of IDX files."""
    n, d = dataset.X.shape
    rows, cols = shape or (1, d)
    pix = np.clip(np.rint(dataset.X * 255), 0, 255).astype(np.uint8)
    Path(images_path).write_bytes(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols) + pix.tobytes())
    Path(labels_path).write_bytes(
        struct.pack(">II", LABEL_MAGIC, n) + dataset.y.astype(np.uint8).tobytes()
    )


def synth_dataset(n: int, d: int, classes: int, seed: int, spread: float = 0.1) -> Dataset:
    """Gaussian blobs around class means of norm 0.5, projected into the unit ball."""
    if n < 0 or d < 1 or classes < 2:
        raise ValueError("need n >= 0, d >= 1 and at least two classes")
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((classes, d))
    means *= 0.5 / np.linalg.norm(means, axis=1, keepdims=True)
    y = rng.integers(0, classes, n)
    X = means[y] + spread / math.sqrt(d) * rng.standard_normal((n, d))
    X /= np.maximum(1.0, np.linalg.norm(X, axis=1, keepdims=True))
    return Dataset(X, y)


def make_splits(raw: Dataset, cfg: TrainConfig, seed: int | None = None) -> DatasetSplit:
    n = len(raw)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    perm = rng.permutation(n)
    n_val = int(math.floor(n * cfg.val_fraction))
    n_train = n - n_val
    n_prior = int(math.floor(n_train * cfg.prior_fraction))
    if n_train - n_prior < 1:
        raise ValueError(f"{n} samples are too few for the requested fractions")
    if cfg.prior_fraction > 0 and n_prior == 0:
        raise ValueError(f"{n} samples leave no room for a prior slice")
    val_idx = np.sort(perm[:n_val])
    prior_idx = np.sort(perm[n_val : n_val + n_prior])
    train_idx = np.sort(perm[n_val + n_prior :])
    train = raw.subset(train_idx)
    return DatasetSplit(
        prior_set=raw.subset(prior_idx),
        train_set=train,
        val_set=raw.subset(val_idx),
        m_x=train.max_norm,
        prior_idx=prior_idx,
        train_idx=train_idx,
        val_idx=val_idx,
    )


def init_network(dims: Sequence[int], seed: int) -> Network:
    """Entries i.i.d. normal with standard deviation ``1/sqrt(fan_in)``."""
    rng = np.random.default_rng(seed)
    return Network(
        [rng.standard_normal((dims[k], dims[k - 1])) / math.sqrt(dims[k - 1]) for k in range(1, len(dims))]
    )


def objective_and_grad(layers: Sequence[np.ndarray], prior: Network, X, y, lam: float):
    """Mean softmax cross-entropy plus ``lam/(K+1) * sum ||W_k - P_k||_F^2``.

    Returns ``(total, data_loss, reg, grads)``. An empty batch contributes no
    data loss.
    """
    L = len(layers)
    acts = [np.asarray(X, dtype=np.float64)]
    pre = []
    for w in layers[:-1]:
        z = acts[-1] @ w.T
        pre.append(z)
        acts.append(np.maximum(z, 0.0))
    logits = acts[-1] @ layers[-1].T
    n = logits.shape[0]
    grads = [None] * L
    if n:
        shifted = logits - logits.max(axis=1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=1))
        data_loss = float(np.mean(logz - shifted[np.arange(n), y]))
        g = np.exp(shifted - logz[:, None])
        g[np.arange(n), y] -= 1.0
        g /= n
        for k in range(L - 1, -1, -1):
            grads[k] = g.T @ acts[k]
            if k:
                g = (g @ layers[k]) * (pre[k - 1] > 0)
    else:
        data_loss = 0.0
        grads = [np.zeros_like(w) for w in layers]
    coef = lam / L
    reg = 0.0
    for k, (w, p) in enumerate(zip(layers, prior.layers)):
        diff = w - p
        reg += coef * float(np.sum(diff * diff))
        grads[k] = grads[k] + 2 * coef * diff
    return data_loss + reg, data_loss, reg, grads


def train(init: Network, data: Dataset, prior: Network, cfg: TrainConfig, log=None) -> Network:
    """Plain minibatch SGD on :func:`objective_and_grad`.

    ``log`` may be a writable text stream; one JSON line (step, loss, reg) is
    written every ``cfg.log_every`` steps and after the last step.
    """
    if init.dims != prior.dims:
        raise ShapeError(f"init {init.dims} and prior {prior.dims} differ")
    if cfg.steps == 0:
        return init
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    if data.X.shape[1] != init.dims[0]:
        raise ShapeError(f"data dim {data.X.shape[1]} vs network input {init.dims[0]}")
    rng = np.random.default_rng(cfg.seed)
    layers = [np.array(w) for w in init.layers]
    n = len(data)
    bs = min(cfg.batch_size, n)
    for step in range(1, cfg.steps + 1):
        idx = rng.choice(n, size=bs, replace=False) if bs < n else np.arange(n)
        total, loss, reg, grads = objective_and_grad(layers, prior, data.X[idx], data.y[idx], cfg.lam)
        if not math.isfinite(total):
            raise TrainingDiverged(step, total)
        for w, g in zip(layers, grads):
            w -= cfg.learning_rate * g
        if log is not None and (step % cfg.log_every == 0 or step == cfg.steps):
            log.write(json.dumps({"step": step, "loss": loss, "reg": reg}) + "\n")
    return Network(layers)


def build_priors(dims: Sequence[int], split: DatasetSplit, cfg: TrainConfig, log=None):
    """``(p0, p_data)``: the zero network and a network trained on the prior slice.

    ``p_data`` starts from a seeded random init and is regularized towards
    that init; pulling it towards the zero network instead collapses training
    onto the zero stationary point at the default penalty.
    """
    p0 = Network([np.zeros((dims[k], dims[k - 1])) for k in range(1, len(dims))])
    if cfg.prior_fraction <= 0 or len(split.prior_set) == 0:
        raise ValueError("a data-dependent prior needs a non-empty prior slice")
    init = init_network(dims, cfg.seed)
    p_data = train(init, split.prior_set, init, cfg, log=log)
    return p0, p_data


def train_model(split: DatasetSplit, prior: Network, cfg: TrainConfig, log=None) -> Network:
    """Model trained on the whole training portion (prior slice included),
    started from ``prior`` and regularized towards it."""
    return train(prior, split.full_train, prior, cfg, log=log)


__all__ = [
    "Dataset", "DatasetSplit", "IdxFormatError", "TrainConfig", "TrainingDiverged",
    "build_priors", "init_network", "load_idx", "make_splits", "objective_and_grad",
    "synth_dataset", "train", "train_model", "write_idx",
]

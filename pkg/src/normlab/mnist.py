"""Permutation-invariant MNIST: IDX parsing, the 784-1000-1000-10 MLP and its training loop.

Expected files in the data directory (optionally gzip-compressed with a
``.gz`` suffix)::

    train-images-idx3-ubyte   train-labels-idx1-ubyte
    t10k-images-idx3-ubyte    t10k-labels-idx1-ubyte
"""

from __future__ import annotations

import gzip
import struct
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Parameter, Tensor
from .normalizers import AffineParams, BatchNorm, LayerNorm, weight_norm_apply
from .plotdata import MetricRow, MetricWriter

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
TRAIN_SIZE = 55_000


class DataError(Exception):
    """Problem with an input data file."""


class BadMagicError(DataError):
    pass


class TruncatedFileError(DataError):
    pass


class CountMismatchError(DataError):
    pass


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


# ---------------------------------------------------------------------------
# IDX files


def _read_bytes(path: Path) -> bytes:
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def read_idx(path, expected_magic: int) -> np.ndarray:
    """Parse a big-endian IDX file of unsigned bytes into an array."""
    path = Path(path)
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: shorter than the 4-byte magic number")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise BadMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: header truncated")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header < count:
        raise TruncatedFileError(f"{path}: expected {count} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray) -> Path:
    """Write a uint8 array as IDX (images: 3-D, labels: 1-D)."""
    path = Path(path)
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    data = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape) + array.tobytes()
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wb") as fh:
        fh.write(data)
    return path


def _find(directory: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        if (directory / name).exists():
            return directory / name
    raise DataError(f"{directory}: missing {stem}")


@dataclass
class MnistDataset:
    train_images: np.ndarray
    train_labels: np.ndarray
    val_images: np.ndarray
    val_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray


def _load_pair(directory: Path, which: str) -> tuple[np.ndarray, np.ndarray]:
    img_path = _find(directory, FILES[f"{which}_images"])
    lab_path = _find(directory, FILES[f"{which}_labels"])
    images = read_idx(img_path, IMAGE_MAGIC)
    labels = read_idx(lab_path, LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"{img_path} has {images.shape[0]} images but {lab_path} has {labels.shape[0]} labels")
    if labels.size and labels.max() > 9:
        raise DataError(f"{lab_path}: label {labels.max()} outside 0..9")
    flat = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return flat, labels.astype(np.int64)


def load_mnist(directory, split_seed: int = 0, train_size: int = TRAIN_SIZE) -> MnistDataset:
    """Load the four IDX files and split training records into train/validation.

    The training records are permuted with ``split_seed``; the first
    ``train_size`` become the training set, the rest the validation set.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory}: not a directory")
    X, y = _load_pair(directory, "train")
    Xt, yt = _load_pair(directory, "test")
    if X.shape[0] <= train_size:
        raise DataError(f"{directory}: {X.shape[0]} training records, need more than {train_size}")
    perm = np.random.default_rng(split_seed).permutation(X.shape[0])
    tr, va = perm[:train_size], perm[train_size:]
    return MnistDataset(X[tr], y[tr], X[va], y[va], Xt, yt)


# ---------------------------------------------------------------------------
# model


class Dense:
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, name: str, std: float):
        self.W = Parameter(rng.normal(0.0, std, (fan_out, fan_in)), f"{name}.W")
        self.b = Parameter(np.zeros(fan_out), f"{name}.b")

    def parameters(self) -> list[Tensor]:
        return [self.W, self.b]


class MLP:
    """ReLU MLP with an optional normalizer on every hidden layer; the softmax layer is never normalized."""

    def __init__(self, sizes=(784, 1000, 1000, 10), norm: str = "none", seed: int = 0,
                 estimator: str = "biased"):
        if norm not in ("none", "layer", "batch", "weight"):
            raise ValueError(f"unknown norm kind {norm!r}")
        rng = np.random.default_rng(seed)
        self.norm = norm
        self.hidden: list[Dense] = []
        self.norms: list = []
        self.wn: list[AffineParams] = []
        for k, (i, o) in enumerate(zip(sizes[:-2], sizes[1:-1])):
            layer = Dense(i, o, rng, f"fc{k}", np.sqrt(2.0 / i))
            if norm == "weight":
                # gain and bias live in the weight-norm affine; no separate bias
                layer.b = None
                self.wn.append(AffineParams.init(o, f"wn{k}"))
            self.hidden.append(layer)
            if norm == "layer":
                self.norms.append(LayerNorm(o, f"ln{k}"))
            elif norm == "batch":
                self.norms.append(BatchNorm(o, f"bn{k}", estimator=estimator))
        self.out = Dense(sizes[-2], sizes[-1], rng, "out", np.sqrt(1.0 / sizes[-2]))

    def parameters(self) -> list[Tensor]:
        params: list[Tensor] = []
        for k, layer in enumerate(self.hidden):
            params += [p for p in layer.parameters() if p is not None]
            if self.norm == "weight":
                params += self.wn[k].parameters()
        for n in self.norms:
            params += n.parameters()
        return params + self.out.parameters()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def logits(self, x, training: bool = False) -> Tensor:
        h = ad.tensor(x)
        for k, layer in enumerate(self.hidden):
            if self.norm == "weight":
                a = weight_norm_apply(layer.W, h, self.wn[k])
            else:
                a = ad.affine(layer.W, h, layer.b)
                if self.norms:
                    a = self.norms[k](a, training=training)
            h = ad.relu(a)
        return ad.affine(self.out.W, h, self.out.b)

    def log_probs(self, x, training: bool = False) -> Tensor:
        return ad.log_softmax(self.logits(x, training))


def build_mlp(norm: str = "none", seed: int = 0, estimator: str = "biased", sizes=(784, 1000, 1000, 10)) -> MLP:
    return MLP(sizes, norm, seed, estimator)


def nll(log_probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log likelihood of integer labels."""
    picked = log_probs[np.arange(labels.shape[0]), labels]
    return -ad.mean(picked)


def evaluate(model: MLP, X: np.ndarray, y: np.ndarray, chunk: int = 2000) -> tuple[float, float]:
    """(mean NLL, error rate) in evaluation mode."""
    total, wrong = 0.0, 0
    for lo in range(0, X.shape[0], chunk):
        lp = model.log_probs(X[lo:lo + chunk], training=False).data
        lab = y[lo:lo + chunk]
        total -= lp[np.arange(lab.shape[0]), lab].sum()
        wrong += int(np.sum(lp.argmax(axis=1) != lab))
    n = X.shape[0]
    return total / n, wrong / n


# ---------------------------------------------------------------------------
# training


@dataclass
class RunConfig:
    experiment: str = "mnist"
    norm: str = "layer"
    batch_size: int = 128
    epochs: int = 20
    lr: float = 1e-3
    seed: int = 0
    out: str | None = None
    unbiased_variance: bool = False
    data: str | None = None
    record_time: bool = False

    def validate(self) -> "RunConfig":
        if self.experiment not in ("mnist", "seq-stability", "invariance", "geometry"):
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.norm == "batch" and self.batch_size < 2:
            raise ValueError("batch normalization needs a batch size of at least 2")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        return self


@dataclass
class RunSummary:
    config: RunConfig
    final_test_nll: float
    final_test_error: float
    updates: int


def train_mnist(config: RunConfig, data: MnistDataset, sizes=(784, 1000, 1000, 10),
                writer: MetricWriter | None = None,
                max_updates: int | None = None) -> tuple[list[MetricRow], RunSummary]:
    """Adam training with per-epoch test evaluation.

    Row 0 is the untrained model.  Each later row holds the mean minibatch
    loss of that epoch and the full test-set NLL and error.  With
    ``max_updates`` training stops after that many updates and the partial
    epoch gets a final row, so runs can be compared at equal update counts.  Raises
    :class:`DivergenceError` on a non-finite loss; rows already written stay on disk.
    """
    config.validate()
    estimator = "unbiased" if config.unbiased_variance else "biased"
    model = build_mlp(config.norm, config.seed, estimator, sizes)
    opt = ad.Adam(model.parameters(), lr=config.lr)
    rng = np.random.default_rng(config.seed + 1)
    X, y = data.train_images, data.train_labels
    rows: list[MetricRow] = []
    start = time.perf_counter()

    def record(epoch: int, train_nll: float) -> None:
        test_nll, test_err = evaluate(model, data.test_images, data.test_labels)
        wall = time.perf_counter() - start if config.record_time else None
        row = MetricRow(epoch, float(train_nll), float(test_nll), float(test_err), wall)
        rows.append(row)
        if writer is not None:
            writer.write(row)

    record(0, evaluate(model, X, y)[0])
    updates = 0
    for epoch in range(1, config.epochs + 1):
        if max_updates is not None and updates >= max_updates:
            break
        order = rng.permutation(X.shape[0])
        losses = []
        for lo in range(0, X.shape[0], config.batch_size):
            idx = order[lo:lo + config.batch_size]
            if config.norm == "batch" and idx.size < 2:
                continue
            opt.zero_grad()
            loss = nll(model.log_probs(X[idx], training=True), y[idx])
            if not np.isfinite(loss.data):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, update {updates}")
            ad.backward(loss)
            try:
                opt.step()
            except NonFiniteError as exc:
                raise DivergenceError(f"epoch {epoch}, update {updates}: {exc}") from exc
            losses.append(loss.item())
            updates += 1
            if max_updates is not None and updates >= max_updates:
                break
        record(epoch, float(np.mean(losses)))
    last = rows[-1]
    return rows, RunSummary(config, last.test_nll, last.test_error, updates)

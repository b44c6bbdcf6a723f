"""Check which weight and data transformations leave a normalized layer's output unchanged.

The probe is one normalized layer ``h = tanh(g / sigma * (W x - mu) + b)``
evaluated on a whole dataset at ``epsilon = 0``.  Batch statistics are taken
over the full dataset.  Each (scheme, transform) cell is compared against the
known invariance table for batch, weight and layer normalization.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .normalizers import AffineParams, batch_norm_apply, layer_norm_apply, weight_norm_apply

SCHEMES = ("batch", "weight", "layer")
TRANSFORMS = (
    "weight-matrix-rescale",
    "weight-matrix-recenter",
    "weight-vector-rescale",
    "dataset-rescale",
    "dataset-recenter",
    "single-case-rescale",
)

# rows: SCHEMES, columns: TRANSFORMS
EXPECTED = {
    "batch": (True, False, True, True, True, False),
    "weight": (True, False, True, False, False, False),
    "layer": (True, True, False, True, False, True),
}

TOL_INV = 1e-9
TOL_SEP = 1e-3
MIN_STD = 1e-3


class DegenerateDataError(ValueError):
    """The dataset or layer cannot expose a non-invariance."""


@dataclass(frozen=True)
class Layer:
    W: np.ndarray
    gain: np.ndarray
    bias: np.ndarray

    @classmethod
    def random(cls, hidden: int, inputs: int, rng: np.random.Generator) -> "Layer":
        return cls(rng.normal(size=(hidden, inputs)), rng.uniform(0.5, 1.5, hidden), rng.normal(0, 0.1, hidden))


@dataclass(frozen=True)
class TransformSpec:
    kind: str
    delta: float = 1.0
    shift: np.ndarray | float | None = None
    index: int | None = None


@dataclass(frozen=True)
class InvarianceVerdict:
    scheme: str
    transform: str
    deviation: float
    invariant: bool
    expected: bool
    passed: bool


@dataclass
class InvarianceTable:
    verdicts: list[InvarianceVerdict]

    @property
    def matrix(self) -> dict[str, tuple[bool, ...]]:
        return {s: tuple(v.invariant for v in self.verdicts if v.scheme == s) for s in SCHEMES}

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    @property
    def failures(self) -> list[str]:
        return [f"{v.scheme}/{v.transform}: deviation {v.deviation:.3e}, expected "
                f"{'invariant' if v.expected else 'not invariant'}" for v in self.verdicts if not v.passed]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scheme", "transform", "deviation", "invariant", "expected", "pass"])
        for v in self.verdicts:
            w.writerow([v.scheme, v.transform, repr(v.deviation), v.invariant, v.expected, v.passed])
        return buf.getvalue()


def layer_output(scheme: str, layer: Layer, X: np.ndarray) -> np.ndarray:
    """tanh of the normalized summed inputs for every case in ``X``, epsilon 0."""
    p = AffineParams.constant(layer.gain, layer.bias)
    if scheme == "batch":
        out = batch_norm_apply(ad.affine(layer.W, X), p, epsilon=0.0)
    elif scheme == "layer":
        out = layer_norm_apply(ad.affine(layer.W, X), p, epsilon=0.0)
    elif scheme == "weight":
        out = weight_norm_apply(layer.W, X, p)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return np.tanh(out.data)


def apply_transform(layer: Layer, X: np.ndarray, t: TransformSpec) -> tuple[Layer, np.ndarray]:
    """Return a transformed copy of ``(layer, X)``; the inputs are not modified."""
    W = layer.W.copy()
    X = np.array(X, dtype=np.float64, copy=True)
    if t.kind == "weight-matrix-rescale":
        W = t.delta * W
    elif t.kind == "weight-matrix-recenter":
        W = W + np.outer(np.ones(W.shape[0]), np.broadcast_to(t.shift, (W.shape[1],)))
    elif t.kind == "weight-vector-rescale":
        _check_index(t.index, W.shape[0], "unit")
        W[t.index] *= t.delta
    elif t.kind == "dataset-rescale":
        X = t.delta * X
    elif t.kind == "dataset-recenter":
        X = X + np.broadcast_to(t.shift, (X.shape[1],))
    elif t.kind == "single-case-rescale":
        _check_index(t.index, X.shape[0], "case")
        X[t.index] *= t.delta
    else:
        raise ValueError(f"unknown transform {t.kind!r}")
    return replace(layer, W=W), X


def _check_index(index, n: int, what: str) -> None:
    if index is None or not 0 <= index < n:
        raise IndexError(f"{what} index {index} out of range for {n} {what}s")


def sample_transform(kind: str, layer: Layer, X: np.ndarray, rng: np.random.Generator) -> TransformSpec:
    """delta log-uniform on [1/4, 4] (kept away from 1), shifts from N(0, 1)."""
    delta = 1.0
    while abs(np.log(delta)) < 0.1:
        delta = float(np.exp(rng.uniform(np.log(0.25), np.log(4.0))))
    D = layer.W.shape[1]
    if kind in ("weight-matrix-recenter", "dataset-recenter"):
        return TransformSpec(kind, shift=rng.normal(size=D))
    if kind == "weight-vector-rescale":
        return TransformSpec(kind, delta, index=int(rng.integers(layer.W.shape[0])))
    if kind == "single-case-rescale":
        return TransformSpec(kind, delta, index=int(rng.integers(X.shape[0])))
    return TransformSpec(kind, delta)


def check_nondegenerate(layer: Layer, X: np.ndarray) -> None:
    A = X @ layer.W.T
    if np.any(np.linalg.norm(layer.W, axis=1) == 0):
        raise DegenerateDataError("layer has a zero weight row")
    if A.shape[0] < 2 or A.std(axis=0).min() <= MIN_STD:
        raise DegenerateDataError("summed inputs have (near) zero spread over the dataset for some unit")
    if A.shape[1] < 2 or A.std(axis=1).min() <= MIN_STD:
        raise DegenerateDataError("summed inputs have (near) zero spread over the units for some case")


def measure_invariance(scheme: str, layer: Layer, X: np.ndarray, kind: str, trials: int = 5,
                       rng: np.random.Generator | None = None,
                       transforms: list[TransformSpec] | None = None) -> InvarianceVerdict:
    """Largest output change over ``trials`` random transforms of one kind.

    The cell counts as invariant when that change is at most ``TOL_INV``.  A
    cell expected to break invariance passes only if some trial moved the
    output by at least ``TOL_SEP``.
    """
    check_nondegenerate(layer, X)
    rng = np.random.default_rng(0) if rng is None else rng
    if transforms is None:
        transforms = [sample_transform(kind, layer, X, rng) for _ in range(trials)]
    base = layer_output(scheme, layer, X)
    worst = 0.0
    for t in transforms:
        layer2, X2 = apply_transform(layer, X, t)
        worst = max(worst, float(np.max(np.abs(layer_output(scheme, layer2, X2) - base))))
    invariant = worst <= TOL_INV
    expected = EXPECTED[scheme][TRANSFORMS.index(kind)]
    passed = invariant == expected and (expected or worst >= TOL_SEP)
    return InvarianceVerdict(scheme, kind, worst, invariant, expected, passed)


def full_table(X: np.ndarray, trials: int = 5, seed: int = 0, hidden: int = 6,
               layer: Layer | None = None) -> InvarianceTable:
    """Evaluate all 18 (scheme, transform) cells on dataset ``X``."""
    rng = np.random.default_rng(seed)
    X = np.asarray(X, dtype=np.float64)
    if layer is None:
        layer = Layer.random(hidden, X.shape[1], rng)
    verdicts = [measure_invariance(s, layer, X, k, trials, rng) for s in SCHEMES for k in TRANSFORMS]
    return InvarianceTable(verdicts)


def default_dataset(n: int = 32, d: int = 5, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).normal(size=(n, d))

"""Layer, batch and weight normalization in the shared ``g/sigma * (a - mu) + b`` form.

Every scheme produces a :class:`NormStats` pair and routes through
:func:`normalized_unit`.  Inputs may be a single case ``(H,)`` or a batch
``(N, H)``.  Layer statistics are taken over the last axis (per case), batch
statistics over axis 0 (per unit).

``epsilon`` is added to ``sigma``, not to the variance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, ShapeError, Tensor

DEFAULT_EPSILON = 1e-5
BN_MOMENTUM = 0.99

NONLINEARITIES: dict[str, Callable[[Tensor], Tensor]] = {
    "identity": ad.identity,
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "relu": ad.relu,
}


@dataclass
class NormStats:
    mu: Tensor
    sigma: Tensor


@dataclass
class AffineParams:
    """Per-unit gain and bias applied after normalization."""

    gain: Tensor
    bias: Tensor

    def __post_init__(self):
        if self.gain.shape != self.bias.shape:
            raise ShapeError(f"gain {self.gain.shape} and bias {self.bias.shape} must match")

    @classmethod
    def init(cls, size: int, name: str = "ln") -> "AffineParams":
        # gains 1, biases 0
        return cls(Parameter(np.ones(size), f"{name}.gain"), Parameter(np.zeros(size), f"{name}.bias"))

    @classmethod
    def constant(cls, gain, bias) -> "AffineParams":
        return cls(ad.tensor(gain), ad.tensor(bias))

    def parameters(self) -> list[Tensor]:
        return [self.gain, self.bias]


@dataclass(frozen=True)
class NormScheme:
    kind: str = "layer"
    epsilon: float = DEFAULT_EPSILON
    estimator: str = "biased"

    def __post_init__(self):
        if self.kind not in ("layer", "batch", "weight", "none"):
            raise ValueError(f"unknown normalization kind {self.kind!r}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.estimator not in ("biased", "unbiased"):
            raise ValueError(f"unknown variance estimator {self.estimator!r}")


def _standardize(a: Tensor, stats: NormStats, p: AffineParams, epsilon: float) -> Tensor:
    # written as ((a - mu) / (sigma + eps)) * g + b so that stats (0, 1) with g=1,
    # b=0, eps=0 reproduce ``a + b`` bit for bit
    denom = stats.sigma if epsilon == 0 else stats.sigma + epsilon
    return (a - stats.mu) / denom * p.gain + p.bias


def layer_norm_stats(a) -> NormStats:
    """Mean and biased standard deviation over the units of each case."""
    a = ad.tensor(a)
    if a.ndim == 0 or a.shape[-1] < 1:
        raise ShapeError("layer norm needs at least one unit")
    mu = ad.mean(a, axis=-1, keepdims=True)
    sigma = ad.sqrt(ad.variance(a, axis=-1, kind="biased", keepdims=True))
    return NormStats(mu, sigma)


def layer_norm_apply(z, p: AffineParams, epsilon: float = DEFAULT_EPSILON, stats: NormStats | None = None) -> Tensor:
    """``((z - mu) / (sigma + epsilon)) * gain + bias`` with per-case statistics.

    ``stats`` overrides the computed statistics (used for wiring tests).
    """
    z = ad.tensor(z)
    if z.shape[-1] != p.gain.shape[-1]:
        raise ShapeError(f"layer norm: input has {z.shape[-1]} units, affine params have {p.gain.shape[-1]}")
    if stats is None:
        stats = layer_norm_stats(z)
    return _standardize(z, stats, p, epsilon)


def batch_norm_stats(A, estimator: str = "biased") -> NormStats:
    """Per-unit mean and standard deviation down the batch axis."""
    A = ad.tensor(A)
    if A.ndim != 2:
        raise ShapeError(f"batch norm expects an (N, H) batch, got shape {A.shape}")
    n = A.shape[0]
    if n < 1:
        raise ValueError("batch norm needs at least one case")
    if estimator == "unbiased" and n < 2:
        raise ValueError("unbiased batch variance needs a batch of at least 2")
    mu = ad.mean(A, axis=0)
    sigma = ad.sqrt(ad.variance(A, axis=0, kind=estimator))
    return NormStats(mu, sigma)


def batch_norm_apply(A, p: AffineParams, stats: NormStats | None = None, epsilon: float = DEFAULT_EPSILON,
                     estimator: str = "biased") -> Tensor:
    """Standardize each unit over the batch, then apply gain and bias.

    Without ``stats`` the statistics come from ``A`` itself (training mode) and
    gradients flow through them.  Frozen evaluation statistics may be passed in.
    """
    A = ad.tensor(A)
    if stats is None:
        stats = batch_norm_stats(A, estimator)
    if A.shape[-1] != p.gain.shape[-1]:
        raise ShapeError(f"batch norm: input has {A.shape[-1]} units, affine params have {p.gain.shape[-1]}")
    return _standardize(A, stats, p, epsilon)


def weight_norm_stats(W) -> NormStats:
    W = ad.tensor(W)
    norms = np.linalg.norm(W.data, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(f"weight norm: row {int(zero[0])} of the weight matrix is zero")
    sigma = ad.sqrt(ad.tsum(ad.square(W), axis=1))
    return NormStats(ad.tensor(np.zeros(W.shape[0])), sigma)


def weight_norm_apply(W, x, p: AffineParams) -> Tensor:
    """``gain[i] * (w_i . x) / ||w_i|| + bias[i]`` for every unit."""
    W = ad.tensor(W)
    stats = weight_norm_stats(W)
    return _standardize(ad.affine(W, x), stats, p, 0.0)


def normalized_unit(a, stats: NormStats, p: AffineParams, f="identity", epsilon: float = 0.0) -> Tensor:
    """``f(g / sigma * (a - mu) + b)``, the form shared by all three schemes."""
    fn = NONLINEARITIES[f] if isinstance(f, str) else f
    return fn(_standardize(ad.tensor(a), stats, p, epsilon))


class BatchNorm:
    """Batch normalization with running statistics for evaluation.

    Running mean and variance follow ``r <- m * r + (1 - m) * batch`` with
    ``m = 0.99``.
    """

    def __init__(self, size: int, name: str = "bn", epsilon: float = DEFAULT_EPSILON,
                 estimator: str = "biased", momentum: float = BN_MOMENTUM):
        self.affine = AffineParams.init(size, name)
        self.epsilon = epsilon
        self.estimator = estimator
        self.momentum = momentum
        self.running_mean = np.zeros(size)
        self.running_var = np.ones(size)

    def parameters(self) -> list[Tensor]:
        return self.affine.parameters()

    def __call__(self, A, training: bool = True) -> Tensor:
        if training:
            stats = batch_norm_stats(A, self.estimator)
            m = self.momentum
            self.running_mean = m * self.running_mean + (1 - m) * stats.mu.data
            self.running_var = m * self.running_var + (1 - m) * stats.sigma.data ** 2
        else:
            stats = NormStats(ad.tensor(self.running_mean), ad.tensor(np.sqrt(self.running_var)))
        return batch_norm_apply(A, self.affine, stats, self.epsilon)


class LayerNorm:
    def __init__(self, size: int, name: str = "ln", epsilon: float = DEFAULT_EPSILON):
        self.affine = AffineParams.init(size, name)
        self.epsilon = epsilon

    def parameters(self) -> list[Tensor]:
        return self.affine.parameters()

    def __call__(self, z, training: bool = True) -> Tensor:
        return layer_norm_apply(z, self.affine, self.epsilon)

# coding: utf-8

# # Layer, batch and weight normalization side by side
#
# All three compute `g / sigma * (a - mu) + b`.  They differ only in where
# `mu` and `sigma` come from: the units of one case (layer), one unit across
# the batch (batch), or the norm of the incoming weights (weight).

# %%

import numpy as np

from normlab import autodiff as ad
from normlab.normalizers import (AffineParams, batch_norm_apply, layer_norm_apply, layer_norm_stats,
                                 weight_norm_apply)

rng = np.random.default_rng(1)
X = rng.normal(size=(6, 4))
W = rng.normal(size=(3, 4))
A = X @ W.T
p = AffineParams.init(3)

# %%

ln = layer_norm_apply(A, p, epsilon=0.0).data
bn = batch_norm_apply(A, p, epsilon=0.0).data
wn = weight_norm_apply(W, X, p).data

print("layer norm: per-case mean", ln.mean(axis=1).round(12), "std", ln.std(axis=1).round(12))
print("batch norm: per-unit mean", bn.mean(axis=0).round(12), "std", bn.std(axis=0).round(12))
print("weight norm: rows of W / |W| applied to x\n", wn.round(4))

# %% [markdown]
# Layer statistics are computed per case, so rescaling and shifting one case
# changes nothing after normalization.

# %%

z = np.array([1.0, 2.0, 3.0, 4.0])
stats = layer_norm_stats(z)
print("mu, sigma:", stats.mu.item(), stats.sigma.item())
q = AffineParams.init(4)
print(layer_norm_apply(z, q, 0.0).data)
print(layer_norm_apply(7.0 * z - 3.0, q, 0.0).data)

# %% [markdown]
# A constant input has zero spread.  With the default epsilon of 1e-5 the
# output collapses to the bias instead of dividing by zero.

# %%

print(layer_norm_apply(np.full(3, 5.0), AffineParams.constant(np.full(3, 2.0), np.full(3, 7.0))).data)

# %% [markdown]
# Gradients flow through the statistics themselves:

# %%

Z = ad.Parameter(rng.normal(size=(2, 5)), "Z")
r = AffineParams.init(5)
err = ad.finite_diff_check(lambda: ad.tsum(ad.sigmoid(layer_norm_apply(Z, r)) * np.arange(5.0)),
                           [Z, *r.parameters()])
print("layer norm gradient check:", err)

# coding: utf-8

# # Fisher geometry of a normalized GLM
#
# A GLM with H outputs and a normalizer in front of the output nonlinearity.
# We build its Fisher matrix, check it against a score-sampling estimate, and
# look at how the metric along the gains reacts when the inputs are scaled.

# %%

import numpy as np

from normlab import geometry as geo

X = geo.make_samples(n=1024, d=8, seed=0)
model = geo.GlmModel.random(hidden=4, inputs=8, family="bernoulli-logistic", norm="layer", seed=0)
F = geo.fisher(model, X)
print("dimension", F.dim, "symmetric", F.is_symmetric(), "PSD", F.is_psd())

# %% [markdown]
# The score-sampling estimate `E[grad log P grad log P^T]` uses an autodiff
# Jacobian, independent of the closed form.  Entries should agree to within a
# few Monte Carlo standard errors.

# %%

mc = geo.fisher_monte_carlo(model, X, draws=50_000, seed=0)
z = np.abs(F.entries - mc.mean) / mc.stderr
print("median |z| %.2f, share beyond 3 SE %.4f" % (np.median(z), np.mean(z > 3)))

# %% [markdown]
# The quadratic form approximates the KL divergence for small steps.

# %%

d = np.random.default_rng(1).normal(size=model.dim)
d /= np.linalg.norm(d)
for scale in (1e-1, 1e-2, 1e-3):
    exact = geo.kl_exact(model, scale * d, X)
    print(f"|delta|={scale:g}  KL {exact:.3e}  ratio to quadratic {exact / geo.kl_quadratic_form(F, scale * d):.5f}")

# %% [markdown]
# Scaling the whole dataset by 10 leaves the gain metric of batch and layer
# normalization untouched.  The weight-normalized and plain models notice.

# %%

dg = np.ones(4)
for norm in geo.NORM_KINDS:
    m = geo.GlmModel.random(4, 8, "bernoulli-logistic", norm, seed=0)
    metric = geo.projected_weight_metric if norm == "none" else geo.gain_direction_metric
    print(f"{norm:7} {metric(m, dg, X):.4f} -> {metric(m, dg, 10 * X):.4f}")

# %% [markdown]
# Doubling one weight row of the weight-normalized model cuts the curvature
# along that row by four.

# %%

wn = geo.GlmModel.random(4, 8, "bernoulli-logistic", "weight", seed=0)
before = geo.weight_block(geo.fisher(wn, X), wn, 0)
after = geo.weight_block(geo.fisher(geo.scale_weight_row(wn, 0, 2.0), X), wn, 0)
print("block norm ratio:", np.linalg.norm(after) / np.linalg.norm(before))

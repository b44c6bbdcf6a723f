# coding: utf-8

# # A tour of the autodiff engine
#
# normlab carries its own small reverse-mode engine over float64 numpy arrays.
# Every operation records its parents and a vector-Jacobian product; calling
# `backward` on a scalar walks the graph once and fills in `.grad`.

# %%

import numpy as np

from normlab import autodiff as ad

# %% [markdown]
# A single affine unit, the summed input `a = W x + b`:

# %%

W = ad.Parameter(np.array([[1.0, 2.0]]), "W")
b = ad.Parameter(np.array([1.0]), "b")
x = np.array([3.0, 4.0])
a = ad.affine(W, x, b)
print("a =", a.data)          # 1*3 + 2*4 + 1 = 12

# %% [markdown]
# Gradients land on the leaves.  For `sum(tanh(a))` the gradient with respect
# to `W` is `(1 - tanh(a)^2) * x`.  A smaller input keeps tanh out of saturation.

# %%

x = np.array([0.3, -0.2])
a = ad.affine(W, x, b)
ad.backward(ad.tsum(ad.tanh(a)))
print("dL/dW =", W.grad)
print("by hand:", (1 - np.tanh(a.data) ** 2) * x)

# %% [markdown]
# Gradients accumulate until cleared, which matters for recurrent networks
# where one weight is used at every step.

# %%

ad.backward(ad.tsum(ad.tanh(ad.affine(W, x, b))))
print("after a second backward:", W.grad)
ad.zero_grads([W, b])

# %% [markdown]
# The finite-difference oracle compares backprop against central differences
# coordinate by coordinate and reports the worst relative error.

# %%

rng = np.random.default_rng(0)
V = ad.Parameter(rng.normal(size=(4, 3)), "V")
X = rng.normal(size=(5, 3))


def objective():
    h = ad.tanh(ad.affine(V, X))
    return ad.mean(ad.square(h)) + ad.tsum(ad.variance(h, axis=1))


print("max relative error:", ad.finite_diff_check(objective, [V]))

# %% [markdown]
# Adam, with the usual bias correction, drives a quadratic to its minimum.

# %%

p = ad.Parameter(np.array([3.0, -2.0]), "p")
opt = ad.Adam([p], lr=0.1)
for step in range(300):
    opt.zero_grad()
    ad.backward(ad.tsum(ad.square(p - 1.0)))
    opt.step()
print("p after 300 steps:", p.data.round(4))

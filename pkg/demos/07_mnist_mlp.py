# coding: utf-8

# # A 784-1000-1000-10 MLP on MNIST
#
# Needs the four IDX files.  Pass the directory as the first argument:
#
#     python demos/07_mnist_mlp.py ~/data/mnist
#
# Without it the script builds a small synthetic IDX set so the pipeline can
# still be followed end to end.

# %%

import sys
import tempfile
from pathlib import Path

import numpy as np

from normlab.mnist import FILES, RunConfig, build_mlp, load_mnist, train_mnist, write_idx

# %%

if len(sys.argv) > 1:
    data = load_mnist(sys.argv[1], split_seed=0)
    sizes, updates = (784, 1000, 1000, 10), 300
else:
    tmp = Path(tempfile.mkdtemp())
    rng = np.random.default_rng(0)
    for which, n in (("train", 1200), ("test", 300)):
        labels = rng.integers(0, 10, n).astype(np.uint8)
        images = rng.integers(0, 60, (n, 28, 28)).astype(np.uint8)
        for k in range(10):
            images[labels == k, 2 * k:2 * k + 3, 4:24] = 230
        write_idx(tmp / FILES[f"{which}_images"], images)
        write_idx(tmp / FILES[f"{which}_labels"], labels)
    data = load_mnist(tmp, split_seed=0, train_size=1000)
    sizes, updates = (784, 64, 64, 10), 200

print("parameters without / with layer norm:", build_mlp("none").num_parameters(),
      build_mlp("layer").num_parameters())

# %% [markdown]
# Small batches are where batch statistics get noisy.  Train layer and batch
# normalization at batch size 4 for the same number of updates.

# %%

for norm in ("layer", "batch"):
    cfg = RunConfig(norm=norm, batch_size=4, epochs=100, seed=0, unbiased_variance=True)
    rows, summary = train_mnist(cfg, data, sizes, max_updates=updates)
    print(f"{norm:6} after {summary.updates} updates: test NLL {summary.final_test_nll:.4f}, "
          f"error {summary.final_test_error:.3f}")

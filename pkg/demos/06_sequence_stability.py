# coding: utf-8

# # Long sequences: plain tanh RNN against the layer-normalized one
#
# The recurrent matrix is a random orthogonal matrix times a radius.  A small
# radius makes the plain RNN forget; a large one drives it into saturation.
# The normalized RNN keeps its hidden state bounded by gain plus bias.

# %%

import numpy as np

from normlab.stability import run_seq_stability

traces = run_seq_stability(hidden=64, inputs=8, steps=500, seed=0)
for variant, runs in traces.items():
    for tr in runs:
        print(f"{variant:9} radius {tr.radius:3.1f}  sup|h| at step 500 {tr.h_sup[-1]:.3e}  "
              f"|dL/dh_0| {tr.grad_norm[0]:.3e}")

# %% [markdown]
# With zero input and radius 0.5 the plain RNN's state decays toward zero.

# %%

quiet = run_seq_stability(steps=500, radii=(0.5,), zero_input=True, variants=("baseline",))
h = quiet["baseline"][0].h_sup
print("sup|h| at steps 0, 10, 100, 500:", h[[0, 10, 100, 500]])

# coding: utf-8

# # Layer-normalized recurrent cells
#
# Normalization in a recurrent net uses the statistics of the current step
# only.  We unroll an LSTM and a GRU, check backpropagation through time
# against finite differences, and watch the normalized RNN stay put when all
# of its weights are scaled.

# %%

import numpy as np

from normlab import autodiff as ad
from normlab.cells import GruParams, LstmParams, RnnParams, make_step, unroll, zero_state

rng = np.random.default_rng(2)
xs = [rng.normal(size=3) for _ in range(20)]

# %% [markdown]
# Twenty steps of a layer-normalized LSTM.  The loss is the sum of the last
# hidden state; the gradient reaches every weight and every gain and bias.

# %%

lstm = LstmParams.init(hidden=4, inputs=3, variant="ln-full", seed=0)
step = make_step("lstm", "ln-full")


def lstm_loss():
    return unroll(step, lstm, xs, zero_state("lstm", 4), loss=lambda hs: ad.tsum(hs[-1]))[1]


print("LN-LSTM BPTT check:", ad.finite_diff_check(lstm_loss, lstm.parameters()))

gru = GruParams.init(hidden=4, inputs=3, variant="ln-full", seed=0)
gstep = make_step("gru", "ln-full")
print("LN-GRU BPTT check:", ad.finite_diff_check(
    lambda: unroll(gstep, gru, xs, zero_state("gru", 4), loss=lambda hs: ad.tsum(hs[-1]))[1], gru.parameters()))

# %% [markdown]
# Scaling both weight matrices of the normalized RNN by the same factor
# leaves every hidden state unchanged (with epsilon set to zero).

# %%

rnn = RnnParams.init(hidden=6, inputs=3, seed=1)
big = RnnParams(ad.tensor(10 * rnn.W_hh.data), ad.tensor(10 * rnn.W_xh.data), rnn.affine)
h0 = zero_state("rnn", 6)
h0.h = ad.tensor(rng.uniform(-1, 1, 6))
step = make_step("rnn", "ln-full", epsilon=0.0)
a, _ = unroll(step, rnn, xs, h0)
b, _ = unroll(step, big, xs, h0)
print("largest change over 20 steps:", max(np.abs(u.data - v.data).max() for u, v in zip(a, b)))

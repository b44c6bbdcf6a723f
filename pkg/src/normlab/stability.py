"""Long-sequence hidden-state dynamics of plain and layer-normalized tanh RNNs.

For each recurrent spectral radius the recurrent matrix is ``radius * Q``
with ``Q`` a random orthogonal matrix, so every eigenvalue has modulus
``radius``.  Each run records the sup-norm of ``h_t`` and the norm of
``d loss / d h_t`` (loss is the sum of the final hidden state).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import ortho_group

from . import autodiff as ad
from .cells import CellState, RnnParams, make_step, unroll
from .normalizers import AffineParams
from .plotdata import write_csv

RADII = (0.5, 1.0, 1.5, 2.0)
HEADER = ["radius", "step", "h_sup_norm", "grad_norm"]


@dataclass
class StabilityTrace:
    variant: str
    radius: float
    h_sup: np.ndarray      # (T + 1,), entry 0 is the initial state
    grad_norm: np.ndarray  # (T + 1,), entry 0 is ||d loss / d h_0||


def make_rnn(hidden: int, inputs: int, radius: float, seed: int) -> RnnParams:
    rng = np.random.default_rng(seed)
    Q = ortho_group.rvs(hidden, random_state=rng)
    return RnnParams(
        ad.Parameter(radius * Q, "rnn.W_hh"),
        ad.Parameter(rng.normal(0.0, 1.0 / np.sqrt(inputs), (hidden, inputs)), "rnn.W_xh"),
        AffineParams.init(hidden, "rnn"),
    )


def run_trace(params: RnnParams, variant: str, xs: list[np.ndarray], h0: np.ndarray,
              epsilon: float = 0.0) -> StabilityTrace:
    start = ad.Tensor(h0, requires_grad=True)
    step = make_step("rnn", variant, "tanh", epsilon)
    outputs, loss = unroll(step, params, xs, CellState(start), loss=lambda o: ad.tsum(o[-1]),
                           check_finite=False)
    ad.backward(loss)
    hs = [start] + outputs
    sup = np.array([np.max(np.abs(h.data)) for h in hs])
    grad = np.array([np.linalg.norm(h.grad) if h.grad is not None else 0.0 for h in hs])
    radius = float(np.max(np.abs(np.linalg.eigvals(params.W_hh.data))))
    return StabilityTrace(variant, radius, sup, grad)


def run_seq_stability(hidden: int = 64, inputs: int = 8, steps: int = 500, radii=RADII, seed: int = 0,
                      epsilon: float = 0.0, zero_input: bool = False,
                      variants=("baseline", "ln-full")) -> dict[str, list[StabilityTrace]]:
    """Run every variant at every radius on one shared random input sequence."""
    rng = np.random.default_rng(seed)
    xs = [np.zeros(inputs) if zero_input else rng.normal(size=inputs) for _ in range(steps)]
    h0 = rng.uniform(-1.0, 1.0, hidden)
    out: dict[str, list[StabilityTrace]] = {v: [] for v in variants}
    for k, r in enumerate(radii):
        params = make_rnn(hidden, inputs, r, seed + 1000 * (k + 1))
        for v in variants:
            trace = run_trace(params, v, xs, h0, epsilon)
            trace.radius = float(r)
            out[v].append(trace)
    return out


def emit_stability(traces: dict[str, list[StabilityTrace]], out) -> list[Path]:
    """One CSV per variant: ``<stem>_<variant>.csv`` next to ``out``."""
    out = Path(out)
    paths = []
    for variant, runs in traces.items():
        rows = [(tr.radius, t, float(tr.h_sup[t]), float(tr.grad_norm[t]))
                for tr in runs for t in range(tr.h_sup.size)]
        paths.append(write_csv(out.with_name(f"{out.stem}_{variant}.csv"), HEADER, rows))
    return paths

"""Vanilla RNN, LSTM and GRU cells with optional layer normalization.

Variants:

* ``baseline``      -- no normalization.
* ``ln-full``       -- layer normalization at every placement of the
  layer-normalized cell (recurrent and input streams normalized separately,
  plus the LSTM cell state, plus the two GRU candidate streams).
* ``ln-cell-only``  -- LSTM only: normalize ``c_t`` before the output tanh and
  leave the gate pre-activations raw.

Gate blocks are stacked ``(f, i, o, g)`` for the LSTM and ``(z, r)`` for the GRU.
Inputs may be a single case ``(D,)`` or a batch ``(N, D)``; normalization
statistics never cross case boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Parameter, Tensor
from .normalizers import DEFAULT_EPSILON, NONLINEARITIES, AffineParams, NormStats, layer_norm_apply

VARIANTS = ("baseline", "ln-full", "ln-cell-only")


def _check_variant(variant: str, allowed=VARIANTS) -> None:
    if variant not in allowed:
        raise ValueError(f"variant {variant!r} not supported here; expected one of {allowed}")


def _uniform(rng: np.random.Generator, shape, hidden: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(hidden)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class CellState:
    h: Tensor
    c: Tensor | None = None


@dataclass
class RnnParams:
    W_hh: Tensor
    W_xh: Tensor
    affine: AffineParams

    @classmethod
    def init(cls, hidden: int, inputs: int, seed: int = 0) -> "RnnParams":
        rng = np.random.default_rng(seed)
        return cls(
            Parameter(_uniform(rng, (hidden, hidden), hidden), "rnn.W_hh"),
            Parameter(_uniform(rng, (hidden, inputs), hidden), "rnn.W_xh"),
            AffineParams.init(hidden, "rnn"),
        )

    @property
    def hidden(self) -> int:
        return self.W_hh.shape[0]

    def parameters(self) -> list[Tensor]:
        return [self.W_hh, self.W_xh, *self.affine.parameters()]


@dataclass
class LstmParams:
    W_h: Tensor
    W_x: Tensor
    b: Tensor
    ln: list[AffineParams] = field(default_factory=list)

    @classmethod
    def init(cls, hidden: int, inputs: int, variant: str = "ln-full", seed: int = 0) -> "LstmParams":
        _check_variant(variant)
        rng = np.random.default_rng(seed)
        ln: list[AffineParams] = []
        if variant == "ln-full":
            ln = [AffineParams.init(4 * hidden, "lstm.ln1"), AffineParams.init(4 * hidden, "lstm.ln2"),
                  AffineParams.init(hidden, "lstm.ln3")]
        elif variant == "ln-cell-only":
            ln = [AffineParams.init(hidden, "lstm.ln")]
        return cls(
            Parameter(_uniform(rng, (4 * hidden, hidden), hidden), "lstm.W_h"),
            Parameter(_uniform(rng, (4 * hidden, inputs), hidden), "lstm.W_x"),
            Parameter(np.zeros(4 * hidden), "lstm.b"),
            ln,
        )

    @property
    def hidden(self) -> int:
        return self.W_h.shape[1]

    def parameters(self) -> list[Tensor]:
        out = [self.W_h, self.W_x, self.b]
        for p in self.ln:
            out += p.parameters()
        return out


@dataclass
class GruParams:
    W_h: Tensor
    W_x: Tensor
    W: Tensor
    U: Tensor
    ln: list[AffineParams] = field(default_factory=list)

    @classmethod
    def init(cls, hidden: int, inputs: int, variant: str = "ln-full", seed: int = 0) -> "GruParams":
        _check_variant(variant, ("baseline", "ln-full"))
        rng = np.random.default_rng(seed)
        ln: list[AffineParams] = []
        if variant == "ln-full":
            ln = [AffineParams.init(2 * hidden, "gru.ln1"), AffineParams.init(2 * hidden, "gru.ln2"),
                  AffineParams.init(hidden, "gru.ln3"), AffineParams.init(hidden, "gru.ln4")]
        return cls(
            Parameter(_uniform(rng, (2 * hidden, hidden), hidden), "gru.W_h"),
            Parameter(_uniform(rng, (2 * hidden, inputs), hidden), "gru.W_x"),
            Parameter(_uniform(rng, (hidden, inputs), hidden), "gru.W"),
            Parameter(_uniform(rng, (hidden, hidden), hidden), "gru.U"),
            ln,
        )

    @property
    def hidden(self) -> int:
        return self.U.shape[0]

    def parameters(self) -> list[Tensor]:
        out = [self.W_h, self.W_x, self.W, self.U]
        for p in self.ln:
            out += p.parameters()
        return out


def _block(t: Tensor, k: int, hidden: int) -> Tensor:
    return t[..., k * hidden:(k + 1) * hidden]


def rnn_step(p: RnnParams, x_t, h_prev, variant: str = "ln-full", f="tanh",
             epsilon: float = DEFAULT_EPSILON, stats: NormStats | None = None) -> Tensor:
    """One step of ``h = f(g / sigma * (a - mu) + b)`` with ``a = W_hh h + W_xh x``.

    The baseline variant computes ``f(a + b)``.  ``stats`` forces the
    normalization statistics (wiring tests only).
    """
    _check_variant(variant, ("baseline", "ln-full"))
    fn = NONLINEARITIES[f] if isinstance(f, str) else f
    a = ad.affine(p.W_hh, h_prev) + ad.affine(p.W_xh, x_t)
    if variant == "baseline":
        return fn(a + p.affine.bias)
    return fn(layer_norm_apply(a, p.affine, epsilon, stats))


def lstm_step(p: LstmParams, x_t, state: CellState, variant: str = "ln-full",
              epsilon: float = DEFAULT_EPSILON, stats: NormStats | None = None) -> CellState:
    _check_variant(variant)
    H = p.hidden
    rec = ad.affine(p.W_h, state.h)
    inp = ad.affine(p.W_x, x_t)
    if variant == "ln-full":
        pre = layer_norm_apply(rec, p.ln[0], epsilon, stats) + layer_norm_apply(inp, p.ln[1], epsilon, stats) + p.b
    else:
        pre = rec + inp + p.b
    f_t, i_t, o_t, g_t = (_block(pre, k, H) for k in range(4))
    c = ad.sigmoid(f_t) * state.c + ad.sigmoid(i_t) * ad.tanh(g_t)
    if variant == "baseline":
        c_out = c
    else:
        c_out = layer_norm_apply(c, p.ln[-1], epsilon, stats)
    h = ad.sigmoid(o_t) * ad.tanh(c_out)
    return CellState(h, c)


def gru_step(p: GruParams, x_t, h_prev, variant: str = "ln-full",
             epsilon: float = DEFAULT_EPSILON, stats: NormStats | None = None) -> Tensor:
    _check_variant(variant, ("baseline", "ln-full"))
    H = p.hidden
    rec = ad.affine(p.W_h, h_prev)
    inp = ad.affine(p.W_x, x_t)
    cand_x = ad.affine(p.W, x_t)
    cand_h = ad.affine(p.U, h_prev)
    if variant == "ln-full":
        gates = layer_norm_apply(rec, p.ln[0], epsilon, stats) + layer_norm_apply(inp, p.ln[1], epsilon, stats)
        cand_x = layer_norm_apply(cand_x, p.ln[2], epsilon, stats)
        cand_h = layer_norm_apply(cand_h, p.ln[3], epsilon, stats)
    else:
        gates = rec + inp
    z_t, r_t = _block(gates, 0, H), _block(gates, 1, H)
    h_hat = ad.tanh(cand_x + ad.sigmoid(r_t) * cand_h)
    z = ad.sigmoid(z_t)
    return (1.0 - z) * h_prev + z * h_hat


# ---------------------------------------------------------------------------
# unrolling


def zero_state(cell: str, hidden: int, batch: int | None = None) -> CellState:
    shape = (hidden,) if batch is None else (batch, hidden)
    h = ad.tensor(np.zeros(shape))
    return CellState(h, ad.tensor(np.zeros(shape)) if cell == "lstm" else None)


def make_step(cell: str, variant: str, f="tanh", epsilon: float = DEFAULT_EPSILON) -> Callable:
    """A uniform ``step(params, x, state) -> state`` for ``rnn``, ``lstm`` or ``gru``."""
    if cell == "rnn":
        return lambda p, x, s: CellState(rnn_step(p, x, s.h, variant, f, epsilon))
    if cell == "lstm":
        return lambda p, x, s: lstm_step(p, x, s, variant, epsilon)
    if cell == "gru":
        return lambda p, x, s: CellState(gru_step(p, x, s.h, variant, epsilon))
    raise ValueError(f"unknown cell {cell!r}")


def unroll(step: Callable, params, inputs: Sequence, initial: CellState,
           loss: Callable[[list[Tensor]], Tensor] | None = None,
           check_finite: bool = True) -> tuple[list[Tensor], Tensor | None]:
    """Apply ``step`` over ``inputs`` with one shared parameter set.

    Returns the hidden outputs and ``loss(outputs)`` (``None`` without a loss
    function).  Calling :func:`normlab.autodiff.backward` on the loss performs
    backpropagation through time.
    """
    if len(inputs) < 1:
        raise ValueError("sequence must contain at least one step")
    state = initial
    outputs: list[Tensor] = []
    for t, x in enumerate(inputs):
        state = step(params, x, state)
        if check_finite and not np.isfinite(state.h.data).all():
            norm = float(np.linalg.norm(np.nan_to_num(state.h.data, nan=np.inf)))
            raise NonFiniteError(f"hidden state became non-finite at step {t} (norm {norm})")
        outputs.append(state.h)
    return outputs, (loss(outputs) if loss is not None else None)

"""Fisher information geometry of standard and normalized generalized linear models.

A model has ``H`` independent exponential-family outputs driven by the
natural parameters ``s = a + b`` (standard) or ``s = g * (a - mu) / sigma + b``
(normalized), with summed inputs ``a = W x``.  Expectations over ``x`` are
plain means over a supplied sample matrix ``X`` of shape ``(N, D)``; batch
statistics are computed over that same matrix.

Parameter vectors are laid out unit by unit: ``[w_1, b_1, ..., w_H, b_H]``
for standard models and ``[w_1, b_1, g_1, ..., w_H, b_H, g_H]`` for
normalized ones.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import special

from . import autodiff as ad
from .normalizers import AffineParams, batch_norm_apply, layer_norm_apply, weight_norm_apply

NORM_KINDS = ("none", "batch", "layer", "weight")
FAMILIES = ("bernoulli-logistic", "gaussian-identity")
SIGMA_FLOOR = 1e-8


class SingularMetricError(ValueError):
    """A normalization scale is too small for the metric to be defined."""


@dataclass(frozen=True)
class ExponentialFamily:
    kind: str = "bernoulli-logistic"
    phi: float = 1.0

    def __post_init__(self):
        if self.kind not in FAMILIES:
            raise ValueError(f"unknown family {self.kind!r}")
        if not self.phi > 0:
            raise ValueError("dispersion phi must be positive")
        if self.kind == "bernoulli-logistic" and self.phi != 1.0:
            raise ValueError("the Bernoulli family has phi = 1")

    def mean(self, s):
        return special.expit(s) if self.kind == "bernoulli-logistic" else np.asarray(s, dtype=np.float64)

    def dmean(self, s):
        """Derivative of the transfer function; ``Var[y] = phi * dmean``."""
        if self.kind == "bernoulli-logistic":
            p = special.expit(s)
            return p * (1.0 - p)
        return np.ones_like(np.asarray(s, dtype=np.float64))

    def variance(self, s):
        return self.phi * self.dmean(s)

    def eta(self, s):
        return np.logaddexp(0.0, s) if self.kind == "bernoulli-logistic" else 0.5 * np.square(s)

    def log_c(self, y):
        if self.kind == "bernoulli-logistic":
            return np.zeros_like(y)
        return -np.square(y) / (2 * self.phi) - 0.5 * np.log(2 * np.pi * self.phi)

    def check_support(self, y) -> None:
        y = np.asarray(y)
        if self.kind == "bernoulli-logistic" and not np.isin(y, (0.0, 1.0)).all():
            raise ValueError("Bernoulli outputs must be 0 or 1")
        if not np.isfinite(y).all():
            raise ValueError("outputs must be finite")

    def sample(self, s, rng: np.random.Generator, size=None):
        s = np.asarray(s)
        shape = s.shape if size is None else size
        if self.kind == "bernoulli-logistic":
            return (rng.random(shape) < special.expit(s)).astype(np.float64)
        return s + np.sqrt(self.phi) * rng.standard_normal(shape)

    def kl(self, s0, s1):
        """Closed-form KL[P(. | s0) || P(. | s1)], elementwise."""
        if self.kind == "gaussian-identity":
            return np.square(s1 - s0) / (2 * self.phi)
        p = special.expit(s0)
        if np.any(p <= 0.0) or np.any(p >= 1.0):
            raise ValueError("Bernoulli probability saturated at 0 or 1; KL is infinite")
        # p log(p/q) + (1-p) log((1-p)/(1-q)) in logit form
        return np.logaddexp(0.0, s1) - np.logaddexp(0.0, s0) - p * (s1 - s0)


@dataclass(frozen=True)
class GlmModel:
    W: np.ndarray
    b: np.ndarray
    g: np.ndarray | None = None
    family: ExponentialFamily = ExponentialFamily()
    norm: str = "none"

    def __post_init__(self):
        if self.norm not in NORM_KINDS:
            raise ValueError(f"unknown norm kind {self.norm!r}")
        if self.norm != "none" and self.g is None:
            raise ValueError("normalized models need a gain vector")

    @classmethod
    def random(cls, hidden: int = 4, inputs: int = 8, family: ExponentialFamily | str = "bernoulli-logistic",
               norm: str = "none", seed: int = 0) -> "GlmModel":
        if isinstance(family, str):
            family = ExponentialFamily(family)
        rng = np.random.default_rng(seed)
        W = rng.normal(size=(hidden, inputs)) / np.sqrt(inputs)
        b = rng.normal(0.0, 0.5, hidden)
        g = rng.uniform(0.5, 1.5, hidden) if norm != "none" else None
        return cls(W, b, g, family, norm)

    @property
    def hidden(self) -> int:
        return self.W.shape[0]

    @property
    def inputs(self) -> int:
        return self.W.shape[1]

    @property
    def unit_size(self) -> int:
        return self.inputs + (1 if self.norm == "none" else 2)

    @property
    def dim(self) -> int:
        return self.hidden * self.unit_size

    def theta(self) -> np.ndarray:
        cols = [self.W, self.b[:, None]]
        if self.norm != "none":
            cols.append(self.g[:, None])
        return np.hstack(cols).reshape(-1)

    def with_theta(self, theta) -> "GlmModel":
        blocks = np.asarray(theta, dtype=np.float64).reshape(self.hidden, self.unit_size)
        D = self.inputs
        g = blocks[:, D + 1].copy() if self.norm != "none" else None
        return replace(self, W=blocks[:, :D].copy(), b=blocks[:, D].copy(), g=g)

    def w_slice(self, unit: int) -> slice:
        start = unit * self.unit_size
        return slice(start, start + self.inputs)

    def gain_index(self, unit: int) -> int:
        if self.norm == "none":
            raise ValueError("standard models have no gain parameters")
        return unit * self.unit_size + self.inputs + 1


@dataclass
class Forward:
    a: np.ndarray         # (N, H) summed inputs
    mu: np.ndarray        # broadcastable to a
    sigma: np.ndarray     # broadcastable to a
    a_tilde: np.ndarray   # (a - mu) / sigma, or a for standard models
    s: np.ndarray         # natural parameter per output


def forward(model: GlmModel, X) -> Forward:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    a = X @ model.W.T
    if model.norm == "none":
        zero, one = np.zeros((1, 1)), np.ones((1, 1))
        return Forward(a, zero, one, a, a + model.b)
    if model.norm == "batch":
        mu = a.mean(axis=0, keepdims=True)
        sigma = a.std(axis=0, keepdims=True)
    elif model.norm == "layer":
        mu = a.mean(axis=1, keepdims=True)
        sigma = a.std(axis=1, keepdims=True)
    else:
        mu = np.zeros((1, model.hidden))
        sigma = np.linalg.norm(model.W, axis=1)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        a_tilde = (a - mu) / sigma
    return Forward(a, mu, sigma, a_tilde, model.g * a_tilde + model.b)


def _check_sigma(fw: Forward) -> None:
    if np.min(fw.sigma) < SIGMA_FLOOR:
        raise SingularMetricError(f"normalization scale {np.min(fw.sigma):.3e} is below {SIGMA_FLOOR}")


def glm_log_likelihood(model: GlmModel, x, y, samples=None) -> float:
    """Total log density of ``y`` given ``x``, summed over units (and cases).

    Batch-normalized models take their statistics from ``samples`` when given,
    otherwise from the rows of ``x``.
    """
    fam = model.family
    fam.check_support(y)
    x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if model.norm == "batch" and samples is not None:
        fw_all = forward(model, samples)
        a = x2 @ model.W.T
        s = model.g * (a - fw_all.mu) / fw_all.sigma + model.b
    else:
        s = forward(model, x2).s
    y = np.asarray(y, dtype=np.float64).reshape(s.shape)
    return float(np.sum((s * y - fam.eta(s)) / fam.phi + fam.log_c(y)))


# ---------------------------------------------------------------------------
# effective features and Jacobians


def chi_matrix(model: GlmModel, X) -> np.ndarray:
    """Effective features ``x - dmu_i/dw_i - a~_i dsigma_i/dw_i`` for every case and unit, shape (N, H, D)."""
    if model.norm == "none":
        raise ValueError("chi is defined for normalized models only")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    H = model.hidden
    if model.norm == "layer" and H == 1:
        # a single unit is its own mean: the normalized input is constant
        return np.zeros((X.shape[0], 1, X.shape[1]))
    fw = forward(model, X)
    _check_sigma(fw)
    at = fw.a_tilde
    if model.norm == "weight":
        w_unit = model.W / np.square(fw.sigma[0])[:, None]          # w_i / ||w_i||^2
        return X[:, None, :] - fw.a[:, :, None] * w_unit[None, :, :]
    if model.norm == "batch":
        xbar = X.mean(axis=0)
        xc = X - xbar
        cov_xa = (fw.a - fw.mu).T @ xc / X.shape[0]                   # (H, D): E[(a_i - mu_i)(x - xbar)]
        dsigma = cov_xa / fw.sigma[0][:, None]
        return xc[:, None, :] - at[:, :, None] * dsigma[None, :, :]
    # layer: shared mu, sigma over the H units of one case
    return X[:, None, :] * (1.0 - 1.0 / H - np.square(at) / H)[:, :, None]


def chi_vector(model: GlmModel, x, unit: int, samples=None) -> np.ndarray:
    """Effective feature vector of ``unit`` at input ``x``.

    Batch normalization needs the sample set defining its statistics; ``x`` is
    evaluated against those statistics.
    """
    x = np.asarray(x, dtype=np.float64)
    if model.norm != "batch":
        return chi_matrix(model, x[None, :])[0, unit]
    if samples is None:
        raise ValueError("batch-normalized chi needs the sample set")
    Xs = np.asarray(samples, dtype=np.float64)
    fw = forward(model, Xs)
    _check_sigma(fw)
    xbar = Xs.mean(axis=0)
    cov_xa = (fw.a[:, unit] - fw.mu[0, unit]) @ (Xs - xbar) / Xs.shape[0]
    a_t = (x @ model.W[unit] - fw.mu[0, unit]) / fw.sigma[0, unit]
    return x - xbar - a_t * cov_xa / fw.sigma[0, unit]


def jacobian(model: GlmModel, X, unit_local: bool = False) -> np.ndarray:
    """``d s_k / d theta`` for every case, shape (N, H, dim).

    With layer normalization every unit's output depends on every weight
    vector through the shared statistics.  ``unit_local=True`` keeps only the
    ``k == i`` terms.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    N, H, D = X.shape[0], model.hidden, model.inputs
    U = model.unit_size
    J = np.zeros((N, H, H, U))
    idx = np.arange(H)
    if model.norm == "none":
        J[:, idx, idx, :D] = X[:, None, :]
        J[:, idx, idx, D] = 1.0
        return J.reshape(N, H, H * U)
    fw = forward(model, X)
    chi = chi_matrix(model, X)
    if not (model.norm == "layer" and H == 1):
        _check_sigma(fw)
    scale = model.g / fw.sigma                                      # (N or 1, H)
    scale = np.broadcast_to(scale, (N, H))
    J[:, idx, idx, :D] = scale[:, :, None] * chi
    J[:, idx, idx, D] = 1.0
    J[:, idx, idx, D + 1] = fw.a_tilde
    if model.norm == "layer" and not unit_local and H > 1:
        at = fw.a_tilde
        # d s_k / d w_i for k != i: (g_k / sigma) x (-1/H - a~_k a~_i / H)
        cross = -(1.0 + at[:, :, None] * at[:, None, :]) / H          # (N, k, i)
        cross[:, idx, idx] = 0.0
        J[:, :, :, :D] += (scale[:, :, None] * cross)[:, :, :, None] * X[:, None, None, :]
    return J.reshape(N, H, H * U)


# ---------------------------------------------------------------------------
# Fisher matrices


@dataclass
class FisherMatrix:
    entries: np.ndarray
    sample_count: int
    asymmetry: float = 0.0

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def is_symmetric(self, tol: float = 1e-10) -> bool:
        return bool(np.max(np.abs(self.entries - self.entries.T)) <= tol * max(1.0, np.max(np.abs(self.entries))))

    def is_psd(self, rel_tol: float = 1e-8) -> bool:
        eig = np.linalg.eigvalsh(self.entries)
        return bool(eig[0] >= -rel_tol * max(eig[-1], 0.0))


def output_covariance(model: GlmModel, s) -> np.ndarray:
    """``Cov[y | x] / phi^2`` for each case, shape (N, H, H); diagonal for independent outputs."""
    fam = model.family
    var = fam.variance(s) / fam.phi ** 2
    N, H = var.shape
    cov = np.zeros((N, H, H))
    cov[:, np.arange(H), np.arange(H)] = var
    return cov


def _symmetrized(F: np.ndarray, n: int) -> FisherMatrix:
    asym = float(np.linalg.norm(F - F.T))
    return FisherMatrix(0.5 * (F + F.T), n, asym)


def fisher_standard(model: GlmModel, X) -> FisherMatrix:
    """Expected Kronecker product ``Cov[y|x]/phi^2 (x) [[x x^T, x], [x^T, 1]]``."""
    if model.norm != "none":
        raise ValueError("fisher_standard is for unnormalized models")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("need at least one sample")
    fw = forward(model, X)
    cov = output_covariance(model, fw.s)
    xt = np.hstack([X, np.ones((X.shape[0], 1))])
    H, U = model.hidden, model.unit_size
    F = np.einsum("nkl,np,nq->kplq", cov, xt, xt, optimize=True).reshape(H * U, H * U) / X.shape[0]
    return _symmetrized(F, X.shape[0])


def fisher_normalized(model: GlmModel, X, unit_local: bool = False) -> FisherMatrix:
    """Fisher information of a normalized GLM over ``theta = vec([W, b, g]^T)``.

    Block ``(i, j)`` is ``E[Cov(y_i, y_j | x) / phi^2 * v_i v_j^T]`` with
    ``v_i = [g_i chi_i / sigma_i, 1, a~_i]``.  For layer normalization the shared
    statistics also couple unit ``k``'s output to every weight vector; those
    terms are included unless ``unit_local`` is set.
    """
    if model.norm == "none":
        raise ValueError("fisher_normalized needs a normalized model")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("need at least one sample")
    fw = forward(model, X)
    cov = output_covariance(model, fw.s)
    J = jacobian(model, X, unit_local=unit_local)
    F = np.einsum("nkp,nkl,nlq->pq", J, cov, J, optimize=True) / X.shape[0]
    return _symmetrized(F, X.shape[0])


def fisher(model: GlmModel, X) -> FisherMatrix:
    return fisher_standard(model, X) if model.norm == "none" else fisher_normalized(model, X)


# ---------------------------------------------------------------------------
# score-sampling oracle


def autodiff_jacobian(model: GlmModel, X) -> np.ndarray:
    """``d s / d theta`` by reverse-mode differentiation through the normalizers, shape (N, H, dim).

    Independent of :func:`jacobian`: it differentiates the forward pass of
    :mod:`normlab.normalizers` one output at a time.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    W = ad.Parameter(model.W, "W")
    b = ad.Parameter(model.b, "b")
    params = [W, b]
    if model.norm == "none":
        s = ad.affine(W, X, b)
    else:
        g = ad.Parameter(model.g, "g")
        params.append(g)
        p = AffineParams(g, b)
        if model.norm == "batch":
            s = batch_norm_apply(ad.affine(W, X), p, epsilon=0.0)
        elif model.norm == "layer":
            s = layer_norm_apply(ad.affine(W, X), p, epsilon=0.0)
        else:
            s = weight_norm_apply(W, X, p)
    N, H = s.shape
    out = np.zeros((N, H, model.dim))
    seed = np.zeros((N, H))
    for n in range(N):
        for k in range(H):
            seed[n, k] = 1.0
            ad.zero_grads(params)
            ad.backward(ad.tsum(s * seed))
            seed[n, k] = 0.0
            cols = [W.grad, b.grad[:, None]] + ([params[2].grad[:, None]] if len(params) == 3 else [])
            out[n, k] = np.hstack(cols).reshape(-1)
    return out


@dataclass
class MonteCarloFisher:
    mean: np.ndarray
    stderr: np.ndarray
    draws: int


def fisher_monte_carlo(model: GlmModel, X, draws: int = 100_000, seed: int = 0,
                       jac: np.ndarray | None = None, chunk: int = 64) -> MonteCarloFisher:
    """Score outer-product estimate ``E[grad log P grad log P^T]`` with per-entry standard errors.

    Every case in ``X`` receives ``ceil(draws / N)`` output draws; the score of
    a draw is ``sum_k (y_k - f(s_k)) / phi * d s_k / d theta``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    N = X.shape[0]
    M = max(2, -(-draws // N))
    fam = model.family
    rng = np.random.default_rng(seed)
    J = autodiff_jacobian(model, X) if jac is None else jac
    s = forward(model, X).s
    P = model.dim
    total = np.zeros((P, P))
    var_sum = np.zeros((P, P))
    for lo in range(0, N, chunk):
        sl = slice(lo, min(N, lo + chunk))
        sc = s[sl]
        y = fam.sample(sc[:, None, :], rng, size=(sc.shape[0], M, sc.shape[1]))
        r = (y - fam.mean(sc)[:, None, :]) / fam.phi                 # (n, M, H)
        score = np.einsum("nmk,nkp->nmp", r, J[sl])
        z = score[:, :, :, None] * score[:, :, None, :]              # (n, M, P, P)
        total += z.sum(axis=(0, 1))
        var_sum += z.var(axis=1, ddof=1).sum(axis=0) / M
    mean = total / (N * M)
    return MonteCarloFisher(mean, np.sqrt(var_sum) / N, N * M)


# ---------------------------------------------------------------------------
# KL metric


def kl_quadratic_form(F, delta) -> float:
    """``1/2 delta^T F delta``."""
    F = F.entries if isinstance(F, FisherMatrix) else np.asarray(F, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != (F.shape[0],):
        raise ValueError(f"delta has shape {delta.shape}, metric has dimension {F.shape[0]}")
    return 0.5 * float(delta @ F @ delta)


def kl_exact(model: GlmModel, delta, X) -> float:
    """Mean over ``X`` of ``KL[P(y|x; theta) || P(y|x; theta + delta)]``, summed over outputs."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    moved = model.with_theta(model.theta() + np.asarray(delta, dtype=np.float64))
    s0 = forward(model, X).s
    s1 = forward(moved, X).s
    return float(np.mean(np.sum(model.family.kl(s0, s1), axis=1)))


def _gain_terms(model: GlmModel, delta_g, X, form: str) -> np.ndarray:
    if model.norm == "none":
        raise ValueError("gain metrics need a normalized model")
    delta_g = np.asarray(delta_g, dtype=np.float64)
    if delta_g.shape != (model.hidden,):
        raise ValueError(f"delta_g must have shape ({model.hidden},)")
    fw = forward(model, X)
    _check_sigma(fw)
    cov = output_covariance(model, fw.s)
    if form == "appendix" and model.norm == "batch":
        weights = np.ones_like(fw.a_tilde)
    elif form in ("fisher", "appendix"):
        weights = fw.a_tilde
    else:
        raise ValueError(f"unknown form {form!r}")
    v = weights * delta_g
    return 0.5 * np.einsum("nk,nkl,nl->n", v, cov, v)


def gain_direction_metric(model: GlmModel, delta_g, X, form: str = "fisher", return_se: bool = False):
    """``ds^2`` for a perturbation of the gains only.

    Each entry of the metric is ``E[Cov(y_i, y_j | x) a~_i a~_j] / phi^2``,
    with ``a~ = (a - mu) / sigma`` (``a / ||w||`` under weight normalization).
    ``form="appendix"`` drops the ``a~`` weighting for batch normalization,
    giving ``E[Cov[y|x]] / phi^2``; the two agree when the output variance does
    not depend on ``x``.
    """
    terms = _gain_terms(model, delta_g, X, form)
    value = float(terms.mean())
    if return_se:
        return value, float(terms.std(ddof=1) / np.sqrt(terms.size))
    return value


def projected_delta(model: GlmModel, delta_g) -> np.ndarray:
    """Parameter step moving each ``w_i`` by ``delta_g[i]`` along ``w_i / ||w_i||``."""
    if model.norm != "none":
        raise ValueError("projection is defined on the standard model")
    norms = np.linalg.norm(model.W, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(f"weight row {int(zero[0])} is zero")
    step = np.zeros((model.hidden, model.unit_size))
    step[:, :model.inputs] = np.asarray(delta_g, dtype=np.float64)[:, None] * model.W / norms[:, None]
    return step.reshape(-1)


def projected_weight_metric(model: GlmModel, delta_g, X, return_se: bool = False):
    """Standard-model ``ds^2`` of the gain step projected onto the weight directions."""
    projected_delta(model, delta_g)  # validates rows
    fw = forward(model, X)
    cov = output_covariance(model, fw.s)
    v = fw.a / np.linalg.norm(model.W, axis=1) * np.asarray(delta_g, dtype=np.float64)
    terms = 0.5 * np.einsum("nk,nkl,nl->n", v, cov, v)
    value = float(terms.mean())
    if return_se:
        return value, float(terms.std(ddof=1) / np.sqrt(terms.size))
    return value


def weight_block(F: FisherMatrix, model: GlmModel, unit: int) -> np.ndarray:
    """The ``(w_i, w_i)`` block of a Fisher matrix."""
    sl = model.w_slice(unit)
    return F.entries[sl, sl]


def scale_weight_row(model: GlmModel, unit: int, factor: float) -> GlmModel:
    W = model.W.copy()
    W[unit] *= factor
    return replace(model, W=W)


def make_samples(n: int = 2048, d: int = 8, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((n, d))

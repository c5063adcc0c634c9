"""Gaussian-process surrogate with a squared-exponential ARD kernel and the
closed-form Expected Improvement acquisition."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import DimensionMismatch, NotPositiveDefinite
from .tensor import cholesky, triangular_solve

EI_SIGMA_FLOOR = 1e-12
GRID_LENGTHSCALES = (0.05, 0.1, 0.2, 0.5, 1.0, 2.0)
GRID_SIGNAL_VARIANCES = (0.01, 0.1, 1.0)
GRID_NOISE_VARIANCE = 1e-6


@dataclass(frozen=True)
class KernelParams:
    lengthscales: tuple
    signal_variance: float = 1.0
    noise_variance: float = 0.0

    def __post_init__(self):
        ls = tuple(float(x) for x in np.atleast_1d(self.lengthscales))
        object.__setattr__(self, "lengthscales", ls)
        if any(x <= 0 for x in ls):
            raise ValueError("lengthscales must be positive")
        if self.signal_variance <= 0:
            raise ValueError("signal_variance must be positive")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be non-negative")

    @classmethod
    def shared(cls, dim, lengthscale, signal_variance=1.0, noise_variance=0.0):
        return cls((lengthscale,) * dim, signal_variance, noise_variance)

    def to_dict(self):
        return {
            "lengthscales": list(self.lengthscales),
            "signal_variance": self.signal_variance,
            "noise_variance": self.noise_variance,
        }


def _lengthscales(params, dim):
    ls = np.asarray(params.lengthscales)
    if ls.size == 1 and dim != 1:
        ls = np.full(dim, ls[0])
    if ls.size != dim:
        raise DimensionMismatch(f"{ls.size} lengthscales for {dim} dims")
    return ls


def kernel(params, x1, x2):
    """k(x1, x2) = s^2 exp(-0.5 sum ((x1_i - x2_i) / l_i)^2)."""
    x1 = np.asarray(x1, dtype=np.float64).ravel()
    x2 = np.asarray(x2, dtype=np.float64).ravel()
    if x1.size != x2.size:
        raise DimensionMismatch(f"{x1.size} != {x2.size}")
    r = (x1 - x2) / _lengthscales(params, x1.size)
    return float(params.signal_variance * np.exp(-0.5 * (r @ r)))


def kernel_matrix(params, a, b):
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(f"{a.shape[1]} != {b.shape[1]}")
    ls = _lengthscales(params, a.shape[1])
    a, b = a / ls, b / ls
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return params.signal_variance * np.exp(-0.5 * np.maximum(sq, 0.0))


@dataclass(frozen=True)
class GPModel:
    x_train: np.ndarray
    y_train: np.ndarray
    prior_mean: float
    params: KernelParams
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0

    @property
    def dim(self):
        return self.x_train.shape[1]


def fit(x_train, y_train, params):
    """Condition the GP on observations; the prior mean is mean(y)."""
    x = np.atleast_2d(np.asarray(x_train, dtype=np.float64))
    y = np.asarray(y_train, dtype=np.float64).ravel()
    if x.shape[0] < 1 or x.shape[0] != y.size:
        raise DimensionMismatch(f"{x.shape[0]} inputs for {y.size} targets")
    if params.noise_variance == 0.0 and len(np.unique(x, axis=0)) < len(x):
        # duplicate inputs make a noise-free kernel exactly singular
        raise NotPositiveDefinite("duplicate training inputs with zero noise")
    k = kernel_matrix(params, x, x) + params.noise_variance * np.eye(len(x))
    lower, lam = cholesky(k, return_jitter=True)
    mu0 = float(y.mean())
    alpha = triangular_solve(lower, triangular_solve(lower, y - mu0), transposed=True)
    return GPModel(x.copy(), y.copy(), mu0, params, lower, alpha, lam)


def posterior_batch(model, xs):
    """Posterior means and variances at the rows of ``xs``."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    if xs.shape[1] != model.dim:
        raise DimensionMismatch(f"expected {model.dim} dims, got {xs.shape[1]}")
    ks = kernel_matrix(model.params, xs, model.x_train)
    mu = ks @ model.alpha + model.prior_mean
    v = triangular_solve(model.chol, ks.T)
    var = model.params.signal_variance - (v * v).sum(0)
    return mu, np.maximum(var, 0.0)


def posterior(model, x):
    mu, var = posterior_batch(model, np.asarray(x, dtype=np.float64).reshape(1, -1))
    return float(mu[0]), float(var[0])


def norm_cdf(z):
    return 0.5 * (1.0 + erf(np.asarray(z) / math.sqrt(2.0)))


def norm_pdf(z):
    z = np.asarray(z)
    return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def expected_improvement(mu, var, f_best):
    """E[max(F - f_best, 0)] for F ~ Normal(mu, var); vectorizes over arrays."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.sqrt(np.maximum(np.asarray(var, dtype=np.float64), 0.0))
    gain = mu - f_best
    safe = np.where(sigma < EI_SIGMA_FLOOR, 1.0, sigma)
    z = gain / safe
    ei = gain * norm_cdf(z) + safe * norm_pdf(z)
    ei = np.where(sigma < EI_SIGMA_FLOOR, np.maximum(gain, 0.0), np.maximum(ei, 0.0))
    return float(ei) if ei.ndim == 0 else ei


def log_marginal_likelihood(x_train, y_train, params):
    x = np.atleast_2d(np.asarray(x_train, dtype=np.float64))
    y = np.asarray(y_train, dtype=np.float64).ravel()
    k = kernel_matrix(params, x, x) + params.noise_variance * np.eye(len(x))
    lower = cholesky(k)
    r = y - y.mean()
    a = triangular_solve(lower, r)
    return float(
        -0.5 * a @ a - np.log(np.diag(lower)).sum() - 0.5 * len(y) * math.log(2 * math.pi)
    )


def optimize_hyperparams(x_train, y_train):
    """Grid search of the log marginal likelihood.

    Shared lengthscale over GRID_LENGTHSCALES, signal variance over
    GRID_SIGNAL_VARIANCES, noise fixed at 1e-6.  Equal scores go to the
    larger lengthscale.  Cells whose kernel cannot be factorized are skipped.
    """
    x = np.atleast_2d(np.asarray(x_train, dtype=np.float64))
    y = np.asarray(y_train, dtype=np.float64).ravel()
    if len(y) < 2:
        raise ValueError("optimize_hyperparams needs at least two observations")
    scored = []
    for ls in GRID_LENGTHSCALES:
        for sv in GRID_SIGNAL_VARIANCES:
            params = KernelParams.shared(x.shape[1], ls, sv, GRID_NOISE_VARIANCE)
            try:
                scored.append((log_marginal_likelihood(x, y, params), ls, params))
            except NotPositiveDefinite:
                continue
    if not scored:
        raise NotPositiveDefinite("no grid cell produced a factorizable kernel")
    top = max(s[0] for s in scored)
    tol = 1e-9 * max(1.0, abs(top))
    tied = [s for s in scored if s[0] >= top - tol]
    return max(tied, key=lambda s: (s[1], s[0]))[2]

"""Search/prior distributions with exact sampling, log densities and weighted ML fits.

All ``fit_weighted`` methods return new instances; models are never mutated.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import CbASError, DegenerateWeightsError, as_continuous, as_sequences

VARIANCE_FLOOR = 1e-6
LOG_2PI = math.log(2 * math.pi)


def _check_weights(weights, n: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float).ravel()
    if w.shape[0] != n:
        raise ValueError(f"{n} samples but {w.shape[0]} weights")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    return w


def _normalize(w: np.ndarray) -> np.ndarray:
    total = w.sum()
    if not total > 0:
        raise DegenerateWeightsError("degenerate weights")
    return w / total


# ---------------------------------------------------------------------------
# Diagonal Gaussian
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DiagonalGaussianModel:
    mean: np.ndarray
    variance: np.ndarray
    variance_floor: float = VARIANCE_FLOOR

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        var = np.atleast_1d(np.asarray(self.variance, dtype=float))
        if mean.shape != var.shape or mean.ndim != 1:
            raise ValueError("mean and variance must be vectors of equal length")
        if np.any(var < self.variance_floor):
            raise ValueError("variance below floor")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", var)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def sample(self, rng: np.random.Generator, m: int) -> np.ndarray:
        return self.mean + np.sqrt(self.variance) * rng.standard_normal((m, self.dim))

    def log_density(self, x) -> np.ndarray:
        x = as_continuous(x)
        if x.shape[1] != self.dim:
            raise ValueError(f"expected dimension {self.dim}, got {x.shape[1]}")
        z = (x - self.mean) ** 2 / self.variance
        return -0.5 * np.sum(z + np.log(self.variance) + LOG_2PI, axis=1)

    def density(self, x) -> np.ndarray:
        return np.exp(self.log_density(x))

    def fit_weighted(self, samples, weights) -> "DiagonalGaussianModel":
        return gaussian_fit_weighted(samples, weights, self.variance_floor)

    def weighted_log_likelihood(self, samples, weights) -> float:
        return float(np.dot(weights, self.log_density(samples)))

    def to_dict(self) -> dict:
        return {"kind": "diagonal_gaussian", "mean": self.mean.tolist(),
                "variance": self.variance.tolist(), "variance_floor": self.variance_floor}

    def __eq__(self, other):
        return (isinstance(other, DiagonalGaussianModel)
                and np.array_equal(self.mean, other.mean)
                and np.array_equal(self.variance, other.variance))


def gaussian_fit_weighted(samples, weights, variance_floor: float = VARIANCE_FLOOR) -> DiagonalGaussianModel:
    """Closed-form weighted MLE of a diagonal Gaussian (population variance, floored)."""
    x = as_continuous(samples)
    w = _normalize(_check_weights(weights, x.shape[0]))
    mean = w @ x
    var = w @ (x - mean) ** 2
    return DiagonalGaussianModel(mean, np.maximum(var, variance_floor), variance_floor)


# ---------------------------------------------------------------------------
# Product of categoricals
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ProductCategoricalModel:
    """Independent categorical per position; ``probs`` has shape (L, A)."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 2:
            raise ValueError("probs must be an (L, A) matrix")
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1) > 1e-12):
            raise ValueError("rows of probs must lie on the simplex")
        object.__setattr__(self, "probs", p)
        with np.errstate(divide="ignore"):
            object.__setattr__(self, "_log_probs", np.log(p))

    @property
    def length(self) -> int:
        return self.probs.shape[0]

    @property
    def alphabet_size(self) -> int:
        return self.probs.shape[1]

    @classmethod
    def uniform(cls, length: int, alphabet_size: int) -> "ProductCategoricalModel":
        return cls(np.full((length, alphabet_size), 1.0 / alphabet_size))

    def sample(self, rng: np.random.Generator, m: int) -> np.ndarray:
        # inverse-CDF per position, vectorised over the batch
        cdf = np.cumsum(self.probs, axis=1)
        cdf[:, -1] = 1.0
        u = rng.random((m, self.length, 1))
        return (u > cdf[None, :, :]).sum(axis=2).astype(np.int64)

    def log_density(self, x) -> np.ndarray:
        x = as_sequences(x, self.alphabet_size, self.length)
        return self._log_probs[np.arange(self.length), x].sum(axis=1)

    def fit_weighted(self, samples, weights, smoothing: float = 0.0) -> "ProductCategoricalModel":
        return categorical_fit_weighted(samples, weights, self.alphabet_size, smoothing)

    def weighted_log_likelihood(self, samples, weights) -> float:
        w = np.asarray(weights, dtype=float)
        lp = self.log_density(samples)
        return float(np.dot(w[w > 0], lp[w > 0]))

    def to_dict(self) -> dict:
        return {"kind": "product_categorical", "probs": self.probs.tolist()}

    def __eq__(self, other):
        return isinstance(other, ProductCategoricalModel) and np.array_equal(self.probs, other.probs)


def one_hot(x: np.ndarray, alphabet_size: int) -> np.ndarray:
    """(M, L) int -> (M, L*A) float one-hot features."""
    m, length = x.shape
    out = np.zeros((m, length * alphabet_size))
    out[np.arange(m)[:, None], np.arange(length)[None, :] * alphabet_size + x] = 1.0
    return out


def categorical_fit_weighted(samples, weights, alphabet_size: int,
                             smoothing: float = 0.0) -> ProductCategoricalModel:
    """``probs[l, a] = (smoothing + sum_{i: x_il = a} w_i) / (A * smoothing + sum_i w_i)``."""
    if smoothing < 0:
        raise ValueError("smoothing must be >= 0")
    x = as_sequences(samples, alphabet_size)
    w = _check_weights(weights, x.shape[0])
    total = w.sum()
    if not total > 0:
        if smoothing == 0:
            raise DegenerateWeightsError("degenerate weights")
        w_norm, scale = w, 0.0
    else:
        w_norm, scale = w / total, total
    length = x.shape[1]
    counts = np.zeros((length, alphabet_size))
    for pos in range(length):
        counts[pos] = np.bincount(x[:, pos], weights=w_norm, minlength=alphabet_size)
    if smoothing == 0:
        probs = counts
    else:
        # same formula, evaluated on normalized counts: (s + total*c) / (A s + total)
        probs = (smoothing + scale * counts) / (alphabet_size * smoothing + scale)
    probs = probs / probs.sum(axis=1, keepdims=True)
    return ProductCategoricalModel(probs)


# ---------------------------------------------------------------------------
# Linear-Gaussian latent variable model (probabilistic PCA)
# ---------------------------------------------------------------------------

class EMConvergenceError(CbASError):
    def __init__(self, message: str, last: "LinearGaussianLatentModel"):
        super().__init__(message)
        self.last = last


@dataclass(frozen=True, eq=False)
class LinearGaussianLatentModel:
    """``z ~ N(0, I_d)``, ``x | z ~ N(W z + b, noise_variance * I_L)``."""

    loading: np.ndarray
    bias: np.ndarray
    noise_variance: float
    variance_floor: float = VARIANCE_FLOOR
    max_em_iters: int = 500
    tol: float = 1e-8

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.loading, dtype=float))
        b = np.atleast_1d(np.asarray(self.bias, dtype=float))
        if w.shape[0] != b.shape[0]:
            raise ValueError("loading rows must match bias length")
        if w.shape[1] > w.shape[0]:
            raise ValueError("latent_dim must be <= data dimension")
        if not self.noise_variance >= self.variance_floor:
            raise ValueError("noise_variance below floor")
        object.__setattr__(self, "loading", w)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "noise_variance", float(self.noise_variance))

    @property
    def dim(self) -> int:
        return self.loading.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.loading.shape[1]

    def marginal_covariance(self) -> np.ndarray:
        return self.loading @ self.loading.T + self.noise_variance * np.eye(self.dim)

    def sample_joint(self, rng: np.random.Generator, m: int) -> tuple[np.ndarray, np.ndarray]:
        z = rng.standard_normal((m, self.latent_dim))
        eps = rng.standard_normal((m, self.dim))
        return z @ self.loading.T + self.bias + math.sqrt(self.noise_variance) * eps, z

    def sample(self, rng: np.random.Generator, m: int) -> np.ndarray:
        return self.sample_joint(rng, m)[0]

    def log_latent_prior(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        return -0.5 * np.sum(z ** 2 + LOG_2PI, axis=1)

    def log_conditional(self, x, z) -> np.ndarray:
        x = as_continuous(x)
        z = np.atleast_2d(np.asarray(z, dtype=float))
        r = x - z @ self.loading.T - self.bias
        s2 = self.noise_variance
        return -0.5 * (np.sum(r ** 2, axis=1) / s2 + self.dim * (math.log(s2) + LOG_2PI))

    def log_joint_density(self, x, z) -> np.ndarray:
        return self.log_conditional(x, z) + self.log_latent_prior(z)

    def log_density(self, x) -> np.ndarray:
        x = as_continuous(x)
        c = self.marginal_covariance()
        chol = np.linalg.cholesky(c)
        sol = np.linalg.solve(chol, (x - self.bias).T)
        logdet = 2 * np.sum(np.log(np.diag(chol)))
        return -0.5 * (np.sum(sol ** 2, axis=0) + logdet + self.dim * LOG_2PI)

    def posterior(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Exact ``p(z|x)``: per-sample means (M, d) and the shared covariance (d, d)."""
        x = as_continuous(x)
        w, s2 = self.loading, self.noise_variance
        m_mat = w.T @ w + s2 * np.eye(self.latent_dim)
        m_inv = np.linalg.inv(m_mat)
        means = (x - self.bias) @ w @ m_inv.T
        return means, s2 * m_inv

    def elbo(self, x, post_means, post_cov) -> np.ndarray:
        """Evidence lower bound under a Gaussian approximate posterior N(post_means, post_cov)."""
        x = as_continuous(x)
        w, s2, d = self.loading, self.noise_variance, self.latent_dim
        r = x - post_means @ w.T - self.bias
        expected_sq = np.sum(r ** 2, axis=1) + np.trace(w @ post_cov @ w.T)
        rec = -0.5 * (expected_sq / s2 + self.dim * (math.log(s2) + LOG_2PI))
        _, logdet = np.linalg.slogdet(post_cov)
        kl = 0.5 * (np.trace(post_cov) + np.sum(post_means ** 2, axis=1) - d - logdet)
        return rec - kl

    def weighted_log_likelihood(self, samples, weights) -> float:
        return float(np.dot(weights, self.log_density(samples)))

    def fit_weighted(self, samples, weights) -> "LinearGaussianLatentModel":
        return linear_gaussian_fit_weighted(samples, weights, self.latent_dim, init=self,
                                            variance_floor=self.variance_floor,
                                            max_em_iters=self.max_em_iters, tol=self.tol)

    def to_dict(self) -> dict:
        return {"kind": "linear_gaussian_latent", "loading": self.loading.tolist(),
                "bias": self.bias.tolist(), "noise_variance": self.noise_variance,
                "variance_floor": self.variance_floor}

    def __eq__(self, other):
        return (isinstance(other, LinearGaussianLatentModel)
                and np.array_equal(self.loading, other.loading)
                and np.array_equal(self.bias, other.bias)
                and self.noise_variance == other.noise_variance)


def _ppca_loglik(s: np.ndarray, w: np.ndarray, s2: float) -> float:
    """Average log-likelihood of data with (weighted) scatter ``s`` about the bias."""
    dim = s.shape[0]
    c = w @ w.T + s2 * np.eye(dim)
    sign, logdet = np.linalg.slogdet(c)
    return -0.5 * (dim * LOG_2PI + logdet + np.trace(np.linalg.solve(c, s)))


def linear_gaussian_fit_weighted(samples, weights, latent_dim: int, init: LinearGaussianLatentModel | None = None,
                                 variance_floor: float = VARIANCE_FLOOR, max_em_iters: int = 500,
                                 tol: float = 1e-8) -> LinearGaussianLatentModel:
    """Weighted maximum likelihood by EM.

    The bias has a closed form (weighted mean). Loading and noise variance follow
    the probabilistic-PCA EM updates on the weighted scatter matrix; clamping the
    noise variance at the floor keeps each step non-decreasing in likelihood.
    Warm-starts from ``init`` when given.
    """
    x = as_continuous(samples)
    w = _normalize(_check_weights(weights, x.shape[0]))
    n, dim = x.shape
    if latent_dim > dim:
        raise ValueError("latent_dim must be <= data dimension")
    bias = w @ x
    xc = x - bias
    scatter = (xc * w[:, None]).T @ xc
    eye_d = np.eye(latent_dim)

    if init is not None and init.loading.shape == (dim, latent_dim):
        load, s2 = init.loading.copy(), max(init.noise_variance, variance_floor)
    else:
        evals, evecs = np.linalg.eigh(scatter)
        order = np.argsort(evals)[::-1]
        evals, evecs = evals[order], evecs[:, order]
        load = evecs[:, :latent_dim] * np.sqrt(np.maximum(evals[:latent_dim], variance_floor))
        s2 = max(float(np.trace(scatter)) / dim, variance_floor)

    def _model(load, s2):
        return LinearGaussianLatentModel(load, bias, s2, variance_floor, max_em_iters, tol)

    ll = _ppca_loglik(scatter, load, s2)
    for _ in range(max_em_iters):
        m_mat = load.T @ load + s2 * eye_d
        m_inv = np.linalg.inv(m_mat)
        sw = scatter @ load
        new_load = sw @ np.linalg.inv(s2 * eye_d + m_inv @ load.T @ sw)
        new_s2 = float(np.trace(scatter - sw @ m_inv @ new_load.T)) / dim
        new_s2 = max(new_s2, variance_floor)
        new_ll = _ppca_loglik(scatter, new_load, new_s2)
        load, s2 = new_load, new_s2
        done = abs(new_ll - ll) <= tol * max(1.0, abs(ll))
        ll = new_ll
        if done:
            return _model(load, s2)
    raise EMConvergenceError(f"EM did not converge in {max_em_iters} iterations", _model(load, s2))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def model_from_dict(doc: dict):
    kind = doc.get("kind")
    if kind == "diagonal_gaussian":
        return DiagonalGaussianModel(np.asarray(doc["mean"]), np.asarray(doc["variance"]),
                                     doc.get("variance_floor", VARIANCE_FLOOR))
    if kind == "product_categorical":
        return ProductCategoricalModel(np.asarray(doc["probs"]))
    if kind == "linear_gaussian_latent":
        return LinearGaussianLatentModel(np.asarray(doc["loading"]), np.asarray(doc["bias"]),
                                         doc["noise_variance"], doc.get("variance_floor", VARIANCE_FLOOR))
    raise ValueError(f"unknown model kind {kind!r}")


def dumps_model(model) -> str:
    return json.dumps(model.to_dict())


def loads_model(text: str):
    return model_from_dict(json.loads(text))

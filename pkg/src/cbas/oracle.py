"""Property oracles ``p(y|x) = N(mu(x), sigma^2(x))``, ground-truth landscapes and training protocols."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr, logsumexp, ndtr

from .core import IllPosedFitError, as_sequences, nearest_rank_percentile
from .models import one_hot

NOISE_FLOOR = 1e-8
RIDGE = 1e-6


def _gaussian_survival(mean, sd, gamma):
    mean = np.asarray(mean, dtype=float)
    sd = np.broadcast_to(np.asarray(sd, dtype=float), mean.shape)
    out = np.empty_like(mean)
    pos = sd > 0
    # sf(u) = ndtr(-u); exact in the far tails
    out[pos] = ndtr((mean[pos] - gamma) / sd[pos])
    out[~pos] = (mean[~pos] >= gamma).astype(float)
    return out


def _gaussian_interval(mean, sd, y0, gamma):
    if gamma < 0:
        raise ValueError("interval half-width gamma must be >= 0")
    mean = np.asarray(mean, dtype=float)
    sd = np.broadcast_to(np.asarray(sd, dtype=float), mean.shape)
    if math.isinf(gamma):
        return np.ones_like(mean)
    out = np.empty_like(mean)
    pos = sd > 0
    lo, hi = (y0 - gamma - mean[pos]) / sd[pos], (y0 + gamma - mean[pos]) / sd[pos]
    # difference of upper tails is more accurate when both bounds sit above the mean
    upper = lo > 0
    out_pos = np.where(upper, ndtr(-lo) - ndtr(-hi), ndtr(hi) - ndtr(lo))
    out[pos] = np.clip(out_pos, 0.0, 1.0)
    out[~pos] = (np.abs(mean[~pos] - y0) <= gamma).astype(float)
    return out


class GaussianPredictor:
    """Shared survival/interval logic for single Gaussian predictive oracles."""

    def predictive_mean(self, x) -> np.ndarray:
        raise NotImplementedError

    def predictive_variance(self, x) -> np.ndarray:
        raise NotImplementedError

    def survival(self, x, gamma: float) -> np.ndarray:
        return _gaussian_survival(self.predictive_mean(x), np.sqrt(self.predictive_variance(x)), gamma)

    def log_survival(self, x, gamma: float) -> np.ndarray:
        mean, sd = self.predictive_mean(x), np.sqrt(self.predictive_variance(x))
        sd = np.broadcast_to(sd, mean.shape)
        with np.errstate(divide="ignore"):
            return np.where(sd > 0, log_ndtr((mean - gamma) / np.where(sd > 0, sd, 1.0)),
                            np.log((mean >= gamma).astype(float)))

    def cdf(self, x, y: float) -> np.ndarray:
        return 1.0 - self.survival(x, y)

    def interval(self, x, y0: float, gamma: float) -> np.ndarray:
        return _gaussian_interval(self.predictive_mean(x), np.sqrt(self.predictive_variance(x)), y0, gamma)


def survival_probability(oracle, x, gamma: float) -> np.ndarray:
    """``P(y >= gamma | x) = 1 - CDF(x, gamma)``."""
    return oracle.survival(x, gamma)


def interval_probability(oracle, x, y0: float, gamma: float) -> np.ndarray:
    """``P(|y - y0| <= gamma | x)``."""
    if gamma < 0:
        raise ValueError("interval half-width gamma must be >= 0")
    return oracle.interval(x, y0, gamma)


# ---------------------------------------------------------------------------
# Ground truths
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GroundTruth1D:
    """Sum of two unnormalized Gaussian bumps."""

    centers: tuple[float, float] = (0.0, 3.0)
    widths: tuple[float, float] = (0.6, 0.6)
    heights: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if min(self.widths) <= 0 or min(self.heights) <= 0:
            raise ValueError("bump widths and heights must be positive")

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            x = x[:, 0]
        out = np.zeros_like(x)
        for c, s, h in zip(self.centers, self.widths, self.heights):
            out += h * np.exp(-((x - c) ** 2) / (2 * s * s))
        return out

    def to_dict(self) -> dict:
        return {"kind": "two_bump", "centers": list(self.centers), "widths": list(self.widths),
                "heights": list(self.heights)}


@dataclass(frozen=True, eq=False)
class GroundTruthSequence:
    """Explicit second-order function of one-hot sequence features.

    ``f(x) = constant + sum_l site[l, x_l] + sum_{l<l'} pair[l, x_l, l', x_l']``.
    The landscape also carries a reference sequence around which the
    "realistic" design pool is generated by point mutation.
    """

    constant: float
    site: np.ndarray            # (L, A)
    pair: np.ndarray            # (L*A, L*A), nonzero only for blocks l < l'
    reference: np.ndarray       # (L,)
    mutation_rate: float
    seed: int | None = None
    params: dict | None = None  # generator arguments, when built by :meth:`random`

    @property
    def length(self) -> int:
        return self.site.shape[0]

    @property
    def alphabet_size(self) -> int:
        return self.site.shape[1]

    @classmethod
    def random(cls, seed: int, length: int = 20, alphabet_size: int = 20, *, constant: float = 1.0,
               site_sd: float = 0.25, epistasis: float = 0.1, pair_sd: float = 0.05,
               mutation_rate: float = 0.1, diminishing: float = 0.0) -> "GroundTruthSequence":
        """Additive mutational effects plus pairwise interactions between co-occurring mutations.

        Mutations away from the reference are individually beneficial or harmful
        (``site_sd``). Every pair of mutations costs ``epistasis`` on average,
        with ``pair_sd`` scatter. ``diminishing`` subtracts
        ``diminishing * (sum of the beneficial effects present)^2``, so stacking
        beneficial mutations pays off only up to a point. Both terms are
        second order in the one-hot features.
        """
        params = {"length": length, "alphabet_size": alphabet_size, "constant": constant, "site_sd": site_sd,
                  "epistasis": epistasis, "pair_sd": pair_sd, "mutation_rate": mutation_rate,
                  "diminishing": diminishing}
        rng = np.random.default_rng(seed)
        ref = rng.integers(0, alphabet_size, size=length)
        mutant = np.ones((length, alphabet_size), dtype=bool)
        mutant[np.arange(length), ref] = False
        site = np.where(mutant, rng.normal(0.0, site_sd, size=(length, alphabet_size)), 0.0)
        la = length * alphabet_size
        pair = -epistasis + rng.normal(0.0, pair_sd, size=(la, la))
        gain = np.maximum(site, 0.0).ravel()
        # (sum g)^2 = sum g^2 + 2 sum_{i<j} g_i g_j, split into site and pair parts
        pair = pair - 2.0 * diminishing * np.outer(gain, gain)
        site = site - diminishing * np.maximum(site, 0.0) ** 2
        mflat = mutant.ravel()
        pos = np.repeat(np.arange(length), alphabet_size)
        keep = (pos[:, None] < pos[None, :]) & mflat[:, None] & mflat[None, :]
        pair = np.where(keep, pair, 0.0)
        return cls(float(constant), site, pair, ref, mutation_rate, seed, params)

    def __call__(self, x) -> np.ndarray:
        x = as_sequences(x, self.alphabet_size, self.length)
        phi = one_hot(x, self.alphabet_size)
        return self.constant + phi @ self.site.ravel() + ((phi @ self.pair) * phi).sum(axis=1)

    def sample_pool(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Point mutants of the reference: each site mutates independently to a uniform other symbol."""
        length, a = self.length, self.alphabet_size
        mutate = rng.random((n, length)) < self.mutation_rate
        shift = rng.integers(1, a, size=(n, length))
        return np.where(mutate, (self.reference + shift) % a, self.reference).astype(np.int64)

    def n_mutations(self, x) -> np.ndarray:
        return np.sum(np.asarray(x) != self.reference, axis=1)

    def to_dict(self) -> dict:
        """Generator seed and arguments when available (``random(seed, **params)`` rebuilds it), else all terms."""
        doc = {"kind": "second_order_sequence", "seed": self.seed, "reference": self.reference.tolist()}
        if self.params is not None and self.seed is not None:
            return doc | {"params": dict(self.params)}
        return doc | {"length": self.length, "alphabet_size": self.alphabet_size, "constant": self.constant,
                      "site": self.site.tolist(), "pair_nonzero": _sparse(self.pair),
                      "mutation_rate": self.mutation_rate}


def _sparse(mat: np.ndarray) -> list:
    i, j = np.nonzero(mat)
    return [[int(a), int(b), float(mat[a, b])] for a, b in zip(i, j)]


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PolynomialOracle(GaussianPredictor):
    """1-D oracle: polynomial mean in the standardized input, constant noise variance."""

    coefficients: np.ndarray     # increasing powers of (x - center) / scale
    center: float
    scale: float
    noise_variance: float

    def predictive_mean(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            x = x[:, 0]
        return np.polynomial.polynomial.polyval((x - self.center) / self.scale, self.coefficients)

    def predictive_variance(self, x) -> np.ndarray:
        return np.full(np.shape(self.predictive_mean(x)), self.noise_variance)

    def to_dict(self) -> dict:
        return {"kind": "polynomial", "coefficients": list(map(float, self.coefficients)),
                "center": self.center, "scale": self.scale, "noise_variance": self.noise_variance}


@dataclass(frozen=True, eq=False)
class LinearOneHotOracle(GaussianPredictor):
    """Sequence oracle linear in one-hot features, constant noise variance."""

    weights: np.ndarray          # (L*A,)
    intercept: float
    noise_variance: float
    alphabet_size: int

    def predictive_mean(self, x) -> np.ndarray:
        x = as_sequences(x, self.alphabet_size)
        length = x.shape[1]
        w = self.weights.reshape(length, self.alphabet_size)
        return self.intercept + w[np.arange(length), x].sum(axis=1)

    def predictive_variance(self, x) -> np.ndarray:
        return np.full(as_sequences(x, self.alphabet_size).shape[0], self.noise_variance)

    def to_dict(self) -> dict:
        return {"kind": "linear_one_hot", "weights": self.weights.tolist(), "intercept": self.intercept,
                "noise_variance": self.noise_variance, "alphabet_size": self.alphabet_size}


@dataclass(frozen=True, eq=False)
class FunctionOracle(GaussianPredictor):
    """Wraps a known mean function with a fixed predictive standard deviation."""

    fn: object
    sd: float

    def predictive_mean(self, x) -> np.ndarray:
        return np.asarray(self.fn(x), dtype=float)

    def predictive_variance(self, x) -> np.ndarray:
        return np.full(np.shape(self.predictive_mean(x)), self.sd ** 2)


@dataclass(frozen=True, eq=False)
class EnsembleOracle:
    """Uniform mixture of Gaussian members."""

    members: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise ValueError("ensemble needs at least one member")

    def _moments(self, x):
        mus = np.stack([m.predictive_mean(x) for m in self.members])
        vs = np.stack([np.broadcast_to(m.predictive_variance(x), mus.shape[1:]) for m in self.members])
        return mus, vs

    def predictive_mean(self, x) -> np.ndarray:
        return self._moments(x)[0].mean(axis=0)

    def predictive_variance(self, x) -> np.ndarray:
        mus, vs = self._moments(x)
        mbar = mus.mean(axis=0)
        # avg sigma_i^2 + avg (mu_i - mbar)^2: same value as avg(sigma^2 + mu^2) - mbar^2, never negative
        return vs.mean(axis=0) + ((mus - mbar) ** 2).mean(axis=0)

    def survival(self, x, gamma: float) -> np.ndarray:
        mus, vs = self._moments(x)
        return np.mean([_gaussian_survival(m, np.sqrt(v), gamma) for m, v in zip(mus, vs)], axis=0)

    def log_survival(self, x, gamma: float) -> np.ndarray:
        mus, vs = self._moments(x)
        logs = []
        for m, v in zip(mus, vs):
            sd = np.sqrt(v)
            with np.errstate(divide="ignore"):
                logs.append(np.where(sd > 0, log_ndtr((m - gamma) / np.where(sd > 0, sd, 1.0)),
                                     np.log((m >= gamma).astype(float))))
        return logsumexp(np.stack(logs), axis=0) - math.log(len(self.members))

    def cdf(self, x, y: float) -> np.ndarray:
        return 1.0 - self.survival(x, y)

    def interval(self, x, y0: float, gamma: float) -> np.ndarray:
        mus, vs = self._moments(x)
        return np.mean([_gaussian_interval(m, np.sqrt(v), y0, gamma) for m, v in zip(mus, vs)], axis=0)

    def to_dict(self) -> dict:
        return {"kind": "ensemble", "members": [m.to_dict() for m in self.members]}


def oracle_from_dict(doc: dict):
    kind = doc["kind"]
    if kind == "polynomial":
        return PolynomialOracle(np.asarray(doc["coefficients"]), doc["center"], doc["scale"],
                                doc["noise_variance"])
    if kind == "linear_one_hot":
        return LinearOneHotOracle(np.asarray(doc["weights"]), doc["intercept"], doc["noise_variance"],
                                  doc["alphabet_size"])
    if kind == "ensemble":
        return EnsembleOracle(tuple(oracle_from_dict(m) for m in doc["members"]))
    raise ValueError(f"unknown oracle kind {kind!r}")


def dumps_oracle(oracle) -> str:
    return json.dumps(oracle.to_dict())


def loads_oracle(text: str):
    return oracle_from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def train_oracle_1d(x, y, degree: int = 3, holdout_fraction: float = 0.2, *, ground_truth=None,
                    rng: np.random.Generator | None = None) -> PolynomialOracle:
    """Least-squares polynomial mean; noise variance is the hold-out MSE against the ground truth.

    Without ``ground_truth`` the held-out noisy labels are used instead.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError("x and y must have equal length")
    n = x.size
    n_hold = int(round(holdout_fraction * n))
    rng = rng if rng is not None else np.random.default_rng(0)
    hold = rng.permutation(n)[:n_hold]
    train = np.setdiff1d(np.arange(n), hold)
    if train.size < degree + 2:
        raise IllPosedFitError("ill-posed fit: too few training points for the polynomial degree")
    center = float(np.mean(x[train]))
    scale = float(np.std(x[train])) or 1.0
    vander = np.polynomial.polynomial.polyvander((x[train] - center) / scale, degree)
    coef, _, rank, _ = np.linalg.lstsq(vander, y[train], rcond=None)
    if rank < degree + 1:
        raise IllPosedFitError("ill-posed fit: rank-deficient design matrix")
    oracle = PolynomialOracle(coef, center, scale, NOISE_FLOOR)
    if hold.size:
        target = ground_truth(x[hold]) if ground_truth is not None else y[hold]
        mse = float(np.mean((oracle.predictive_mean(x[hold]) - target) ** 2))
    else:
        mse = float(np.mean((oracle.predictive_mean(x[train]) - y[train]) ** 2))
    return PolynomialOracle(coef, center, scale, max(mse, NOISE_FLOOR))


def _fit_linear_one_hot(phi: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
    # one-hot blocks sum to one per position, so the design is always rank deficient: ridge
    ym = y.mean()
    pm = phi.mean(axis=0)
    pc = phi - pm
    gram = pc.T @ pc + RIDGE * np.eye(phi.shape[1])
    try:
        w = np.linalg.solve(gram, pc.T @ (y - ym))
    except np.linalg.LinAlgError as exc:
        raise IllPosedFitError("ill-posed fit") from exc
    return w, float(ym - pm @ w)


def train_sequence_oracle(x, y, alphabet_size: int, ensemble_size: int = 1,
                          rng: np.random.Generator | None = None) -> EnsembleOracle:
    """Bootstrap ensemble of linear one-hot regressions.

    Each member's noise variance is its out-of-bag MSE (in-bag if no point is out of bag).
    """
    x = as_sequences(x, alphabet_size)
    y = np.asarray(y, dtype=float).ravel()
    if x.shape[0] == 0:
        raise ValueError("no training data")
    if ensemble_size < 1:
        raise ValueError("ensemble_size must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    phi = one_hot(x, alphabet_size)
    n = x.shape[0]
    members = []
    for _ in range(ensemble_size):
        idx = rng.integers(0, n, size=n)
        oob = np.setdiff1d(np.arange(n), idx)
        w, b = _fit_linear_one_hot(phi[idx], y[idx])
        check = oob if oob.size else idx
        resid = phi[check] @ w + b - y[check]
        members.append(LinearOneHotOracle(w, b, max(float(np.mean(resid ** 2)), NOISE_FLOOR), alphabet_size))
    return EnsembleOracle(tuple(members))


@dataclass(frozen=True, eq=False)
class TrainingSet:
    x: np.ndarray
    y: np.ndarray          # noisy labels
    truth: np.ndarray      # noiseless ground truth
    cutoff: float          # ground-truth value at the truncation percentile of the pool

    def to_dict(self) -> dict:
        return {"x": self.x.tolist(), "y": self.y.tolist(), "truth": self.truth.tolist(),
                "cutoff": self.cutoff}


def truncated_training_set(landscape: GroundTruthSequence, pool_size: int, percentile: float = 0.2,
                           sample_count: int = 1000, noise_sd: float = 0.0,
                           rng: np.random.Generator | None = None) -> TrainingSet:
    """Keep pool sequences at or below the ground-truth ``percentile``, subsample, add label noise."""
    rng = rng if rng is not None else np.random.default_rng(0)
    if pool_size * percentile < sample_count:
        raise ValueError("insufficient pool: pool_size * percentile < sample_count")
    pool = landscape.sample_pool(rng, pool_size)
    truth = landscape(pool)
    cutoff = nearest_rank_percentile(truth, percentile)
    keep = np.flatnonzero(truth <= cutoff)
    if keep.size < sample_count:
        raise ValueError("insufficient pool: too few sequences below the cutoff")
    chosen = np.sort(rng.choice(keep, size=sample_count, replace=False))
    x, t = pool[chosen], truth[chosen]
    y = t + noise_sd * rng.standard_normal(sample_count)
    return TrainingSet(x, y, t, float(cutoff))

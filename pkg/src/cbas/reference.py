"""Brute-force checks: grid quadrature of the target conditional, KL divergences, numeric weighted MLE.

Nothing here calls into the closed-form fits in :mod:`cbas.models`; these
routines exist so the fast paths can be tested against something independent.
"""
from __future__ import annotations

import csv
import math
import warnings

import numpy as np
from scipy.optimize import minimize, minimize_scalar

MIN_GRID_POINTS = 2000


def trapezoid(values, grid) -> float:
    return float(np.trapezoid(values, grid))


def _as_grid(grid) -> np.ndarray:
    g = np.asarray(grid, dtype=float).ravel()
    if g.size < 2 or np.any(np.diff(g) <= 0):
        raise ValueError("grid must be strictly increasing")
    return g


def _evaluate(fn_or_values, grid: np.ndarray) -> np.ndarray:
    if callable(fn_or_values):
        return np.asarray(fn_or_values(grid), dtype=float).ravel()
    out = np.asarray(fn_or_values, dtype=float).ravel()
    if out.shape != grid.shape:
        raise ValueError("values must align with the grid")
    return out


def quadrature_conditional(prior_density, event_probability, grid, min_points: int = MIN_GRID_POINTS) -> np.ndarray:
    """``P(S|x) p0(x) / Z`` on a uniform grid, ``Z`` by the trapezoidal rule."""
    g = _as_grid(grid)
    if g.size < min_points:
        raise ValueError(f"grid needs at least {min_points} points")
    unnorm = _evaluate(prior_density, g) * _evaluate(event_probability, g)
    if np.any(unnorm < 0):
        raise ValueError("negative density or probability on grid")
    z = trapezoid(unnorm, g)
    if not z >= 1e-300:
        raise ValueError("event numerically impossible on grid")
    return unnorm / z


def grid_mode(density, grid) -> float:
    """Grid argmax; ``np.argmax`` returns the first maximum, i.e. the smallest x on ties."""
    return float(np.asarray(grid)[int(np.argmax(density))])


def kl_gaussian_closed_form(mean_p, var_p, mean_q, var_q) -> float:
    """KL(p || q) between diagonal Gaussians, summed over dimensions."""
    mp, vp = np.atleast_1d(np.asarray(mean_p, float)), np.atleast_1d(np.asarray(var_p, float))
    mq, vq = np.atleast_1d(np.asarray(mean_q, float)), np.atleast_1d(np.asarray(var_q, float))
    if np.any(vp <= 0) or np.any(vq <= 0):
        raise ValueError("variances must be positive")
    return float(np.sum(0.5 * np.log(vq / vp) + (vp + (mp - mq) ** 2) / (2 * vq) - 0.5))


def kl_grid(p_grid, q_density, grid) -> float:
    """Trapezoidal ``int p log(p / q)``; ``math.inf`` if ``q`` vanishes where ``p`` does not."""
    g = _as_grid(grid)
    p = _evaluate(p_grid, g)
    q = _evaluate(q_density, g)
    support = p > 0
    if np.any(support & (q <= 0)):
        return math.inf
    integrand = np.zeros_like(p)
    integrand[support] = p[support] * (np.log(p[support]) - np.log(q[support]))
    return trapezoid(integrand, g)


def kl_grid_log(log_p, log_q, grid) -> float:
    """Same as :func:`kl_grid` from log densities, which avoids underflow in far tails."""
    g = _as_grid(grid)
    lp, lq = _evaluate(log_p, g), _evaluate(log_q, g)
    p = np.exp(lp)
    support = p > 0
    if np.any(support & ~np.isfinite(lq)):
        return math.inf
    integrand = np.zeros_like(p)
    integrand[support] = p[support] * (lp[support] - lq[support])
    return trapezoid(integrand, g)


def write_grid_csv(path, grid, columns: dict) -> None:
    """Two-or-more-column CSV: ``x`` followed by one column per named density."""
    g = _as_grid(grid)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", *columns])
        cols = [np.asarray(v, dtype=float) for v in columns.values()]
        for i, x in enumerate(g):
            writer.writerow([repr(float(x)), *(repr(float(c[i])) for c in cols)])


# ---------------------------------------------------------------------------
# Numeric weighted maximum likelihood
# ---------------------------------------------------------------------------

def gaussian_weighted_objective(samples, weights, mean, variance) -> float:
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    w = np.asarray(weights, dtype=float)
    mean, variance = np.atleast_1d(mean), np.atleast_1d(variance)
    ll = -0.5 * ((x - mean) ** 2 / variance + np.log(2 * math.pi * variance))
    return float(w @ ll.sum(axis=1))


def _numeric_gaussian(x: np.ndarray, w: np.ndarray, variance_floor: float, xtol: float):
    """Coordinate ascent with bounded Brent searches; each dimension is independent."""
    means, variances = [], []
    for col in x.T:
        lo, hi = float(col.min()), float(col.max())
        mu = 0.5 * (lo + hi)
        span = max((hi - lo) ** 2, 4 * variance_floor)
        var = 0.5 * span
        best = -math.inf
        for _ in range(50):
            if hi > lo:
                res = minimize_scalar(lambda m: -(w @ (-(col - m) ** 2 / (2 * var))),
                                      bounds=(lo, hi), method="bounded", options={"xatol": xtol})
                mu = float(res.x)
            sq = w @ (col - mu) ** 2
            res = minimize_scalar(lambda v: -(-sq / (2 * v) - 0.5 * w.sum() * math.log(v)),
                                  bounds=(variance_floor, span), method="bounded", options={"xatol": xtol})
            var = float(res.x)
            obj = -sq / (2 * var) - 0.5 * w.sum() * math.log(var)
            if abs(obj - best) <= 1e-14 * max(1.0, abs(obj)):
                break
            best = obj
        means.append(mu)
        variances.append(var)
    return np.array(means), np.array(variances)


def _numeric_categorical(x: np.ndarray, w: np.ndarray, alphabet_size: int, smoothing: float):
    """SLSQP over each simplex row, maximizing ``sum_a (smoothing + n_a) log p_a``."""
    rows = []
    for col in x.T:
        counts = np.array([w[col == a].sum() for a in range(alphabet_size)]) + smoothing
        counts = counts / counts.sum()

        def neg(p):
            return -float(np.sum(counts * np.log(np.maximum(p, 1e-300))))

        def grad(p):
            return -counts / np.maximum(p, 1e-300)

        with warnings.catch_warnings():
            # SLSQP may step slightly outside the bounds before clipping; harmless here
            warnings.filterwarnings("ignore", message="Values in x were outside bounds")
            res = minimize(neg, np.full(alphabet_size, 1.0 / alphabet_size), jac=grad, method="SLSQP",
                           bounds=[(1e-15, 1.0)] * alphabet_size,
                           constraints=[{"type": "eq", "fun": lambda p: p.sum() - 1.0,
                                         "jac": lambda p: np.ones_like(p)}],
                           options={"ftol": 1e-16, "maxiter": 1000})
        p = np.clip(res.x, 0.0, None)
        p[p <= 1e-12] = 0.0
        rows.append(p / p.sum())
    return np.array(rows)


def numeric_weighted_mle(samples, weights, family: str, *, alphabet_size: int | None = None,
                         smoothing: float = 0.0, variance_floor: float = 1e-6, xtol: float = 1e-12):
    """Numerically maximize ``sum_i w_i log q(x_i)`` for small instances.

    ``family="gaussian"`` returns ``(mean, variance)``; ``family="categorical"``
    returns the (L, A) probability matrix.
    """
    w = np.asarray(weights, dtype=float)
    if family == "gaussian":
        x = np.asarray(samples, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return _numeric_gaussian(x, w / w.sum(), variance_floor, xtol)
    if family == "categorical":
        if alphabet_size is None:
            raise ValueError("categorical family needs alphabet_size")
        x = np.atleast_2d(np.asarray(samples))
        return _numeric_categorical(x, w, alphabet_size, smoothing)
    raise ValueError(f"unknown family {family!r}")

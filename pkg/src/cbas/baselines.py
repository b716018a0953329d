"""Comparison methods sharing the CbAS loop: DbAS, RWR, CEM-PI and feedback (FB) pool retraining."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from .core import event_probability, nearest_rank_percentile
from .engine import (
    CbASConfig,
    IterationRecord,
    RunResult,
    SearchContext,
    effective_sample_size,
    run_weighted_search,
)
from .oracle import survival_probability

RWR_ALPHA = 50.0
CEM_QUANTILE = 0.8
FB_PERCENTILE = 0.8


def dbas_weight(x, event, oracles) -> np.ndarray:
    """``P(S^(t)|x)`` alone, no density ratio."""
    return np.asarray(event_probability(event, oracles, x), dtype=float)


def rwr_weights(oracle_means, alpha: float = RWR_ALPHA) -> np.ndarray:
    """Softmax of ``alpha * mean``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    means = np.asarray(oracle_means, dtype=float)
    if not np.all(np.isfinite(means)):
        raise ValueError("oracle means must be finite")
    # scipy's softmax subtracts the max before exponentiating
    return softmax(alpha * means)


def cem_pi_weights(samples, oracle, y_best: float, cem_quantile: float = CEM_QUANTILE) -> np.ndarray:
    """Elite indicator on probability of improvement over ``y_best``; ties at the cutoff are kept."""
    pi = np.asarray(survival_probability(oracle, samples, y_best), dtype=float)
    beta = nearest_rank_percentile(pi, cem_quantile)
    return (pi >= beta).astype(float)


# ---------------------------------------------------------------------------
# Weight rules for the shared loop
# ---------------------------------------------------------------------------

def dbas_rule(ctx: SearchContext) -> np.ndarray:
    return dbas_weight(ctx.samples, ctx.state.current, ctx.oracles)


def make_rwr_rule(alpha: float = RWR_ALPHA):
    def rule(ctx: SearchContext) -> np.ndarray:
        return rwr_weights(ctx.oracle_means[0], alpha)
    return rule


def make_cem_pi_rule(cem_quantile: float = CEM_QUANTILE):
    """``y_best`` is the best oracle mean seen in earlier iterations (``-inf`` at the start)."""
    def rule(ctx: SearchContext) -> np.ndarray:
        y_best = ctx.memory.get("y_best", -math.inf)
        w = cem_pi_weights(ctx.samples, ctx.oracles[0], y_best, cem_quantile)
        ctx.memory["y_best"] = max(y_best, float(np.max(ctx.oracle_means[0])))
        return w
    return rule


def run_dbas(initial_model, oracles, event, config: CbASConfig, rng, **kwargs) -> RunResult:
    return run_weighted_search(None, initial_model, oracles, event, config, rng, dbas_rule, **kwargs)


def run_rwr(initial_model, oracles, event, config: CbASConfig, rng, alpha: float = RWR_ALPHA,
            **kwargs) -> RunResult:
    return run_weighted_search(None, initial_model, oracles, event, config, rng, make_rwr_rule(alpha), **kwargs)


def run_cem_pi(initial_model, oracles, event, config: CbASConfig, rng, cem_quantile: float = CEM_QUANTILE,
               **kwargs) -> RunResult:
    return run_weighted_search(None, initial_model, oracles, event, config, rng,
                               make_cem_pi_rule(cem_quantile), **kwargs)


# ---------------------------------------------------------------------------
# Feedback (FB)
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FeedbackPool:
    """FIFO pool of designs; row 0 is the oldest."""

    samples: np.ndarray

    def __len__(self) -> int:
        return self.samples.shape[0]


def fb_threshold(initial_pool, oracle, percentile: float = FB_PERCENTILE) -> float:
    """Fixed acceptance threshold: nearest-rank percentile of oracle means on the initial pool."""
    return nearest_rank_percentile(oracle.predictive_mean(initial_pool), percentile)


def fb_feedback_step(pool: FeedbackPool, new_samples, oracle, threshold: float, model, fit):
    """Replace the ``n`` oldest pool entries with the ``n`` new samples scoring above ``threshold``.

    ``fit(samples, weights)`` retrains the generator on the updated pool with
    uniform weights. Returns ``(pool, model, accepted_mask)``; with nothing
    accepted, pool and model come back unchanged.
    """
    new_samples = np.asarray(new_samples)
    accepted = np.asarray(oracle.predictive_mean(new_samples)) > threshold
    n = int(accepted.sum())
    if n == 0:
        return pool, model, accepted
    n = min(n, len(pool))
    kept_new = new_samples[accepted][-n:]
    updated = FeedbackPool(np.concatenate([pool.samples[n:], kept_new], axis=0))
    new_model = fit(updated.samples, np.ones(len(updated)))
    return updated, new_model, accepted


def run_fb(initial_model, initial_pool, oracle, config: CbASConfig, rng, fit, *,
           percentile: float = FB_PERCENTILE, on_iteration=None) -> RunResult:
    """Feedback loop: sample, score, FIFO-update the pool, retrain on the pool.

    The recorded ``gamma`` is the fixed acceptance threshold and the recorded
    weights are the 0/1 acceptance indicators.
    """
    threshold = fb_threshold(initial_pool, oracle, percentile)
    pool = FeedbackPool(np.asarray(initial_pool))
    model = initial_model
    records = []
    for t in range(1, config.n_iterations + 1):
        x = model.sample(rng, config.M)
        means = np.asarray(oracle.predictive_mean(x), dtype=float)
        pool, new_model, accepted = fb_feedback_step(pool, x, oracle, threshold, model, fit)
        w = accepted.astype(float)
        rec = IterationRecord(t, x, means[None, :], (threshold,), w, effective_sample_size(w), model,
                              fitted=new_model)
        records.append(rec)
        if on_iteration:
            on_iteration(rec)
        model = new_model
    return RunResult(records, "completed", model)

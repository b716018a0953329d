"""Conditioning by adaptive sampling: relaxation schedule, importance weights and the search loop."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import (
    DensityUnderflowError,
    LatentSpaceMismatchError,
    Maximize,
    RelaxationState,
    Specify,
    as_oracle_list,
    event_probability,
    leaves,
    log_event_probability,
    nearest_rank_percentile,
    rebuild,
)

log = logging.getLogger(__name__)

# exp() overflows just above 709
_MAX_LOG_WEIGHT = 700.0


@dataclass(frozen=True)
class CbASConfig:
    Q: float = 1.0
    M: int = 100
    max_iterations: int = 50
    sequence_budget: int | None = None
    weight_floor_ess: float = 1.0
    use_joint_weights: bool = False

    def __post_init__(self):
        if not 0 < self.Q <= 1:
            raise ValueError("Q must lie in (0, 1]")
        if self.M < 2:
            raise ValueError("M must be >= 2")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.sequence_budget is not None and self.sequence_budget < 1:
            raise ValueError("sequence_budget must be positive")
        if self.weight_floor_ess < 1:
            raise ValueError("weight_floor_ess must be >= 1")

    @property
    def n_iterations(self) -> int:
        """Iteration cap; a sequence budget, when set, replaces ``max_iterations``."""
        if self.sequence_budget is not None:
            return math.ceil(self.sequence_budget / self.M)
        return self.max_iterations


@dataclass(eq=False)
class IterationRecord:
    t: int
    samples: np.ndarray
    oracle_means: np.ndarray            # (K, M): one row per event leaf
    gamma: tuple
    weights: np.ndarray
    ess: float
    model: object                       # search model that generated ``samples``
    fitted: object | None = None        # model refit on this iteration's weights
    latents: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    @property
    def scores(self) -> np.ndarray:
        return self.oracle_means[0]


@dataclass(eq=False)
class RunResult:
    records: list
    status: str                         # "completed" | "collapsed"
    final_model: object

    def gammas(self) -> list:
        return [r.gamma for r in self.records]


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if not total > 0:
        return 0.0
    # rescale to avoid overflow in the squares
    w = w / w.max()
    return float(w.sum() ** 2 / np.sum(w * w))


# ---------------------------------------------------------------------------
# Relaxation schedule
# ---------------------------------------------------------------------------

def update_relaxation(state: RelaxationState, oracle_means) -> RelaxationState:
    """Tighten every leaf from this batch's predicted values.

    ``oracle_means`` holds one row of predictive means per event leaf (a flat
    vector is accepted for single-leaf events). Maximize thresholds never
    decrease; Specify half-widths, set from ``|mean - y0|``, never increase.
    Neither moves past the matching leaf of ``state.target``.
    """
    event_leaves = leaves(state.current)
    caps = leaves(state.target) if state.target is not None else [None] * len(event_leaves)
    means = np.asarray(oracle_means, dtype=float)
    if means.ndim == 1:
        means = means[None, :]
    if means.shape[0] != len(event_leaves):
        raise ValueError("need one row of oracle means per event leaf")
    new = []
    for leaf, cap, row in zip(event_leaves, caps, means):
        if isinstance(leaf, Maximize):
            gamma = max(leaf.gamma, nearest_rank_percentile(row, state.Q))
            if cap is not None:
                gamma = max(leaf.gamma, min(gamma, cap.gamma))
            new.append(Maximize(gamma))
        elif isinstance(leaf, Specify):
            gamma = min(leaf.gamma, nearest_rank_percentile(np.abs(row - leaf.y0), state.Q))
            if cap is not None:
                gamma = min(leaf.gamma, max(gamma, cap.gamma))
            new.append(Specify(leaf.y0, gamma))
        else:
            raise TypeError(f"unsupported leaf {leaf!r}")
    return state.advance(rebuild(state.current, new))


# ---------------------------------------------------------------------------
# Importance weights
# ---------------------------------------------------------------------------

def _finite_or_raise(values: np.ndarray, who: str) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise DensityUnderflowError(f"density underflow: non-finite log density under the {who}")
    return values


def log_density_ratio(prior, search_model, x) -> np.ndarray:
    """``log p0(x) - log q(x)``; exactly zero when the search model is the prior."""
    log_p0 = _finite_or_raise(np.asarray(prior.log_density(x), dtype=float), "prior")
    if search_model is prior:
        return np.zeros_like(log_p0)
    log_q = _finite_or_raise(np.asarray(search_model.log_density(x), dtype=float), "search model")
    return log_p0 - log_q


def check_latent_compatible(prior_latent, search_latent) -> None:
    if prior_latent.latent_dim != search_latent.latent_dim:
        raise LatentSpaceMismatchError(
            f"latent space mismatch: {prior_latent.latent_dim} vs {search_latent.latent_dim} dimensions")


def shares_latent_prior(a, b) -> bool:
    """Both models use a fixed standard-normal ``p(z)`` of equal dimension."""
    return a.latent_dim == b.latent_dim and type(a).log_latent_prior is type(b).log_latent_prior


def joint_log_density_ratio(prior_latent, search_latent, x, z, simplify: bool | None = None) -> np.ndarray:
    """``log p(x, z) - log q(x, z)`` for joint draws from the search model.

    With a shared latent prior this reduces to ``log p(x|z) - log q(x|z)``;
    ``simplify=False`` forces the full joint form.
    """
    check_latent_compatible(prior_latent, search_latent)
    if search_latent is prior_latent:
        return np.zeros(np.shape(z)[0])
    if simplify is None:
        simplify = shares_latent_prior(prior_latent, search_latent)
    if simplify:
        num, den = prior_latent.log_conditional(x, z), search_latent.log_conditional(x, z)
    else:
        num, den = prior_latent.log_joint_density(x, z), search_latent.log_joint_density(x, z)
    num = _finite_or_raise(np.asarray(num, dtype=float), "prior")
    den = _finite_or_raise(np.asarray(den, dtype=float), "search model")
    return num - den


def _weights_from_ratio(log_ratio: np.ndarray, event, oracles, x, rescale: bool = False) -> np.ndarray:
    p = np.asarray(event_probability(event, oracles, x), dtype=float)
    log_p = log_event_probability(event, oracles, x)
    logw = log_ratio + log_p
    if rescale:
        top = np.max(logw)
        if np.isfinite(top) and top > _MAX_LOG_WEIGHT:
            # weighted ML is invariant to a common scale; shift only when exp() would overflow
            log_ratio = log_ratio - top
            logw = logw - top
    with np.errstate(over="ignore"):
        # ratio * P keeps weights bit-identical to P when the ratio is one;
        # fall back to log space where P itself underflows
        direct = (p > 1e-300) & (log_ratio < _MAX_LOG_WEIGHT)
        return np.where(direct, np.exp(log_ratio) * p, np.exp(logw))


def cbas_weight(prior, search_model, x, event, oracles) -> np.ndarray:
    """Importance weights ``p0(x) / q(x) * P(S^(t)|x)`` for a batch, computed in log space."""
    return _weights_from_ratio(log_density_ratio(prior, search_model, x), event, oracles, x)


def cbas_weight_joint(prior_latent, search_latent, x, z, event, oracles, simplify: bool | None = None):
    """Joint-latent importance weights ``p(x, z) / q(x, z) * P(S^(t)|x)``."""
    ratio = joint_log_density_ratio(prior_latent, search_latent, x, z, simplify)
    return _weights_from_ratio(ratio, event, oracles, x)


# ---------------------------------------------------------------------------
# Search loop
# ---------------------------------------------------------------------------

@dataclass
class SearchContext:
    """What a weighting rule sees at iteration ``t``."""

    t: int
    samples: np.ndarray
    latents: np.ndarray | None
    oracle_means: np.ndarray
    state: RelaxationState
    prior: object
    model: object
    oracles: list
    memory: dict


WeightRule = Callable[[SearchContext], np.ndarray]


def cbas_rule(ctx: SearchContext) -> np.ndarray:
    if ctx.latents is not None:
        ratio = joint_log_density_ratio(ctx.prior, ctx.model, ctx.samples, ctx.latents)
    else:
        ratio = log_density_ratio(ctx.prior, ctx.model, ctx.samples)
    return _weights_from_ratio(ratio, ctx.state.current, ctx.oracles, ctx.samples, rescale=True)


def run_weighted_search(prior, initial_model, oracles, event, config: CbASConfig, rng: np.random.Generator,
                        rule: WeightRule, *, refit: Callable | None = None, target=None,
                        on_iteration: Callable[[IterationRecord], None] | None = None) -> RunResult:
    """Generic sample / score / relax / weight / refit loop shared by CbAS and the baselines.

    ``event`` is the starting relaxed event ``S^(0)``; ``target`` optionally
    caps the schedule at the final set ``S``. ``refit(model, samples, weights)``
    defaults to ``model.fit_weighted``.
    """
    ors = as_oracle_list(event, oracles)
    state = RelaxationState(event, config.Q, 0, target)
    model = initial_model
    joint = config.use_joint_weights
    memory: dict = {}
    records = []
    status = "completed"
    for t in range(1, config.n_iterations + 1):
        if joint:
            x, z = model.sample_joint(rng, config.M)
        else:
            x, z = model.sample(rng, config.M), None
        means = np.stack([np.asarray(o.predictive_mean(x), dtype=float) for o in ors])
        state = update_relaxation(state, means)
        ctx = SearchContext(t, x, z, means, state, prior, model, ors, memory)
        weights = np.asarray(rule(ctx), dtype=float)
        ess = effective_sample_size(weights)
        rec = IterationRecord(t, x, means, state.gammas(), weights, ess, model, latents=z)
        if ess == 0.0 or ess < config.weight_floor_ess * (1 - 1e-12):
            log.info("weights collapsed at iteration %d (ESS %.3g)", t, ess)
            records.append(rec)
            if on_iteration:
                on_iteration(rec)
            status = "collapsed"
            break
        model = refit(model, x, weights) if refit else model.fit_weighted(x, weights)
        rec.fitted = model
        records.append(rec)
        if on_iteration:
            on_iteration(rec)
    return RunResult(records, status, model)


def run_cbas(prior, initial_search_model, oracles, event, config: CbASConfig, rng: np.random.Generator,
             **kwargs) -> RunResult:
    """Run CbAS. Pass ``initial_search_model=prior`` for the usual start ``phi^(1) = theta^(0)``."""
    return run_weighted_search(prior, initial_search_model, oracles, event, config, rng, cbas_rule, **kwargs)

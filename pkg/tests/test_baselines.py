from __future__ import annotations

import math

import numpy as np
import pytest

from cbas.baselines import (
    FeedbackPool,
    cem_pi_weights,
    dbas_weight,
    fb_feedback_step,
    fb_threshold,
    make_cem_pi_rule,
    run_cem_pi,
    run_dbas,
    run_fb,
    run_rwr,
    rwr_weights,
)
from cbas.core import Maximize
from cbas.engine import CbASConfig, cbas_weight
from cbas.models import DiagonalGaussianModel, gaussian_fit_weighted
from cbas.oracle import FunctionOracle


def _identity(sd=0.5):
    return FunctionOracle(lambda x: np.asarray(x, float)[:, 0] if np.ndim(x) == 2 else np.asarray(x, float), sd)


def test_dbas_equals_cbas_at_prior(rng):
    prior = DiagonalGaussianModel([0.0], [1.0])
    x = prior.sample(rng, 100)
    o = _identity()
    np.testing.assert_array_equal(dbas_weight(x, Maximize(0.3), o), cbas_weight(prior, prior, x, Maximize(0.3), o))


def test_rwr_weights_softmax():
    w = rwr_weights([0.0, 0.1, 0.2], alpha=50.0)
    e = np.exp(50.0 * np.array([0.0, 0.1, 0.2]))
    np.testing.assert_allclose(w, e / e.sum(), rtol=1e-12)
    assert np.isfinite(rwr_weights([1000.0, 999.0])).all()
    with pytest.raises(ValueError):
        rwr_weights([1.0], alpha=0.0)


def test_cem_pi_elite_cutoff_is_inclusive():
    o = _identity(1.0)
    x = np.arange(10.0)
    w = cem_pi_weights(x, o, y_best=5.0)
    # cutoff is the 8th smallest PI (nearest rank of 0.8 * 10), itself kept
    assert w.tolist() == [0.0] * 7 + [1.0] * 3


def test_cem_pi_keeps_ties():
    o = FunctionOracle(lambda x: np.zeros(len(x)), 1.0)
    w = cem_pi_weights(np.arange(5.0), o, y_best=0.0)
    assert w.tolist() == [1.0] * 5


def test_cem_pi_rule_carries_best_forward(rng):
    from cbas.engine import SearchContext
    from cbas.core import RelaxationState
    rule = make_cem_pi_rule()
    memory = {}
    o = _identity(1.0)
    x = np.array([[0.0], [2.0]])
    ctx = SearchContext(1, x, None, np.array([[0.0, 2.0]]), RelaxationState(Maximize()), None, None, [o], memory)
    rule(ctx)
    assert memory["y_best"] == 2.0
    ctx2 = SearchContext(2, x, None, np.array([[0.0, 1.0]]), RelaxationState(Maximize()), None, None, [o], memory)
    rule(ctx2)
    assert memory["y_best"] == 2.0


def test_fb_step_fifo():
    o = _identity(1.0)
    pool = FeedbackPool(np.array([[0.0], [1.0], [2.0]]))
    calls = []

    def fit(x, w):
        calls.append(x.copy())
        return gaussian_fit_weighted(x, w)

    new_pool, model, acc = fb_feedback_step(pool, np.array([[5.0], [-1.0], [6.0]]), o, 1.5, "old", fit)
    assert acc.tolist() == [True, False, True]
    assert new_pool.samples[:, 0].tolist() == [2.0, 5.0, 6.0]
    assert len(calls) == 1 and model.mean[0] == pytest.approx(13.0 / 3)
    same_pool, same_model, acc = fb_feedback_step(new_pool, np.array([[-5.0]]), o, 1.5, model, fit)
    assert same_pool is new_pool and same_model is model and not acc.any()


def test_fb_threshold_is_80th_percentile():
    assert fb_threshold(np.arange(1.0, 11.0)[:, None], _identity()) == 8.0


@pytest.mark.parametrize("runner", [run_dbas, run_rwr, run_cem_pi])
def test_baselines_run_and_improve(runner, rng):
    prior = DiagonalGaussianModel([0.0], [1.0])
    res = runner(prior, _identity(), Maximize(), CbASConfig(Q=0.9, M=50, max_iterations=15), rng)
    assert len(res.records) == 15
    assert res.records[-1].scores.mean() > res.records[0].scores.mean()


def test_run_fb(rng):
    prior = DiagonalGaussianModel([0.0], [1.0])
    pool = prior.sample(rng, 100)
    res = run_fb(prior, pool, _identity(), CbASConfig(M=50, max_iterations=10), rng, gaussian_fit_weighted)
    assert len(res.records) == 10
    assert all(r.gamma == res.records[0].gamma for r in res.records)
    assert res.final_model.mean[0] > 0.5
    assert not math.isnan(res.records[-1].ess)

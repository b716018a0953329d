from __future__ import annotations

import math

import numpy as np
import pytest

from cbas.core import (
    Conjunction,
    DensityUnderflowError,
    LatentSpaceMismatchError,
    Maximize,
    RelaxationState,
    Specify,
)
from cbas.engine import (
    CbASConfig,
    cbas_weight,
    cbas_weight_joint,
    effective_sample_size,
    joint_log_density_ratio,
    log_density_ratio,
    run_cbas,
    update_relaxation,
)
from cbas.models import DiagonalGaussianModel, LinearGaussianLatentModel
from cbas.oracle import FunctionOracle
from cbas.reference import grid_mode, quadrature_conditional


def _identity(sd=0.5):
    return FunctionOracle(lambda x: np.asarray(x, float)[:, 0] if np.ndim(x) == 2 else np.asarray(x, float), sd)


def test_ess():
    assert effective_sample_size(np.ones(10)) == pytest.approx(10.0)
    assert effective_sample_size([1.0, 0.0, 0.0]) == pytest.approx(1.0)
    assert effective_sample_size(np.zeros(3)) == 0.0
    assert effective_sample_size([1e300, 1e300]) == pytest.approx(2.0)


def test_config_validation():
    with pytest.raises(ValueError):
        CbASConfig(Q=0.0)
    with pytest.raises(ValueError):
        CbASConfig(M=1)
    assert CbASConfig(M=100, sequence_budget=1050).n_iterations == 11


def test_maximize_schedule_is_monotone():
    state = RelaxationState(Maximize(), 1.0)
    state = update_relaxation(state, np.array([1.0, 3.0, 2.0]))
    assert state.gammas() == (3.0,)
    state = update_relaxation(state, np.array([0.0, 1.0]))
    assert state.gammas() == (3.0,)
    assert state.t == 2


def test_specify_schedule_is_monotone():
    state = RelaxationState(Specify(1.0), 0.5)
    state = update_relaxation(state, np.array([1.0, 1.5, 3.0, -1.0]))
    assert state.gammas() == (0.5,)
    state = update_relaxation(state, np.array([5.0, 6.0]))
    assert state.gammas() == (0.5,)


def test_target_caps_the_schedule():
    state = RelaxationState(Maximize(), 1.0, target=Maximize(2.0))
    state = update_relaxation(state, np.array([0.0, 1.0]))
    assert state.gammas() == (1.0,)
    state = update_relaxation(state, np.array([5.0]))
    assert state.gammas() == (2.0,)
    spec = RelaxationState(Specify(0.0), 1.0, target=Specify(0.0, 0.3))
    spec = update_relaxation(spec, np.array([0.1, -0.2]))
    assert spec.gammas() == (0.3,)


def test_conjunction_schedule_needs_a_row_per_leaf():
    state = RelaxationState(Conjunction((Maximize(), Specify(0.0))), 1.0)
    new = update_relaxation(state, np.array([[1.0, 2.0], [0.5, -0.25]]))
    assert new.gammas() == (2.0, 0.5)
    with pytest.raises(ValueError):
        update_relaxation(state, np.array([1.0, 2.0]))


def test_weight_equals_event_probability_at_prior(rng):
    prior = DiagonalGaussianModel([0.0], [1.0])
    x = prior.sample(rng, 50)
    o = _identity()
    w = cbas_weight(prior, prior, x, Maximize(0.5), o)
    np.testing.assert_array_equal(w, o.survival(x, 0.5))


def test_weight_matches_direct_formula(rng):
    prior = DiagonalGaussianModel([0.0], [1.0])
    q = DiagonalGaussianModel([1.0], [0.5])
    x = q.sample(rng, 50)
    o = _identity()
    expected = np.exp(prior.log_density(x) - q.log_density(x)) * o.survival(x, 1.0)
    np.testing.assert_allclose(cbas_weight(prior, q, x, Maximize(1.0), o), expected, rtol=1e-12)


def test_density_underflow_is_reported():
    prior = DiagonalGaussianModel([0.0], [1.0])
    q = DiagonalGaussianModel([0.0], [1.0])
    with pytest.raises(DensityUnderflowError), np.errstate(over="ignore"):
        log_density_ratio(prior, q, np.array([[1e200]]))


def test_latent_mismatch(rng):
    a = LinearGaussianLatentModel(rng.normal(size=(3, 1)), np.zeros(3), 0.5)
    b = LinearGaussianLatentModel(rng.normal(size=(3, 2)), np.zeros(3), 0.5)
    x, z = a.sample_joint(rng, 4)
    with pytest.raises(LatentSpaceMismatchError):
        joint_log_density_ratio(a, b, x, z)


def test_joint_ratio_simplifies_with_shared_latent_prior(rng):
    a = LinearGaussianLatentModel(rng.normal(size=(3, 2)), np.zeros(3), 0.5)
    b = LinearGaussianLatentModel(rng.normal(size=(3, 2)), np.ones(3), 0.3)
    x, z = b.sample_joint(rng, 20)
    full = joint_log_density_ratio(a, b, x, z, simplify=False)
    short = joint_log_density_ratio(a, b, x, z, simplify=True)
    np.testing.assert_allclose(full, short, atol=1e-12)
    w = cbas_weight_joint(a, b, x, z, Maximize(0.0), FunctionOracle(lambda x: x[:, 0], 1.0))
    assert w.shape == (20,) and np.all(w >= 0)


def test_run_records_and_budget(rng):
    prior = DiagonalGaussianModel([0.0], [1.0])
    seen = []
    res = run_cbas(prior, prior, _identity(), Maximize(), CbASConfig(Q=0.9, M=20, sequence_budget=200), rng,
                   on_iteration=seen.append)
    assert res.status == "completed"
    assert len(res.records) == 10 == len(seen)
    assert sum(r.samples.shape[0] for r in res.records) == 200
    assert res.records[0].model is prior
    for prev, rec in zip(res.records, res.records[1:]):
        assert rec.model is prev.fitted
        assert rec.gamma[0] >= prev.gamma[0]


def test_collapse_stops_the_run(rng):
    prior = DiagonalGaussianModel([0.0], [1.0])
    zero = FunctionOracle(lambda x: np.zeros(len(x)), 0.0)
    # every mean is 0 but the event asks for y >= 1 from the start
    res = run_cbas(prior, prior, zero, Maximize(1.0), CbASConfig(M=10, max_iterations=5), rng)
    assert res.status == "collapsed"
    assert len(res.records) == 1 and res.records[0].fitted is None


def test_cbas_recovers_quadrature_conditional(rng):
    """A Gaussian prior and a linear oracle give a near-Gaussian target; CbAS should find its mode."""
    prior = DiagonalGaussianModel([0.0], [1.0])
    o = _identity(0.5)
    gamma = 1.5
    res = run_cbas(prior, prior, o, Maximize(), CbASConfig(Q=1.0, M=200, max_iterations=40), rng,
                   target=Maximize(gamma))
    grid = np.linspace(-8, 8, 4001)
    target = quadrature_conditional(lambda g: np.exp(prior.log_density(g[:, None])), o.survival(grid, gamma), grid)
    mean = np.trapezoid(grid * target, grid)
    assert abs(res.final_model.mean[0] - mean) < 0.25
    assert abs(grid_mode(target, grid) - res.final_model.mean[0]) < 0.5
    assert math.isfinite(res.final_model.variance[0])

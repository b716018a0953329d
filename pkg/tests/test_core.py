from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cbas.core import (
    Conjunction,
    Maximize,
    RelaxationState,
    Specify,
    as_continuous,
    as_sequences,
    event_membership,
    event_probability,
    is_subset,
    leaves,
    log_event_probability,
    nearest_rank_percentile,
    rebuild,
)
from cbas.oracle import FunctionOracle


def test_nearest_rank_small_cases():
    v = [5.0, 1.0, 3.0, 2.0, 4.0]
    assert nearest_rank_percentile(v, 1.0) == 5.0
    assert nearest_rank_percentile(v, 0.2) == 1.0
    assert nearest_rank_percentile(v, 0.5) == 3.0   # ceil(2.5) = 3rd smallest
    assert nearest_rank_percentile(v, 0.01) == 1.0


def test_nearest_rank_float_guard():
    # 0.8 * 10 is 8.000000000000002 in binary floating point; the 8th value is wanted
    v = np.arange(1.0, 11.0)
    assert nearest_rank_percentile(v, 0.8) == 8.0
    assert nearest_rank_percentile(v, 0.7) == 7.0


@pytest.mark.parametrize("q", [0.0, -0.1, 1.5])
def test_nearest_rank_rejects_bad_quantile(q):
    with pytest.raises(ValueError):
        nearest_rank_percentile([1.0, 2.0], q)


def test_nearest_rank_rejects_empty_and_nan():
    with pytest.raises(ValueError):
        nearest_rank_percentile([], 0.5)
    with pytest.raises(ValueError):
        nearest_rank_percentile([1.0, np.nan], 0.5)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60), st.floats(0.01, 1.0))
@settings(max_examples=200, deadline=None)
def test_nearest_rank_is_an_order_statistic(values, q):
    p = nearest_rank_percentile(values, q)
    v = np.sort(values)
    assert p in v
    # at least ceil(qM) values are <= p
    assert np.sum(v <= p) >= math.ceil(round(q * len(v), 9))


def test_events_membership():
    assert event_membership(Maximize(1.0), 1.0)
    assert not event_membership(Maximize(1.0), 0.99)
    assert event_membership(Specify(2.0, 0.5), 2.5)
    assert not event_membership(Specify(2.0, 0.5), 2.51)
    conj = Conjunction((Maximize(0.0), Specify(1.0, 0.1)))
    assert event_membership(conj, [0.5, 1.05])
    assert not event_membership(conj, [0.5, 1.2])


def test_specify_rejects_negative_width():
    with pytest.raises(ValueError):
        Specify(0.0, -1.0)


def test_conjunction_flatten_and_rebuild():
    conj = Conjunction((Maximize(0.0), Conjunction((Specify(1.0, 2.0), Maximize(3.0)))))
    ls = leaves(conj)
    assert [type(x) for x in ls] == [Maximize, Specify, Maximize]
    again = rebuild(conj, [Maximize(1.0), Specify(1.0, 1.0), Maximize(4.0)])
    assert leaves(again)[2].gamma == 4.0
    with pytest.raises(ValueError):
        rebuild(conj, ls + [Maximize(0.0)])


def test_is_subset():
    assert is_subset(Maximize(2.0), Maximize(1.0))
    assert not is_subset(Maximize(0.0), Maximize(1.0))
    assert is_subset(Specify(0.0, 1.0), Specify(0.0, 2.0))
    assert not is_subset(Specify(1.0, 1.0), Specify(0.0, 2.0))
    with pytest.raises(ValueError):
        is_subset(Maximize(1.0), Specify(0.0, 1.0))


def test_relaxation_state_validation():
    with pytest.raises(ValueError):
        RelaxationState(Maximize(), Q=0.0)
    with pytest.raises(ValueError):
        RelaxationState(Maximize(), t=-1)
    with pytest.raises(ValueError):
        RelaxationState(Maximize(), target=Conjunction((Maximize(), Maximize())))
    s = RelaxationState(Maximize(), 0.5).advance(Maximize(2.0))
    assert s.t == 1 and s.gammas() == (2.0,)


def test_design_point_validation():
    assert as_continuous([1.0, 2.0]).shape == (2, 1)
    with pytest.raises(ValueError):
        as_continuous([np.inf])
    with pytest.raises(ValueError):
        as_sequences(np.array([[0, 5]]), 5)
    with pytest.raises(ValueError):
        as_sequences(np.array([[0.0, 1.0]]), 5)
    with pytest.raises(ValueError):
        as_sequences(np.array([[0, 1]]), 5, length=3)


def test_conjunction_probability_multiplies():
    o1 = FunctionOracle(lambda x: np.asarray(x, float).ravel(), 1.0)
    o2 = FunctionOracle(lambda x: -np.asarray(x, float).ravel(), 0.5)
    x = np.linspace(-2, 2, 7)
    conj = Conjunction((Maximize(0.0), Specify(0.0, 1.0)))
    p = event_probability(conj, [o1, o2], x)
    expected = o1.survival(x, 0.0) * o2.interval(x, 0.0, 1.0)
    np.testing.assert_allclose(p, expected, rtol=1e-14)
    np.testing.assert_allclose(log_event_probability(conj, [o1, o2], x), np.log(expected), rtol=1e-12)
    with pytest.raises(ValueError):
        event_probability(conj, o1, x)

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import cvar_by_definition, var_by_definition
from slicenego.risk import (
    EstimatorDomainError,
    ParameterError,
    SampleSet,
    confidence_score,
    empirical_cvar,
    empirical_var,
    summarize,
    var_rank,
)

ONE_TO_100 = np.arange(1, 101, dtype=float)


def test_var_examples():
    assert empirical_var(ONE_TO_100, 0.95) == 95.0
    assert empirical_var([7.0] * 1000, 0.3) == 7.0
    assert empirical_var([1, 2, 3, 4], 0.5) == 2.0


def test_cvar_examples():
    assert empirical_cvar(ONE_TO_100, 0.95) == 98.0
    assert empirical_cvar([7.0] * 1000, 0.99999) == 7.0


def test_n_1e5_at_five_nines_is_the_maximum():
    s = np.arange(1, 100_001, dtype=float)
    assert var_rank(100_000, 0.99999) == 100_000
    assert empirical_var(s, 0.99999) == 100_000.0
    assert empirical_cvar(s, 0.99999) == 100_000.0


def test_confidence_examples():
    assert confidence_score(10.0, 0.0) == 1.0
    assert confidence_score(10.0, 12.0) == 0.0
    assert confidence_score(10.0, 0.6) == pytest.approx(0.94)
    assert confidence_score(0.0, 1.0) == 0.0
    assert confidence_score(-1.0, 0.0) == 0.0


def test_summarize_examples():
    s = summarize(ONE_TO_100, 0.95)
    assert (s.mean_ms, s.var_alpha_ms, s.cvar_alpha_ms) == (50.5, 95.0, 98.0)
    assert s.std_ms == pytest.approx(np.std(ONE_TO_100))
    c = summarize([7.0] * 10, 0.9)
    assert (c.mean_ms, c.std_ms, c.var_alpha_ms, c.cvar_alpha_ms) == (7.0, 0.0, 7.0, 7.0)


@pytest.mark.parametrize("bad", [[], [-1.0], [math.nan], [math.inf]])
def test_bad_samples_rejected(bad):
    with pytest.raises((EstimatorDomainError, ValueError)):
        empirical_var(bad, 0.5)


def test_empty_is_domain_error():
    with pytest.raises(EstimatorDomainError):
        empirical_cvar([], 0.5)


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1, 1.5, math.nan])
def test_alpha_outside_open_interval(alpha):
    with pytest.raises(ParameterError):
        empirical_var([1.0, 2.0], alpha)


def test_sample_set_is_read_only():
    ss = SampleSet([3.0, 1.0, 2.0])
    with pytest.raises(ValueError):
        ss.values[0] = 5.0
    assert list(ss.sorted) == [1.0, 2.0, 3.0]


def test_oracle_equivalence_small_arrays():
    rng = np.random.default_rng(7)
    alphas = [0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99, 0.99999]
    for _ in range(300):
        n = int(rng.integers(1, 13))
        values = [float(v) for v in rng.integers(0, 6, size=n)]
        for a in alphas:
            assert empirical_var(values, a) == var_by_definition(values, a)
            assert empirical_cvar(values, a) == cvar_by_definition(values, a)


# values on a 1/8 grid keep shifts and scalings exact in floating point
samples = st.lists(st.integers(0, 8000).map(lambda k: k / 8), min_size=1, max_size=60)
alphas = st.floats(0.001, 0.999)


@settings(max_examples=200, deadline=None)
@given(samples, alphas, alphas)
def test_monotone_in_alpha(xs, a1, a2):
    lo, hi = sorted((a1, a2))
    assert empirical_var(xs, lo) <= empirical_var(xs, hi)
    assert empirical_cvar(xs, lo) <= empirical_cvar(xs, hi) + 1e-9


@settings(max_examples=200, deadline=None)
@given(samples, alphas, st.integers(0, 100))
def test_translation_equivariance(xs, a, c):
    shifted = [x + c for x in xs]
    assert empirical_var(shifted, a) == pytest.approx(empirical_var(xs, a) + c)
    assert empirical_cvar(shifted, a) == pytest.approx(empirical_cvar(xs, a) + c, rel=1e-9, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(samples, alphas, st.sampled_from([0.5, 2.0, 4.0, 10.0]))
def test_scaling_equivariance(xs, a, k):
    scaled = [x * k for x in xs]
    assert empirical_var(scaled, a) == pytest.approx(k * empirical_var(xs, a))
    assert empirical_cvar(scaled, a) == pytest.approx(k * empirical_cvar(xs, a), rel=1e-9, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(samples, alphas)
def test_dominance_and_consistency(xs, a):
    s = summarize(xs, a)
    assert s.mean_ms <= s.cvar_alpha_ms + 1e-9
    assert 0 <= s.var_alpha_ms <= s.cvar_alpha_ms <= max(xs)
    assert s.cvar_alpha_ms == empirical_cvar(xs, a)
    assert s.var_alpha_ms == empirical_var(xs, a)
    assert 0.0 <= confidence_score(s.mean_ms, s.std_ms) <= 1.0


@given(st.floats(0.1, 100), st.floats(0, 50), st.floats(0, 50))
def test_confidence_decreasing_in_std(mean, s1, s2):
    lo, hi = sorted((s1, s2))
    assert confidence_score(mean, hi) <= confidence_score(mean, lo)

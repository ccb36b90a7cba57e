"""Empirical tail-risk estimators over Monte Carlo latency samples.

VaR uses the lower (inverse-CDF) empirical quantile with no interpolation.
CVaR averages the samples strictly above VaR and falls back to VaR itself
when that strict tail is empty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Union

import numpy as np


class EstimatorDomainError(ValueError):
    """Raised when an estimator is called on an empty sample set."""


class ParameterError(ValueError):
    """Raised for out-of-range estimator parameters."""


class SampleSet:
    """Immutable array of latency samples (ms) with a cached sorted view."""

    def __init__(self, values) -> None:
        arr = np.array(values, dtype=np.float64).ravel()
        if arr.size and not np.all(np.isfinite(arr)):
            raise ParameterError("samples must be finite")
        if arr.size and arr.min() < 0.0:
            raise ParameterError("latency samples must be non-negative")
        arr.setflags(write=False)
        self.values = arr

    def __len__(self) -> int:
        return int(self.values.size)

    @cached_property
    def sorted(self) -> np.ndarray:
        s = np.sort(self.values, kind="stable")
        s.setflags(write=False)
        return s


SampleLike = Union[SampleSet, np.ndarray, list, tuple]


@dataclass(frozen=True)
class TailStats:
    mean_ms: float
    std_ms: float
    var_alpha_ms: float
    cvar_alpha_ms: float
    alpha: float


def _as_sample_set(samples: SampleLike) -> SampleSet:
    return samples if isinstance(samples, SampleSet) else SampleSet(samples)


def _check(ss: SampleSet, alpha: float) -> None:
    if not (0.0 < alpha < 1.0):
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha!r}")
    if len(ss) == 0:
        raise EstimatorDomainError("cannot estimate tail risk of an empty sample set")


def var_rank(n: int, alpha: float) -> int:
    """1-based order statistic rank of the lower alpha-quantile of ``n`` samples.

    The comparison ``k / n >= alpha`` is done in exact rational arithmetic on
    the binary value of ``alpha``; a float ``ceil(alpha * n)`` can land one
    rank off (e.g. alpha=0.99999, n=10**5).
    """
    return max(1, math.ceil(Fraction(alpha) * n))


def _var_index(ss: SampleSet, alpha: float) -> int:
    return var_rank(len(ss), alpha) - 1


def _cvar_from_sorted(s: np.ndarray, idx: int) -> float:
    var = s[idx]
    # first position strictly above VaR; ties at VaR are excluded from the tail
    cut = int(np.searchsorted(s, var, side="right"))
    if cut >= s.size:
        return float(var)
    return float(s[cut:].mean())


def empirical_var(samples: SampleLike, alpha: float) -> float:
    ss = _as_sample_set(samples)
    _check(ss, alpha)
    return float(ss.sorted[_var_index(ss, alpha)])


def empirical_cvar(samples: SampleLike, alpha: float) -> float:
    """Mean of the samples strictly greater than ``empirical_var``."""
    ss = _as_sample_set(samples)
    _check(ss, alpha)
    return _cvar_from_sorted(ss.sorted, _var_index(ss, alpha))


def confidence_score(mean_ms: float, std_ms: float) -> float:
    """Epistemic confidence ``max(0, 1 - std/mean)``; 0.0 when mean <= 0."""
    if not mean_ms > 0.0:
        return 0.0
    return min(1.0, max(0.0, 1.0 - std_ms / mean_ms))


def summarize(samples: SampleLike, alpha: float) -> TailStats:
    ss = _as_sample_set(samples)
    _check(ss, alpha)
    s = ss.sorted
    idx = _var_index(ss, alpha)
    if s[0] == s[-1]:
        mean, std = float(s[0]), 0.0
    else:
        # pairwise-sum rounding can push the mean an ulp outside the sample range
        mean = min(max(float(s.mean()), float(s[0])), float(s[-1]))
        # population std: the Monte Carlo set is the whole predicted distribution
        std = float(s.std())
    return TailStats(
        mean_ms=mean,
        std_ms=std,
        var_alpha_ms=float(s[idx]),
        cvar_alpha_ms=_cvar_from_sorted(s, idx),
        alpha=alpha,
    )

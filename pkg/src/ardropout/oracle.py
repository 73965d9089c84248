"""Brute-force ground truth by exhaustive enumeration of the complete data.

The complete data are (dropout index, full response vector).  Everything here
is an exact finite sum: the joint probability from the chain rule, observed-
pattern probabilities by marginalizing unobserved suffixes, and the population
(infinite-sample) log-likelihood used for Kullback-Leibler checks.  Sums use a
fixed pairwise reduction order so results are bit-reproducible regardless of
how the terms were produced.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence

from .model import (
    ModelSpec,
    ObservedRecord,
    ParamSet,
    enumerate_patterns,
    outcome_prob,
    pattern_prob,
    retention_prob,
)

ENUMERATION_GUARD = 20


class HorizonGuardError(ValueError):
    """Raised when a horizon is too large to enumerate exhaustively."""


def _check_guard(T: int) -> None:
    if T > ENUMERATION_GUARD:
        raise HorizonGuardError(
            f"horizon T={T} exceeds the enumeration guard {ENUMERATION_GUARD}"
        )


def pairwise_sum(values: Sequence[float]) -> float:
    """Sum with a fixed pairwise (binary-tree) reduction order."""
    n = len(values)
    if n == 0:
        return 0.0
    if n == 1:
        return float(values[0])
    half = n // 2
    return pairwise_sum(values[:half]) + pairwise_sum(values[half:])


@dataclass(frozen=True)
class CompleteOutcome:
    """Dropout index paired with the full-length response vector."""

    t: int
    y: tuple[int, ...]
    x: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "y", tuple(self.y))
        if self.t < 1:
            raise ValueError(f"dropout index must be >= 1, got {self.t}")
        if any(v not in (0, 1) for v in self.y):
            raise ValueError(f"responses must be 0/1 bits, got {self.y}")
        if self.x is not None and self.x not in (0, 1):
            raise ValueError(f"covariate must be binary, got {self.x}")


def complete_joint(spec: ModelSpec, params: ParamSet, outcome: CompleteOutcome) -> float:
    """P(Y = y) * P(M = m^(t) | Y = y) from the chain rule.

    The mechanism factor retains through wave t and, when t < T, drops at
    wave t+1; wave 1 is always observed.
    """
    if len(outcome.y) != spec.T:
        raise ValueError(f"complete outcome needs all {spec.T} responses, got {len(outcome.y)}")
    if outcome.t > spec.T:
        raise ValueError(f"dropout index {outcome.t} exceeds horizon T={spec.T}")
    y, x = outcome.y, outcome.x
    prob = outcome_prob(spec, params, 1, (), y[0], x)
    for s in range(2, spec.T + 1):
        prob *= outcome_prob(spec, params, s, y[: s - 1], y[s - 1], x)
    for s in range(2, outcome.t + 1):
        prob *= retention_prob(spec, params, s, y[s - 2], y[s - 1])
    if outcome.t < spec.T:
        s = outcome.t + 1
        prob *= 1.0 - retention_prob(spec, params, s, y[s - 2], y[s - 1])
    return prob


def enumerate_complete(spec: ModelSpec) -> Iterator[CompleteOutcome]:
    for x in spec.covariate_levels:
        for t in range(1, spec.T + 1):
            for y in itertools.product((0, 1), repeat=spec.T):
                yield CompleteOutcome(t=t, y=y, x=x)


def marginalize(spec: ModelSpec, params: ParamSet, record: ObservedRecord) -> float:
    """Observed-pattern probability as an exhaustive sum over unobserved bits."""
    _check_guard(spec.T)
    if record.t > spec.T:
        raise ValueError(f"record prefix length {record.t} exceeds horizon T={spec.T}")
    terms = [
        complete_joint(spec, params, CompleteOutcome(t=record.t, y=record.y + suffix, x=record.x))
        for suffix in itertools.product((0, 1), repeat=spec.T - record.t)
    ]
    return pairwise_sum(terms)


class PopulationLoglik(NamedTuple):
    value: float
    support_violated: bool


def population_loglik(spec: ModelSpec, params: ParamSet, truth: ParamSet) -> PopulationLoglik:
    """Expected log pattern-probability under the truth, by enumeration.

    This is the almost-sure limit of the per-subject log-likelihood.  When a
    pattern has positive probability under the truth but zero probability
    under ``params`` the value is -inf and the flag is set.  With a covariate
    the two levels are weighted equally.
    """
    _check_guard(spec.T)
    weight = 1.0 / len(spec.covariate_levels)
    terms: list[float] = []
    violated = False
    for record in enumerate_patterns(spec):
        mass = pattern_prob(spec, truth, record) * weight
        if mass == 0.0:
            continue
        prob = pattern_prob(spec, params, record)
        if prob <= 0.0:
            violated = True
            return PopulationLoglik(-math.inf, violated)
        terms.append(mass * math.log(prob))
    return PopulationLoglik(pairwise_sum(terms), violated)


def kl_gap(spec: ModelSpec, params: ParamSet, truth: ParamSet) -> float:
    """L(truth) - L(params) >= 0, the population likelihood deficit of params."""
    at_truth = population_loglik(spec, truth, truth)
    at_params = population_loglik(spec, params, truth)
    if at_params.support_violated:
        return math.inf
    return at_truth.value - at_params.value

"""Conditional AR(p) model for binary longitudinal responses with monotone dropout.

A subject scheduled for T waves produces a binary outcome vector
y = (y_1, ..., y_T) and may drop out: once a wave is missed all later waves
are missed, and wave 1 is always observed.  The outcome chain is logistic in
the previous p responses,

    P(Y_1 = 1 | x)                 = expit(theta10 + beta1 * x)
    P(Y_t = 1 | history, x)        = expit(theta_t0 + sum_k theta_{t,t-k} y_{t-k}
                                           + beta_t * x)        for t >= 2,

and the missing-data mechanism is logistic in the previous and the current
(possibly unobserved) response.  The mechanism coefficients tau parameterize
the *continuation* probability

    P(M_t = 0 | M_{t-1} = 0, y_{t-1}, y_t) = expit(tau_t0 + tau_{t,t-1} y_{t-1}
                                                   + tau_{t,t} y_t),

so a positive tau_{t,t} means subjects with y_t = 1 are retained more often.
With tau_{t,t} free the mechanism is non-ignorable (NMAR): the probability of
observing wave t depends on the value that would have been observed.

The optional covariate is a single binary, time-invariant, fully observed
regressor entering the outcome model only.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, Mapping, Sequence

import numpy as np

MechSlope = tuple[int, int]


def expit(x: float) -> float:
    """Inverse logit 1/(1+e^-x); branch on sign so large |x| cannot overflow."""
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def param_budget(T: int) -> int:
    """Largest parameter count the observed pattern table can support: 2^(T+1) - 3."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    return 2 ** (T + 1) - 3


def ar1_param_count(T: int) -> int:
    """Free parameters of the full NMAR logistic AR(1) model: 5T - 4."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    return 5 * T - 4


def theta_name(t: int, j: int) -> str:
    return f"theta{t}{j}" if t < 10 and j < 10 else f"theta_{t}_{j}"


def tau_name(t: int, j: int) -> str:
    return f"tau{t}{j}" if t < 10 and j < 10 else f"tau_{t}_{j}"


def beta_name(t: int) -> str:
    return f"beta{t}"


def slope_name(slope: MechSlope) -> str:
    return tau_name(*slope)


def parse_slope(name: str) -> MechSlope:
    """Parse 'tau21' or 'tau_12_11' into the slope identifier (t, j)."""
    body = name.strip()
    if not body.startswith("tau"):
        raise ValueError(f"mechanism slope name must start with 'tau': {name!r}")
    body = body[3:]
    if body.startswith("_"):
        parts = body[1:].split("_")
        if len(parts) != 2:
            raise ValueError(f"cannot parse mechanism slope name: {name!r}")
        t, j = int(parts[0]), int(parts[1])
    elif len(body) == 2 and body.isdigit():
        t, j = int(body[0]), int(body[1])
    else:
        raise ValueError(f"cannot parse mechanism slope name: {name!r}")
    if j not in (t - 1, t):
        raise ValueError(f"{name!r} is not a mechanism slope (need j in {{t-1, t}})")
    return (t, j)


@dataclass(frozen=True)
class HistoryWindow:
    """The response window [y_{max(1, t-p)}, ..., y_t] feeding one time slice."""

    values: tuple[int, ...]

    def __post_init__(self):
        if not self.values:
            raise ValueError("history window cannot be empty")
        if any(v not in (0, 1) for v in self.values):
            raise ValueError(f"window entries must be 0/1 bits, got {self.values}")


def history_window(y: Sequence[int], t: int, p: int) -> HistoryWindow:
    """Window of the last p+1 responses ending at y_t, truncated at wave 1."""
    if not 1 <= t <= len(y):
        raise IndexError(f"time {t} out of range for a prefix of length {len(y)}")
    start = max(1, t - p)
    return HistoryWindow(tuple(y[start - 1 : t]))


def _all_mech_slopes(T: int) -> frozenset[MechSlope]:
    return frozenset((t, j) for t in range(2, T + 1) for j in (t - 1, t))


@dataclass(frozen=True)
class ModelSpec:
    """Shape of one AR(p) model: horizon, order, covariate, free mechanism slopes.

    ``free_mech_slopes`` lists the (t, j) mechanism slope identifiers that are
    estimated; the rest are structurally zero.  ``None`` (default) frees all of
    them, the full NMAR mechanism.  ``lag_structure`` optionally restricts the
    outcome lags used at each time; the default is lags 1..min(p, t-1).
    """

    T: int
    p: int
    has_covariate: bool = False
    free_mech_slopes: frozenset[MechSlope] | None = None
    lag_structure: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        if self.T < 2:
            raise ValueError(f"T must be >= 2, got {self.T}")
        if self.p < 1:
            raise ValueError(f"p must be >= 1, got {self.p}")
        slopes = self.free_mech_slopes
        if slopes is None:
            slopes = _all_mech_slopes(self.T)
        else:
            slopes = frozenset(tuple(s) for s in slopes)
            for t, j in slopes:
                if not 2 <= t <= self.T or j not in (t - 1, t):
                    raise ValueError(f"invalid mechanism slope identifier ({t}, {j})")
        object.__setattr__(self, "free_mech_slopes", slopes)
        lags = self.lag_structure
        if lags is None:
            normalized = tuple(
                tuple(range(1, min(self.p, t - 1) + 1)) for t in range(2, self.T + 1)
            )
        else:
            if isinstance(lags, Mapping):
                lags = tuple(tuple(sorted(lags.get(t, ()))) for t in range(2, self.T + 1))
            else:
                lags = tuple(tuple(sorted(entry)) for entry in lags)
            if len(lags) != self.T - 1:
                raise ValueError("lag_structure must cover every time 2..T")
            for offset, entry in enumerate(lags):
                t = offset + 2
                bad = [k for k in entry if not 1 <= k <= min(self.p, t - 1)]
                if bad:
                    raise ValueError(
                        f"lags {bad} at time {t} outside 1..min(p, t-1)"
                    )
            normalized = lags
        object.__setattr__(self, "lag_structure", normalized)

    # -- layout ------------------------------------------------------------

    def outcome_lags(self, t: int) -> tuple[int, ...]:
        if not 2 <= t <= self.T:
            raise ValueError(f"time {t} out of range 2..{self.T}")
        return self.lag_structure[t - 2]

    def outcome_regressors(self, t: int) -> tuple[int, ...]:
        """Absolute response indices used by the outcome model at time t."""
        return tuple(sorted(t - k for k in self.outcome_lags(t)))

    def window_start(self, t: int) -> int:
        return max(1, t - self.p)

    def window_dim(self, t: int) -> int:
        return min(self.p, t - 1) + 1

    def is_slope_free(self, slope: MechSlope) -> bool:
        return tuple(slope) in self.free_mech_slopes

    @property
    def all_mech_slopes(self) -> tuple[MechSlope, ...]:
        return tuple(sorted(_all_mech_slopes(self.T)))

    @property
    def covariate_levels(self) -> tuple[int | None, ...]:
        return (0, 1) if self.has_covariate else (None,)

    @cached_property
    def free_param_names(self) -> tuple[str, ...]:
        names: list[str] = [theta_name(1, 0)]
        if self.has_covariate:
            names.append(beta_name(1))
        for t in range(2, self.T + 1):
            names.append(theta_name(t, 0))
            names.extend(theta_name(t, j) for j in self.outcome_regressors(t))
            if self.has_covariate:
                names.append(beta_name(t))
            names.append(tau_name(t, 0))
            for j in (t - 1, t):
                if (t, j) in self.free_mech_slopes:
                    names.append(tau_name(t, j))
        return tuple(names)

    @cached_property
    def _name_index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.free_param_names)}

    @property
    def n_free(self) -> int:
        return len(self.free_param_names)

    def slice_param_names(self, t: int) -> tuple[str, ...]:
        """Free parameter names attached to time t (the coordinates of xi_t)."""
        if t == 1:
            names = [theta_name(1, 0)]
            if self.has_covariate:
                names.append(beta_name(1))
            return tuple(names)
        if not 2 <= t <= self.T:
            raise ValueError(f"time {t} out of range 1..{self.T}")
        names = [theta_name(t, 0)]
        names.extend(theta_name(t, j) for j in self.outcome_regressors(t))
        if self.has_covariate:
            names.append(beta_name(t))
        names.append(tau_name(t, 0))
        names.extend(tau_name(t, j) for j in (t - 1, t) if (t, j) in self.free_mech_slopes)
        return tuple(names)

    def with_free_slopes(self, slopes: Sequence[MechSlope | str]) -> "ModelSpec":
        parsed = frozenset(parse_slope(s) if isinstance(s, str) else tuple(s) for s in slopes)
        return ModelSpec(
            T=self.T,
            p=self.p,
            has_covariate=self.has_covariate,
            free_mech_slopes=parsed,
            lag_structure=self.lag_structure,
        )

    def without_slopes(self, slopes: Sequence[MechSlope | str]) -> "ModelSpec":
        drop = frozenset(parse_slope(s) if isinstance(s, str) else tuple(s) for s in slopes)
        return self.with_free_slopes(tuple(self.free_mech_slopes - drop))


@dataclass(frozen=True)
class ParamSet:
    """Structured parameters with an exact bijection to a flat real vector.

    ``values`` is aligned with ``spec.free_param_names``.  Mechanism slopes
    fixed by the spec are not stored; looking them up returns exactly 0.0.
    """

    spec: ModelSpec
    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.values) != self.spec.n_free:
            raise ValueError(
                f"expected {self.spec.n_free} values for this spec, got {len(self.values)}"
            )
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("parameter values must all be finite")

    @classmethod
    def zeros(cls, spec: ModelSpec) -> "ParamSet":
        return cls(spec, (0.0,) * spec.n_free)

    @classmethod
    def from_dict(cls, spec: ModelSpec, mapping: Mapping[str, float]) -> "ParamSet":
        index = spec._name_index
        values = [0.0] * spec.n_free
        for name, value in mapping.items():
            if name not in index:
                raise KeyError(f"{name!r} is not a free parameter of this spec")
            values[index[name]] = float(value)
        return cls(spec, tuple(values))

    @classmethod
    def unflatten(cls, spec: ModelSpec, vector: Sequence[float]) -> "ParamSet":
        return cls(spec, tuple(float(v) for v in vector))

    def flatten(self) -> np.ndarray:
        return np.array(self.values, dtype=float)

    def __getitem__(self, name: str) -> float:
        idx = self.spec._name_index.get(name)
        if idx is not None:
            return self.values[idx]
        # fixed-at-zero mechanism slopes read as exact zeros
        try:
            slope = parse_slope(name)
        except ValueError:
            raise KeyError(f"unknown parameter {name!r}") from None
        if 2 <= slope[0] <= self.spec.T:
            return 0.0
        raise KeyError(f"unknown parameter {name!r}")

    def to_dict(self) -> dict[str, float]:
        return dict(zip(self.spec.free_param_names, self.values))

    def replace(self, updates: Mapping[str, float]) -> "ParamSet":
        merged = self.to_dict()
        for name, value in updates.items():
            if name not in merged:
                raise KeyError(f"{name!r} is not a free parameter of this spec")
            merged[name] = float(value)
        return ParamSet.from_dict(self.spec, merged)

    def outcome_params(self, t: int) -> dict[str, float]:
        if t == 1:
            out = {theta_name(1, 0): self[theta_name(1, 0)]}
            if self.spec.has_covariate:
                out[beta_name(1)] = self[beta_name(1)]
            return out
        out = {theta_name(t, 0): self[theta_name(t, 0)]}
        for j in self.spec.outcome_regressors(t):
            out[theta_name(t, j)] = self[theta_name(t, j)]
        if self.spec.has_covariate:
            out[beta_name(t)] = self[beta_name(t)]
        return out

    def mech_params(self, t: int) -> dict[str, float]:
        return {
            tau_name(t, 0): self[tau_name(t, 0)],
            tau_name(t, t - 1): self[tau_name(t, t - 1)],
            tau_name(t, t): self[tau_name(t, t)],
        }


@dataclass(frozen=True)
class ObservedRecord:
    """Grouped observation: covariate level, observed prefix, multiplicity.

    Monotone dropout is structural: y holds the first t waves, everything
    after is missing, and t >= 1 because wave 1 is always observed.
    """

    t: int
    y: tuple[int, ...]
    count: int = 1
    x: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "y", tuple(self.y))
        if self.t < 1:
            raise ValueError(f"observed prefix length must be >= 1, got {self.t}")
        if len(self.y) != self.t:
            raise ValueError(f"prefix length {self.t} does not match y of length {len(self.y)}")
        if any(v not in (0, 1) for v in self.y):
            raise ValueError(f"responses must be 0/1 bits, got {self.y}")
        if self.count < 0:
            raise ValueError(f"count must be nonnegative, got {self.count}")
        if self.x is not None and self.x not in (0, 1):
            raise ValueError(f"covariate must be binary, got {self.x}")


def _covariate_value(spec: ModelSpec, x: int | None) -> int:
    if spec.has_covariate:
        if x is None:
            raise ValueError("spec has a covariate but no covariate value was given")
        return x
    return 0


def outcome_prob(
    spec: ModelSpec,
    params: ParamSet,
    t: int,
    history: Sequence[int],
    y_t: int,
    x: int | None = None,
) -> float:
    """P(Y_t = y_t | history, x) under the logistic outcome chain."""
    xv = _covariate_value(spec, x)
    if t == 1:
        lin = params[theta_name(1, 0)]
        if spec.has_covariate:
            lin += params[beta_name(1)] * xv
    else:
        if len(history) < t - 1:
            raise ValueError(f"history of length {len(history)} too short for time {t}")
        lin = params[theta_name(t, 0)]
        for j in spec.outcome_regressors(t):
            lin += params[theta_name(t, j)] * history[j - 1]
        if spec.has_covariate:
            lin += params[beta_name(t)] * xv
    return expit(lin) if y_t == 1 else expit(-lin)


def retention_prob(spec: ModelSpec, params: ParamSet, t: int, y_prev: int, y_curr: int) -> float:
    """P(M_t = 0 | M_{t-1} = 0, y_{t-1}, y_t) = expit(tau linear predictor)."""
    if not 2 <= t <= spec.T:
        raise ValueError(f"mechanism time {t} out of range 2..{spec.T}")
    lin = (
        params[tau_name(t, 0)]
        + params[tau_name(t, t - 1)] * y_prev
        + params[tau_name(t, t)] * y_curr
    )
    return expit(lin)


def dropout_hazard(spec: ModelSpec, params: ParamSet, t: int, y_prev: int, y_curr: int) -> float:
    """P(M_t = 1 | M_{t-1} = 0, y_{t-1}, y_t), the complement of retention."""
    return 1.0 - retention_prob(spec, params, t, y_prev, y_curr)


def f_slice(
    spec: ModelSpec,
    params: ParamSet,
    t: int,
    window: HistoryWindow | Sequence[int],
    x: int | None = None,
) -> float:
    """One factor of the pattern probability: (1 - hazard_t) * outcome_t.

    ``window`` carries [y_{max(1,t-p)}, ..., y_t]; both the retention factor
    (needs y_{t-1}, y_t) and the outcome factor (needs the included lags) read
    from it.
    """
    bits = window.values if isinstance(window, HistoryWindow) else tuple(window)
    if len(bits) != spec.window_dim(t):
        raise ValueError(
            f"window of length {len(bits)} does not match dim {spec.window_dim(t)} at time {t}"
        )
    start = spec.window_start(t)
    # re-anchor the window on absolute indices 1..t
    prefix: list[int] = [0] * (t)
    for offset, bit in enumerate(bits):
        prefix[start - 1 + offset] = bit
    y_t = bits[-1]
    y_prev = bits[-2]
    return retention_prob(spec, params, t, y_prev, y_t) * outcome_prob(
        spec, params, t, prefix[: t - 1], y_t, x
    )


def pattern_prob(spec: ModelSpec, params: ParamSet, record: ObservedRecord) -> float:
    """Probability of observing exactly this monotone pattern and prefix.

    The chain-rule form: the wave-1 marginal, times one retention*outcome
    factor per later observed wave, times the probability of dropping out at
    wave t+1 (one minus the sum of both continuations), omitted when t = T.
    """
    if record.t > spec.T:
        raise ValueError(f"record prefix length {record.t} exceeds horizon T={spec.T}")
    if spec.has_covariate and record.x is None:
        raise ValueError("spec has a covariate but the record has none")
    g = outcome_prob(spec, params, 1, (), record.y[0], record.x)
    for s in range(2, record.t + 1):
        g *= f_slice(spec, params, s, history_window(record.y, s, spec.p), record.x)
    if record.t <= spec.T - 1:
        tail = 1.0
        for y_next in (0, 1):
            extended = record.y + (y_next,)
            tail -= f_slice(
                spec, params, record.t + 1, history_window(extended, record.t + 1, spec.p), record.x
            )
        g *= max(tail, 0.0)
    return g


def enumerate_patterns(spec: ModelSpec) -> Iterator[ObservedRecord]:
    """All observable (covariate, prefix-length, prefix) patterns in canonical order."""
    for x in spec.covariate_levels:
        for t in range(1, spec.T + 1):
            for y in itertools.product((0, 1), repeat=t):
                yield ObservedRecord(t=t, y=y, count=1, x=x)

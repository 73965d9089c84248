"""Full-information maximum likelihood on grouped pattern counts.

The log-likelihood is sum(count * log pattern_prob).  ``loglik`` is the plain
reference implementation; fitting goes through a compiled form that evaluates
every distinct probability cell once per parameter vector and batches finite
difference columns through matrix products, which keeps the multi-start BFGS
and the numerical Hessian cheap even for the 22-parameter data analyses.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import optimize
from .model import (
    MechSlope,
    ModelSpec,
    ObservedRecord,
    ParamSet,
    beta_name,
    pattern_prob,
    tau_name,
    theta_name,
)
from .rng import StreamRng
from .stats import wald_pvalue


class FitError(RuntimeError):
    """Raised when no usable optimum exists (e.g. zero likelihood everywhere)."""


@dataclass(frozen=True)
class Dataset:
    """Grouped counts of observed dropout patterns sharing one horizon."""

    records: tuple[ObservedRecord, ...]
    T: int
    covariate_levels: frozenset[int]
    covariate_labels: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "covariate_levels", frozenset(self.covariate_levels))
        if not self.records:
            raise ValueError("dataset needs at least one record")
        for rec in self.records:
            if rec.t > self.T:
                raise ValueError(f"record prefix length {rec.t} exceeds horizon T={self.T}")
        with_x = [rec for rec in self.records if rec.x is not None]
        if with_x and len(with_x) != len(self.records):
            raise ValueError("covariate must be present on all records or none")
        observed_levels = frozenset(rec.x for rec in with_x)
        if not observed_levels <= self.covariate_levels:
            raise ValueError("records carry covariate levels outside covariate_levels")
        if self.total_count <= 0:
            raise ValueError("dataset total count must be positive")

    @classmethod
    def from_records(
        cls,
        records: Sequence[ObservedRecord],
        T: int | None = None,
        covariate_labels: tuple[str, ...] | None = None,
    ) -> "Dataset":
        records = tuple(records)
        horizon = T if T is not None else max((rec.t for rec in records), default=0)
        levels = frozenset(rec.x for rec in records if rec.x is not None)
        return cls(records, horizon, levels, covariate_labels)

    @property
    def total_count(self) -> int:
        return sum(rec.count for rec in self.records)

    @property
    def has_covariate(self) -> bool:
        return bool(self.covariate_levels) or any(rec.x is not None for rec in self.records)

    def fingerprint(self) -> tuple:
        key = tuple(sorted((rec.x, rec.t, rec.y, rec.count) for rec in self.records
                           if rec.count > 0))
        return (self.T, key)


def _check_compatible(dataset: Dataset, spec: ModelSpec) -> None:
    if dataset.T != spec.T:
        raise ValueError(f"dataset horizon {dataset.T} does not match spec T={spec.T}")
    if dataset.has_covariate != spec.has_covariate:
        raise ValueError("dataset and spec disagree about the covariate")


def loglik(dataset: Dataset, spec: ModelSpec, params: ParamSet) -> float:
    """Reference objective: sum of count * log pattern probability.

    Returns -inf when any positive-count pattern has zero probability;
    zero-count records contribute nothing.
    """
    _check_compatible(dataset, spec)
    total = 0.0
    for rec in dataset.records:
        if rec.count == 0:
            continue
        prob = pattern_prob(spec, params, rec)
        if prob <= 0.0:
            return -math.inf
        total += rec.count * math.log(prob)
    return total


def _expit_array(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ex = np.exp(a[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class CompiledLoglik:
    """Matrix form of the grouped log-likelihood for one (dataset, spec) pair.

    Rows of two design matrices give the retention and outcome linear
    predictors of every distinct (time, window, covariate) cell; records then
    gather log-cells by index.  ``loglik_many`` evaluates a whole batch of
    parameter vectors (columns) in a handful of numpy operations.
    """

    def __init__(self, dataset: Dataset, spec: ModelSpec):
        _check_compatible(dataset, spec)
        self.spec = spec
        index = {name: i for i, name in enumerate(spec.free_param_names)}
        self.n_free = spec.n_free

        pi_rows: list[np.ndarray] = []
        pi_keys: dict[tuple, int] = {}
        for x in spec.covariate_levels:
            for y1 in (0, 1):
                sign = 1.0 if y1 == 1 else -1.0
                row = np.zeros(self.n_free)
                row[index[theta_name(1, 0)]] = sign
                if spec.has_covariate:
                    row[index[beta_name(1)]] = sign * x
                pi_keys[(y1, x)] = len(pi_rows)
                pi_rows.append(row)

        ret_rows: list[np.ndarray] = []
        out_rows: list[np.ndarray] = []
        f_keys: dict[tuple, int] = {}
        for s in range(2, spec.T + 1):
            start = spec.window_start(s)
            dim = spec.window_dim(s)
            regressors = spec.outcome_regressors(s)
            for bits in itertools.product((0, 1), repeat=dim):
                y_of = {start + off: bit for off, bit in enumerate(bits)}
                y_prev, y_curr = y_of[s - 1], y_of[s]
                for x in spec.covariate_levels:
                    ret = np.zeros(self.n_free)
                    ret[index[tau_name(s, 0)]] = 1.0
                    if (s, s - 1) in spec.free_mech_slopes:
                        ret[index[tau_name(s, s - 1)]] = y_prev
                    if (s, s) in spec.free_mech_slopes:
                        ret[index[tau_name(s, s)]] = y_curr
                    sign = 1.0 if y_curr == 1 else -1.0
                    out = np.zeros(self.n_free)
                    out[index[theta_name(s, 0)]] = sign
                    for j in regressors:
                        out[index[theta_name(s, j)]] = sign * y_of[j]
                    if spec.has_covariate:
                        out[index[beta_name(s)]] = sign * x
                    f_keys[(s, bits, x)] = len(ret_rows)
                    ret_rows.append(ret)
                    out_rows.append(out)

        self._a_pi = np.array(pi_rows)
        self._a_ret = np.array(ret_rows)
        self._a_out = np.array(out_rows)

        def f_key(s: int, y: tuple[int, ...], x: int | None) -> int:
            start = spec.window_start(s)
            return f_keys[(s, tuple(y[start - 1 : s]), x)]

        counts: list[float] = []
        pi_idx: list[int] = []
        gather: list[int] = []
        seg: list[int] = []
        tail_recs: list[int] = []
        tail0: list[int] = []
        tail1: list[int] = []
        for rec in dataset.records:
            if rec.count == 0:
                continue
            rid = len(counts)
            counts.append(float(rec.count))
            pi_idx.append(pi_keys[(rec.y[0], rec.x)])
            for s in range(2, rec.t + 1):
                gather.append(f_key(s, rec.y, rec.x))
                seg.append(rid)
            if rec.t < spec.T:
                tail_recs.append(rid)
                tail0.append(f_key(rec.t + 1, rec.y + (0,), rec.x))
                tail1.append(f_key(rec.t + 1, rec.y + (1,), rec.x))
        self._counts = np.array(counts)
        self._pi_idx = np.array(pi_idx, dtype=np.intp)
        self._gather = np.array(gather, dtype=np.intp)
        self._seg = np.array(seg, dtype=np.intp)
        self._tail_recs = np.array(tail_recs, dtype=np.intp)
        self._tail0 = np.array(tail0, dtype=np.intp)
        self._tail1 = np.array(tail1, dtype=np.intp)
        self._n_records = len(counts)
        if self._n_records == 0:
            raise ValueError("dataset has no positive-count records")

    def loglik_many(self, columns: np.ndarray) -> np.ndarray:
        """Log-likelihood of each parameter column; -inf marks zero-probability fits."""
        pi = _expit_array(self._a_pi @ columns)
        f = _expit_array(self._a_ret @ columns) * _expit_array(self._a_out @ columns)
        with np.errstate(divide="ignore"):
            log_pi = np.log(pi)
            per_record = log_pi[self._pi_idx]
            acc = np.zeros((self._n_records, columns.shape[1]))
            if self._gather.size:
                np.add.at(acc, self._seg, np.log(f[self._gather]))
            if self._tail_recs.size:
                tail = 1.0 - f[self._tail0] - f[self._tail1]
                np.maximum(tail, 0.0, out=tail)
                acc[self._tail_recs] += np.log(tail)
        totals = self._counts @ (per_record + acc)
        return np.where(np.isfinite(totals), totals, -np.inf)

    def loglik(self, xi: np.ndarray) -> float:
        return float(self.loglik_many(np.asarray(xi, dtype=float).reshape(-1, 1))[0])

    def gradient(self, xi: np.ndarray, rel_step: float = optimize.GRAD_REL_STEP) -> np.ndarray:
        """Central-difference gradient, all probes evaluated in one batch."""
        xi = np.asarray(xi, dtype=float)
        h = np.maximum(rel_step, rel_step * np.abs(xi))
        columns = np.repeat(xi.reshape(-1, 1), 2 * self.n_free, axis=1)
        for i in range(self.n_free):
            columns[i, 2 * i] += h[i]
            columns[i, 2 * i + 1] -= h[i]
        values = self.loglik_many(columns)
        return (values[0::2] - values[1::2]) / (2.0 * h)

    def hessian(self, xi: np.ndarray, rel_step: float = optimize.HESS_REL_STEP) -> np.ndarray:
        """Central second differences of the log-likelihood, batched."""
        xi = np.asarray(xi, dtype=float)
        n = self.n_free
        h = np.maximum(rel_step, rel_step * np.abs(xi))
        probes: list[np.ndarray] = [xi]
        for i in range(n):
            for sgn in (1.0, -1.0):
                v = xi.copy()
                v[i] += sgn * h[i]
                probes.append(v)
        pair_pos: dict[tuple[int, int], int] = {}
        for i in range(n):
            for j in range(i + 1, n):
                for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                    v = xi.copy()
                    v[i] += si * h[i]
                    v[j] += sj * h[j]
                    pair_pos[(i, j, si, sj)] = len(probes)
                    probes.append(v)
        values = self.loglik_many(np.column_stack(probes))
        f0 = values[0]
        hess = np.empty((n, n))
        for i in range(n):
            hess[i, i] = (values[1 + 2 * i] - 2.0 * f0 + values[2 + 2 * i]) / (h[i] * h[i])
        for i in range(n):
            for j in range(i + 1, n):
                hess[i, j] = hess[j, i] = (
                    values[pair_pos[(i, j, 1, 1)]]
                    - values[pair_pos[(i, j, 1, -1)]]
                    - values[pair_pos[(i, j, -1, 1)]]
                    + values[pair_pos[(i, j, -1, -1)]]
                ) / (4.0 * h[i] * h[j])
        return hess


def gradient(dataset: Dataset, spec: ModelSpec, params: ParamSet) -> np.ndarray:
    """Central-difference gradient of the log-likelihood at ``params``."""
    return CompiledLoglik(dataset, spec).gradient(params.flatten())


def observed_info(dataset: Dataset, spec: ModelSpec, params: ParamSet) -> np.ndarray:
    """Observed information: negative Hessian of the log-likelihood, symmetrized."""
    hess = CompiledLoglik(dataset, spec).hessian(params.flatten())
    info = -hess
    return 0.5 * (info + info.T)


def _se_from_info(info: np.ndarray) -> np.ndarray:
    """Inverse-information standard errors; +inf flags a singular information."""
    n = info.shape[0]
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        return np.full(n, np.inf)
    diag = np.diag(cov)
    se = np.full(n, np.inf)
    good = np.isfinite(diag) & (diag > 0.0)
    se[good] = np.sqrt(diag[good])
    return se


@dataclass(frozen=True)
class FitOptions:
    n_starts: int = 10
    seed: int = 0
    tol: float = 1e-7
    max_iter: int = 500

    def __post_init__(self):
        if self.n_starts < 1:
            raise ValueError("need at least one start")


@dataclass(frozen=True)
class FitResult:
    params_hat: ParamSet
    loglik: float
    observed_info: np.ndarray
    se: np.ndarray
    pvalues: np.ndarray
    converged: bool
    n_starts_used: int
    best_objective_history: tuple[float, ...]
    grad_norm: float
    best_start: int
    dataset_fingerprint: tuple

    @property
    def param_names(self) -> tuple[str, ...]:
        return self.params_hat.spec.free_param_names

    @property
    def n_free(self) -> int:
        return self.params_hat.spec.n_free


def wald(fit_result: FitResult) -> tuple[np.ndarray, np.ndarray]:
    """Standard errors and two-sided Wald p-values from the observed information."""
    se = _se_from_info(fit_result.observed_info)
    estimates = fit_result.params_hat.flatten()
    pvalues = np.array([wald_pvalue(est, s) for est, s in zip(estimates, se)])
    return se, pvalues


def _start_vector(n: int, seed: int, stream: int) -> np.ndarray:
    rng = StreamRng(seed, stream)
    return np.array([rng.uniform_in(-2.0, 2.0) for _ in range(n)])


def fit(
    dataset: Dataset,
    spec: ModelSpec,
    constraints: Sequence[MechSlope | str] | None = None,
    options: FitOptions | None = None,
    extra_starts: Sequence[np.ndarray] = (),
) -> FitResult:
    """Best local optimum of the FIML objective over a multi-start schedule.

    Start 0 is the zero vector; starts 1..n_starts-1 draw each coordinate
    uniformly from [-2, 2] using the seeded counter generator (stream = start
    index), so enlarging n_starts only appends starts.  ``constraints`` names
    mechanism slopes to fix at zero on top of the spec, and ``extra_starts``
    appends warm starts after the standard schedule.  Ties in the final
    objective go to the lowest start index.
    """
    if constraints:
        spec = spec.without_slopes(tuple(constraints))
    options = options or FitOptions()
    compiled = CompiledLoglik(dataset, spec)
    n = compiled.n_free

    def objective(v: np.ndarray) -> float:
        value = compiled.loglik(v)
        return -value if math.isfinite(value) else math.inf

    def objective_grad(v: np.ndarray) -> np.ndarray:
        return -compiled.gradient(v)

    starts: list[np.ndarray] = [np.zeros(n)]
    starts += [_start_vector(n, options.seed, k) for k in range(1, options.n_starts)]
    starts += [np.asarray(v, dtype=float) for v in extra_starts]

    best: optimize.BfgsResult | None = None
    best_index = -1
    history: list[float] = []
    for idx, x0 in enumerate(starts):
        run = optimize.minimize_bfgs(
            objective,
            x0,
            grad=objective_grad,
            gtol=lambda fval: options.tol * (1.0 + abs(fval)),
            max_iter=options.max_iter,
        )
        history.append(-run.fun)
        if best is None or run.fun < best.fun:
            best, best_index = run, idx

    if best is None or not math.isfinite(best.fun):
        raise FitError("no start produced a finite likelihood")

    params_hat = ParamSet.unflatten(spec, best.x)
    ll = loglik(dataset, spec, params_hat)
    info = -compiled.hessian(best.x)
    info = 0.5 * (info + info.T)
    se = _se_from_info(info)
    pvalues = np.array([wald_pvalue(est, s) for est, s in zip(best.x, se)])
    grad_norm = float(np.max(np.abs(best.grad)))
    converged = bool(best.converged and grad_norm <= options.tol * (1.0 + abs(ll)))
    return FitResult(
        params_hat=params_hat,
        loglik=ll,
        observed_info=info,
        se=se,
        pvalues=pvalues,
        converged=converged,
        n_starts_used=len(starts),
        best_objective_history=tuple(history),
        grad_norm=grad_norm,
        best_start=best_index,
        dataset_fingerprint=dataset.fingerprint(),
    )

"""Quasi-Newton minimization: BFGS with a strong-Wolfe line search.

Self-contained so the fitting path has no optimizer dependency.  Derivatives
come from central finite differences unless a gradient callable is supplied;
objectives may return +inf (e.g. for parameters with zero likelihood), which
the line search treats as an automatic sufficient-decrease failure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

GRAD_REL_STEP = 1e-5
HESS_REL_STEP = 1e-4


def fd_gradient(fun, x: np.ndarray, rel_step: float = GRAD_REL_STEP) -> np.ndarray:
    """Central-difference gradient with per-coordinate step max(h, h*|x_i|)."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        h = max(rel_step, rel_step * abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        grad[i] = (fun(x + e) - fun(x - e)) / (2.0 * h)
    return grad


def fd_hessian(fun, x: np.ndarray, rel_step: float = HESS_REL_STEP) -> np.ndarray:
    """Central second differences; symmetric by construction."""
    x = np.asarray(x, dtype=float)
    n = x.size
    h = np.array([max(rel_step, rel_step * abs(v)) for v in x])
    hess = np.empty((n, n))
    f0 = fun(x)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h[i]
        hess[i, i] = (fun(x + ei) - 2.0 * f0 + fun(x - ei)) / (h[i] * h[i])
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = h[j]
            hess[i, j] = hess[j, i] = (
                fun(x + ei + ej) - fun(x + ei - ej) - fun(x - ei + ej) + fun(x - ei - ej)
            ) / (4.0 * h[i] * h[j])
    return hess


@dataclass
class BfgsResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    n_iter: int
    n_fev: int
    converged: bool
    message: str


_C1 = 1e-4
_C2 = 0.9
_MAX_LS = 30
_ALPHA_MAX = 1e3


def _zoom(phi, dphi, a_lo, a_hi, phi_lo, phi_0, dphi_0):
    """Strong-Wolfe zoom by bisection on the bracketing interval."""
    for _ in range(_MAX_LS):
        a = 0.5 * (a_lo + a_hi)
        phi_a = phi(a)
        if not math.isfinite(phi_a) or phi_a > phi_0 + _C1 * a * dphi_0 or phi_a >= phi_lo:
            a_hi = a
            continue
        dphi_a = dphi(a)
        if abs(dphi_a) <= -_C2 * dphi_0:
            return a, phi_a
        if dphi_a * (a_hi - a_lo) >= 0.0:
            a_hi = a_lo
        a_lo, phi_lo = a, phi_a
    if math.isfinite(phi_lo) and phi_lo < phi_0:
        return a_lo, phi_lo
    return None


def _wolfe_search(phi, dphi, phi_0, dphi_0):
    """Return a step satisfying the strong Wolfe conditions, or None."""
    a_prev, phi_prev = 0.0, phi_0
    a = 1.0
    for it in range(_MAX_LS):
        phi_a = phi(a)
        if not math.isfinite(phi_a) or phi_a > phi_0 + _C1 * a * dphi_0 or (
            it > 0 and phi_a >= phi_prev
        ):
            return _zoom(phi, dphi, a_prev, a, phi_prev, phi_0, dphi_0)
        dphi_a = dphi(a)
        if abs(dphi_a) <= -_C2 * dphi_0:
            return a, phi_a
        if dphi_a >= 0.0:
            return _zoom(phi, dphi, a, a_prev, phi_a, phi_0, dphi_0)
        a_prev, phi_prev = a, phi_a
        a = min(2.0 * a, _ALPHA_MAX)
    return None


def minimize_bfgs(
    fun: Callable[[np.ndarray], float],
    x0: np.ndarray,
    grad: Callable[[np.ndarray], np.ndarray] | None = None,
    gtol: float | Callable[[float], float] = 1e-6,
    max_iter: int = 500,
) -> BfgsResult:
    """Minimize ``fun`` from ``x0``; converged when the max-abs gradient falls
    below ``gtol`` (a float, or a callable mapping the current value to a
    threshold for scale-relative criteria)."""
    x = np.asarray(x0, dtype=float).copy()
    n = x.size
    n_fev = 0

    def evaluate(v: np.ndarray) -> float:
        nonlocal n_fev
        n_fev += 1
        value = fun(v)
        return value if math.isfinite(value) else math.inf

    gradient = grad if grad is not None else (lambda v: fd_gradient(evaluate, v))
    threshold = gtol if callable(gtol) else (lambda _f: gtol)

    f = evaluate(x)
    if not math.isfinite(f):
        return BfgsResult(x, f, np.full(n, np.nan), 0, n_fev, False, "objective not finite at x0")
    g = gradient(x)
    identity = np.eye(n)
    h_inv = identity.copy()
    first_update = True

    for iteration in range(max_iter):
        gnorm = float(np.max(np.abs(g))) if n else 0.0
        if gnorm <= threshold(f):
            return BfgsResult(x, f, g, iteration, n_fev, True, "gradient tolerance reached")

        d = -h_inv @ g
        if float(d @ g) >= 0.0:
            # fall back to steepest descent if curvature info went bad
            h_inv = identity.copy()
            first_update = True
            d = -g

        dphi_0 = float(g @ d)
        step_cache: dict[float, np.ndarray] = {}

        def phi(a: float) -> float:
            return evaluate(x + a * d)

        def dphi(a: float) -> float:
            g_a = gradient(x + a * d)
            step_cache[a] = g_a
            return float(g_a @ d)

        hit = _wolfe_search(phi, dphi, f, dphi_0)
        if hit is None:
            if not first_update:
                # retry the iteration with a reset approximation
                h_inv = identity.copy()
                first_update = True
                continue
            gnorm = float(np.max(np.abs(g)))
            return BfgsResult(
                x, f, g, iteration, n_fev, gnorm <= threshold(f), "line search failed"
            )
        alpha, f_new = hit
        x_new = x + alpha * d
        g_new = step_cache.get(alpha)
        if g_new is None:
            g_new = gradient(x_new)

        s = x_new - x
        yvec = g_new - g
        sy = float(s @ yvec)
        if sy > 1e-10 * float(np.linalg.norm(s)) * float(np.linalg.norm(yvec)):
            if first_update:
                h_inv = (sy / float(yvec @ yvec)) * identity
                first_update = False
            rho = 1.0 / sy
            left = identity - rho * np.outer(s, yvec)
            h_inv = left @ h_inv @ left.T + rho * np.outer(s, s)
        x, f, g = x_new, f_new, g_new

    gnorm = float(np.max(np.abs(g)))
    return BfgsResult(x, f, g, max_iter, n_fev, gnorm <= threshold(f), "max iterations reached")

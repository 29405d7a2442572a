"""Deterministic minimizers, isotonic regression and gradient checking."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize

from .errors import DomainError, InputError, OptimizationError


@dataclass(frozen=True)
class ScalarMinimizerConfig:
    """Search window and tolerance for positive scalar parameters.

    The search runs in ``log`` space; ``tol`` is the absolute tolerance on
    ``log x``.
    """

    lower: float = 0.05
    upper: float = 100.0
    max_iters: int = 500
    tol: float = 1e-9
    grid_points: int = 33

    def __post_init__(self):
        if not (0 < self.lower < self.upper):
            raise DomainError("need 0 < lower < upper")
        if not self.tol > 0:
            raise DomainError("tol must be positive")


@dataclass(frozen=True)
class VectorMinimizerConfig:
    """Settings for multi-parameter fits.

    ``method="lbfgs"`` runs quasi-Newton to the tolerances; ``method="adam"``
    runs ``steps`` Adam updates at ``learning_rate``.  ``weight_decay`` adds
    ``weight_decay * ||x - x0||^2`` where ``x0`` is the initial point.
    """

    learning_rate: float = 0.01
    weight_decay: float = 1e-4
    steps: int = 2000
    grad_tol: float = 1e-9
    loss_tol: float = 1e-11
    method: str = "lbfgs"

    def __post_init__(self):
        if self.steps < 1:
            raise DomainError("steps must be >= 1")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise DomainError("learning_rate must be positive and weight_decay non-negative")
        if self.method not in ("lbfgs", "adam"):
            raise DomainError(f"unknown method {self.method!r}")


def minimize_scalar(objective: Callable[[float], float], cfg: ScalarMinimizerConfig = ScalarMinimizerConfig()):
    """Minimize a function of a positive scalar over ``[cfg.lower, cfg.upper]``.

    A log-spaced grid locates the best bracket, then bounded Brent search
    refines inside it.  For unimodal objectives the result is the global
    minimum over the window.

    Returns
    -------
    (float, float)
        The minimizer and the objective value there.
    """

    def f(u):
        x = math.exp(u)
        val = objective(x)
        if not math.isfinite(val):
            raise OptimizationError(f"objective is not finite at {x!r}", where=x)
        return float(val)

    lo, hi = math.log(cfg.lower), math.log(cfg.upper)
    grid = np.linspace(lo, hi, cfg.grid_points)
    vals = [f(u) for u in grid]
    j = int(np.argmin(vals))
    a = grid[max(j - 1, 0)]
    b = grid[min(j + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(
        f, bounds=(a, b), method="bounded", options={"xatol": cfg.tol, "maxiter": cfg.max_iters}
    )
    u_best, v_best = float(res.x), float(res.fun)
    # Brent never probes the bracket ends; keep a grid point if it is better.
    if vals[j] < v_best:
        u_best, v_best = float(grid[j]), float(vals[j])
    return math.exp(u_best), v_best


def minimize_vector(objective, gradient, init, cfg: VectorMinimizerConfig = VectorMinimizerConfig()):
    """Minimize a smooth objective from ``init``.

    Parameters
    ----------
    objective : callable
        Maps a flat parameter vector to a float.
    gradient : callable
        Maps a flat parameter vector to its gradient (same shape).
    init : array-like
        Starting point; also the anchor of the weight-decay penalty.
    cfg : VectorMinimizerConfig

    Returns
    -------
    numpy.ndarray
        The final parameters.
    """
    x0 = np.array(init, dtype=np.float64).ravel()
    lam = cfg.weight_decay
    state = {"it": 0}

    def fun(x):
        val = float(objective(x))
        g = np.asarray(gradient(x), dtype=np.float64).ravel()
        if lam:
            d = x - x0
            val += lam * float(d @ d)
            g = g + 2.0 * lam * d
        if not math.isfinite(val) or not np.all(np.isfinite(g)):
            raise OptimizationError(f"non-finite loss or gradient at iteration {state['it']}", where=state["it"])
        return val, g

    if cfg.method == "adam":
        return _adam(fun, x0, cfg, state)

    def callback(_xk):
        state["it"] += 1

    res = optimize.minimize(
        fun,
        x0,
        jac=True,
        method="L-BFGS-B",
        callback=callback,
        options={"maxiter": cfg.steps, "gtol": cfg.grad_tol, "ftol": cfg.loss_tol, "maxcor": 20},
    )
    return np.asarray(res.x, dtype=np.float64)


def _adam(fun, x0, cfg, state, beta1=0.9, beta2=0.999, eps=1e-8):
    x = x0.copy()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    prev = math.inf
    for t in range(1, cfg.steps + 1):
        state["it"] = t
        val, g = fun(x)
        if np.linalg.norm(g) < cfg.grad_tol or abs(prev - val) < cfg.loss_tol:
            break
        prev = val
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        x = x - cfg.learning_rate * mhat / (np.sqrt(vhat) + eps)
    return x


def pava(values, weights=None) -> np.ndarray:
    """Weighted isotonic (non-decreasing) least-squares fit.

    Examples
    --------
    >>> pava([3.0, 1.0, 2.0]).tolist()
    [2.0, 2.0, 2.0]
    """
    y = np.asarray(values, dtype=np.float64).ravel()
    if y.size == 0:
        raise InputError("pava needs at least one value")
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=np.float64).ravel()
    if w.shape != y.shape:
        raise InputError("values and weights must have equal length")
    if np.any(w <= 0):
        raise InputError("weights must be positive")

    # Stack of pooled blocks: (weighted mean, total weight, length).
    means, wts, lens = [], [], []
    for yi, wi in zip(y, w):
        means.append(yi)
        wts.append(wi)
        lens.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, l2 = means.pop(), wts.pop(), lens.pop()
            m1, w1, l1 = means.pop(), wts.pop(), lens.pop()
            wt = w1 + w2
            means.append((w1 * m1 + w2 * m2) / wt)
            wts.append(wt)
            lens.append(l1 + l2)
    return np.repeat(np.array(means), lens)


def check_gradient(objective, gradient, point, eps: float = 1e-5, floor: float = 1e-6) -> float:
    """Largest relative gap between ``gradient`` and central finite differences.

    The relative error of coordinate ``i`` is ``|g_i - fd_i| / max(|fd_i|, floor)``.
    """
    x = np.array(point, dtype=np.float64).ravel()
    g = np.asarray(gradient(x), dtype=np.float64).ravel()
    fd = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += eps
        xm[i] -= eps
        fd[i] = (objective(xp) - objective(xm)) / (2 * eps)
    return float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), floor)))

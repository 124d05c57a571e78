"""Discrete Skorokhod problem on the nonnegative orthant.

Given a path ``x`` on a time grid with ``x(0) >= 0`` and a reflection matrix
``R = I - U``, find the regulator ``eta`` (nondecreasing, ``eta(0) = 0``) and
``y = x + R eta >= 0`` such that ``eta_i`` only grows when ``y_i = 0``.  On
the grid the regulator is the fixed point of

    eta_i(t) = max_{s <= t} ( -x_i(s) + (U eta(s))_i )^+ .
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConvergenceError, InputError
from .model import ReflectionMatrix

DEFAULT_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class DiscretePath:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if times.ndim != 1 or times.size == 0:
            raise InputError("times must be a nonempty 1-D array")
        if times[0] != 0.0:
            raise InputError(f"times must start at 0, got {times[0]}")
        if np.any(np.diff(times) <= 0):
            raise InputError("times must be strictly increasing")
        if values.shape[0] != times.size:
            raise InputError(f"values has {values.shape[0]} rows for {times.size} times")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self):
        return self.times.size


@dataclass(frozen=True, eq=False)
class SkorokhodSolution:
    eta: DiscretePath
    y: DiscretePath
    iterations: int
    residual: float
    history: tuple[float, ...] = field(default=(), repr=False)

    def complementarity(self) -> np.ndarray:
        """Per-component ``sum_t y_i(t) * (eta_i(t) - eta_i(t-1))``."""
        deta = np.diff(self.eta.values, axis=0)
        return np.sum(self.y.values[1:] * deta, axis=0)


def _check_input(x: DiscretePath, rm: ReflectionMatrix):
    if x.dim != rm.n:
        raise InputError(f"path dimension {x.dim} does not match matrix size {rm.n}")
    if np.any(x.values[0] < 0):
        raise InputError(f"x(0) must be nonnegative, got {x.values[0]}")


def picard_step(x: np.ndarray, u: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """One application of the sup-recursion to a regulator guess."""
    drive = -x + eta @ u.T
    return np.maximum(np.maximum.accumulate(drive, axis=0), 0.0)


def _distance_bound(history: list[float]) -> float:
    """Geometric-tail bound on the distance from the last iterate to the fixed point.

    U is bipartite (eigenvalues come in +/- pairs), so sup-norm steps
    alternate; the contraction ratio is measured over two steps.
    """
    last = history[-1]
    if last == 0.0:
        return 0.0
    if len(history) < 4:
        return np.inf
    q2 = max(history[-1] / history[-3], history[-2] / history[-4])
    if q2 >= 1.0:
        return np.inf
    return (history[-1] + history[-2]) * q2 / (1.0 - q2)


def solve_skorokhod(
    x: DiscretePath,
    rm: ReflectionMatrix,
    tol: float = DEFAULT_TOL,
    max_iter: int = 100_000,
    method: str = "picard",
) -> SkorokhodSolution:
    """Solve the discrete Skorokhod problem for ``x`` with respect to ``rm.r``.

    ``method="picard"`` iterates the sup-recursion from ``eta = 0``; the
    iterates increase monotonically to the fixed point.  Iteration stops
    once the last step is below ``tol`` and the geometric extrapolation of
    the remaining steps is below ``tol / 2`` (the extrapolation is an
    estimate, hence the margin), so ``tol`` bounds the distance to
    the fixed point rather than just the step size.  ``method="sweep"``
    computes the same fixed point causally, solving one small linear
    complementarity problem per grid step.
    """
    _check_input(x, rm)
    if tol <= 0:
        raise InputError("tol must be positive")
    if method == "sweep":
        eta, y = _kernels.skorokhod_sweep(np.ascontiguousarray(x.values), np.asarray(rm.r))
        return SkorokhodSolution(DiscretePath(x.times, eta), DiscretePath(x.times, y), 1, 0.0)
    if method != "picard":
        raise InputError(f"unknown method {method!r}")

    u = np.asarray(rm.u)
    eta = np.zeros_like(x.values)
    history = []
    resid = np.inf
    for it in range(1, max_iter + 1):
        new = picard_step(x.values, u, eta)
        resid = float(np.max(np.abs(new - eta)))
        history.append(resid)
        eta = new
        if resid < tol and _distance_bound(history) < 0.5 * tol:
            y = x.values + eta @ np.asarray(rm.r).T
            return SkorokhodSolution(
                DiscretePath(x.times, eta), DiscretePath(x.times, y), it, resid, tuple(history)
            )
    raise ConvergenceError("Skorokhod Picard iteration did not converge", resid, max_iter)


def stagnation_fixed_point(x: DiscretePath, rm: ReflectionMatrix, max_iter: int = 1_000_000) -> np.ndarray:
    """Iterate the sup-recursion from zero until the iterate stops changing.

    Reference regulator for checking ``solve_skorokhod``; slow but free of
    any stopping heuristic.
    """
    _check_input(x, rm)
    u = np.asarray(rm.u)
    eta = np.zeros_like(x.values)
    for _ in range(max_iter):
        new = picard_step(x.values, u, eta)
        if np.array_equal(new, eta):
            return eta
        eta = new
    raise ConvergenceError("sup-recursion did not stagnate", float("nan"), max_iter)


def skorokhod_lipschitz_probe(x1: DiscretePath, x2: DiscretePath, rm: ReflectionMatrix, **kw) -> float:
    """Ratio ``(|eta1 - eta2|_T + |y1 - y2|_T) / |x1 - x2|_T`` in sup norms.

    A lower bound for the Lipschitz constant of the Skorokhod map.
    """
    if x1.times.shape != x2.times.shape or not np.array_equal(x1.times, x2.times):
        raise InputError("paths must share the same time grid")
    denom = float(np.max(np.abs(x1.values - x2.values)))
    if denom == 0.0:
        raise InputError("identical inputs give a zero denominator")
    s1 = solve_skorokhod(x1, rm, **kw)
    s2 = solve_skorokhod(x2, rm, **kw)
    num = float(np.max(np.abs(s1.eta.values - s2.eta.values))) + float(
        np.max(np.abs(s1.y.values - s2.y.values))
    )
    return num / denom

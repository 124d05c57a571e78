"""Model parameters and the fixed matrices of the gap and velocity dynamics.

Gap dynamics are written as ``Z = Gamma_2(Z0 - e1 * int V + A B)`` where the
Skorokhod map is taken with respect to the reflection matrix ``R``.  This
module builds ``R``, ``U = I - R``, ``W = R^{-1}`` and the drift matrix ``A``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class ModelParams:
    """Particle count ``n``, gravity ``g`` and the initial velocity/gaps."""

    n: int
    g: float
    v0: float = 0.0
    z0: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise InputError(f"n must be a positive integer, got {self.n!r}")
        if not np.isfinite(self.g) or self.g <= 0:
            raise InputError(f"g must be positive, got {self.g!r}")
        if not np.isfinite(self.v0):
            raise InputError(f"v0 must be finite, got {self.v0!r}")
        z0 = tuple(float(z) for z in self.z0) if len(self.z0) else (0.0,) * int(self.n)
        if len(z0) != self.n:
            raise InputError(f"z0 must have {self.n} entries, got {len(z0)}")
        if any(not np.isfinite(z) or z < 0 for z in z0):
            raise InputError(f"z0 entries must be finite and nonnegative, got {z0}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "g", float(self.g))
        object.__setattr__(self, "v0", float(self.v0))
        object.__setattr__(self, "z0", z0)

    def with_initial(self, v0: float, z0) -> "ModelParams":
        return ModelParams(self.n, self.g, float(v0), tuple(float(z) for z in z0))


@dataclass(frozen=True, eq=False)
class ReflectionMatrix:
    r: np.ndarray
    w: np.ndarray
    u: np.ndarray

    @property
    def n(self) -> int:
        return self.r.shape[0]


@dataclass(frozen=True, eq=False)
class DriftMatrix:
    a: np.ndarray
    a_inv: np.ndarray


def _check_n(n) -> int:
    if int(n) != n or n < 1:
        raise InputError(f"matrix size must be a positive integer, got {n!r}")
    return int(n)


def _frozen(m: np.ndarray) -> np.ndarray:
    m = np.ascontiguousarray(m, dtype=np.float64)
    m.setflags(write=False)
    return m


def build_reflection_matrix(n: int) -> ReflectionMatrix:
    """Return ``R``, its inverse ``W`` and ``U = I - R`` for ``n`` gaps.

    ``R`` has unit diagonal and -1/2 on both off-diagonals, except the
    entry coupling gap 2 to the first local time, which is -1.
    """
    n = _check_n(n)
    r = np.eye(n)
    for i in range(n - 1):
        r[i, i + 1] = -0.5
        r[i + 1, i] = -0.5
    if n >= 2:
        r[1, 0] = -1.0
    w = np.linalg.solve(r, np.eye(n))
    # W is entrywise nonnegative in exact arithmetic; LU leaves -0.0 / 1e-17 dust.
    w[np.abs(w) < 1e-13] = 0.0
    return ReflectionMatrix(r=_frozen(r), w=_frozen(w), u=_frozen(np.eye(n) - r))


def build_drift_matrix(n: int) -> DriftMatrix:
    """Lower-bidiagonal ``A`` (1 on the diagonal, -1 below) and its inverse."""
    n = _check_n(n)
    a = np.eye(n) - np.eye(n, k=-1)
    a_inv = np.tril(np.ones((n, n)))
    if not np.array_equal(a @ a_inv, np.eye(n)):
        raise AssertionError("A times its lower-triangular ones inverse is not the identity")
    return DriftMatrix(a=_frozen(a), a_inv=_frozen(a_inv))


def spectral_radius(m: np.ndarray, tol: float = 1e-8, max_iter: int = 1_000_000) -> float:
    """Spectral radius of a nonnegative matrix by power iteration.

    Uses ``m + I`` as the iteration matrix so that periodic (bipartite)
    nonnegative matrices still converge; the shift is removed at the end.
    """
    m = np.asarray(m, dtype=float)
    if np.any(m < 0):
        raise InputError("power iteration here assumes a nonnegative matrix")
    k = m.shape[0]
    shifted = m + np.eye(k)
    x = np.ones(k) / k
    lam = 0.0
    for _ in range(max_iter):
        y = shifted @ x
        lam_new = y.sum() / x.sum()
        y /= y.sum()
        if abs(lam_new - lam) < tol * 1e-3 and np.max(np.abs(y - x)) < tol:
            return lam_new - 1.0
        x, lam = y, lam_new
    raise RuntimeError("power iteration did not converge")

"""Product-form stationary law of (V, Z_1..Z_N).

    pi(v, z) = c_pi exp(-(v - g/N)^2) prod_i exp(-c_i z_i),
    c_i = 2 g (N - i + 1) / N.

Besides density evaluation and exact sampling, this module checks the
interior PDE and boundary conditions that characterise the stationary
density, using closed-form derivatives of the product density.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import InputError
from .model import ModelParams
from .rng import DOMAIN_STATIONARY, stream


@dataclass(frozen=True, eq=False)
class StationaryLaw:
    n: int
    g: float
    mean_v: float
    var_v: float
    rates: np.ndarray
    c_pi: float

    def log_density(self, v, z):
        z = np.asarray(z, dtype=float)
        return np.log(self.c_pi) - (np.asarray(v) - self.mean_v) ** 2 - z @ self.rates


@dataclass(frozen=True)
class BarResidual:
    interior: float
    boundary: tuple[float, ...]
    identity: float

    def max_pde(self) -> float:
        return max((self.interior,) + tuple(self.boundary))


def gap_rates(n: int, g: float) -> np.ndarray:
    i = np.arange(1, n + 1)
    return 2.0 * g * (n - i + 1) / n


def stationary_law(params: ModelParams) -> StationaryLaw:
    n, g = params.n, params.g
    rates = gap_rates(n, g)
    rates.setflags(write=False)
    # Gaussian factor integrates to sqrt(pi), each exponential to 1/c_i
    c_pi = float(np.prod(rates) / np.sqrt(np.pi))
    return StationaryLaw(n=n, g=g, mean_v=g / n, var_v=0.5, rates=rates, c_pi=c_pi)


def stationary_density(law: StationaryLaw, v: float, z) -> float:
    z = np.asarray(z, dtype=float)
    if z.shape != (law.n,):
        raise InputError(f"z must have {law.n} entries, got shape {z.shape}")
    if np.any(z < 0):
        raise InputError(f"z must be nonnegative, got {z}")
    return float(law.c_pi * np.exp(-((v - law.mean_v) ** 2) - float(z @ law.rates)))


def stationary_sample(law: StationaryLaw, seed: int, size: int | None = None):
    """Exact draws ``v ~ Normal(g/N, 1/2)``, ``z_i ~ Exponential(c_i)``.

    Uniforms from the counter-based stream keyed by ``seed`` are mapped by
    the inverse normal and inverse exponential CDFs.  With ``size=None``
    returns a scalar ``v`` and an ``n``-vector ``z``; otherwise arrays of
    shape ``(size,)`` and ``(size, n)``.
    """
    m = 1 if size is None else int(size)
    u = stream(seed, DOMAIN_STATIONARY).random((m, law.n + 1))
    v = law.mean_v + np.sqrt(law.var_v) * ndtri(u[:, 0])
    z = -np.log1p(-u[:, 1:]) / law.rates
    if size is None:
        return float(v[0]), z[0]
    return v, z


def h_matrix(n: int) -> np.ndarray:
    """Integer diffusion coefficients of the gap process."""
    h = 2 * np.eye(n, dtype=np.int64) - np.eye(n, k=1, dtype=np.int64) - np.eye(n, k=-1, dtype=np.int64)
    h[0, 0] = 1
    return h


def kronecker_identity(n: int) -> list[int]:
    """``sum_j h_ij (N - j + 1)`` for each ``i``, in exact integer arithmetic."""
    h = h_matrix(n)
    weights = [n - j for j in range(n)]
    return [sum(int(h[i, j]) * weights[j] for j in range(n)) for i in range(n)]


def identity_residual(n: int, g: float) -> float:
    c = gap_rates(n, g)
    return abs(0.5 * float(c @ h_matrix(n) @ c) - 2.0 * g * g / n)


def _derivatives(law: StationaryLaw, v: float, z: np.ndarray):
    pi = law.c_pi * np.exp(-((v - law.mean_v) ** 2) - float(z @ law.rates))
    d_v = -2.0 * (v - law.mean_v) * pi
    d_z = -law.rates * pi
    d_zz = np.outer(law.rates, law.rates) * pi
    return pi, d_v, d_z, d_zz


def _fd_derivatives(law: StationaryLaw, v: float, z: np.ndarray, step: float):
    """Central differences of the unnormalised-then-scaled density.

    The density is evaluated through its formula directly so that faces
    ``z_i = 0`` can be differenced across.
    """
    def f(vv, zz):
        return law.c_pi * np.exp(-((vv - law.mean_v) ** 2) - float(zz @ law.rates))

    n = law.n
    pi = f(v, z)
    d_v = (f(v + step, z) - f(v - step, z)) / (2 * step)
    eye = np.eye(n) * step
    d_z = np.array([(f(v, z + eye[i]) - f(v, z - eye[i])) / (2 * step) for i in range(n)])
    d_zz = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            d_zz[i, j] = (f(v, z + eye[i] + eye[j]) - f(v, z + eye[i] - eye[j])
                          - f(v, z - eye[i] + eye[j]) + f(v, z - eye[i] - eye[j])) / (4 * step * step)
    return pi, d_v, d_z, d_zz


def _interior_term(law, v, pi, d_v, d_z, d_zz, h):
    # (1/2) sum h_ij d2pi/dz_i dz_j - g dpi/dv + d(v pi)/dz_1
    return 0.5 * float(np.sum(h * d_zz)) - law.g * d_v + v * d_z[0]


def _face_term(law, i, v, pi, d_v, d_z):
    n = law.n
    if i == 0:
        val = 2.0 * v * pi + d_z[0] + d_v
        if n >= 2:
            val -= d_z[1]
        return val
    if i < n - 1:
        return -d_z[i - 1] + 2.0 * d_z[i] - d_z[i + 1]
    return -d_z[n - 2] + 2.0 * d_z[n - 1]


def verify_bar_identities(params: ModelParams, probe_points, method: str = "exact",
                          fd_step: float = 1e-5) -> BarResidual:
    """Residuals of the stationary interior PDE and its boundary conditions.

    ``probe_points`` is a sequence of ``(v, z)``.  Points with every
    ``z_i > 0`` are interior probes; a point with ``z_i == 0`` is a probe of
    face ``i``.  Every face and the interior must be probed.  With
    ``method="fd"`` derivatives come from central differences of step
    ``fd_step`` instead of closed forms.
    """
    law = stationary_law(params)
    n = law.n
    h = h_matrix(n).astype(float)
    if method == "exact":
        deriv = _derivatives
    elif method == "fd":
        def deriv(law_, v_, z_):
            return _fd_derivatives(law_, v_, z_, fd_step)
    else:
        raise InputError(f"unknown method {method!r}")

    interior = []
    faces: list[list[float]] = [[] for _ in range(n)]
    for v, z in probe_points:
        z = np.asarray(z, dtype=float)
        if z.shape != (n,):
            raise InputError(f"probe z must have {n} entries, got shape {z.shape}")
        if np.any(z < 0):
            raise InputError(f"probe z must be nonnegative, got {z}")
        pi, d_v, d_z, d_zz = deriv(law, float(v), z)
        on_face = np.flatnonzero(z == 0.0)
        if on_face.size == 0:
            interior.append(abs(_interior_term(law, float(v), pi, d_v, d_z, d_zz, h)))
        for i in on_face:
            faces[i].append(abs(_face_term(law, int(i), float(v), pi, d_v, d_z)))
    if not interior:
        raise InputError("probe set has no interior point (all z_i > 0)")
    for i, vals in enumerate(faces):
        if not vals:
            raise InputError(f"probe set has no point on face z{i + 1} = 0")
    return BarResidual(
        interior=float(max(interior)),
        boundary=tuple(float(max(vals)) for vals in faces),
        identity=identity_residual(n, law.g),
    )


def default_probes(n: int, count: int, seed: int, scale: float = 1.0):
    """``count`` random interior probes plus ``count`` probes on each face."""
    rng = stream(seed, DOMAIN_STATIONARY, 1)
    probes = []
    for _ in range(count):
        probes.append((float(rng.normal(0.0, 1.5)), rng.exponential(scale, n) + 1e-3))
    for i in range(n):
        for _ in range(count):
            z = rng.exponential(scale, n)
            z[i] = 0.0
            probes.append((float(rng.normal(0.0, 1.5)), z))
    return probes

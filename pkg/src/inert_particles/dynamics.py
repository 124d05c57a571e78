"""Simulators for the velocity/gap process and the unranked particle system.

``simulate_gap_process`` integrates

    V(t) = v0 + g t - L1(t)
    (L, Z) = Skorokhod map of  Z0 - e1 int_0^. V ds + A B(.)

window by window: on each window the velocity path is found by Picard
iteration, each iterate reflecting the driving path with the causal
Skorokhod sweep.  ``simulate_unranked`` integrates the original system in
which each Brownian particle is reflected off the inert one; the ranked gaps
of the two simulators share a law.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import ConvergenceError, InputError
from .model import ModelParams, build_reflection_matrix
from .rng import BrownianIncrements

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = 0.1
DEFAULT_PICARD_TOL = 1e-8
DEFAULT_MAX_PICARD = 200
CHUNK_STEPS = 1 << 16


@dataclass(frozen=True)
class SimGrid:
    """Uniform time grid.  ``refine = k`` draws the Brownian path on the grid
    of step ``dt * 2**k`` and refines it by Brownian bridge, which couples a
    run at ``dt`` with one at ``2**k * dt`` under the same seed."""

    dt: float
    t_end: float
    refine: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise InputError(f"dt must be positive, got {self.dt!r}")
        if not self.t_end >= self.dt:
            raise InputError(f"t_end must be at least dt, got t_end={self.t_end!r}, dt={self.dt!r}")
        if self.refine < 0 or int(self.refine) != self.refine:
            raise InputError(f"refine must be a nonnegative integer, got {self.refine!r}")
        if abs(self.steps * self.dt - self.t_end) > 1e-9:
            raise InputError(f"t_end={self.t_end} is not a whole number of steps dt={self.dt}")
        if self.steps % (1 << int(self.refine)):
            raise InputError(f"step count {self.steps} not divisible by 2**refine")

    @property
    def steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Recorded history of (V, Z, L) plus the inert position and Brownian drivers.

    Rows are the grid points whose index is a multiple of ``record_every``
    (and always the last one).  ``bstar`` and ``vsup`` are running maxima
    tracked at full grid resolution: ``bstar[:, 0] = max(-B_1)``,
    ``bstar[:, i] = max(B_i - B_{i+1})`` (1-based ``i``) and
    ``vsup = max(V^+)``.
    """

    grid: SimGrid
    params: ModelParams
    seed: int
    t: np.ndarray
    v: np.ndarray
    x0: np.ndarray
    z: np.ndarray
    l: np.ndarray
    b: np.ndarray
    bstar: np.ndarray
    vsup: np.ndarray
    record_every: int
    picard_tol: float
    picard_iterations: int
    windows_shrunk: int
    stopped_at: float | None = None

    @property
    def n(self) -> int:
        return self.params.n

    def ranked_positions(self) -> np.ndarray:
        """Positions X_(0..n) from the inert position plus cumulative gaps."""
        return np.column_stack([self.x0, self.x0[:, None] + np.cumsum(self.z, axis=1)])

    def positions_from_drivers(self) -> np.ndarray:
        """X_(0..n) built from B and L alone, without using the stored gaps.

        ``X_(1) = x_1 + B_1 - L_2/2 + L_1`` and
        ``X_(i) = x_i + B_i - L_{i+1}/2 + L_i/2`` for ``i >= 2``.
        """
        n = self.n
        x_init = np.concatenate([[0.0], np.cumsum(self.params.z0)])
        lpad = np.column_stack([self.l, np.zeros(len(self.t))])
        out = np.empty((len(self.t), n + 1))
        out[:, 0] = self.x0
        for i in range(1, n + 1):
            push = lpad[:, i - 1] if i == 1 else 0.5 * lpad[:, i - 1]
            out[:, i] = x_init[i] + self.b[:, i - 1] - 0.5 * lpad[:, i] + push
        return out


@dataclass(frozen=True, eq=False)
class UnrankedTrajectory:
    grid: SimGrid
    params: ModelParams
    seed: int
    t: np.ndarray
    x: np.ndarray
    ell: np.ndarray
    v: np.ndarray
    record_every: int

    @property
    def n(self) -> int:
        return self.params.n

    def ordered_gaps(self) -> np.ndarray:
        xs = np.sort(self.x, axis=1, kind="stable")
        return np.diff(xs, axis=1)

    @property
    def z(self) -> np.ndarray:
        """Gaps between consecutive ranked positions, as in ``Trajectory.z``."""
        return self.ordered_gaps()


def _window_steps(window: float, dt: float) -> int:
    if not window > 0:
        raise InputError(f"window must be positive, got {window!r}")
    return max(1, int(round(window / dt)))


def _aligned_chunk(chunk_steps: int, wsteps: int, refine: int) -> int:
    # chunks hold whole windows, so window edges sit on a fixed global grid
    unit = wsteps * (1 << refine)
    return max(1, int(chunk_steps) // unit) * unit


def simulate_gap_process(
    params: ModelParams,
    grid: SimGrid,
    seed: int,
    *,
    window: float = DEFAULT_WINDOW,
    picard_tol: float = DEFAULT_PICARD_TOL,
    max_picard: int = DEFAULT_MAX_PICARD,
    record_every: int = 1,
    chunk_steps: int = CHUNK_STEPS,
    stop_level: float | None = None,
) -> Trajectory:
    """Simulate (V, Z, L) from ``(params.v0, params.z0)`` on ``grid``.

    Brownian increments come from the counter-based streams keyed by
    ``seed``; the same ``(params, grid, seed)`` always gives a bit-identical
    trajectory.  Raises ``ConvergenceError`` if a window and its half both
    fail to converge.

    With ``stop_level`` set, the run ends at the first grid step where V
    reaches that level from the side of ``v0``; ``grid.t_end`` is then only a
    cap and ``Trajectory.stopped_at`` holds the passage time.
    """
    n = params.n
    rm = build_reflection_matrix(n)
    steps = grid.steps
    record_every = int(record_every)
    if record_every < 1:
        raise InputError("record_every must be >= 1")
    wsteps = _window_steps(window, grid.dt)
    n_rec = steps // record_every + 2

    out_t = np.empty(n_rec)
    out_v = np.empty(n_rec)
    out_x0 = np.empty(n_rec)
    out_z = np.empty((n_rec, n))
    out_l = np.empty((n_rec, n))
    out_b = np.empty((n_rec, n))
    out_bstar = np.empty((n_rec, n))
    out_vsup = np.empty(n_rec)

    z = np.array(params.z0, dtype=float)
    l = np.zeros(n)
    b = np.zeros(n)
    bstar = np.zeros(n)
    state = np.array([0.0, max(params.v0, 0.0), 0.0, 0.0])
    out_t[0], out_v[0], out_x0[0] = 0.0, params.v0, 0.0
    out_z[0], out_l[0], out_b[0], out_bstar[0] = z, 0.0, 0.0, 0.0
    out_vsup[0] = state[1]
    n_out = 1

    if stop_level is None:
        stop_sign, stop_level = 0, 0.0
    else:
        stop_sign = 1 if params.v0 < stop_level else -1
    stopped_at = 0.0 if stop_sign and params.v0 == stop_level else None

    noise = BrownianIncrements(seed, n, grid.dt, grid.refine)
    k = 0
    for db in noise.chunks(steps, _aligned_chunk(chunk_steps, wsteps, grid.refine)):
        if stopped_at is not None:
            break
        status, n_out, failed, resid = _kernels.gap_chunk(
            db, np.asarray(rm.r), params.g, grid.dt, params.v0, k, steps, wsteps,
            picard_tol, max_picard, record_every, z, l, b, bstar, state,
            out_t, out_v, out_x0, out_z, out_l, out_b, out_bstar, out_vsup, n_out,
            float(stop_level), stop_sign,
        )
        if status == _kernels.STATUS_STOPPED:
            stopped_at = failed * grid.dt
            break
        if status != _kernels.STATUS_OK:
            raise ConvergenceError(
                f"velocity Picard iteration failed in the window starting at step {failed} "
                f"(t={failed * grid.dt:.6g}) even after halving it",
                resid, max_picard,
            )
        k += db.shape[0]
    if state[3]:
        logger.info("gap process: %d windows needed halving", int(state[3]))

    s = slice(0, n_out)
    return Trajectory(
        grid=grid, params=params, seed=int(seed),
        t=out_t[s].copy(), v=out_v[s].copy(), x0=out_x0[s].copy(),
        z=out_z[s].copy(), l=out_l[s].copy(), b=out_b[s].copy(),
        bstar=out_bstar[s].copy(), vsup=out_vsup[s].copy(),
        record_every=record_every, picard_tol=picard_tol,
        picard_iterations=int(state[2]), windows_shrunk=int(state[3]),
        stopped_at=stopped_at,
    )


def simulate_unranked(
    params: ModelParams,
    grid: SimGrid,
    seed: int,
    x_init,
    *,
    window: float = DEFAULT_WINDOW,
    picard_tol: float = DEFAULT_PICARD_TOL,
    max_picard: int = DEFAULT_MAX_PICARD,
    record_every: int = 1,
    chunk_steps: int = CHUNK_STEPS,
) -> UnrankedTrajectory:
    """Simulate the inert particle and ``n`` Brownian particles directly.

    ``x_init = (x_0, ..., x_n)`` must be sorted.  Brownian particle ``i``
    uses the stream keyed ``(seed, i)``, the same key that drives ranked
    coordinate ``i`` in ``simulate_gap_process``.
    """
    n = params.n
    xpos = np.asarray(x_init, dtype=float)
    if xpos.shape != (n + 1,):
        raise InputError(f"x_init must have {n + 1} entries, got shape {xpos.shape}")
    if np.any(np.diff(xpos) < 0):
        raise InputError("x_init must be sorted: x_0 <= x_1 <= ... <= x_n")
    steps = grid.steps
    record_every = int(record_every)
    if record_every < 1:
        raise InputError("record_every must be >= 1")
    wsteps = _window_steps(window, grid.dt)
    n_rec = steps // record_every + 2

    out_t = np.empty(n_rec)
    out_v = np.empty(n_rec)
    out_x = np.empty((n_rec, n + 1))
    out_ell = np.empty((n_rec, n))
    out_t[0], out_v[0], out_x[0], out_ell[0] = 0.0, params.v0, xpos, 0.0
    n_out = 1

    w = np.zeros(n)
    ell = np.zeros(n)
    state = np.zeros(3)
    noise = BrownianIncrements(seed, n, grid.dt, grid.refine)
    k = 0
    for dw in noise.chunks(steps, _aligned_chunk(chunk_steps, wsteps, grid.refine)):
        status, n_out, failed, resid = _kernels.unranked_chunk(
            dw, params.g, grid.dt, params.v0, xpos, k, steps, wsteps, picard_tol, max_picard,
            record_every, w, ell, state, out_t, out_v, out_x, out_ell, n_out,
        )
        if status != _kernels.STATUS_OK:
            raise ConvergenceError(
                f"velocity Picard iteration failed in the window starting at step {failed} "
                f"(t={failed * grid.dt:.6g}) even after halving it",
                resid, max_picard,
            )
        k += dw.shape[0]

    s = slice(0, n_out)
    return UnrankedTrajectory(
        grid=grid, params=params, seed=int(seed), t=out_t[s].copy(), x=out_x[s].copy(),
        ell=out_ell[s].copy(), v=out_v[s].copy(), record_every=record_every,
    )


def rank_positions(x) -> tuple[np.ndarray, np.ndarray]:
    """Stable ascending sort; returns ``(permutation, sorted values)``."""
    x = np.asarray(x, dtype=float)
    perm = np.argsort(x, kind="stable")
    return perm, x[perm]


def local_time_upper_bound_check(traj: Trajectory, tol: float = 1e-9) -> tuple[bool, float]:
    """Check ``L_i(t) <= W_i1 t max_{s<=t} V(s)^+ + sum_j W_ij B*_j(t)``.

    Returns ``(passed, worst_slack)`` where the slack is bound minus local
    time, minimised over recorded steps and coordinates.  The inert position
    is the integral of the V path fed to the last Picard sweep, which
    differs from the stored V by less than ``picard_tol``; that gap is
    added to the tolerance.
    """
    w = build_reflection_matrix(traj.n).w
    if traj.record_every == 1:
        vsup = np.maximum.accumulate(np.maximum(traj.v, 0.0))
        bs = np.empty_like(traj.b)
        bs[:, 0] = -traj.b[:, 0]
        bs[:, 1:] = traj.b[:, :-1] - traj.b[:, 1:]
        bstar = np.maximum.accumulate(np.maximum(bs, 0.0), axis=0)
    else:
        vsup, bstar = traj.vsup, traj.bstar
    t = traj.t[:, None]
    bound = w[:, 0][None, :] * t * vsup[:, None] + bstar @ w.T
    slack = bound - traj.l
    allow = tol + traj.picard_tol * t * w[:, 0][None, :]
    worst = float(np.min(slack))
    return bool(np.all(slack >= -allow)), worst


def write_trajectory_csv(traj: Trajectory, path, every: int = 1) -> Path:
    """Write ``t,v,x0,z1..zN,l1..lN`` rows with 17 significant digits."""
    path = Path(path)
    n = traj.n
    header = ",".join(["t", "v", "x0"] + [f"z{i}" for i in range(1, n + 1)]
                      + [f"l{i}" for i in range(1, n + 1)])
    idx = np.arange(0, len(traj.t), int(every))
    data = np.column_stack([traj.t, traj.v, traj.x0, traj.z, traj.l])[idx]
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=header, comments="")
    return path


def write_unranked_csv(traj: UnrankedTrajectory, path, every: int = 1) -> Path:
    """Write ``t,v,x0..xN,ell1..ellN`` rows with 17 significant digits."""
    path = Path(path)
    n = traj.params.n
    header = ",".join(["t", "v"] + [f"x{i}" for i in range(n + 1)]
                      + [f"ell{i}" for i in range(1, n + 1)])
    idx = np.arange(0, len(traj.t), int(every))
    data = np.column_stack([traj.t, traj.v, traj.x, traj.ell])[idx]
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=header, comments="")
    return path


def read_trajectory_csv(path) -> dict[str, np.ndarray]:
    """Columns of a trajectory CSV keyed by header name."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    with open(path) as fh:
        names = fh.readline().strip().split(",")
    return {name: data[:, i] for i, name in enumerate(names)}

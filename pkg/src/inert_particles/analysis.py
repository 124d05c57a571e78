"""Estimators that turn trajectories into checkable numbers.

Long-run slopes of positions and local times, Kolmogorov-Smirnov distances
to the stationary marginals, the collision-intensity ordering, hitting-time
tail fits and a marginal-distance proxy for convergence to stationarity.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .dynamics import Trajectory
from .errors import InputError, InsufficientDataError
from .model import ModelParams
from .stationary import StationaryLaw

MIN_HORIZON = 100.0
MIN_KS_SAMPLES = 100
MIN_TAIL_EVENTS = 20
MIN_ORDERING_REPLICAS = 10
MIN_DECAY_REPLICAS = 100
MIN_DECAY_SLICES = 4
DEFAULT_THIN = 1.0
TAIL_QUANTILES = (0.5, 0.95)


@dataclass(frozen=True)
class SlopeEstimate:
    value: float
    stderr: float
    window: tuple[float, float]
    target: float | None = None


@dataclass(frozen=True)
class KsReport:
    statistic: float
    n_samples: int
    target: str


@dataclass(frozen=True)
class TailFit:
    rate: float
    r2: float
    n_events: int
    degenerate: bool = False
    points: tuple = field(default=(), repr=False)


# --------------------------------------------------------------------------
# closed-form targets


@dataclass(frozen=True)
class Normal:
    mu: float
    var: float

    def cdf(self, x):
        return ndtr((np.asarray(x, dtype=float) - self.mu) / np.sqrt(self.var))

    def __str__(self):
        return f"Normal({self.mu:.17g}, {self.var:.17g})"


@dataclass(frozen=True)
class Exponential:
    rate: float

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x > 0, -np.expm1(-self.rate * np.maximum(x, 0.0)), 0.0)

    def __str__(self):
        return f"Exponential({self.rate:.17g})"


_TARGET_RE = re.compile(r"^\s*(normal|exponential)\s*\(([^)]*)\)\s*$", re.IGNORECASE)


def parse_target(target) -> Normal | Exponential:
    """Accept a target object or a string ``normal(mu, var)`` / ``exponential(rate)``."""
    if isinstance(target, (Normal, Exponential)):
        return target
    m = _TARGET_RE.match(str(target))
    if not m:
        raise InputError(f"unsupported target law {target!r}")
    name = m.group(1).lower()
    try:
        args = [float(a) for a in m.group(2).split(",")]
    except ValueError:
        raise InputError(f"bad parameters in target law {target!r}") from None
    if name == "normal" and len(args) == 2 and args[1] > 0:
        return Normal(*args)
    if name == "exponential" and len(args) == 1 and args[0] > 0:
        return Exponential(args[0])
    raise InputError(f"bad parameters in target law {target!r}")


# --------------------------------------------------------------------------
# law of large numbers


def lln_targets(params: ModelParams) -> dict[str, float]:
    n, g = params.n, params.g
    out = {f"X{i}": g / n for i in range(n + 1)}
    out["L1"] = g
    for i in range(2, n + 1):
        out[f"L{i}"] = 2.0 * (n - i + 1) * g / n
    return out


def _slope(t: np.ndarray, f: np.ndarray, lo: int, edges: np.ndarray, target) -> SlopeEstimate:
    value = (f[-1] - f[lo]) / (t[-1] - t[lo])
    batch = np.diff(f[edges]) / np.diff(t[edges])
    stderr = float(np.std(batch, ddof=1) / np.sqrt(batch.size)) if batch.size > 1 else float("nan")
    return SlopeEstimate(float(value), stderr, (float(t[lo]), float(t[-1])), target)


def lln_slopes(traj: Trajectory, burn_frac: float = 0.1, n_batches: int = 10) -> dict[str, SlopeEstimate]:
    """Slopes of X_(0..N) and L_1..L_N over the post-burn-in window.

    Each value is the endpoint ratio ``(f(T) - f(t_lo)) / (T - t_lo)``; the
    standard error comes from ``n_batches`` equal sub-windows.
    """
    if not 0.0 <= burn_frac < 1.0:
        raise InputError(f"burn_frac must lie in [0, 1), got {burn_frac}")
    t = traj.t
    horizon = t[-1]
    if horizon < MIN_HORIZON:
        raise InsufficientDataError(
            f"horizon {horizon:g} is below the {MIN_HORIZON:g} time units needed for slope estimates"
        )
    lo = int(np.searchsorted(t, burn_frac * horizon - 1e-12))
    grid = np.linspace(t[lo], horizon, n_batches + 1)
    edges = np.unique(np.clip(np.searchsorted(t, grid - 1e-12), lo, len(t) - 1))
    targets = lln_targets(traj.params)
    x = traj.ranked_positions()
    out = {}
    for i in range(traj.n + 1):
        out[f"X{i}"] = _slope(t, x[:, i], lo, edges, targets[f"X{i}"])
    for i in range(traj.n):
        out[f"L{i + 1}"] = _slope(t, traj.l[:, i], lo, edges, targets[f"L{i + 1}"])
    return out


# --------------------------------------------------------------------------
# collision ordering


def ordering_fraction(final_local_times) -> float:
    """Fraction of rows ``(L_1(T), ..., L_N(T))`` with ``L_2(T) > L_1(T)``."""
    fl = np.asarray(final_local_times, dtype=float)
    if fl.ndim != 2:
        raise InputError(f"expected a (replicas, N) array, got shape {fl.shape}")
    if fl.shape[1] <= 2:
        raise InputError(f"L2 > L1 ordering is only asserted for N >= 3, got N={fl.shape[1]}")
    if fl.shape[0] < MIN_ORDERING_REPLICAS:
        raise InsufficientDataError(
            f"need at least {MIN_ORDERING_REPLICAS} replicas, got {fl.shape[0]}"
        )
    return float(np.mean(fl[:, 1] > fl[:, 0]))


def collision_ordering_test(replicas: Sequence[Trajectory]) -> float:
    """Fraction of replicas whose final L_2 exceeds their final L_1."""
    if not replicas:
        raise InsufficientDataError("no replicas given")
    return ordering_fraction(np.array([tr.l[-1] for tr in replicas]))


# --------------------------------------------------------------------------
# Kolmogorov-Smirnov


def ks_statistic(samples, cdf) -> float:
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    f = cdf(x)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))


def ks_distance(samples, target) -> KsReport:
    law = parse_target(target)
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size < MIN_KS_SAMPLES:
        raise InsufficientDataError(f"need at least {MIN_KS_SAMPLES} samples, got {samples.size}")
    return KsReport(ks_statistic(samples, law.cdf), int(samples.size), str(law))


def ks_two_sample(a, b) -> float:
    """Two-sample KS statistic ``sup |F_a - F_b|``."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_critical(n: int, alpha: float = 0.01) -> float:
    """Asymptotic one-sample KS critical value ``sqrt(-log(alpha/2)/2) / sqrt(n)``."""
    return float(np.sqrt(-0.5 * np.log(alpha / 2.0)) / np.sqrt(n))


def stationary_marginals(law: StationaryLaw) -> list[Normal | Exponential]:
    return [Normal(law.mean_v, law.var_v)] + [Exponential(float(c)) for c in law.rates]


# --------------------------------------------------------------------------
# stationary validation


def _lattice_rows(t: np.ndarray, start: float, thin: float, dt: float) -> np.ndarray:
    times = np.arange(start, t[-1] + 0.5 * dt, thin)
    idx = np.clip(np.searchsorted(t, times - 0.5 * dt), 0, len(t) - 1)
    ok = np.abs(t[idx] - times) <= 0.5 * dt
    return np.unique(idx[ok])


def pooled_samples(replicas: Sequence[Trajectory], burn_in: float, thin: float) -> tuple[np.ndarray, np.ndarray]:
    """V and Z values at times ``burn_in + k * thin`` pooled over replicas."""
    vs, zs = [], []
    for tr in replicas:
        rows = _lattice_rows(tr.t, burn_in, thin, tr.grid.dt)
        vs.append(tr.v[rows])
        zs.append(tr.z[rows])
    return np.concatenate(vs), np.concatenate(zs)


def stationary_validation(
    replicas: Sequence[Trajectory], law: StationaryLaw, burn_in: float, thin: float = DEFAULT_THIN
) -> list[KsReport]:
    """One KS report for V and each Z_i against the stationary marginals."""
    if not thin > 0:
        raise InputError(f"thin must be positive, got {thin}")
    if not replicas:
        raise InsufficientDataError("no replicas given")
    horizon = min(tr.t[-1] for tr in replicas)
    if burn_in >= horizon:
        raise InputError(f"burn_in {burn_in} must be below the horizon {horizon}")
    v, z = pooled_samples(replicas, burn_in, thin)
    if v.size < MIN_KS_SAMPLES:
        raise InsufficientDataError(
            f"only {v.size} pooled samples after burn-in and thinning; need {MIN_KS_SAMPLES}"
        )
    targets = stationary_marginals(law)
    cols = [v] + [z[:, i] for i in range(law.n)]
    return [ks_distance(c, tgt) for c, tgt in zip(cols, targets)]


def autocorrelation(x, lag: int) -> float:
    x = np.asarray(x, dtype=float)
    if lag <= 0 or lag >= x.size - 1:
        raise InputError(f"lag {lag} out of range for {x.size} samples")
    a, b = x[:-lag] - x.mean(), x[lag:] - x.mean()
    return float(np.sum(a * b) / np.sum((x - x.mean()) ** 2))


# --------------------------------------------------------------------------
# tails and decay


def _linear_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else float("nan")
    return float(slope), float(r2)


def first_passage_times(replicas: Sequence[Trajectory], level: float) -> np.ndarray:
    """First recorded time at which ``V - level`` changes sign (``inf`` if never)."""
    out = np.full(len(replicas), np.inf)
    for k, tr in enumerate(replicas):
        d = tr.v - level
        if d[0] == 0.0:
            out[k] = tr.t[0]
            continue
        crossed = np.flatnonzero(np.sign(d) != np.sign(d[0]))
        if crossed.size:
            out[k] = tr.t[crossed[0]]
    return out


def survival_tail_fit(times, n_total: int | None = None, quantiles=TAIL_QUANTILES) -> TailFit:
    """Fit ``log P(tau > t)`` linearly over the given quantile range of ``times``.

    Non-finite entries are censored (survive past the horizon) and count in
    the denominator of the survival function.
    """
    times = np.asarray(times, dtype=float)
    n_total = times.size if n_total is None else n_total
    hits = np.sort(times[np.isfinite(times)])
    if hits.size < MIN_TAIL_EVENTS:
        raise InsufficientDataError(
            f"only {hits.size} first-passage events; need {MIN_TAIL_EVENTS} for a tail fit"
        )
    if np.ptp(hits) == 0.0:
        return TailFit(float("nan"), float("nan"), int(hits.size), degenerate=True)
    lo, hi = np.quantile(hits, quantiles)
    surv = 1.0 - np.arange(1, hits.size + 1) / n_total
    sel = (hits >= lo) & (hits <= hi) & (surv > 0)
    xs, ys = hits[sel], np.log(surv[sel])
    if xs.size < 3 or np.ptp(xs) == 0.0:
        return TailFit(float("nan"), float("nan"), int(hits.size), degenerate=True)
    slope, r2 = _linear_fit(xs, ys)
    return TailFit(-slope, r2, int(hits.size), points=tuple(zip(xs.tolist(), ys.tolist())))


def hitting_time_tail(replicas: Sequence[Trajectory], level: float) -> TailFit:
    """Tail of the first passage of V to ``level`` across replicas."""
    taus = first_passage_times(replicas, level)
    return survival_tail_fit(taus, n_total=len(replicas))


def decay_distances(slices, law: StationaryLaw) -> list[tuple[float, float]]:
    """Coordinate-max KS distance to the stationary marginals at each slice.

    ``slices`` is a sequence of ``(t, v, z)`` with ``v`` of shape
    ``(replicas,)`` and ``z`` of shape ``(replicas, n)``.
    """
    targets = stationary_marginals(law)
    out = []
    for t, v, z in slices:
        z = np.asarray(z, dtype=float).reshape(len(v), law.n)
        cols = [np.asarray(v, dtype=float)] + [z[:, i] for i in range(law.n)]
        d = max(ks_statistic(c, tgt.cdf) for c, tgt in zip(cols, targets))
        out.append((float(t), d))
    return out


def ergodic_decay_proxy(slices, law: StationaryLaw) -> tuple[list[tuple[float, float]], TailFit]:
    """Marginal KS distance to stationarity over time and its exponential decay rate.

    The fitted rate is the negated slope of ``log distance`` against ``t``.
    This tracks marginals only, so it is a proxy for, not an estimate of,
    total-variation convergence.
    """
    slices = list(slices)
    if len(slices) < MIN_DECAY_SLICES:
        raise InsufficientDataError(f"need at least {MIN_DECAY_SLICES} time slices, got {len(slices)}")
    for t, v, _ in slices:
        if len(v) < MIN_DECAY_REPLICAS:
            raise InsufficientDataError(
                f"slice t={t} has {len(v)} replicas; need {MIN_DECAY_REPLICAS}"
            )
    curve = decay_distances(slices, law)
    ts = np.array([c[0] for c in curve])
    ds = np.array([c[1] for c in curve])
    slope, r2 = _linear_fit(ts, np.log(ds))
    n_events = sum(len(v) for _, v, _ in slices)
    return curve, TailFit(-slope, r2, n_events, points=tuple(curve))


def slices_from_replicas(replicas: Sequence[Trajectory], times: Sequence[float]):
    """Cross-replica ``(t, v, z)`` snapshots at the requested times."""
    out = []
    for t in times:
        vs, zs = [], []
        for tr in replicas:
            k = int(np.argmin(np.abs(tr.t - t)))
            if abs(tr.t[k] - t) > 0.5 * tr.grid.dt * tr.record_every + 1e-12:
                raise InputError(f"time {t} is not on the recorded grid")
            vs.append(tr.v[k])
            zs.append(tr.z[k])
        out.append((float(t), np.array(vs), np.array(zs)))
    return out


def noise_floor(n: int, alpha: float = 0.01) -> float:
    return ks_critical(n, alpha)


def decreasing_beyond_noise(distances: Sequence[float], floor: float) -> bool:
    """Each step either decreases strictly or stays within the noise floor."""
    d = list(distances)
    for a, b in zip(d, d[1:]):
        if not (b < a or max(a, b) <= floor):
            return False
    return True


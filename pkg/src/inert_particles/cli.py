"""Command-line entry point.

Each subcommand reads a YAML run configuration, runs the replicas it needs
(in parallel worker processes when ``--jobs > 1``), folds their summaries in
replica order and writes ``report.json`` plus any CSV data into ``--out``.
The exit status is 0 exactly when every check in the report passes.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from functools import partial
from pathlib import Path

import numpy as np

from . import analysis as an
from .config import ConfigError, RunConfig, load_config
from .dynamics import simulate_gap_process, simulate_unranked, write_trajectory_csv, write_unranked_csv
from .errors import ConvergenceError, InputError, InsufficientDataError
from .model import ModelParams, build_reflection_matrix
from .rng import DOMAIN_SOLVER_TEST, replica_seed, stream
from .skorokhod import DiscretePath, solve_skorokhod, stagnation_fixed_point
from .stationary import (
    default_probes, kronecker_identity, stationary_law, stationary_sample, verify_bar_identities,
)

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("simulate", "lln", "stationary-check", "ordering", "hitting", "decay", "skorokhod-test")
OP_TASKS = {"lln": ("lln",), "ordering": ("ordering",), "hitting": ("hitting",), "decay": ("decay",)}

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


# --------------------------------------------------------------------------
# per-replica work (runs in worker processes)


def _initial_params(cfg: RunConfig, seed: int) -> ModelParams:
    if cfg.init.kind == "stationary":
        v, z = stationary_sample(stationary_law(cfg.params), seed)
        return cfg.params.with_initial(v, tuple(z))
    return cfg.params


def run_replica(cfg: RunConfig, tasks: tuple[str, ...], out_dir: str | None, index: int) -> dict:
    """Simulate replica ``index`` and reduce it to what ``tasks`` need."""
    seed = replica_seed(cfg.base_seed, index)
    params = _initial_params(cfg, seed)
    solver = dict(window=cfg.window, picard_tol=cfg.picard_tol, max_picard=cfg.max_picard)
    out: dict = {"index": index}

    main = [t for t in tasks if t != "hitting"]
    if main:
        if cfg.init.kind == "unranked":
            traj = simulate_unranked(params, cfg.grid, seed, cfg.init.x,
                                     record_every=cfg.record_every, **solver)
        else:
            traj = simulate_gap_process(params, cfg.grid, seed, record_every=cfg.record_every, **solver)
        if "trajectory_csv" in tasks:
            path = Path(out_dir) / f"trajectory_{index:04d}.csv"
            if cfg.init.kind == "unranked":
                write_unranked_csv(traj, path)
            else:
                write_trajectory_csv(traj, path)
        if "lln" in tasks:
            est = an.lln_slopes(traj, burn_frac=cfg.burn_in / cfg.grid.t_end)
            out["lln"] = {k: (e.value, e.stderr, e.window) for k, e in est.items()}
        if "stationary" in tasks:
            out["stationary"] = an.pooled_samples([traj], cfg.burn_in, cfg.thin)
        if "ordering" in tasks:
            out["ordering"] = traj.l[-1].copy()
        if "decay" in tasks:
            out["decay"] = [(v[0], z[0]) for _, v, z in an.slices_from_replicas([traj], cfg.decay_slices)]

    if "hitting" in tasks:
        level = cfg.hitting_level
        traj = simulate_gap_process(params, cfg.grid, seed, record_every=cfg.grid.steps,
                                    stop_level=level, **solver)
        out["hitting"] = math.inf if traj.stopped_at is None else traj.stopped_at
    return out


def run_replicas(cfg: RunConfig, tasks: tuple[str, ...], out_dir, jobs: int) -> list[dict]:
    """Summaries for every replica, in replica order whatever the schedule."""
    fn = partial(run_replica, cfg, tasks, None if out_dir is None else str(out_dir))
    idx = range(cfg.replicas)
    if jobs <= 1 or cfg.replicas == 1:
        return [fn(i) for i in idx]
    with ProcessPoolExecutor(max_workers=min(jobs, cfg.replicas)) as pool:
        return list(pool.map(fn, idx))


# --------------------------------------------------------------------------
# report assembly


class Report:
    def __init__(self, op: str, cfg: RunConfig | None):
        self.op = op
        self.cfg = cfg
        self.estimates: list[dict] = []
        self.targets: list[dict] = []
        self.checks: list[dict] = []
        self.extra: dict = {}

    def estimate(self, analysis: str, name: str, value, **more):
        self.estimates.append({"analysis": analysis, "name": name, "value": value, **more})

    def target(self, analysis: str, name: str, value, **more):
        self.targets.append({"analysis": analysis, "name": name, "value": value, **more})

    def check(self, analysis: str, name: str, ok: bool, detail: str = ""):
        self.checks.append({"analysis": analysis, "name": name, "pass": bool(ok), "detail": detail})

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.checks)

    def to_dict(self) -> dict:
        cfg = self.cfg
        doc = {
            "op": self.op,
            "config_digest": cfg.digest() if cfg else None,
            "params_digest": cfg.params_digest() if cfg else None,
            "seed_set": {
                "base_seed": cfg.base_seed if cfg else None,
                "replicas": cfg.replicas if cfg else 0,
                "derivation": "replica_seed(base_seed, index)",
            },
            "estimates": self.estimates,
            "targets": self.targets,
            "checks": self.checks,
            "failures": [f"{c['analysis']}:{c['name']}" for c in self.checks if not c["pass"]],
            "pass": self.passed,
        }
        doc.update(self.extra)
        return _plain(doc)

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "report.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


def _plain(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def fold_lln(rep: Report, cfg: RunConfig, results: list[dict]):
    targets = an.lln_targets(cfg.params)
    ck = cfg.checks
    for name, target in targets.items():
        vals = np.array([r["lln"][name][0] for r in results])
        if vals.size > 1:
            stderr = float(np.std(vals, ddof=1) / np.sqrt(vals.size))
        else:
            stderr = results[0]["lln"][name][1]
        mean = float(np.mean(vals))
        tol = ck.lln_x_tol if name.startswith("X") else (ck.lln_l1_tol if name == "L1" else ck.lln_l_tol)
        rep.estimate("lln", name, mean, stderr=stderr, window=list(results[0]["lln"][name][2]))
        rep.target("lln", name, target, tolerance=tol)
        rep.check("lln", name, abs(mean - target) <= tol, f"|{mean:.6g} - {target:.6g}| <= {tol:g}")


def fold_stationary(rep: Report, cfg: RunConfig, results: list[dict]):
    law = stationary_law(cfg.params)
    v = np.concatenate([r["stationary"][0] for r in results])
    z = np.concatenate([r["stationary"][1] for r in results])
    if v.size < an.MIN_KS_SAMPLES:
        raise InsufficientDataError(
            f"only {v.size} pooled samples after burn-in and thinning; need {an.MIN_KS_SAMPLES}")
    names = ["V"] + [f"Z{i}" for i in range(1, law.n + 1)]
    cols = [v] + [z[:, i] for i in range(law.n)]
    for name, col, tgt in zip(names, cols, an.stationary_marginals(law)):
        ks = an.ks_distance(col, tgt)
        rep.estimate("stationary", name, ks.statistic, n_samples=ks.n_samples)
        rep.target("stationary", name, ks.target, ks_max=cfg.checks.ks_max)
        rep.check("stationary", name, ks.statistic <= cfg.checks.ks_max,
                  f"KS {ks.statistic:.4g} <= {cfg.checks.ks_max:g}")


def fold_ordering(rep: Report, cfg: RunConfig, results: list[dict]):
    frac = an.ordering_fraction(np.array([r["ordering"] for r in results]))
    rep.estimate("ordering", "fraction_L2_gt_L1", frac, replicas=len(results))
    rep.target("ordering", "fraction_L2_gt_L1", cfg.checks.ordering_min)
    rep.check("ordering", "fraction_L2_gt_L1", frac >= cfg.checks.ordering_min,
              f"{frac:.4g} >= {cfg.checks.ordering_min:g}")


def fold_hitting(rep: Report, cfg: RunConfig, results: list[dict]):
    taus = np.array([r["hitting"] for r in results])
    fit = an.survival_tail_fit(taus, n_total=len(taus))
    censored = int(np.sum(~np.isfinite(taus)))
    rep.estimate("hitting", "rate", fit.rate, r2=fit.r2, n_events=fit.n_events,
                 censored=censored, level=cfg.hitting_level, degenerate=fit.degenerate)
    rep.target("hitting", "rate", "> 0")
    rep.target("hitting", "r2", cfg.checks.hitting_min_r2)
    rep.check("hitting", "rate", (not fit.degenerate) and fit.rate > 0, f"rate {fit.rate:.4g} > 0")
    rep.check("hitting", "r2", (not fit.degenerate) and fit.r2 >= cfg.checks.hitting_min_r2,
              f"r2 {fit.r2:.4g} >= {cfg.checks.hitting_min_r2:g}")


def fold_decay(rep: Report, cfg: RunConfig, results: list[dict], out_dir: Path | None):
    law = stationary_law(cfg.params)
    slices = []
    for k, t in enumerate(cfg.decay_slices):
        v = np.array([r["decay"][k][0] for r in results])
        z = np.array([r["decay"][k][1] for r in results])
        slices.append((t, v, z))
    curve, fit = an.ergodic_decay_proxy(slices, law)
    floor = an.noise_floor(len(results), cfg.checks.decay_alpha)
    dists = [d for _, d in curve]
    for t, d in curve:
        rep.estimate("decay", f"distance@{t:g}", d)
    rep.estimate("decay", "rate", fit.rate, r2=fit.r2)
    rep.target("decay", "noise_floor", floor, alpha=cfg.checks.decay_alpha)
    rep.target("decay", "rate", "> 0")
    rep.check("decay", "decreasing", an.decreasing_beyond_noise(dists, floor),
              f"each step decreases or stays below {floor:.4g}")
    rep.check("decay", "rate", fit.rate > 0, f"rate {fit.rate:.4g} > 0")
    if out_dir is not None:
        np.savetxt(out_dir / "decay.csv", np.array(curve), fmt="%.17g", delimiter=",",
                   header="t,distance", comments="")


def stationary_check(rep: Report, cfg: RunConfig):
    params = cfg.params
    law = stationary_law(params)
    res = verify_bar_identities(params, default_probes(params.n, cfg.probes, cfg.base_seed))
    ck = cfg.checks
    bar_tol = ck.bar_rel_tol * law.c_pi
    id_tol = ck.identity_rel_tol * params.g ** 2
    kron = kronecker_identity(params.n)
    rep.extra.update(
        identity_residual=res.identity, interior_residual=res.interior,
        boundary_residuals=list(res.boundary), N=params.n, g=params.g,
    )
    rep.estimate("stationary-check", "interior", res.interior)
    for i, b in enumerate(res.boundary, 1):
        rep.estimate("stationary-check", f"face_z{i}", b)
    rep.estimate("stationary-check", "identity", res.identity)
    rep.target("stationary-check", "pde_residual", bar_tol)
    rep.target("stationary-check", "identity", id_tol)
    rep.check("stationary-check", "interior", res.interior <= bar_tol)
    for i, b in enumerate(res.boundary, 1):
        rep.check("stationary-check", f"face_z{i}", b <= bar_tol)
    rep.check("stationary-check", "identity", res.identity <= id_tol)
    rep.check("stationary-check", "kronecker", kron == [1] + [0] * (params.n - 1), str(kron))


def skorokhod_test(rep: Report, n: int, seed: int, trials: int, steps: int, tol: float):
    rm = build_reflection_matrix(n)
    worst_oracle = worst_sweep = worst_comp = 0.0
    times = np.linspace(0.0, 1.0, steps + 1)
    for k in range(trials):
        rng = stream(seed, DOMAIN_SOLVER_TEST, k)
        start = np.abs(rng.normal(size=n))
        walk = np.cumsum(rng.normal(-0.5, 1.0, size=(steps, n)) / np.sqrt(steps), axis=0)
        x = DiscretePath(times, np.vstack([start, start + walk]))
        oracle = stagnation_fixed_point(x, rm)
        sol = solve_skorokhod(x, rm, tol=tol)
        sweep = solve_skorokhod(x, rm, method="sweep")
        worst_oracle = max(worst_oracle, float(np.max(np.abs(sol.eta.values - oracle))))
        worst_sweep = max(worst_sweep, float(np.max(np.abs(sweep.eta.values - oracle))))
        worst_comp = max(worst_comp, float(np.max(np.abs(sol.complementarity()))))
    comp_tol = tol * steps
    rep.extra.update(N=n, trials=trials, steps=steps)
    rep.estimate("skorokhod-test", "picard_vs_oracle", worst_oracle)
    rep.estimate("skorokhod-test", "sweep_vs_oracle", worst_sweep)
    rep.estimate("skorokhod-test", "complementarity", worst_comp)
    rep.target("skorokhod-test", "oracle_tol", tol)
    rep.target("skorokhod-test", "complementarity_tol", comp_tol)
    rep.check("skorokhod-test", "picard_vs_oracle", worst_oracle <= tol)
    rep.check("skorokhod-test", "sweep_vs_oracle", worst_sweep <= tol)
    rep.check("skorokhod-test", "complementarity", worst_comp <= comp_tol)


def execute(op: str, cfg: RunConfig | None, out_dir: Path, jobs: int, *, trials: int = 100,
            steps: int = 100, seed: int | None = None) -> Report:
    """Run subcommand ``op`` and return its report (also written to ``out_dir``)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    rep = Report(op, cfg)
    if op == "skorokhod-test":
        n = cfg.params.n if cfg else 3
        tol = cfg.checks.skorokhod_tol if cfg else 1e-10
        base = cfg.base_seed if cfg else (seed or 0)
        skorokhod_test(rep, n, base, trials, steps, tol)
    elif op == "stationary-check":
        stationary_check(rep, cfg)
    else:
        tasks = OP_TASKS.get(op, cfg.outputs)
        if "hitting" in tasks and cfg.hitting_level is None:
            raise ConfigError("outputs.hitting.level", "required for the hitting analysis")
        if "decay" in tasks and not cfg.decay_slices:
            raise ConfigError("outputs.decay.slices", "required for the decay analysis")
        if "hitting" in tasks and cfg.init.kind == "unranked":
            raise ConfigError("init", "hitting needs init stationary or point")
        results = run_replicas(cfg, tasks, out_dir, jobs)
        if "lln" in tasks:
            fold_lln(rep, cfg, results)
        if "stationary" in tasks:
            fold_stationary(rep, cfg, results)
        if "ordering" in tasks:
            fold_ordering(rep, cfg, results)
        if "hitting" in tasks:
            fold_hitting(rep, cfg, results)
        if "decay" in tasks:
            fold_decay(rep, cfg, results, out_dir)
    rep.write(out_dir)
    return rep


# --------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="inert-particles", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="op", required=True, metavar="SUBCOMMAND")
    for op in SUBCOMMANDS:
        p = sub.add_parser(op)
        p.add_argument("--config", type=Path, required=op != "skorokhod-test",
                       help="YAML run configuration")
        p.add_argument("--out", type=Path, default=Path("run-out"), help="output directory")
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                       help="worker processes (default: core count)")
        p.add_argument("--seed", type=int, default=None, help="override base_seed (u64)")
        if op == "skorokhod-test":
            p.add_argument("--trials", type=int, default=100)
            p.add_argument("--steps", type=int, default=100)
    return parser


def _with_seed(cfg: RunConfig, seed: int | None) -> RunConfig:
    if seed is None:
        return cfg
    if not 0 <= seed < 1 << 64:
        raise ConfigError("seed", f"must be an unsigned 64-bit integer, got {seed}")
    return replace(cfg, base_seed=seed)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        cfg = load_config(args.config) if args.config else None
        cfg = _with_seed(cfg, args.seed) if cfg else None
        extra = {}
        if args.op == "skorokhod-test":
            if args.trials < 1 or args.steps < 1:
                parser.error("--trials and --steps must be >= 1")
            extra = dict(trials=args.trials, steps=args.steps, seed=args.seed)
        rep = execute(args.op, cfg, args.out, args.jobs, **extra)
    except OSError as exc:
        print(exc, file=sys.stderr)
        return EXIT_IO
    except (InputError, InsufficientDataError, ConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for c in rep.checks:
        print(f"{'PASS' if c['pass'] else 'FAIL'} {c['analysis']}:{c['name']} {c['detail']}".rstrip())
    print(f"report: {args.out / 'report.json'}")
    return EXIT_OK if rep.passed else EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())

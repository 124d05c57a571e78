from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inert_particles.analysis import ks_two_sample
from inert_particles.dynamics import (
    SimGrid, local_time_upper_bound_check, rank_positions, read_trajectory_csv,
    simulate_gap_process, simulate_unranked, write_trajectory_csv,
)
from inert_particles.errors import ConvergenceError, InputError
from inert_particles.model import ModelParams
from inert_particles.rng import BrownianIncrements, replica_seed


def run(n=2, g=1.0, v0=0.0, z0=(), dt=1e-3, t_end=5.0, seed=1, **kw):
    return simulate_gap_process(ModelParams(n, g, v0, z0), SimGrid(dt, t_end), seed, **kw)


def test_grid_validation():
    assert SimGrid(1e-3, 5.0).steps == 5000
    for bad in [(0.0, 1.0), (-1e-3, 1.0), (0.1, 0.05), (0.3, 1.0)]:
        with pytest.raises(InputError):
            SimGrid(*bad)
    with pytest.raises(InputError):
        SimGrid(0.1, 0.3, refine=1)


def test_single_step_with_large_gaps():
    dt, v0 = 1e-3, 0.3
    tr = run(n=3, v0=v0, z0=(50.0, 50.0, 50.0), dt=dt, t_end=dt)
    db = next(BrownianIncrements(1, 3, dt).chunks(1, 1))[0]
    assert np.all(tr.l[-1] == 0.0)
    assert tr.v[-1] == pytest.approx(v0 + dt, abs=1e-15)
    assert tr.z[-1, 0] == pytest.approx(50.0 + db[0] - v0 * dt, abs=dt * dt)


@settings(max_examples=12, deadline=None)
@given(n=st.integers(1, 5), g=st.floats(0.2, 3.0), v0=st.floats(-2.0, 2.0),
       seed=st.integers(0, 2**63), z=st.floats(0.0, 1.0))
def test_trajectory_invariants(n, g, v0, seed, z):
    tr = run(n=n, g=g, v0=v0, z0=(z,) * n, dt=1e-2, t_end=20.0, seed=seed)
    assert np.max(np.abs(tr.v - v0 - g * tr.t + tr.l[:, 0])) <= 1e-9
    assert np.all(tr.z >= -1e-9)
    assert np.all(tr.l[0] == 0.0) and np.all(np.diff(tr.l, axis=0) >= 0.0)
    comp = np.sum(tr.z[1:] * np.diff(tr.l, axis=0), axis=0)
    assert np.all(comp <= 1e-8 * tr.grid.steps)
    np.testing.assert_allclose(tr.positions_from_drivers(), tr.ranked_positions(), atol=1e-8, rtol=0)
    ok, _ = local_time_upper_bound_check(tr)
    assert ok


def test_determinism_and_record_every():
    a = run(n=3, seed=42, t_end=3.0)
    b = run(n=3, seed=42, t_end=3.0)
    for name in ("t", "v", "x0", "z", "l", "b"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    c = run(n=3, seed=42, t_end=3.0, record_every=7)
    idx = np.r_[np.arange(0, 3001, 7), 3000]
    assert np.array_equal(c.v, a.v[np.unique(idx)])
    assert not np.array_equal(run(n=3, seed=43, t_end=3.0).v, a.v)


def test_chunking_does_not_change_result():
    a = run(n=2, seed=9, t_end=2.0)
    b = run(n=2, seed=9, t_end=2.0, chunk_steps=333)
    assert np.array_equal(a.z, b.z) and np.array_equal(a.v, b.v)
    p, grid = ModelParams(2, 1.0), SimGrid(1e-3, 2.0)
    c = simulate_unranked(p, grid, 9, [0.0, 0.0, 0.0])
    d = simulate_unranked(p, grid, 9, [0.0, 0.0, 0.0], chunk_steps=333)
    assert np.array_equal(c.x, d.x)


def test_single_particle_velocity_mean():
    tr = run(n=1, g=1.0, v0=1.0, z0=(0.5,), dt=1e-3, t_end=5000.0, record_every=10)
    burn = tr.t >= 100.0
    assert np.mean(tr.v[burn]) == pytest.approx(1.0, rel=0.05)


def test_second_gap_collides_more_for_three_particles():
    tr = run(n=3, v0=1 / 3, z0=(0.5, 0.75, 1.5), dt=1e-2, t_end=5000.0, record_every=1000)
    assert tr.l[-1, 1] > tr.l[-1, 0]


def test_stop_level_gives_prefix():
    full = run(n=2, v0=0.25, z0=(0.5, 0.5), dt=1e-2, t_end=50.0, seed=5)
    hit = np.flatnonzero(full.v >= 1.5)
    stopped = run(n=2, v0=0.25, z0=(0.5, 0.5), dt=1e-2, t_end=50.0, seed=5, record_every=5000, stop_level=1.5)
    assert hit.size and stopped.stopped_at == pytest.approx(full.t[hit[0]], abs=1e-12)
    assert stopped.v[-1] == full.v[hit[0]] and np.array_equal(stopped.l[-1], full.l[hit[0]])
    never = run(n=2, v0=0.25, dt=1e-2, t_end=1.0, seed=5, stop_level=50.0)
    assert never.stopped_at is None and never.t[-1] == pytest.approx(1.0)
    below = run(n=2, v0=2.0, dt=1e-2, t_end=50.0, seed=5, stop_level=0.0)
    assert below.stopped_at is not None and below.v[-1] <= 0.0 < below.v[-2]


def test_picard_failure_is_reported():
    with pytest.raises(ConvergenceError) as info:
        run(n=2, v0=0.0, dt=1e-2, t_end=5.0, max_picard=1)
    assert "window" in str(info.value)


def test_rank_positions():
    perm, xs = rank_positions([0.0, 2.0, 1.0])
    assert perm.tolist() == [0, 2, 1] and xs.tolist() == [0.0, 1.0, 2.0]
    assert rank_positions([0.0, 1.0, 2.0])[0].tolist() == [0, 1, 2]
    assert rank_positions([0.0, 1.0, 1.0])[0].tolist() == [0, 1, 2]


def test_local_time_bound_inflated_fails():
    tr = run(n=1, v0=1.0, z0=(0.0,), dt=1e-3, t_end=2.0, seed=3)
    assert local_time_upper_bound_check(tr)[0]
    fake = type(tr)(**{**tr.__dict__, "l": tr.l * 1.1})
    ok, worst = local_time_upper_bound_check(fake)
    assert not ok and worst < 0


def test_local_time_bound_no_collisions():
    tr = run(n=1, v0=-1.0, z0=(100.0,), dt=1e-3, t_end=1.0)
    assert np.all(tr.l == 0.0)
    assert local_time_upper_bound_check(tr)[0]


def test_trajectory_csv_roundtrip(tmp_path):
    tr = run(n=2, seed=4, t_end=0.05)
    path = write_trajectory_csv(tr, tmp_path / "t.csv")
    assert path.read_text().splitlines()[0] == "t,v,x0,z1,z2,l1,l2"
    cols = read_trajectory_csv(path)
    np.testing.assert_array_equal(cols["v"], tr.v)
    np.testing.assert_array_equal(cols["z2"], tr.z[:, 1])


# ---------------------------------------------------------------- unranked


def test_unranked_far_apart_is_free():
    p = ModelParams(3, 1.0, 0.5)
    tr = simulate_unranked(p, SimGrid(1e-3, 1.0), 2, [0.0, 100.0, 200.0, 300.0])
    assert np.all(tr.ell == 0.0)
    np.testing.assert_allclose(tr.v, 0.5 + tr.t, atol=1e-12)


def test_unranked_stays_above_inert():
    p = ModelParams(3, 1.0, 0.5)
    tr = simulate_unranked(p, SimGrid(1e-3, 20.0), 2, [0.0, 0.0, 0.1, 0.2])
    assert np.all(tr.x[:, 1:] >= tr.x[:, :1] - 1e-9)
    assert np.all(tr.ordered_gaps() >= 0.0)
    assert np.max(np.abs(tr.v - 0.5 - tr.t + tr.ell.sum(axis=1))) <= 1e-9


def test_unranked_rejects_unsorted():
    with pytest.raises(InputError):
        simulate_unranked(ModelParams(2, 1.0), SimGrid(1e-2, 1.0), 0, [0.0, 2.0, 1.0])


def test_single_particle_simulators_agree_pathwise():
    p = ModelParams(1, 1.0, 0.2, (0.3,))
    grid = SimGrid(1e-3, 20.0)
    gap = simulate_gap_process(p, grid, 7)
    unr = simulate_unranked(p, grid, 7, [0.0, 0.3])
    np.testing.assert_allclose(unr.ordered_gaps()[:, 0], gap.z[:, 0], atol=1e-7)
    np.testing.assert_allclose(unr.v, gap.v, atol=1e-7)


def test_two_particle_local_time_laws_agree():
    p = ModelParams(2, 1.0, 0.25, (0.5, 0.5))
    grid = SimGrid(1e-2, 20.0)
    a, b = [], []
    for i in range(200):
        s = replica_seed(2024, i)
        a.append(simulate_gap_process(p, grid, s, record_every=grid.steps).l[-1, 0])
        b.append(simulate_unranked(p, grid, s, [0.0, 0.5, 1.0], record_every=grid.steps).ell[-1].sum())
    assert ks_two_sample(a, b) <= 0.1

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inert_particles.errors import ConvergenceError, InputError
from inert_particles.model import build_reflection_matrix
from inert_particles.skorokhod import (
    DiscretePath, picard_step, skorokhod_lipschitz_probe, solve_skorokhod, stagnation_fixed_point,
)

from .oracles import reflect_1d, stagnation_regulator


def random_path(rng, n, steps, drift=-0.3):
    start = np.abs(rng.normal(size=n))
    walk = np.cumsum(rng.normal(drift, 1.0, size=(steps, n)), axis=0)
    return DiscretePath(np.arange(steps + 1, dtype=float), np.vstack([start, start + walk]))


def test_nonnegative_1d_input_is_untouched():
    x = DiscretePath(np.arange(4.0), np.array([0.0, 0.5, 2.0, 0.1]))
    sol = solve_skorokhod(x, build_reflection_matrix(1))
    assert np.all(sol.eta.values == 0.0)
    np.testing.assert_array_equal(sol.y.values, x.values)


@pytest.mark.parametrize("method", ["picard", "sweep"])
def test_hand_example_1d(method):
    x = DiscretePath([0.0, 1.0, 2.0], [0.0, -1.0, -0.5])
    sol = solve_skorokhod(x, build_reflection_matrix(1), method=method)
    np.testing.assert_allclose(sol.eta.values[:, 0], [0, 1, 1], atol=1e-15)
    np.testing.assert_allclose(sol.y.values[:, 0], [0, 0, 0.5], atol=1e-15)


def test_1d_closed_form_random_paths():
    rm = build_reflection_matrix(1)
    rng = np.random.default_rng(11)
    for _ in range(20):
        x = random_path(rng, 1, 2000, drift=-0.05)
        eta, y = reflect_1d(x.values[:, 0].tolist())
        for method in ("picard", "sweep"):
            sol = solve_skorokhod(x, rm, method=method)
            assert np.max(np.abs(sol.eta.values[:, 0] - eta)) <= 1e-12
            assert np.max(np.abs(sol.y.values[:, 0] - y)) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 4), steps=st.integers(1, 200), seed=st.integers(0, 2**32 - 1))
def test_matches_stagnation_oracle(n, steps, seed):
    rm = build_reflection_matrix(n)
    x = random_path(np.random.default_rng(seed), n, steps)
    oracle = np.array(stagnation_regulator(x.values.tolist(), n))
    for method in ("picard", "sweep"):
        sol = solve_skorokhod(x, rm, method=method)
        assert np.max(np.abs(sol.eta.values - oracle)) <= 1e-10


def test_library_oracle_agrees_with_plain_oracle():
    rm = build_reflection_matrix(3)
    x = random_path(np.random.default_rng(2), 3, 60)
    np.testing.assert_array_equal(stagnation_fixed_point(x, rm),
                                  np.array(stagnation_regulator(x.values.tolist(), 3)))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 6), steps=st.integers(1, 300), seed=st.integers(0, 2**32 - 1),
       method=st.sampled_from(["picard", "sweep"]))
def test_solution_invariants(n, steps, seed, method):
    tol = 1e-10
    rm = build_reflection_matrix(n)
    x = random_path(np.random.default_rng(seed), n, steps)
    sol = solve_skorokhod(x, rm, tol=tol, method=method)
    eta, y = sol.eta.values, sol.y.values
    assert np.all(eta[0] == 0.0)
    assert np.all(np.diff(eta, axis=0) >= 0.0)
    assert np.all(y >= -tol)
    np.testing.assert_allclose(y, x.values + eta @ rm.r.T, atol=1e-12)
    assert np.all(np.abs(sol.complementarity()) <= tol * steps)


def test_picard_steps_stay_under_contraction_envelope():
    # eta* - eta_k <= U^k eta* componentwise, so the k-th step is at most |U^k|_inf |eta*|_inf
    for n in (2, 3, 5):
        rm = build_reflection_matrix(n)
        u = np.asarray(rm.u)
        for seed in range(10):
            x = random_path(np.random.default_rng(seed), n, 100)
            sol = solve_skorokhod(x, rm, tol=1e-12)
            scale = np.max(np.abs(sol.eta.values))
            power = np.eye(n)
            for k, step in enumerate(sol.history):
                assert step <= np.max(np.sum(np.abs(power), axis=1)) * scale + 1e-12
                power = power @ u
            h = np.array(sol.history)
            if h.size > 8 and h[3] > 0:
                assert (h[-1] / h[3]) ** (1.0 / (h.size - 4)) < 1.0


def test_picard_step_is_monotone():
    rm = build_reflection_matrix(3)
    x = random_path(np.random.default_rng(5), 3, 50).values
    lo = np.zeros_like(x)
    hi = picard_step(x, rm.u, lo)
    assert np.all(picard_step(x, rm.u, hi) >= hi)


def test_errors():
    rm = build_reflection_matrix(2)
    with pytest.raises(InputError):
        solve_skorokhod(DiscretePath([0.0, 1.0], [[-0.1, 0.0], [0.0, 0.0]]), rm)
    with pytest.raises(InputError):
        solve_skorokhod(DiscretePath([0.0, 1.0], [[0.0], [0.0]]), rm)
    with pytest.raises(InputError):
        solve_skorokhod(DiscretePath([0.0, 1.0], [[0.0, 0.0], [0.0, 0.0]]), rm, tol=0.0)
    x = random_path(np.random.default_rng(0), 2, 100, drift=-1.0)
    with pytest.raises(ConvergenceError) as info:
        solve_skorokhod(x, rm, max_iter=2)
    assert info.value.residual > 0 and info.value.iterations == 2
    for times in ([1.0, 2.0], [0.0, 0.0], [0.0, 2.0, 1.0]):
        with pytest.raises(InputError):
            DiscretePath(times, np.zeros(len(times)))
    with pytest.raises(InputError):
        DiscretePath([0.0, 1.0], np.zeros(3))


def test_lipschitz_probe_shift_and_errors():
    rm = build_reflection_matrix(2)
    x1 = DiscretePath(np.arange(5.0), np.abs(np.random.default_rng(1).normal(size=(5, 2))))
    x2 = DiscretePath(x1.times, x1.values + 0.7)
    assert skorokhod_lipschitz_probe(x1, x2, rm) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(InputError):
        skorokhod_lipschitz_probe(x1, x1, rm)
    with pytest.raises(InputError):
        skorokhod_lipschitz_probe(x1, DiscretePath(np.arange(5.0) * 2, x1.values), rm)


def test_lipschitz_sweep():
    rng = np.random.default_rng(3)
    rm1, rm3 = build_reflection_matrix(1), build_reflection_matrix(3)
    worst1 = worst3 = 0.0
    for _ in range(1000):
        a, b = random_path(rng, 1, 50), random_path(rng, 1, 50)
        worst1 = max(worst1, skorokhod_lipschitz_probe(a, b, rm1, method="sweep"))
        a, b = random_path(rng, 3, 50), random_path(rng, 3, 50)
        worst3 = max(worst3, skorokhod_lipschitz_probe(a, b, rm3, method="sweep"))
    assert worst1 <= 3.0
    # |d eta| <= |W 1|_inf |dx| and |dy| <= |dx| + |R|_inf |d eta|
    w_row = np.max(np.sum(rm3.w, axis=1))
    bound = w_row + 1.0 + np.max(np.sum(np.abs(rm3.r), axis=1)) * w_row
    assert np.isfinite(worst3) and worst3 <= bound

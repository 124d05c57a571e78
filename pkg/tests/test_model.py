from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inert_particles.errors import InputError
from inert_particles.model import ModelParams, build_drift_matrix, build_reflection_matrix, spectral_radius

from .oracles import reflection_matrix


def test_params_defaults_and_validation():
    p = ModelParams(3, 1.0)
    assert p.z0 == (0.0, 0.0, 0.0) and p.v0 == 0.0
    for bad in [dict(n=0, g=1.0), dict(n=2, g=0.0), dict(n=2, g=-1.0),
                dict(n=2, g=1.0, z0=(1.0,)), dict(n=2, g=1.0, z0=(1.0, -0.1)),
                dict(n=1.5, g=1.0), dict(n=1, g=1.0, v0=float("nan"))]:
        with pytest.raises(InputError):
            ModelParams(**bad)


def test_small_matrices():
    assert build_reflection_matrix(1).r.tolist() == [[1.0]]
    assert build_reflection_matrix(1).w.tolist() == [[1.0]]
    assert build_reflection_matrix(2).r.tolist() == [[1.0, -0.5], [-1.0, 1.0]]
    assert build_drift_matrix(1).a.tolist() == [[1.0]]
    assert build_drift_matrix(2).a.tolist() == [[1.0, 0.0], [-1.0, 1.0]]
    d3 = build_drift_matrix(3)
    assert np.array_equal(d3.a @ d3.a_inv, np.eye(3))


def test_w_first_column_closed_form():
    for n in range(1, 20):
        w = build_reflection_matrix(n).w
        expected = [n] + [2 * n - 2 * (i - 1) for i in range(2, n + 1)]
        np.testing.assert_allclose(w[:, 0], expected, rtol=0, atol=1e-10)
    assert build_reflection_matrix(3).w[:, 0].tolist() == [3.0, 4.0, 2.0]


@pytest.mark.parametrize("n", [0, -1, 2.5])
def test_rejects_bad_size(n):
    with pytest.raises(InputError):
        build_reflection_matrix(n)
    with pytest.raises(InputError):
        build_drift_matrix(n)


@settings(max_examples=64, deadline=None)
@given(st.integers(min_value=1, max_value=64))
def test_matrix_invariants(n):
    rm = build_reflection_matrix(n)
    assert rm.r.tolist() == reflection_matrix(n)
    assert np.all(rm.w >= 0)
    assert np.max(np.abs(rm.r @ rm.w - np.eye(n))) <= 1e-12
    assert np.max(np.abs(rm.w @ rm.r - np.eye(n))) <= 1e-12
    np.testing.assert_array_equal(rm.u, np.eye(n) - rm.r)
    dm = build_drift_matrix(n)
    assert np.max(np.abs(dm.a @ dm.a_inv - np.eye(n))) <= 1e-12
    assert set(np.unique(dm.a_inv)) <= {0.0, 1.0}
    assert np.array_equal(dm.a_inv, np.tril(dm.a_inv))
    assert spectral_radius(rm.u.T) < 1.0


def test_spectral_radius_matches_eigenvalues():
    for n in (2, 3, 4, 10, 64):
        u = build_reflection_matrix(n).u
        rho = spectral_radius(u.T, tol=1e-10)
        assert rho < 1.0
        assert rho == pytest.approx(np.max(np.abs(np.linalg.eigvals(u))), abs=1e-6)


def test_matrices_are_read_only():
    rm = build_reflection_matrix(3)
    with pytest.raises(ValueError):
        rm.r[0, 0] = 2.0

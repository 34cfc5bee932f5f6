import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from bspde_lab import Discretization, UsageError
from bspde_lab.grid import (apply_laplacian, h1_seminorm_sq, inner, lp_norm, solve_tridiagonal,
                            tridiagonal_apply)

from oracles import laplacian_dense


def test_laplacian_matches_dense_matrix():
    d = Discretization(12, length=2.0)
    v = np.random.default_rng(0).normal(size=(4, 12))
    assert np.allclose(apply_laplacian(d, v), v @ laplacian_dense(12, d.h).T, atol=1e-10)


def test_sine_modes_are_eigenvectors():
    d = Discretization(15, length=1.5)
    for k in (1, 4, 15):
        mode = d.sine_mode(k)
        assert np.allclose(apply_laplacian(d, mode), d.eigenvalues()[k - 1] * mode, atol=1e-9)


def test_summation_by_parts():
    d = Discretization(20)
    v = np.random.default_rng(1).normal(size=20)
    assert inner(d, v, -apply_laplacian(d, v)) == pytest.approx(h1_seminorm_sq(v, d), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(float, (3, 9), elements=st.floats(-10, 10)), st.floats(0.001, 2.0))
def test_thomas_matches_dense_solve(rhs, dt):
    d = Discretization(9)
    diag = np.full(9, 1.0 + 2.0 * dt / d.h**2)
    off = -dt / d.h**2
    x = solve_tridiagonal(diag, off, rhs)
    dense = np.eye(9) - dt * laplacian_dense(9, d.h)
    assert np.allclose(x, np.linalg.solve(dense, rhs.T).T, atol=1e-9 * (1 + np.abs(rhs).max()))
    assert np.allclose(tridiagonal_apply(diag, off, x), rhs, atol=1e-9 * (1 + np.abs(rhs).max()))


def test_lp_norms():
    d = Discretization(3)
    v = np.array([1.0, -2.0, 0.5])
    assert lp_norm(v, math.inf, d) == 2.0
    assert lp_norm(v, 2, d) == pytest.approx(math.sqrt(0.25 * 5.25))
    with pytest.raises(UsageError):
        lp_norm(v, 0.5, d)
    with pytest.raises(UsageError):
        apply_laplacian(d, np.zeros(4))


def test_control_mask_and_validation():
    d = Discretization(3, control_interval=(0.2, 0.6))
    assert d.control_mask.tolist() == [True, True, False]
    with pytest.raises(UsageError):
        Discretization(1)
    with pytest.raises(UsageError):
        Discretization(8, control_interval=(0.5, 0.4))

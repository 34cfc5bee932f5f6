import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bspde_lab import (AdaptedField, CoefficientSet, ConfigurationError, DataError, Discretization, ProblemData,
                       UsageError, build_tree, solve_linear)
from bspde_lab.battery import random_instance
from bspde_lab.fields import generate_random_field
from bspde_lab.solver import drift, weak_form_residual
from bspde_lab.studies import field_error, manufactured_data
from bspde_lab.tree import AdaptedRV, check_martingale, condexp_step

from oracles import deterministic_backward_heat, full_tree_backward


def test_zero_data_gives_zero_solution():
    tree, disc = build_tree(5, 1.0), Discretization(10)
    sol = solve_linear(tree, disc, CoefficientSet.zero(tree, disc), ProblemData.zero(tree, disc))
    assert sol.y.sup_norm() == 0.0 and sol.Y.sup_norm() == 0.0


def test_deterministic_data_match_heat_equation():
    tree, disc = build_tree(8, 0.5), Discretization(16)
    alpha_row = 0.3 * np.cos(disc.grid)
    F_row = np.sin(2 * np.pi * disc.grid)
    coeffs = CoefficientSet(AdaptedField.deterministic(tree, disc, alpha_row, range(8)),
                            AdaptedField.zeros(tree, disc, range(8)))
    yT = np.tile(np.sin(np.pi * disc.grid), (9, 1))
    data = ProblemData(yT, AdaptedField.deterministic(tree, disc, F_row, range(8)))
    sol = solve_linear(tree, disc, coeffs, data)
    ref = deterministic_backward_heat(16, 1.0, 8, 0.5, yT[0], alpha_row, F_row)
    for n in range(9):
        assert np.allclose(sol.y.level(n), ref[n][None, :], atol=1e-13)
    assert sol.Y.sup_norm() <= 1e-13


def test_random_data_match_full_tree_oracle():
    tree, disc = build_tree(5, 1.0, recombining=False), Discretization(6)
    alpha = generate_random_field(1, 1.0, tree, disc, "coefficient")
    F = generate_random_field(2, 1.0, tree, disc, "source")
    yT = generate_random_field(3, 1.0, tree, disc, "terminal").level(5)
    coeffs = CoefficientSet(alpha, AdaptedField.zeros(tree, disc, range(5)))
    sol = solve_linear(tree, disc, coeffs, ProblemData(yT, F))
    ref = full_tree_backward(6, 1.0, 5, 1.0, yT, [alpha.level(n) for n in range(5)], [F.level(n) for n in range(5)])
    assert max(np.max(np.abs(sol.y.level(n) - ref[n])) for n in range(6)) <= 1e-13


@pytest.mark.parametrize("recombining", [True, False])
def test_manufactured_solution_is_exact(recombining):
    tree, disc = build_tree(8, 1.0, recombining), Discretization(16)
    coeffs = CoefficientSet(generate_random_field(4, 1.0, tree, disc, "coefficient"),
                            generate_random_field(5, 1.0, tree, disc, "coefficient"))
    data, ys, Ys = manufactured_data(tree, disc, coeffs, 0.4, -0.9, disc.sine_mode(1))
    sol = solve_linear(tree, disc, coeffs, data)
    assert field_error(sol.y, ys) <= 1e-10
    assert field_error(sol.Y, Ys) <= 1e-10


def test_martingale_representation_holds_exactly():
    inst = random_instance(3, levels=6, recombining=False)
    sol = inst.solve()
    tree = inst.tree
    for n in range(tree.levels):
        up, down = tree.children(n)
        m = condexp_step(sol.y.level(n + 1), n, tree)
        assert np.allclose(sol.y.level(n + 1)[up], m + sol.Y.level(n) * tree.sqrt_dt, atol=1e-14)
        assert np.allclose(sol.y.level(n + 1)[down], m - sol.Y.level(n) * tree.sqrt_dt, atol=1e-14)


def test_weak_form_and_solve_residuals_vanish():
    inst = random_instance(9)
    sol = inst.solve()
    assert sol.max_solve_residual <= 1e-13
    weak = weak_form_residual(sol, inst.coeffs, [inst.data.F.level(n) for n in range(inst.tree.levels)])
    assert np.max(weak) <= 1e-12


def test_compensated_solution_is_martingale():
    inst = random_instance(2, levels=5, recombining=False)
    sol, tree = inst.solve(), inst.tree
    # y_n + sum_{k<n} dt * drift_k, with the drift evaluated at the implicit value y_k
    acc = [np.zeros((1, inst.disc.M))]
    for n in range(tree.levels):
        d = drift(sol, n, inst.coeffs, inst.data.F.level(n))
        up, down = tree.children(n)
        nxt = np.empty((tree.node_count(n + 1), inst.disc.M))
        nxt[up] = acc[-1] + tree.dt * d
        nxt[down] = acc[-1] + tree.dt * d
        acc.append(nxt)
    proc = [AdaptedRV(n, sol.y.level(n) + acc[n]) for n in range(tree.levels + 1)]
    assert check_martingale(proc, tree) <= 1e-12


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000), st.floats(-3, 3), st.floats(-3, 3))
def test_linearity_in_data(seed, a, b):
    one, two = random_instance(seed, levels=4, points=8), random_instance(seed + 1, levels=4, points=8)
    tree, disc, coeffs = one.tree, one.disc, one.coeffs
    F = AdaptedField(tree, disc, [a * one.data.F.level(n) + b * two.data.F.level(n) for n in range(4)])
    combo = ProblemData(a * one.data.yT + b * two.data.yT, F)
    s = solve_linear(tree, disc, coeffs, combo)
    s1 = solve_linear(tree, disc, coeffs, one.data)
    s2 = solve_linear(tree, disc, coeffs, two.data)
    for n in range(5):
        assert np.allclose(s.y.level(n), a * s1.y.level(n) + b * s2.y.level(n), atol=1e-12)


def test_errors():
    tree, disc = build_tree(2, 1.0), Discretization(8)
    coeffs = CoefficientSet.zero(tree, disc)
    with pytest.raises(UsageError):
        solve_linear(tree, disc, coeffs, ProblemData(np.zeros((2, 8)), AdaptedField.zeros(tree, disc, range(2))))
    bad = ProblemData(np.full((3, 8), np.nan), AdaptedField.zeros(tree, disc, range(2)))
    with pytest.raises(DataError):
        solve_linear(tree, disc, coeffs, bad)
    big_beta = CoefficientSet(AdaptedField.zeros(tree, disc, range(2)),
                              AdaptedField.deterministic(tree, disc, np.full(8, 2.0), range(2)))
    with pytest.raises(ConfigurationError):
        solve_linear(tree, disc, big_beta, ProblemData.zero(tree, disc))
    other = build_tree(3, 1.0)
    with pytest.raises(UsageError):
        solve_linear(tree, disc, CoefficientSet.zero(other, disc), ProblemData.zero(tree, disc))

import math

import numpy as np
import pytest

from bspde_lab import CoefficientSet, Discretization, ProblemData, UsageError, build_tree, solve_linear
from bspde_lab import baselines, reports
from bspde_lab.battery import random_instance
from bspde_lab.grid import lp_power
from bspde_lab.solver import drift
from bspde_lab.studies import homogeneity_gap, lp_energy_gap, manufactured_data

from oracles import manufactured_p4_residual


@pytest.mark.parametrize("levels,lvl", [(4, 0), (8, 0), (8, 3)])
def test_p4_residual_matches_closed_form(levels, lvl):
    tree, disc = build_tree(levels, 1.0), Discretization(16)
    coeffs = CoefficientSet.zero(tree, disc)
    data, _, _ = manufactured_data(tree, disc, coeffs, 0.3, 0.8, disc.sine_mode(1))
    sol = solve_linear(tree, disc, coeffs, data)
    r = reports.ito_residual(sol, data, coeffs, 4, lvl)
    expected = manufactured_p4_residual(levels - lvl, tree.dt, 0.8, disc.h, disc.sine_mode(1))
    assert np.max(np.abs(r.residual - expected)) <= 1e-13


@pytest.mark.parametrize("recombining", [True, False])
def test_p2_residual_is_minus_squared_drift(recombining):
    inst = random_instance(4, levels=6, recombining=recombining)
    sol, tree = inst.solve(), inst.tree
    r = reports.ito_residual(sol, inst.data, inst.coeffs, 2, 0)
    # y_k - E[y_{k+1} | F_k] = dt * drift_k, so the p = 2 defect is -dt^2 E sum |drift_k|^2
    expected = -sum(tree.dt**2 * float(np.dot(tree.probabilities(k),
                                              lp_power(drift(sol, k, inst.coeffs, inst.data.F.level(k)), 2, inst.disc)))
                    for k in range(tree.levels))
    assert r.expectation == pytest.approx(expected, rel=1e-11, abs=1e-15)
    gap = np.max(np.abs(r.residual + reports.energy_consistency_defect(sol, 0)))
    assert gap <= 1e-13


@pytest.mark.parametrize("p", [2.0, 3.0, 4.0])
def test_stochastic_integral_has_zero_mean(p):
    inst = random_instance(11, levels=10, recombining=False)
    assert abs(reports.stochastic_integral_expectation(inst.solve(), p)) <= 1e-11


def test_residual_shrinks_with_dt():
    def build(levels):
        tree, disc = build_tree(levels, 0.1), Discretization(16)
        coeffs = CoefficientSet.zero(tree, disc)
        data, _, _ = manufactured_data(tree, disc, coeffs, 0.2, 1.0, disc.sine_mode(1))
        return solve_linear(tree, disc, coeffs, data), data, coeffs

    study = reports.ito_convergence(build, [8, 16, 32], 4)
    # the closed form is linear in dt
    assert study.order == pytest.approx(1.0, abs=1e-9)


def test_fit_order():
    dts = np.array([0.1, 0.05, 0.025])
    assert reports.fit_order(dts, 3 * dts**2) == pytest.approx(2.0)
    assert reports.fit_order(dts, [0.0, 0.0, 0.0]) == math.inf


def test_linf_bound_and_homogeneity():
    inst = random_instance(0)
    sol = inst.solve()
    rep = reports.linf_report(sol, inst.data, inst.coeffs)
    yT_sup, F_sup = inst.data.sup_norms()
    assert rep.rhs == pytest.approx(math.exp((inst.coeffs.K + 1) * 1.0) * (yT_sup + F_sup))
    assert rep.passed and rep.lhs == sol.y.sup_norm()
    gap = homogeneity_gap(inst.tree, inst.disc, inst.coeffs, inst.data, ["energy", "lp", "linf"], [2, 4], [0.1, 10])
    assert gap <= 1e-9


def test_lp_report_at_two_equals_energy_report():
    inst = random_instance(5)
    assert lp_energy_gap(inst.solve(), inst.data, inst.coeffs) <= 1e-10


def test_energy_terms_for_deterministic_mode():
    # yT = sin(pi x), no forcing: y_n = rho^(N-n) yT with rho = 1 / (1 - dt * lambda_1)
    tree, disc = build_tree(8, 1.0), Discretization(16)
    coeffs = CoefficientSet.zero(tree, disc)
    mode = disc.sine_mode(1)
    data = ProblemData(np.tile(mode, (9, 1)), ProblemData.zero(tree, disc).F)
    rep = reports.energy_report(solve_linear(tree, disc, coeffs, data), data, coeffs)
    rho = 1.0 / (1.0 - tree.dt * disc.eigenvalues()[0])
    l2 = disc.h * np.sum(mode**2)
    assert rep.terms["sup_y"] == pytest.approx(l2)
    grad = sum(tree.dt * -disc.eigenvalues()[0] * rho ** (2 * (8 - n)) * l2 for n in range(8))
    assert rep.terms["grad_y"] == pytest.approx(grad, rel=1e-10)
    assert rep.terms["Y"] == 0.0 and rep.rhs == pytest.approx(l2)


@pytest.mark.parametrize("seed", [0, 7, 19])
def test_battery_constants_within_recorded_baseline(seed):
    inst = random_instance(seed)
    sol = inst.solve()
    assert reports.energy_report(sol, inst.data, inst.coeffs).implied_constant <= baselines.ENERGY_BATTERY_MAX
    for p in baselines.LP_LADDER:
        assert reports.lp_report(sol, inst.data, inst.coeffs, p).implied_constant <= baselines.LP_BATTERY_MAX[p]


def test_report_errors():
    inst = random_instance(1, levels=3)
    sol = inst.solve()
    with pytest.raises(UsageError):
        reports.lp_report(sol, inst.data, inst.coeffs, 1.5)
    with pytest.raises(UsageError):
        reports.ito_residual(sol, inst.data, inst.coeffs, 1.0, 0)
    with pytest.raises(KeyError):
        reports.lp_report(sol, inst.data, inst.coeffs, 5.0)

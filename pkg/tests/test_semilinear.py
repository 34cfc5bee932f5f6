import numpy as np
import pytest

from bspde_lab import CoefficientSet, Discretization, ProblemData, UsageError, build_tree, solve_linear
from bspde_lab.battery import random_instance
from bspde_lab.semilinear import picard_solve, ratios_settled, smallness_probe, terminal_extension, verify_semilinear
from bspde_lab.toolkit import NonlinearitySpec

CUBIC = NonlinearitySpec(lambda s: s**3, lambda s: 3 * s**2, lambda s: 6 * s, name="cubic")


def setup(levels=8, points=16):
    tree, disc = build_tree(levels, 1.0), Discretization(points)
    return tree, disc, CoefficientSet.zero(tree, disc)


def test_linear_f_is_one_linear_solve():
    inst = random_instance(3, levels=5, points=8)
    lin = NonlinearitySpec(lambda s: 0.7 * s, lambda s: 0.7 + 0 * s, lambda s: 0 * s)
    res = picard_solve(inst.tree, inst.disc, inst.coeffs, lin, inst.data.yT, max_iter=1)
    ref = solve_linear(inst.tree, inst.disc, inst.coeffs.shifted(0.7),
                       ProblemData(inst.data.yT, ProblemData.zero(inst.tree, inst.disc).F))
    for n in range(6):
        assert np.array_equal(res.solution.y.level(n), ref.y.level(n))


def test_cubic_small_data_contracts():
    tree, disc, coeffs = setup()
    yT = 0.05 * np.tile(disc.sine_mode(1), (9, 1))
    res = picard_solve(tree, disc, coeffs, CUBIC, yT, tol=1e-12)
    assert res.converged and not res.diverged
    assert res.max_ratio <= 0.5
    assert all(s.in_ball for s in res.history)
    ver = verify_semilinear(res.solution, CUBIC, coeffs)
    assert ver.telescoped <= 1e-12


@pytest.mark.parametrize("amp", [0.2, 0.8, 2.5])
def test_ratios_settle_after_first_step(amp):
    tree, disc, coeffs = setup()
    res = picard_solve(tree, disc, coeffs, CUBIC, amp * np.tile(disc.sine_mode(1), (9, 1)))
    assert res.converged and ratios_settled(res.ratios)


def test_ratios_settled_flags_growth():
    assert ratios_settled([0.01, 0.2, 0.21, 0.2])
    assert not ratios_settled([0.01, 0.2, 0.3])
    assert ratios_settled([0.01, 2.0, 5.0])


def test_two_initial_guesses_agree():
    tree, disc, coeffs = setup()
    yT = 0.05 * np.tile(disc.sine_mode(1), (9, 1))
    a = picard_solve(tree, disc, coeffs, CUBIC, yT, tol=1e-12)
    b = picard_solve(tree, disc, coeffs, CUBIC, yT, tol=1e-12, initial=terminal_extension(tree, yT))
    assert a.converged and b.converged
    diff = max(np.max(np.abs(a.solution.y.level(n) - b.solution.y.level(n))) for n in range(9))
    assert diff <= 1e-11


def test_unconverged_iterate_has_larger_weak_residual():
    tree, disc, coeffs = setup()
    yT = 0.3 * np.tile(disc.sine_mode(1), (9, 1))
    early = picard_solve(tree, disc, coeffs, CUBIC, yT, max_iter=1)
    done = picard_solve(tree, disc, coeffs, CUBIC, yT, tol=1e-13)
    assert verify_semilinear(early.solution, CUBIC, coeffs).telescoped > 1e3 * \
        verify_semilinear(done.solution, CUBIC, coeffs).telescoped


def test_large_data_diverge():
    tree, disc, coeffs = setup()
    yT = 40.0 * np.tile(disc.sine_mode(1), (9, 1))
    res = picard_solve(tree, disc, coeffs, CUBIC, yT)
    assert res.diverged and not res.converged


def test_terminal_extension_of_random_terminal_value():
    tree = build_tree(4, 1.0)
    yT = tree.brownian(4)[:, None] * np.ones((1, 3))
    ext = terminal_extension(tree, yT)
    # W is a martingale, so E[W_T | F_n] = W_n
    for n in range(5):
        assert np.allclose(ext[n], tree.brownian(n)[:, None], atol=1e-15)


def test_smallness_probe_ladder():
    tree, disc, coeffs = setup()
    probe = smallness_probe(tree, disc, coeffs, CUBIC, disc.sine_mode(1), [0.05, 0.1, 0.2, 0.4, 0.8, 1.6, 40.0])
    assert probe.converged[:6].all() and not probe.converged[-1]
    assert probe.ratios_monotone
    assert probe.last_converged == 1.6 and probe.first_diverged == 40.0


def test_errors():
    tree, disc, coeffs = setup(3, 4)
    with pytest.raises(UsageError):
        picard_solve(tree, disc, coeffs, CUBIC, np.full((4, 4), np.inf))
    with pytest.raises(UsageError):
        smallness_probe(tree, disc, coeffs, CUBIC, np.ones(4), [0.2, 0.1])
    with pytest.raises(UsageError):
        smallness_probe(tree, disc, coeffs, CUBIC, np.zeros(4), [0.1])

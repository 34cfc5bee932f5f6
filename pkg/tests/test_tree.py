import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bspde_lab import ResourceLimitError, UsageError
from bspde_lab.tree import (AdaptedRV, brownian_process, build_tree, check_martingale, condexp, expectation,
                            ito_integral, ito_partial_sums)

from oracles import enumerate_ito, sign_paths


@pytest.mark.parametrize("recombining", [True, False])
def test_probabilities_sum_to_one(recombining):
    tree = build_tree(7, 1.0, recombining)
    for n in range(8):
        assert math.fsum(tree.probabilities(n)) == 1.0
        assert tree.probabilities(n).shape == (tree.node_count(n),)


def test_node_counts_and_children():
    rec, full = build_tree(5, 1.0), build_tree(5, 1.0, recombining=False)
    assert [rec.node_count(n) for n in range(6)] == [1, 2, 3, 4, 5, 6]
    assert [full.node_count(n) for n in range(6)] == [1, 2, 4, 8, 16, 32]
    up, down = rec.children(3)
    assert np.array_equal(down - up, np.ones(4, dtype=int))
    up, down = full.children(2)
    assert np.array_equal(up, [0, 2, 4, 6]) and np.array_equal(down, [1, 3, 5, 7])


def test_brownian_values_match_sign_paths():
    N = 6
    full = build_tree(N, 0.6, recombining=False)
    signs = sign_paths(N)
    expected = np.sqrt(full.dt) * signs.sum(axis=1)
    assert np.allclose(full.brownian(N), expected, atol=1e-15)
    rec = build_tree(N, 0.6)
    assert np.allclose(rec.lift(rec.brownian(N), N), expected, atol=1e-15)


def test_expectation_is_exact_dyadic_sum():
    tree = build_tree(10, 1.0)
    W = tree.brownian(10)
    # E[W_T^2] = T and E[W_T^4] = 3 T^2 - 2 T dt for +-sqrt(dt) steps
    assert expectation(AdaptedRV(10, W**2), tree) == pytest.approx(1.0, abs=1e-14)
    assert expectation(AdaptedRV(10, W**4), tree) == pytest.approx(3.0 - 2.0 * tree.dt, abs=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**31 - 1), st.booleans())
def test_tower_property(levels, seed, recombining):
    tree = build_tree(levels, 1.0, recombining)
    x = AdaptedRV(levels, np.random.default_rng(seed).normal(size=(tree.node_count(levels), 3)))
    mid = levels // 2
    direct = condexp(x, 0, tree).values
    nested = condexp(condexp(x, mid, tree), 0, tree).values
    assert np.allclose(direct, nested, atol=1e-14)


def test_condexp_matches_path_enumeration():
    N = 5
    tree = build_tree(N, 1.0)
    rng = np.random.default_rng(3)
    leaf = rng.normal(size=N + 1)
    x = AdaptedRV(N, leaf)
    signs = sign_paths(N)
    downs = (signs < 0).sum(axis=1).astype(int)
    brute = leaf[downs].mean()
    assert condexp(x, 0, tree).values[0] == pytest.approx(brute, abs=1e-15)


def test_brownian_is_martingale():
    for recombining in (True, False):
        tree = build_tree(9, 2.0, recombining)
        assert check_martingale(brownian_process(tree), tree) <= 1e-15


def test_ito_integral_matches_enumeration_and_isometry():
    N = 6
    tree = build_tree(N, 1.0)

    def z(n, prefix):
        W = np.sqrt(tree.dt) * prefix.sum()
        return math.sin(W) + 0.5 * n

    integrand = [AdaptedRV(n, np.sin(tree.brownian(n)) + 0.5 * n) for n in range(N)]
    leaf = ito_integral(integrand, tree).values
    brute = enumerate_ito(N, tree.dt, z)
    assert np.allclose(leaf, brute, atol=1e-13)
    full = tree.full()
    assert abs(expectation(AdaptedRV(N, leaf), full)) <= 1e-15
    second = sum(tree.dt * expectation(AdaptedRV(n, integrand[n].values ** 2), tree) for n in range(N))
    assert expectation(AdaptedRV(N, leaf**2), full) == pytest.approx(second, rel=1e-13)
    sums = ito_partial_sums(integrand, tree)
    assert check_martingale(sums, full) <= 1e-15


def test_caps_and_bad_levels():
    with pytest.raises(ResourceLimitError):
        build_tree(17, 1.0, recombining=False)
    build_tree(17, 1.0, recombining=False, cap=17)
    with pytest.raises(UsageError):
        build_tree(0, 1.0)
    with pytest.raises(UsageError):
        build_tree(3, -1.0)
    tree = build_tree(3, 1.0)
    with pytest.raises(UsageError):
        tree.node_count(4)
    with pytest.raises(UsageError):
        condexp(AdaptedRV(1, np.zeros(2)), 2, tree)
    with pytest.raises(UsageError):
        condexp(AdaptedRV(2, np.zeros(5)), 0, tree)
    with pytest.raises(ResourceLimitError):
        build_tree(21, 1.0).paths()


def test_paths_agree_between_layouts():
    rec, full = build_tree(5, 1.0), build_tree(5, 1.0, recombining=False)
    ri, rp = rec.paths()
    fi, fp = full.paths()
    assert np.array_equal(rp, fp)
    for n in range(6):
        assert np.array_equal(rec.brownian(n)[ri[:, n]], full.brownian(n)[fi[:, n]])

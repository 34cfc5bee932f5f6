"""Seeded random instances shared by the estimate batteries and the regression baselines."""

from __future__ import annotations

from dataclasses import dataclass

from .fields import generate_random_field
from .grid import Discretization
from .solver import BSPDESolution, CoefficientSet, ProblemData, solve_linear
from .tree import ScenarioTree, build_tree

BATTERY_SEEDS = tuple(range(20))


@dataclass
class Instance:
    seed: int
    tree: ScenarioTree
    disc: Discretization
    coeffs: CoefficientSet
    data: ProblemData

    def solve(self) -> BSPDESolution:
        return solve_linear(self.tree, self.disc, self.coeffs, self.data)


def random_instance(seed: int, levels: int = 8, points: int = 16, horizon: float = 1.0,
                    alpha_amp: float = 1.0, beta_amp: float = 1.0, data_amp: float = 1.0,
                    recombining: bool = True) -> Instance:
    tree = build_tree(levels, horizon, recombining)
    disc = Discretization(points)
    # distinct seeds per role so alpha and beta are not the same draw
    coeffs = CoefficientSet(
        generate_random_field(2 * seed, alpha_amp, tree, disc, "coefficient"),
        generate_random_field(2 * seed + 1, beta_amp, tree, disc, "coefficient"),
    )
    yT = generate_random_field(seed, data_amp, tree, disc, "terminal").level(levels)
    F = generate_random_field(seed, data_amp, tree, disc, "source")
    return Instance(seed, tree, disc, coeffs, ProblemData(yT, F))

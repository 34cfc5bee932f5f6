"""Null controls for the backward heat equation with beta = 0, synthesized by duality.

Controlled system on the tree:

    (I - dt (Lap + alpha_n)) y_n = E[y_{n+1} | F_n] + dt chi h_n,   y_N = yT.

Adjoint: q_{n+1} = (I - dt (Lap + alpha_n))^{-1} q_n from a deterministic q_0.
Since q_{n+1} is known at level n it pairs with E[y_{n+1} | F_n], and the
steps telescope into the exact identity

    E<y_N, q_N> - <y_0, q_0> = -sum_n dt E<chi h_n, q_{n+1}>.

Writing c for y_0 with h = 0, the map h -> y_0 - c is the adjoint R* of
R: q_0 -> (chi q_{n+1})_n in the weighted space with weights dt * prob * hx.
Null control means R* h = -c; the least L^p-norm h is found through the dual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import linalg, optimize
from scipy.sparse.linalg import LinearOperator, lsqr

from .errors import UnsupportedConfigurationError, UsageError
from .grid import Discretization, solve_tridiagonal
from .solver import AdaptedField, CoefficientSet, ProblemData, solve_linear, step_matrix_diag
from .tree import ScenarioTree

Q0_MEASURABILITY = ("initial", "terminal")


@dataclass
class ControlProblem:
    tree: ScenarioTree
    disc: Discretization
    alpha: AdaptedField
    yT: np.ndarray
    p: float = 2.0
    q0_measurability: str = "initial"
    tol: float = 1e-6
    max_iter: int = 10_000

    def __post_init__(self):
        self.yT = np.asarray(self.yT, dtype=float)
        self.p = float(self.p)
        if not (self.p >= 2):
            raise UsageError(f"control exponent p must lie in [2, inf], got {self.p}")
        if not np.any(self.disc.control_mask):
            raise UsageError(f"control interval {self.disc.control_interval} contains no grid point")
        if self.q0_measurability not in Q0_MEASURABILITY:
            raise UsageError(f"q0_measurability must be one of {Q0_MEASURABILITY}")
        expected = (self.tree.node_count(self.tree.levels), self.disc.M)
        if self.yT.shape != expected:
            raise UsageError(f"yT has shape {self.yT.shape}, expected {expected}")
        missing = [n for n in range(self.tree.levels) if n not in self.alpha.levels]
        if missing:
            raise UsageError(f"alpha is missing levels {missing}")
        if self.tree.recombining and not self.alpha.restricted(range(self.tree.levels)).is_deterministic():
            raise UsageError("a random alpha makes the adjoint path dependent; use a full tree")

    @classmethod
    def from_coefficients(cls, tree, disc, coeffs: CoefficientSet, yT, **kw) -> "ControlProblem":
        if coeffs.beta_sup != 0:
            raise UnsupportedConfigurationError(
                "null-control synthesis assumes beta = 0; the duality argument does not cover beta != 0"
            )
        return cls(tree, disc, coeffs.alpha, yT, **kw)

    @property
    def coeffs(self) -> CoefficientSet:
        steps = range(self.tree.levels)
        return CoefficientSet(self.alpha.restricted(steps), AdaptedField.zeros(self.tree, self.disc, steps))

    def weights(self, n: int) -> np.ndarray:
        """dt * probability * hx per node at level n."""
        return self.tree.dt * self.tree.probabilities(n) * self.disc.h

    def with_p(self, p: float) -> "ControlProblem":
        return ControlProblem(self.tree, self.disc, self.alpha, self.yT, p, self.q0_measurability,
                              self.tol, self.max_iter)


@dataclass
class AdjointState:
    """q_0 and the predictable values q_{n+1}, stored at the level-n nodes."""

    q0: np.ndarray
    q: AdaptedField

    def at(self, n: int) -> np.ndarray:
        """q_n on the nodes where it is known: level 0 for n = 0, level n - 1 otherwise."""
        return self.q0[None, :] if n == 0 else self.q.level(n - 1)


def solve_forward(tree: ScenarioTree, disc: Discretization, alpha: AdaptedField, q0) -> AdjointState:
    """Implicit Euler for dq = (Lap q + alpha q) dt along every branch, from a deterministic q0."""
    q0 = np.asarray(q0, dtype=float)
    if q0.shape == (1, disc.M):
        q0 = q0[0]
    if q0.shape != (disc.M,):
        raise UsageError(f"q0 must have shape ({disc.M},), got {q0.shape}")
    out = []
    cur = q0[None, :]
    for n in range(tree.levels):
        nodes = tree.node_count(n)
        if n > 0:
            if tree.recombining:
                # alpha is deterministic here, so q_n is the same on every node
                cur = np.broadcast_to(cur[:1], (nodes, disc.M))
            else:
                cur = cur[np.arange(nodes) // 2]
        diag, off = step_matrix_diag(disc, tree.dt, alpha.level(n))
        cur = solve_tridiagonal(diag, off, np.broadcast_to(cur, (nodes, disc.M)))
        out.append(cur)
    return AdjointState(q0, AdaptedField(tree, disc, out))


def apply_R(problem: ControlProblem, q0) -> list[np.ndarray]:
    state = solve_forward(problem.tree, problem.disc, problem.alpha, q0)
    mask = problem.disc.control_mask
    return [np.where(mask, state.q.level(n), 0.0) for n in range(problem.tree.levels)]


def terminal_pairing(problem: ControlProblem, state: AdjointState, yN: Optional[np.ndarray] = None) -> float:
    """E<y_N, q_N>, with q_N known one level early."""
    tree, disc = problem.tree, problem.disc
    yN = problem.yT if yN is None else yN
    up, down = tree.children(tree.levels - 1)
    m = 0.5 * (yN[up] + yN[down])
    per_node = np.sum(m * state.q.level(tree.levels - 1), axis=-1) * disc.h
    return float(np.dot(tree.probabilities(tree.levels - 1), per_node))


def control_pairing(problem: ControlProblem, h: Sequence[np.ndarray], state: AdjointState) -> float:
    """sum_n dt E<chi h_n, q_{n+1}>."""
    mask = problem.disc.control_mask
    total = 0.0
    for n in range(problem.tree.levels):
        per_node = np.sum(np.where(mask, h[n], 0.0) * state.q.level(n), axis=-1)
        total += float(np.dot(problem.weights(n), per_node))
    return total


def state_at_zero(problem: ControlProblem, h: Optional[Sequence[np.ndarray]], yT: Optional[np.ndarray] = None) -> np.ndarray:
    """y_0 of the controlled system (uses the linear solver with F = chi h)."""
    tree, disc = problem.tree, problem.disc
    yT = problem.yT if yT is None else yT
    mask = disc.control_mask
    if h is None:
        F = AdaptedField.zeros(tree, disc, range(tree.levels))
    else:
        F = AdaptedField(tree, disc, [np.where(mask, h[n], 0.0) for n in range(tree.levels)])
    sol = solve_linear(tree, disc, problem.coeffs, ProblemData(yT, F))
    return sol.y.level(0)[0]


def free_state(problem: ControlProblem) -> np.ndarray:
    """c = y_0 without control."""
    return state_at_zero(problem, None)


# ---------------------------------------------------------------------------
# dense representation of R on the control unknowns


@dataclass
class DenseMaps:
    """R as a matrix from q0 to the flattened control unknowns, and the matching weights."""

    R: np.ndarray
    w: np.ndarray
    terminal: np.ndarray
    layout: list

    def constraint(self, hx: float) -> np.ndarray:
        """A with y_0 = c + A h, i.e. R* = R^T W / hx."""
        return (self.R * self.w[:, None]).T / hx


def dense_maps(problem: ControlProblem) -> DenseMaps:
    tree, disc = problem.tree, problem.disc
    mask = disc.control_mask
    layout = [(n, tree.node_count(n)) for n in range(tree.levels)]
    w = np.concatenate([np.repeat(problem.weights(n), mask.sum()) for n in range(tree.levels)])
    cols, term = [], []
    for j in range(disc.M):
        e = np.zeros(disc.M)
        e[j] = 1.0
        state = solve_forward(tree, disc, problem.alpha, e)
        cols.append(np.concatenate([state.q.level(n)[:, mask].ravel() for n in range(tree.levels)]))
        term.append(state.q.level(tree.levels - 1).ravel())
    return DenseMaps(np.stack(cols, axis=1), w, np.stack(term, axis=1), layout)


def unflatten(problem: ControlProblem, flat: np.ndarray) -> list[np.ndarray]:
    tree, disc = problem.tree, problem.disc
    mask = disc.control_mask
    out, pos = [], 0
    for n in range(tree.levels):
        nodes = tree.node_count(n)
        block = np.zeros((nodes, disc.M))
        k = nodes * int(mask.sum())
        block[:, mask] = flat[pos:pos + k].reshape(nodes, -1)
        out.append(block)
        pos += k
    return out


# ---------------------------------------------------------------------------
# synthesis


@dataclass
class ControlResult:
    h: AdaptedField
    p: float
    cost_p: float
    y0_residual: float
    duality_gap: float
    iterations: int
    converged: bool
    q0: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "p": self.p, "cost_p": self.cost_p, "y0_residual": self.y0_residual,
            "duality_gap": self.duality_gap, "iterations": self.iterations, "converged": self.converged,
            "sup_h": self.h.sup_norm(), **{k: v for k, v in self.diagnostics.items() if np.isscalar(v)},
        }


def control_norm(problem: ControlProblem, h: Sequence[np.ndarray], p: float) -> float:
    mask = problem.disc.control_mask
    if p == math.inf:
        return max(float(np.max(np.abs(hn[:, mask]))) for hn in h)
    total = sum(float(np.dot(problem.weights(n), np.sum(np.abs(h[n][:, mask]) ** p, axis=-1)))
                for n in range(problem.tree.levels))
    return total ** (1.0 / p)


def _l2(disc: Discretization, v: np.ndarray) -> float:
    return float(np.sqrt(np.sum(v**2) * disc.h))


def _finish(problem: ControlProblem, h_levels: list, p: float, iterations: int, q0, diagnostics: dict) -> ControlResult:
    y0 = state_at_zero(problem, h_levels)
    res = _l2(problem.disc, y0)
    if q0 is None:
        c = free_state(problem)
        q0 = c / max(_l2(problem.disc, c), 1e-300)
    if np.any(q0):
        state = solve_forward(problem.tree, problem.disc, problem.alpha, q0)
        scale = max(1.0, _l2(problem.disc, q0))
        gap = abs(terminal_pairing(problem, state) - float(np.dot(y0, q0)) * problem.disc.h
                  + control_pairing(problem, h_levels, state)) / scale
    else:
        gap = 0.0
    h = AdaptedField(problem.tree, problem.disc, h_levels)
    return ControlResult(h, p, control_norm(problem, h_levels, p), res, gap, iterations,
                         bool(res <= problem.tol), np.asarray(q0), diagnostics)


def _zero_result(problem: ControlProblem) -> ControlResult:
    h = AdaptedField.zeros(problem.tree, problem.disc, range(problem.tree.levels))
    return ControlResult(h, problem.p, 0.0, 0.0, 0.0, 0, True, np.zeros(problem.disc.M))


def _hum(problem: ControlProblem) -> ControlResult:
    """p = 2: the normal equations of the quadratic dual, solved by LSQR.

    LSQR is conjugate gradients on the normal equations of R* W^{-1/2},
    run in a form that squares neither the operator nor its condition number.
    Both products are matrix free: R* is one backward solve, R one forward solve.
    """
    tree, disc = problem.tree, problem.disc
    mask = disc.control_mask
    c = free_state(problem)
    zero_T = np.zeros_like(problem.yT)
    w_levels = [np.sqrt(problem.weights(n))[:, None] * np.ones(int(mask.sum())) for n in range(tree.levels)]
    sw = np.concatenate([v.ravel() for v in w_levels])
    count = [0]

    def matvec(g):
        count[0] += 1
        return state_at_zero(problem, unflatten(problem, np.ravel(g) / sw), zero_T)

    def rmatvec(u):
        count[0] += 1
        Rq = apply_R(problem, np.ravel(u))
        flat = np.concatenate([Rq[n][:, mask].ravel() for n in range(tree.levels)])
        return sw * flat / disc.h

    op = LinearOperator((disc.M, sw.size), matvec=matvec, rmatvec=rmatvec, dtype=float)
    out = lsqr(op, -c, atol=1e-15, btol=1e-15, conlim=1e16, iter_lim=max(50 * disc.M, 200))
    h = unflatten(problem, out[0] / sw)
    return _finish(problem, h, 2.0, count[0], None, {"lsqr_stop": int(out[1]), "lsqr_iterations": int(out[2])})


def reduced_constraint(maps: DenseMaps, A: np.ndarray, c: np.ndarray, rcond: float = 1e-12):
    """Keep the constraint directions whose weighted singular value exceeds rcond * largest.

    The remaining directions are numerically uncontrollable; the part of c
    they carry is left in y_0 and shows up in the reported residual.
    """
    sw = np.sqrt(maps.w)
    U, S, Vt = np.linalg.svd(A / sw[None, :], full_matrices=False)
    k = int(np.sum(S > rcond * S[0]))
    # rows divided by their singular values are orthonormal in the weighted space,
    # which keeps every equality on one scale for the LP and Newton solvers
    unit = float(np.sqrt(np.mean(maps.w)))
    return Vt[:k] * sw[None, :] / unit, (U[:, :k].T @ c) / S[:k] / unit, k


def _newton_stage(maps: DenseMaps, Z: np.ndarray, h: np.ndarray, p: float, max_iter: int) -> tuple[np.ndarray, int, bool]:
    """Damped Newton for min sum w |h|^p over h + range(Z); every iterate keeps A h fixed."""
    w = maps.w
    scale = float(np.max(np.abs(h)))
    if scale == 0:
        return h, 0, True

    def f(v):
        return float(np.dot(w, np.abs(v / scale) ** p))

    for it in range(1, max_iter + 1):
        u = h / scale
        grad = Z.T @ (p * w * np.abs(u) ** (p - 1) * np.sign(u))
        curv = p * (p - 1) * w * np.abs(u) ** (p - 2)
        H = Z.T @ (curv[:, None] * Z)
        # directions with no curvature do not change the cost; damp them
        H[np.diag_indices_from(H)] += 1e-12 * max(float(np.max(curv)), 1e-300)
        step = -linalg.solve(H, grad, assume_a="pos")
        decrement = -float(np.dot(grad, step))
        f0 = f(h)
        if decrement <= 1e-13 * f0:
            return h, it - 1, True
        dh = scale * (Z @ step)
        t = 1.0
        while f(h + t * dh) > f0 - 1e-4 * t * decrement and t > 1e-10:
            t *= 0.5
        if t <= 1e-10:
            return h, it, decrement <= 1e-9 * f0
        h = h + t * dh
    return h, max_iter, False


def _least_norm(maps: DenseMaps, A: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Weighted least-L^2 solution of A h = -c."""
    sw = np.sqrt(maps.w)
    return np.linalg.lstsq(A / sw[None, :], -c, rcond=None)[0] / sw


def _primal_p(problem: ControlProblem, p: float, maps: Optional[DenseMaps] = None) -> ControlResult:
    """p in (2, inf): Newton on the null space of the constraint, continued in p from the L^2 solution."""
    maps = maps or dense_maps(problem)
    c = free_state(problem)
    A, c_red, rank = reduced_constraint(maps, maps.constraint(problem.disc.h), c)
    Z = linalg.null_space(A)
    h = _least_norm(maps, A, c_red)
    ladder = [x for x in (4.0, 8.0, 16.0, 32.0, 64.0, 128.0) if x < p] + [p]
    total, ok = 0, True
    for stage in ladder:
        h, its, ok = _newton_stage(maps, Z, h, stage, problem.max_iter)
        total += its
    res = _finish(problem, unflatten(problem, h), p, total, None, {"continuation": len(ladder), "rank": rank})
    res.converged = res.converged and ok
    return res


def _epigraph_lp(problem: ControlProblem, maps: Optional[DenseMaps] = None) -> ControlResult:
    """p = inf: minimize s subject to A h = -c and |h| <= s."""
    maps = maps or dense_maps(problem)
    A, c, rank = reduced_constraint(maps, maps.constraint(problem.disc.h), free_state(problem))
    nh = A.shape[1]
    eye = np.eye(nh)
    ones = np.ones((nh, 1))
    A_ub = np.block([[eye, -ones], [-eye, -ones]])
    cost = np.zeros(nh + 1)
    cost[-1] = 1.0
    lp = optimize.linprog(cost, A_ub=A_ub, b_ub=np.zeros(2 * nh), A_eq=np.hstack([A, np.zeros((A.shape[0], 1))]),
                          b_eq=-c, bounds=[(None, None)] * nh + [(0, None)], method="highs",
                          options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if lp.x is None:
        res = _zero_result(problem)
        res.converged, res.diagnostics = False, {"lp_status": int(lp.status), "lp_message": lp.message}
        return res
    h = lp.x[:nh]
    res = _finish(problem, unflatten(problem, h), math.inf, int(lp.nit), None,
                  {"lp_status": int(lp.status), "lp_objective": float(lp.x[-1]), "rank": rank})
    res.converged = res.converged and lp.status == 0
    q64 = _primal_p(problem.with_p(64.0), 64.0, maps)
    res.diagnostics.update({"p64_sup": q64.h.sup_norm(), "p64_converged": q64.converged})
    return res


def synthesize_control(problem: ControlProblem) -> ControlResult:
    if problem.q0_measurability == "terminal":
        raise UnsupportedConfigurationError(
            "a terminal-measurable q0 gives a non-adapted adjoint and the duality identity "
            "acquires an extra stochastic term; use q0_measurability='initial'"
        )
    if not np.any(problem.yT):
        return _zero_result(problem)
    if problem.p == 2:
        return _hum(problem)
    if problem.p == math.inf:
        return _epigraph_lp(problem)
    return _primal_p(problem, problem.p)


# ---------------------------------------------------------------------------
# verification


@dataclass
class ControlVerification:
    y0_residual: float
    duality_gaps: np.ndarray
    max_gap: float
    support_ok: bool
    passed: bool


def verify_control(problem: ControlProblem, result: ControlResult, trials: int = 10, seed: int = 0,
                   gap_tol: float = 1e-10) -> ControlVerification:
    tree, disc = problem.tree, problem.disc
    h = [result.h.level(n) for n in range(tree.levels)]
    y0 = state_at_zero(problem, h)
    rng = np.random.default_rng(seed)
    gaps = []
    for _ in range(trials):
        q0 = rng.normal(size=disc.M)
        q0 /= _l2(disc, q0)
        state = solve_forward(tree, disc, problem.alpha, q0)
        gaps.append(terminal_pairing(problem, state) - float(np.dot(y0, q0)) * disc.h
                    + control_pairing(problem, h, state))
    gaps = np.abs(np.array(gaps))
    off = ~disc.control_mask
    support_ok = all(not np.any(hn[:, off]) for hn in h)
    res = _l2(disc, y0)
    max_gap = float(np.max(gaps)) if gaps.size else 0.0
    return ControlVerification(res, gaps, max_gap, support_ok,
                               bool(res <= problem.tol and max_gap <= gap_tol and support_ok))


# ---------------------------------------------------------------------------
# observability


def _adjoint_norms(problem: ControlProblem, state: AdjointState, pprime: float) -> tuple[float, float]:
    tree, disc = problem.tree, problem.disc
    mask = disc.control_mask
    N = tree.levels
    end = float(np.dot(tree.probabilities(N - 1), np.sum(np.abs(state.q.level(N - 1)) ** pprime, axis=-1))) * disc.h
    obs = sum(float(np.dot(problem.weights(n), np.sum(np.abs(state.q.level(n)[:, mask]) ** pprime, axis=-1)))
              for n in range(N))
    return end ** (1 / pprime), obs ** (1 / pprime)


def observability_ratio(problem: ControlProblem, q0, pprime: float = 2.0) -> float:
    """||q(T)||_{L^p'} / ||q||_{L^p'((0,T) x O_0)} for one adjoint initial state."""
    q0 = np.asarray(q0, dtype=float)
    if not np.any(q0):
        raise UsageError("observability ratio is undefined for q0 = 0")
    end, obs = _adjoint_norms(problem, solve_forward(problem.tree, problem.disc, problem.alpha, q0), pprime)
    return end / obs if obs > 0 else math.inf


@dataclass
class ObservabilityEstimate:
    ratio: float
    q0: np.ndarray
    trial_ratios: np.ndarray
    refined: bool


def estimate_observability(problem: ControlProblem, pprime: float = 2.0, trials: int = 16,
                           seed: int = 0) -> ObservabilityEstimate:
    """Best observed ratio over random q0, refined by a generalized eigenproblem when p' = 2.

    The returned value is the ratio of an actual adjoint state, hence a lower
    bound for the best discrete observability constant.
    """
    if trials < 1:
        raise UsageError("need at least one trial")
    if not 1 <= pprime <= 2:
        raise UsageError(f"p' must lie in [1, 2], got {pprime}")
    rng = np.random.default_rng(seed)
    M = problem.disc.M
    candidates = [rng.normal(size=M) for _ in range(trials)]
    ratios = np.array([observability_ratio(problem, q, pprime) for q in candidates])
    best = int(np.argmax(ratios))
    q_best, r_best, refined = candidates[best], float(ratios[best]), False
    if pprime == 2:
        maps = dense_maps(problem)
        G = maps.R.T @ (maps.w[:, None] * maps.R)
        N = problem.tree.levels
        probs = problem.tree.probabilities(N - 1)
        T = maps.terminal.reshape(problem.tree.node_count(N - 1), M, M)
        B = problem.disc.h * np.einsum("k,kij,kil->jl", probs, T, T)
        # top generalized eigenvector of (B, G) on the numerical range of G
        s, U = np.linalg.eigh(G)
        keep = s > 1e-12 * s.max()
        S = U[:, keep] / np.sqrt(s[keep])
        _, Z = np.linalg.eigh(S.T @ B @ S)
        v = S @ Z[:, -1]
        refined = True
        r = observability_ratio(problem, v / np.linalg.norm(v), pprime)
        if r > r_best:
            q_best, r_best = v / np.linalg.norm(v), r
    return ObservabilityEstimate(r_best, q_best, ratios, refined)


# ---------------------------------------------------------------------------
# cost versus horizon


@dataclass
class BlowupStudy:
    horizons: np.ndarray
    costs: np.ndarray
    slope: float
    intercept: float
    decreasing: bool
    converged: bool
    degenerate: bool


def cost_blowup_study(make_problem: Callable[[float], ControlProblem], horizons: Sequence[float]) -> BlowupStudy:
    """Fit log(cost) = intercept + slope / T over the given horizons."""
    Ts = np.asarray(sorted(horizons), dtype=float)
    if Ts.size < 3 or np.any(Ts <= 0) or np.any(Ts > 1):
        raise UsageError("need at least 3 horizons in (0, 1]")
    results = [synthesize_control(make_problem(float(T))) for T in Ts]
    costs = np.array([r.cost_p for r in results])
    converged = all(r.converged for r in results)
    if np.all(costs == 0):
        return BlowupStudy(Ts, costs, 0.0, -math.inf, False, converged, True)
    if np.any(costs <= 0) or not converged:
        return BlowupStudy(Ts, costs, math.nan, math.nan, False, converged, False)
    slope, intercept = np.polyfit(1.0 / Ts, np.log(costs), 1)
    return BlowupStudy(Ts, costs, float(slope), float(intercept), bool(np.all(np.diff(costs) < 0)), converged, False)

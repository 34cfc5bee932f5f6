"""Experiment runner: JSON config in, output directory with summary.json and CSV tables out.

A run is a pure function of its config (plus the optional seed override), so
repeating a config reproduces summary.json byte for byte.  Nothing
time-dependent is written to disk.
"""

from __future__ import annotations

import csv
import json
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from . import baselines, reports
from .control import ControlProblem
from .errors import ConfigFileError, ConfigurationError
from .fields import generate_random_field, parse_formula
from .grid import Discretization
from .solver import AdaptedField, CoefficientSet, ProblemData, solve_linear
from .studies import (blowup_summary, control_ladder, dense_least_norm, field_error, flatten_control,
                      homogeneity_gap, ito_order_study, lp_energy_gap, manufactured_data, martingale_check,
                      observability_summary, report_set, semilinear_study, solve_checks, toolkit_study)
from .toolkit import NonlinearitySpec, TruncationFamily
from .tree import ScenarioTree, build_tree

KINDS = ("solve", "ito-check", "estimates", "control", "semilinear", "convergence", "toolkit-props")

DEFAULT_TOLERANCES = {
    "solve": 1e-11,
    "weak": 1e-11,
    "exact": 1e-10,
    "martingale": 1e-11,
    "min_order": 0.9,
    "energy_defect": 1e-9,
    "homogeneity": 1e-9,
    "lp_energy": 1e-10,
    "y0": 1e-6,
    "gap": 1e-10,
    "oracle": 1e-8,
    "picard": 1e-10,
    "ratio_bound": 0.5,
}

_TOP_KEYS = {"kind", "seed", "battery", "tree", "grid", "coefficients", "data", "p", "p_list", "tolerances",
             "options", "description"}


# ---------------------------------------------------------------------------
# config


class Config:
    """Validated view of a JSON config; errors name the field and the line it sits on."""

    def __init__(self, raw: dict, text: str = "", source: str = "<config>"):
        self.raw, self.text, self.source = raw, text, source
        if not isinstance(raw, dict):
            raise ConfigFileError(f"{source}: top level must be a JSON object")
        unknown = sorted(set(raw) - _TOP_KEYS)
        if unknown:
            self.fail(unknown[0], f"unknown field (allowed: {', '.join(sorted(_TOP_KEYS))})")
        self.kind = self.get("kind", str)
        if self.kind not in KINDS:
            self.fail("kind", f"must be one of {', '.join(KINDS)}")

    @classmethod
    def load(cls, path) -> "Config":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigFileError(f"{path}: cannot read config ({exc.strerror})") from None
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigFileError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
        return cls(raw, text, str(path))

    def line_of(self, dotted: str) -> Optional[int]:
        key = dotted.split(".")[-1]
        m = re.search(r'"' + re.escape(key) + r'"\s*:', self.text)
        return self.text.count("\n", 0, m.start()) + 1 if m else None

    def fail(self, dotted: str, msg: str):
        line = self.line_of(dotted)
        where = f"{self.source}:{line}" if line else self.source
        raise ConfigFileError(f"{where}: field '{dotted}': {msg}")

    def get(self, dotted: str, types, default: Any = ..., check: Optional[Callable[[Any], bool]] = None,
            hint: str = ""):
        node: Any = self.raw
        for part in dotted.split("."):
            if not isinstance(node, dict) or part not in node:
                if default is ...:
                    self.fail(dotted, "is required")
                return default
            node = node[part]
        if types is float and isinstance(node, int) and not isinstance(node, bool):
            node = float(node)
        if not isinstance(node, types) or (isinstance(node, bool) and types in (int, float, (int, float))):
            self.fail(dotted, f"has type {type(node).__name__}, expected {_type_name(types)}")
        if check is not None and not check(node):
            self.fail(dotted, hint or "invalid value")
        return node

    def tolerance(self, name: str) -> float:
        return float(self.get(f"tolerances.{name}", (int, float), DEFAULT_TOLERANCES[name]))

    def option(self, name: str, types, default=...):
        return self.get(f"options.{name}", types, default)


def _type_name(types) -> str:
    if isinstance(types, tuple):
        return " or ".join(t.__name__ for t in types)
    return types.__name__


def _exponent(cfg: Config, value, where: str) -> float:
    if value == "inf":
        return math.inf
    if isinstance(value, (int, float)) and not isinstance(value, bool) and value >= 2:
        return float(value)
    cfg.fail(where, f"exponent must be a number >= 2 or \"inf\", got {value!r}")


def p_list(cfg: Config, default: Sequence) -> list[float]:
    if "p_list" in cfg.raw:
        vals = cfg.get("p_list", list)
        return [_exponent(cfg, v, "p_list") for v in vals]
    if "p" in cfg.raw:
        return [_exponent(cfg, cfg.raw["p"], "p")]
    return [float(v) for v in default]


# ---------------------------------------------------------------------------
# building trees, grids and data


def make_tree(cfg: Config, horizon: Optional[float] = None, levels: Optional[int] = None) -> ScenarioTree:
    N = levels if levels is not None else cfg.get("tree.levels", int, 8, lambda v: v >= 1, "must be >= 1")
    T = horizon if horizon is not None else cfg.get("tree.horizon", float, 1.0, lambda v: v > 0, "must be > 0")
    return build_tree(N, T, cfg.get("tree.recombining", bool, True))


def make_grid(cfg: Config) -> Discretization:
    interval = cfg.get("grid.control_interval", list, [0.3, 0.6],
                       lambda v: len(v) == 2 and all(isinstance(x, (int, float)) for x in v), "must be [a, b]")
    return Discretization(cfg.get("grid.points", int, 16, lambda v: v >= 2, "must be >= 2"),
                          cfg.get("grid.length", float, 1.0, lambda v: v > 0, "must be > 0"), tuple(interval))


def _spec(cfg: Config, dotted: str, tree: ScenarioTree, disc: Discretization, kind: str, seed: int,
          default=0.0) -> AdaptedField:
    levels = range(tree.levels, tree.levels + 1) if kind == "terminal" else range(tree.levels)
    spec = cfg.get(dotted, (int, float, str, dict), default)
    if isinstance(spec, bool):
        cfg.fail(dotted, "expected a number, formula or random spec")
    if isinstance(spec, (int, float)):
        return AdaptedField.deterministic(tree, disc, np.full(disc.M, float(spec)), levels)
    if isinstance(spec, str):
        try:
            return AdaptedField.from_function(tree, disc, parse_formula(spec), levels)
        except ConfigurationError as exc:
            cfg.fail(dotted, str(exc))
    rnd = spec.get("random")
    if not isinstance(rnd, dict) or set(spec) != {"random"}:
        cfg.fail(dotted, 'object form must be {"random": {"amplitude": A, "deterministic": false}}')
    amp = cfg.get(f"{dotted}.random.amplitude", float, 1.0, lambda v: v >= 0, "must be >= 0")
    fld = generate_random_field(seed, amp, tree, disc, kind)
    if cfg.get(f"{dotted}.random.deterministic", bool, False):
        fld = AdaptedField.deterministic(tree, disc, np.stack([fld.level(n)[0] for n in levels]), levels)
    return fld


def make_coefficients(cfg: Config, tree, disc, seed: int) -> CoefficientSet:
    # alpha and beta draw from distinct streams: seeds 2s and 2s + 1
    return CoefficientSet(_spec(cfg, "coefficients.alpha", tree, disc, "coefficient", 2 * seed),
                          _spec(cfg, "coefficients.beta", tree, disc, "coefficient", 2 * seed + 1))


def make_data(cfg: Config, tree, disc, coeffs: CoefficientSet, seed: int):
    """ProblemData plus the exact pair when the data are manufactured."""
    if "manufactured" in cfg.raw.get("data", {}):
        rng = np.random.default_rng(seed)
        a = cfg.get("data.manufactured.a", (int, float, str), "random")
        b = cfg.get("data.manufactured.b", (int, float, str), "random")
        a = float(rng.uniform(-1, 1)) if a == "random" else float(a)
        b = float(rng.uniform(-1, 1)) if b == "random" else float(b)
        profile_text = cfg.get("data.manufactured.profile", str, "sin(pi*x)")
        profile = np.broadcast_to(parse_formula(profile_text)(0.0, 0.0, disc.grid), (disc.M,)).astype(float)
        data, ys, Ys = manufactured_data(tree, disc, coeffs, a, b, profile)
        return data, (ys, Ys, a, b)
    yT = _spec(cfg, "data.yT", tree, disc, "terminal", seed).level(tree.levels)
    F = _spec(cfg, "data.F", tree, disc, "source", seed)
    return ProblemData(yT, F), None


def seeds(cfg: Config) -> list[int]:
    base = cfg.get("seed", int, 0)
    count = cfg.get("battery", int, 1, lambda v: v >= 1, "must be >= 1")
    return [base + k for k in range(count)]


def _is_random(cfg: Config, dotted: str) -> bool:
    node: Any = cfg.raw
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            return False
        node = node[part]
    return isinstance(node, dict)


# ---------------------------------------------------------------------------
# output


@dataclass
class RunOutput:
    summary: dict
    tables: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.summary["verdict"]["passed"])


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def _verdict(checks: dict) -> dict:
    checks = {k: bool(v) for k, v in checks.items()}
    return {"passed": all(checks.values()), "checks": checks}


def write_outputs(out: RunOutput, config_raw: dict, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.json").write_text(json.dumps(config_raw, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (d / "summary.json").write_text(json.dumps(_clean(out.summary), indent=2, sort_keys=True) + "\n",
                                    encoding="utf-8")
    for name, rows in out.tables.items():
        write_csv(d / f"{name}.csv", rows)
    return d


def write_csv(path: Path, rows: list[dict]) -> None:
    header: list[str] = []
    for row in rows:
        header.extend(k for k in row if k not in header)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _csv_value(v) for k, v in row.items()})


def _csv_value(v):
    v = _clean(v)
    return repr(v) if isinstance(v, float) else v


def field_rows(fld: AdaptedField, name: str) -> list[dict]:
    rows = []
    for n in fld.levels:
        vals = fld.level(n)
        for node in range(vals.shape[0]):
            for j in range(vals.shape[1]):
                rows.append({"level": n, "node": node, "grid_index": j, name: float(vals[node, j])})
    return rows


def solution_rows(sol) -> list[dict]:
    rows = field_rows(sol.y, "y")
    N = sol.tree.levels
    Y = {(n, node, j): float(sol.Y.level(n)[node, j]) for n in range(N)
         for node in range(sol.tree.node_count(n)) for j in range(sol.disc.M)}
    for r in rows:
        r["Y"] = Y.get((r["level"], r["node"], r["grid_index"]), "")
    return rows


def _map(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# kinds


def _solve_one(args) -> dict:
    cfg, seed = args
    tree, disc = make_tree(cfg), make_grid(cfg)
    coeffs = make_coefficients(cfg, tree, disc, seed)
    data, exact = make_data(cfg, tree, disc, coeffs, seed)
    sol = solve_linear(tree, disc, coeffs, data)
    row = {"seed": seed, **solve_checks(sol, coeffs, data)}
    if exact is not None:
        ys, Ys, a, b = exact
        row.update({"a": a, "b": b, "error_y": field_error(sol.y, ys), "error_Y": field_error(sol.Y, Ys)})
    return {"row": row, "solution": solution_rows(sol) if seed == seeds(cfg)[0] else None}


def run_solve(cfg: Config, jobs: int) -> RunOutput:
    out = _map(_solve_one, [(cfg, s) for s in seeds(cfg)], jobs)
    rows = [o["row"] for o in out]
    checks = {
        "solve_residual": max(r["max_solve_residual"] for r in rows) <= cfg.tolerance("solve"),
        "weak_form": max(r["weak_residual_sum"] for r in rows) <= cfg.tolerance("weak"),
        "terminal_exact": all(r["terminal_exact"] for r in rows),
    }
    if "error_y" in rows[0]:
        checks["manufactured_exact"] = max(max(r["error_y"], r["error_Y"]) for r in rows) <= cfg.tolerance("exact")
    summary = {"runs": rows, "verdict": _verdict(checks)}
    return RunOutput(summary, {"runs": rows, "solution": out[0]["solution"]})


def _formula_builder(cfg: Config):
    for dotted in ("coefficients.alpha", "coefficients.beta", "data.yT", "data.F"):
        if _is_random(cfg, dotted):
            cfg.fail(dotted, "a refinement study needs formula data (random fields do not nest across depths)")
    seed = cfg.get("seed", int, 0)

    def build(levels: int):
        tree, disc = make_tree(cfg, levels=levels), make_grid(cfg)
        coeffs = make_coefficients(cfg, tree, disc, seed)
        data, _ = make_data(cfg, tree, disc, coeffs, seed)
        return solve_linear(tree, disc, coeffs, data), data, coeffs

    return build


def _martingale_one(args) -> list[dict]:
    cfg, seed, ps = args
    tree, disc = make_tree(cfg), make_grid(cfg)
    coeffs = make_coefficients(cfg, tree, disc, seed)
    data, _ = make_data(cfg, tree, disc, coeffs, seed)
    sol = solve_linear(tree, disc, coeffs, data)
    return [{"seed": seed, "p": p, "expectation": martingale_check(sol, p)} for p in ps]


def run_ito_check(cfg: Config, jobs: int) -> RunOutput:
    checks_wanted = cfg.option("checks", list, ["martingale"])
    ps = p_list(cfg, [2, 4])
    summary, tables, checks = {}, {}, {}
    if "martingale" in checks_wanted:
        rows = [r for block in _map(_martingale_one, [(cfg, s, ps) for s in seeds(cfg)], jobs) for r in block]
        worst = max(r["expectation"] for r in rows)
        summary["martingale_max"] = worst
        tables["martingale"] = rows
        checks["martingale"] = worst <= cfg.tolerance("martingale")
    if "order" in checks_wanted:
        levels_list = cfg.option("levels_list", list, [8, 16, 32])
        build = _formula_builder(cfg)
        rows, orders = [], {}
        for p in ps:
            study = ito_order_study(build, levels_list, p)
            rows.extend(study["rows"])
            orders[str(p)] = study["order"]
            if p == 2:
                summary["energy_defect_gap"] = study["energy_defect_gap"]
                checks["energy_defect"] = study["energy_defect_gap"] <= cfg.tolerance("energy_defect")
        summary["orders"] = orders
        tables["convergence"] = rows
        checks["order"] = min(orders.values()) >= cfg.tolerance("min_order")
    unknown = set(checks_wanted) - {"martingale", "order"}
    if unknown:
        cfg.fail("options.checks", f"unknown check {sorted(unknown)[0]!r} (allowed: martingale, order)")
    summary["verdict"] = _verdict(checks)
    return RunOutput(summary, tables)


def _estimates_one(args) -> dict:
    cfg, seed, which, ps, scales = args
    tree, disc = make_tree(cfg), make_grid(cfg)
    coeffs = make_coefficients(cfg, tree, disc, seed)
    data, _ = make_data(cfg, tree, disc, coeffs, seed)
    sol = solve_linear(tree, disc, coeffs, data)
    reps = [r.to_dict() for r in report_set(sol, data, coeffs, which, ps)]
    out = {"seed": seed, "reports": reps}
    if scales:
        out["homogeneity_gap"] = homogeneity_gap(tree, disc, coeffs, data, which, ps, scales)
    if "lp" in which and 2.0 in ps and "energy" in which:
        out["lp_energy_gap"] = lp_energy_gap(sol, data, coeffs)
    return out


def _recorded_baselines(cfg: Config, worst: dict) -> dict:
    ref = {}
    for name in worst:
        if name == "energy":
            ref[name] = baselines.ENERGY_BATTERY_MAX
        elif name.startswith("lp(p="):
            p = float(name[5:-1])
            if p not in baselines.LP_BATTERY_MAX:
                cfg.fail("p_list", f"no recorded baseline for p={p:g}")
            ref[name] = baselines.LP_BATTERY_MAX[p]
    return ref


def run_estimates(cfg: Config, jobs: int) -> RunOutput:
    which = cfg.option("reports", list, ["energy", "lp", "linf"])
    bad = set(which) - {"energy", "lp", "linf"}
    if bad:
        cfg.fail("options.reports", f"unknown report {sorted(bad)[0]!r}")
    ps = p_list(cfg, [2, 4, 8])
    scales = cfg.option("scales", list, [])
    out = _map(_estimates_one, [(cfg, s, which, ps, scales) for s in seeds(cfg)], jobs)
    rows = [{"seed": o["seed"], **{k: v for k, v in r.items() if k != "terms"}} for o in out for r in o["reports"]]
    checks = {"all_passed": all(r["passed"] for r in rows),
              "finite_constants": all(math.isfinite(r["implied_constant"]) for r in rows)}
    worst = {}
    for r in rows:
        worst[r["name"]] = max(worst.get(r["name"], 0.0), r["implied_constant"])
    summary = {"max_implied_constant": worst, "failures": sum(not r["passed"] for r in rows)}
    if cfg.option("baseline", bool, False):
        ref = _recorded_baselines(cfg, worst)
        summary["baseline"] = ref
        checks["within_baseline"] = all(worst[k] <= v * (1 + 1e-12) for k, v in ref.items())
    if scales:
        summary["homogeneity_gap"] = max(o["homogeneity_gap"] for o in out)
        checks["homogeneity"] = summary["homogeneity_gap"] <= cfg.tolerance("homogeneity")
    if all("lp_energy_gap" in o for o in out):
        summary["lp_energy_gap"] = max(o["lp_energy_gap"] for o in out)
        checks["lp_equals_energy"] = summary["lp_energy_gap"] <= cfg.tolerance("lp_energy")
    summary["verdict"] = _verdict(checks)
    return RunOutput(summary, {"reports": rows})


def _control_problem(cfg: Config, horizon: Optional[float] = None, p: float = 2.0) -> ControlProblem:
    tree, disc = make_tree(cfg, horizon=horizon), make_grid(cfg)
    seed = cfg.get("seed", int, 0)
    coeffs = make_coefficients(cfg, tree, disc, seed)
    data, _ = make_data(cfg, tree, disc, coeffs, seed)
    if np.any(data.F.sup_norm() != 0):
        cfg.fail("data.F", "control runs take no source term")
    return ControlProblem.from_coefficients(tree, disc, coeffs, data.yT, p=p, tol=cfg.tolerance("y0"))


def run_control(cfg: Config, jobs: int) -> RunOutput:
    problem = _control_problem(cfg)
    ps = p_list(cfg, [2])
    ladder = control_ladder(problem, ps)
    summary: dict = {"ladder": ladder["rows"]}
    checks = dict(ladder["checks"])
    checks["y0_residual"] = all(r["y0_residual"] <= cfg.tolerance("y0") for r in ladder["rows"])
    checks["duality_gap"] = all(r["verify_gap"] <= cfg.tolerance("gap") for r in ladder["rows"])
    tables = {"control": ladder["rows"]}
    first = ladder["results"][ps[0]]
    tables["h"] = field_rows(first.h, "h")
    if cfg.option("compare_dense", bool, False) and 2.0 in ladder["results"]:
        h2 = flatten_control(problem, ladder["results"][2.0].h)
        dense = dense_least_norm(problem)
        summary["oracle_h_error"] = float(np.max(np.abs(h2 - dense)))
        checks["oracle"] = summary["oracle_h_error"] <= cfg.tolerance("oracle")
    if cfg.option("observability", bool, False):
        summary["observability"] = observability_summary(problem, cfg.option("trials", int, 16),
                                                         cfg.get("seed", int, 0))
    horizons = cfg.option("horizons", list, [])
    if horizons:
        study = blowup_summary(lambda T: _control_problem(cfg, horizon=T), horizons)
        summary["blowup"] = {k: v for k, v in study.items() if k != "checks"}
        checks.update({f"blowup_{k}": v for k, v in study["checks"].items()})
        tables["blowup"] = [{"horizon": T, "cost": c} for T, c in zip(study["horizons"], study["costs"])]
    summary["verdict"] = _verdict(checks)
    return RunOutput(summary, tables)


def nonlinearity(cfg: Config) -> NonlinearitySpec:
    text = cfg.option("f", str, "s**3")
    funcs = []
    for key, default in (("f", text), ("df", None), ("d2f", None)):
        src = cfg.option(key, str, default)
        try:
            funcs.append(None if src is None else parse_formula(src, ("s",)))
        except ConfigurationError as exc:
            cfg.fail(f"options.{key}", str(exc))
    interval = cfg.option("interval", list, [-2.0, 2.0])
    return NonlinearitySpec(funcs[0], funcs[1], funcs[2], tuple(float(v) for v in interval), name=text)


def run_semilinear(cfg: Config, jobs: int) -> RunOutput:
    tree, disc = make_tree(cfg), make_grid(cfg)
    seed = cfg.get("seed", int, 0)
    coeffs = make_coefficients(cfg, tree, disc, seed)
    data, _ = make_data(cfg, tree, disc, coeffs, seed)
    tol = cfg.tolerance("picard")
    study = semilinear_study(tree, disc, coeffs, nonlinearity(cfg), np.asarray(data.yT), tol,
                             cfg.option("max_iter", int, 50), cfg.tolerance("ratio_bound"),
                             cfg.option("ladder", list, []))
    checks = study.pop("checks")
    history = study.pop("history")
    study["verdict"] = _verdict(checks)
    tables = {"history": history}
    if "ladder" in study:
        lad = study["ladder"]
        tables["ladder"] = [{"amplitude": a, "converged": c, "max_ratio": r}
                            for a, c, r in zip(lad["amplitudes"], lad["converged"], lad["max_ratios"])]
    return RunOutput(study, tables)


def run_convergence(cfg: Config, jobs: int) -> RunOutput:
    """Refinement study of the Ito residual, its truncated variant, and the initial value."""
    build = _formula_builder(cfg)
    levels_list = cfg.option("levels_list", list, [16, 32, 64])
    ps = p_list(cfg, [4])
    ratio = cfg.option("truncation_ratio", (int, float), 0.5)
    sols = [build(N) for N in levels_list]
    finest = sols[-1][0].y.level(0)[0]
    rows = []
    for N, (sol, data, coeffs) in zip(levels_list, sols):
        row = {"levels": N, "dt": sol.dt, "y0_difference": float(np.max(np.abs(sol.y.level(0)[0] - finest)))}
        for p in ps:
            row[f"ito_p{p:g}"] = reports.ito_residual(sol, data, coeffs, p, 0).expectation
            fam = TruncationFamily(max(ratio * sol.y.sup_norm(), 1e-12), p)
            row[f"phi_p{p:g}"] = reports.phi_identity_check(sol, coeffs, data, fam, 0).expectation
        rows.append(row)
    dts = [r["dt"] for r in rows]
    orders = {f"ito_p{p:g}": reports.fit_order(dts, [r[f"ito_p{p:g}"] for r in rows]) for p in ps}
    orders.update({f"phi_p{p:g}": reports.fit_order(dts, [r[f"phi_p{p:g}"] for r in rows]) for p in ps})
    y0_order = reports.fit_order(dts[:-1], [r["y0_difference"] for r in rows[:-1]]) if len(rows) > 2 else math.nan
    checks = {f"order_{k}": v >= cfg.tolerance("min_order") for k, v in orders.items()}
    summary = {"orders": orders, "y0_self_convergence_order": y0_order, "verdict": _verdict(checks)}
    return RunOutput(summary, {"convergence": rows})


def run_toolkit(cfg: Config, jobs: int) -> RunOutput:
    study = toolkit_study(cfg.get("seed", int, 0), cfg.option("triples", int, 10_000))
    checks = study.pop("checks")
    study["truncation"].pop("checks")
    study["verdict"] = _verdict(checks)
    return RunOutput(study, {})


_RUNNERS = {
    "solve": run_solve, "ito-check": run_ito_check, "estimates": run_estimates, "control": run_control,
    "semilinear": run_semilinear, "convergence": run_convergence, "toolkit-props": run_toolkit,
}


def run(config, out_dir=None, seed: Optional[int] = None, jobs: int = 1) -> RunOutput:
    """Run one experiment; ``config`` is a Config, a dict or a path to a JSON file."""
    if isinstance(config, (str, Path)):
        cfg = Config.load(config)
    elif isinstance(config, dict):
        cfg = Config(config, json.dumps(config, indent=2))
    else:
        cfg = config
    if seed is not None:
        cfg.raw = {**cfg.raw, "seed": int(seed)}
    out = _RUNNERS[cfg.kind](cfg, max(1, int(jobs)))
    out.summary = {"kind": cfg.kind, "seed": cfg.get("seed", int, 0), **out.summary}
    out.tables = {k: v for k, v in out.tables.items() if v}
    if out_dir is not None:
        write_outputs(out, cfg.raw, out_dir)
    return out

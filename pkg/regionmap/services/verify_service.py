"""
In-process verification suite behind `regionmap verify`.

Every check returns a `CheckResult`; a check that raises is reported as a
failure with the exception text. The quick suite uses reduced instance and
seed counts; `full=True` runs them at full strength and adds the
replication checks on the benchmark cases, which take several minutes.
"""

import logging
import math
import statistics
import tempfile
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Dict, List, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from regionmap.models import EvaluatedPoint
from regionmap.schemas import (
    Algorithm,
    ApproxMethod,
    BenchmarkCase,
    ExperimentConfig,
    MetricSummary,
    NbcParams,
    StopSpec,
)
from regionmap.services.approx_service import (
    bspline_project,
    delaunay,
    is_delaunay,
    kriging_fit,
    simplicial_interpolant,
    tensor_design,
)
from regionmap.services.engine_service import cma_run
from regionmap.services.experiment_service import run_experiment, run_pipeline, sweep
from regionmap.services.nea2_service import nbc
from regionmap.services.problem_service import C_FACTORS, Problem, benchmark, exact_region_points
from regionmap.services.regions_service import hausdorff

logger = logging.getLogger(__name__)

CASE_TWO_BUDGETS = (2000, 4000, 6000, 8000, 10000)
# the Hausdorff trend is judged up to this budget
CASE_TWO_TREND_LIMIT = 8000

Aggregates = Dict[Tuple[Algorithm, int], Dict[str, MetricSummary]]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


# ---- Straight-from-formula objectives ----
def _c_shape_scalar(x: float, y: float, phi: float) -> float:
    u = x * math.cos(phi) - y * math.sin(phi)
    v = x * math.sin(phi) + y * math.cos(phi)
    value = 1.0
    for (cx, cy), (rx, ry) in C_FACTORS:
        q = ((u - cx) / rx) ** 2 + ((v - cy) / ry) ** 2
        value *= 1.0 - math.exp(-math.log(2.0) * q)
    return value


def _tiles_scalar(x: float, y: float, tiles: int) -> float:
    h = 1.0
    for i in range(tiles):
        for j in range(tiles):
            h *= _c_shape_scalar(x - (2 + 4 * i), y - (2 + 4 * j), math.pi / 2 * ((i + j) % 4))
    return max((h - 0.1) / 0.9, 0.0)


def _cosine_scalar(x) -> float:
    return 2.0 - 0.5 * (math.cos(math.pi * x[0] / 5) + sum(math.cos(math.pi * xi) for xi in x[1:]))


def check_benchmark_oracles(n: int, counts: bool) -> CheckResult:
    rng = np.random.default_rng(7)
    worst = 0.0
    for case, oracle in (
        (BenchmarkCase.I, lambda p: _tiles_scalar(p[0], p[1], 2)),
        (BenchmarkCase.II, lambda p: _tiles_scalar(p[0], p[1], 5)),
        (BenchmarkCase.III, _cosine_scalar),
    ):
        problem, _ = benchmark(case)
        X = rng.uniform(problem.lower, problem.upper, size=(n, problem.dimension))
        got = problem.objective(X)
        expected = np.array([oracle(p) for p in X])
        worst = max(worst, float(np.max(np.abs(got - expected))))
    detail = f"max deviation {worst:.2e}"
    passed = worst <= 1e-12
    if counts:
        found = []
        for case, expected_count in ((BenchmarkCase.I, 4), (BenchmarkCase.II, 25)):
            problem, truth = benchmark(case)
            comps = exact_region_points(problem, truth.region_cutoff, truth.grid_step)
            found.append(len(comps))
            passed = passed and len(comps) == expected_count
        detail += f", components {found}"
    return CheckResult("benchmark oracles", passed, detail)


def _quadratic_problem(scale: float = 1.0) -> Problem:
    return Problem("sphere", [[-5.0, 5.0], [-5.0, 5.0]], lambda X: scale * np.sum(np.atleast_2d(X) ** 2, axis=1))


def check_cma_sphere(seeds: int, required: int) -> CheckResult:
    stop = StopSpec(stagnation_tol=None, stop_fitness=1e-8, max_evaluations=2000)
    hits = 0
    for seed in range(seeds):
        state = cma_run(_quadratic_problem(), [1.0, 1.0], 0.5, stop, np.random.default_rng(seed), popsize=8)
        hits += state.best.f < 1e-8
    return CheckResult("cma-es sphere", hits >= required, f"{hits}/{seeds} below 1e-8")


def check_cma_flat(seeds: int, required: int) -> CheckResult:
    flat = Problem("flat", [[-5.0, 5.0], [-5.0, 5.0]], lambda X: np.zeros(np.atleast_2d(X).shape[0]))
    stop = StopSpec(stagnation_tol=None, sigma_increase=True, max_iterations=50)
    hits = 0
    for seed in range(seeds):
        state = cma_run(flat, [0.0, 0.0], 0.5, stop, np.random.default_rng(seed))
        hits += state.stop_reason == "sigma_increase"
    return CheckResult("cma-es flat sigma stop", hits >= required, f"{hits}/{seeds} stopped on sigma increase")


def brute_force_nbc(points: List[EvaluatedPoint], phi: float, b: float) -> List[set]:
    """Quadratic nearest-better search with explicit rule application."""
    n = len(points)
    parent, length = [-1] * n, [0.0] * n
    for i in range(n):
        best = None
        for j in range(n):
            if (points[j].f, points[j].index) < (points[i].f, points[i].index):
                d = float(np.linalg.norm(points[i].x - points[j].x))
                if best is None or (d, points[j].index) < best[0]:
                    best = ((d, points[j].index), j)
        if best is not None:
            parent[i], length[i] = best[1], best[0][0]
    edges = {i for i in range(n) if parent[i] >= 0}
    if edges:
        mean = sum(length[i] for i in edges) / len(edges)
        edges = {i for i in edges if not length[i] > phi * mean}
    cut = set()
    for j in range(n):
        incoming = [length[i] for i in edges if parent[i] == j]
        if len(incoming) >= 3 and j in edges and length[j] > b * statistics.median(incoming):
            cut.add(j)
    edges -= cut
    groups = {i: {i} for i in range(n)}
    for i in edges:
        merged = groups[i] | groups[parent[i]]
        for k in merged:
            groups[k] = merged
    return sorted({frozenset(g) for g in groups.values()}, key=min)


def check_nbc_oracle(instances: int) -> CheckResult:
    rng = np.random.default_rng(11)
    for t in range(instances):
        n, d = int(rng.integers(1, 51)), int(rng.integers(1, 5))
        X = rng.uniform(-5, 5, size=(n, d))
        f = np.round(rng.uniform(0, 3, size=n), 1)
        points = [EvaluatedPoint(X[i], float(f[i]), i) for i in range(n)]
        params = NbcParams(phi=float(rng.uniform(1.0, 3.0)), b=float(rng.uniform(1.0, 4.0)))
        got = sorted((frozenset(p.index for p in c.points) for c in nbc(points, params)), key=min)
        if got != brute_force_nbc(points, params.phi, params.b):
            return CheckResult("nbc oracle", False, f"instance {t} differs")
    return CheckResult("nbc oracle", True, f"{instances} instances")


def check_approximation(instances: int) -> CheckResult:
    rng = np.random.default_rng(5)
    for d, n in ((2, 60), (4, 40)):
        for _ in range(max(1, instances // 2)):
            if not is_delaunay(delaunay(rng.uniform(0, 1, size=(n, d)))):
                return CheckResult("approximation", False, f"empty circumsphere violated in {d}D")
    X = rng.uniform(0, 1, size=(40, 2))
    a, c = rng.normal(size=2), float(rng.normal())
    model = bspline_project(simplicial_interpolant(X, X @ a + c), [0, 0], [1, 1], 8, ApproxMethod.L2)
    queries = rng.uniform(0, 1, size=(100, 2))
    affine_err = float(np.max(np.abs(model(queries) - (queries @ a + c))))
    y = np.sin(3 * X[:, 0]) + X[:, 1]
    kriging_err = float(np.max(np.abs(kriging_fit(X, y)(X) - y)))
    unity_err = float(np.max(np.abs(np.asarray(tensor_design(queries, np.zeros(2), np.ones(2), 8).sum(axis=1)).ravel() - 1)))
    passed = affine_err <= 1e-6 and kriging_err <= 1e-6 and unity_err <= 1e-10
    return CheckResult(
        "approximation", passed,
        f"affine {affine_err:.1e}, kriging {kriging_err:.1e}, unity {unity_err:.1e}",
    )


def check_hausdorff_oracle(pairs: int) -> CheckResult:
    rng = np.random.default_rng(3)
    for _ in range(pairs):
        d = int(rng.integers(1, 5))
        A = rng.normal(size=(int(rng.integers(1, 40)), d))
        B = rng.normal(size=(int(rng.integers(1, 40)), d))
        D = cdist(A, B)
        oracle = max(D.min(axis=1).max(), D.min(axis=0).max())
        if not math.isclose(hausdorff(A, B), oracle, rel_tol=1e-12, abs_tol=1e-12):
            return CheckResult("hausdorff oracle", False, "mismatch against the dense oracle")
    return CheckResult("hausdorff oracle", True, f"{pairs} pairs")


def check_determinism() -> CheckResult:
    config = ExperimentConfig(case=BenchmarkCase.I, budget=300, methods=[ApproxMethod.KRIGING])
    first = run_pipeline(config, 1).record.model_dump(exclude={"wall_time"})
    second = run_pipeline(config, 1).record.model_dump(exclude={"wall_time"})
    return CheckResult("end-to-end determinism", first == second, "two runs with seed 1")


def check_case_one_clusters(repeats: int, required: int) -> CheckResult:
    config = ExperimentConfig(case=BenchmarkCase.I, budget=500, repeats=repeats, methods=[ApproxMethod.KRIGING])
    report = run_experiment(config)
    hits = sum(3 <= r.clusters_reduced <= 5 for r in report.runs)
    return CheckResult("case I reduced clusters", hits >= required, f"{hits}/{repeats} runs with 3..5 clusters")


@lru_cache(maxsize=None)
def _case_two_aggregates(repeats: int) -> Aggregates:
    """Case II Kriging sweep over CASE_TWO_BUDGETS for both algorithms, seeds 0 .. repeats - 1."""
    config = ExperimentConfig(case=BenchmarkCase.II, repeats=repeats, methods=[ApproxMethod.KRIGING])
    with tempfile.TemporaryDirectory() as out_root:
        cells = sweep(config, list(CASE_TWO_BUDGETS), [Algorithm.HMS, Algorithm.NEA2], out_root)
    return {(algorithm, budget): report.aggregate for algorithm, budget, report in cells}


def _summary(aggregates: Aggregates, algorithm: Algorithm, budget: int, name: str) -> MetricSummary:
    return aggregates.get((algorithm, budget), {}).get(name) or MetricSummary()


def evaluate_case_two_hausdorff(aggregates: Aggregates) -> CheckResult:
    top = max(CASE_TWO_BUDGETS)
    hms = _summary(aggregates, Algorithm.HMS, top, "hausdorff_kriging").mean
    nea2 = _summary(aggregates, Algorithm.NEA2, top, "hausdorff_kriging").mean
    passed = hms is not None and nea2 is not None and hms <= 0.9 and nea2 >= 1.1
    return CheckResult("case II kriging hausdorff", passed, f"hms {hms}, nea2 {nea2}")


def evaluate_case_two_sweep(aggregates: Aggregates) -> CheckResult:
    """
    HMS Hausdorff means non-increasing up to CASE_TWO_TREND_LIMIT within one
    pooled std, NEA2 means within 0.15 of each other, and HMS coverage
    growing by at least 0.1 while ending above NEA2.
    """
    trend_budgets = [b for b in CASE_TWO_BUDGETS if b <= CASE_TWO_TREND_LIMIT]
    trend_ok = True
    for low, high in zip(trend_budgets, trend_budgets[1:]):
        a = _summary(aggregates, Algorithm.HMS, low, "hausdorff_kriging")
        b = _summary(aggregates, Algorithm.HMS, high, "hausdorff_kriging")
        if a.mean is None or b.mean is None:
            trend_ok = False
            break
        pooled = math.sqrt(((a.std or 0.0) ** 2 + (b.std or 0.0) ** 2) / 2)
        trend_ok = trend_ok and b.mean <= a.mean + pooled

    nea2_means = [_summary(aggregates, Algorithm.NEA2, b, "hausdorff_kriging").mean for b in CASE_TWO_BUDGETS]
    nea2_spread = None if None in nea2_means else max(nea2_means) - min(nea2_means)
    stagnation_ok = nea2_spread is not None and nea2_spread < 0.15

    low, top = min(CASE_TWO_BUDGETS), max(CASE_TWO_BUDGETS)
    start = _summary(aggregates, Algorithm.HMS, low, "covered_ratio").mean
    end = _summary(aggregates, Algorithm.HMS, top, "covered_ratio").mean
    rival = _summary(aggregates, Algorithm.NEA2, top, "covered_ratio").mean
    coverage_ok = None not in (start, end, rival) and end - start >= 0.1 and end > rival

    return CheckResult(
        "case II budget sweep",
        trend_ok and stagnation_ok and coverage_ok,
        f"hms trend {'ok' if trend_ok else 'broken'}, nea2 spread {nea2_spread}, "
        f"hms coverage {start} -> {end}, nea2 coverage {rival}",
    )


def check_case_two_hausdorff(repeats: int) -> CheckResult:
    return evaluate_case_two_hausdorff(_case_two_aggregates(repeats))


def check_case_two_sweep(repeats: int) -> CheckResult:
    return evaluate_case_two_sweep(_case_two_aggregates(repeats))


def check_case_three(repeats: int) -> CheckResult:
    reports = {}
    for algorithm in (Algorithm.HMS, Algorithm.NEA2):
        config = ExperimentConfig(
            case=BenchmarkCase.III, algorithm=algorithm, budget=50000, repeats=repeats,
            methods=[ApproxMethod.H1, ApproxMethod.KRIGING],
        )
        reports[algorithm] = run_experiment(config).aggregate
    return evaluate_case_three(reports[Algorithm.HMS], reports[Algorithm.NEA2])


def evaluate_case_three(hms: Dict[str, MetricSummary], nea2: Dict[str, MetricSummary]) -> CheckResult:
    """Coverage gap of at least 0.05, HMS Kriging below NEA2 Kriging, H1 above Kriging by at least 1."""
    empty = MetricSummary()
    cov_gap = (hms.get("minima_coverage", empty).mean or 0.0) - (nea2.get("minima_coverage", empty).mean or 0.0)
    h1, kr = hms.get("hausdorff_h1", empty).mean, hms.get("hausdorff_kriging", empty).mean
    rival = nea2.get("hausdorff_kriging", empty).mean
    passed = (
        cov_gap >= 0.05
        and None not in (h1, kr, rival)
        and kr < rival
        and h1 - kr >= 1.0
    )
    return CheckResult(
        "case III coverage and hausdorff",
        passed,
        f"coverage gap {cov_gap:.3f}, h1 {h1}, kriging {kr}, nea2 kriging {rival}",
    )


def run_checks(full: bool = False) -> List[CheckResult]:
    checks: List[Tuple[str, Callable[[], CheckResult]]] = [
        ("benchmark oracles", lambda: check_benchmark_oracles(10000 if full else 1000, counts=full)),
        ("cma-es sphere", lambda: check_cma_sphere(10, 9) if full else check_cma_sphere(3, 3)),
        ("cma-es flat sigma stop", lambda: check_cma_flat(20, 18) if full else check_cma_flat(5, 4)),
        ("nbc oracle", lambda: check_nbc_oracle(200 if full else 40)),
        ("approximation", lambda: check_approximation(10 if full else 2)),
        ("hausdorff oracle", lambda: check_hausdorff_oracle(100 if full else 20)),
        ("end-to-end determinism", check_determinism),
    ]
    if full:
        checks += [
            ("case I reduced clusters", lambda: check_case_one_clusters(10, 8)),
            ("case II kriging hausdorff", lambda: check_case_two_hausdorff(10)),
            ("case II budget sweep", lambda: check_case_two_sweep(10)),
            ("case III coverage and hausdorff", lambda: check_case_three(10)),
        ]
    results = []
    for name, check in checks:
        try:
            result = check()
        except Exception as exc:
            logger.exception("check %s raised", name)
            result = CheckResult(name, False, f"{type(exc).__name__}: {exc}")
        logger.info("verify: %s %s", name, "ok" if result.passed else "FAILED")
        results.append(result)
    return results


def format_table(results: List[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check'.ljust(width)}  result  detail"]
    for r in results:
        lines.append(f"{r.name.ljust(width)}  {'pass' if r.passed else 'FAIL':6}  {r.detail}")
    return "\n".join(lines)

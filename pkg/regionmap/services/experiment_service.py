"""
Experiment orchestration.

`run_pipeline` executes the whole region-discovery chain for one seed:
global phase, cluster extraction, hill-valley reduction, resizing, the
local phase, surrogate fitting, level sets and metrics. `run_experiment`
repeats it over consecutive seeds (optionally in a process pool),
aggregates the records and writes the experiment directory. `sweep` runs
one experiment per (algorithm, budget) cell.
"""

import csv
import io
import json
import logging
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

import numpy as np

from regionmap.exceptions import RegionMapError
from regionmap.models import Cluster
from regionmap.schemas import (
    AGGREGATED_FIELDS,
    Algorithm,
    ApproxMethod,
    BenchmarkCase,
    ExperimentConfig,
    RunFailure,
    RunRecord,
    RunReport,
)
from regionmap.services.approx_service import Surrogate, fit_surrogate
from regionmap.services.hms_service import extract_clusters, hms_run
from regionmap.services.localphase_service import merge_clusters, mwea_run, resize_cluster
from regionmap.services.nea2_service import nea2_search
from regionmap.services.problem_service import GroundTruth, Problem, benchmark, grid_points, lattice
from regionmap.services.regions_service import (
    RegionApproximation,
    coverage_ratio,
    evaluate_chunked,
    isolines,
    level_set,
    minima_coverage,
    region_distances,
)
from regionmap.services.storage_service import write_text_atomic
from regionmap.utils.blocks import format_blocks
from regionmap.utils.budget import Budget

logger = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "seed",
    "evaluations",
    "local_evaluations",
    "clusters_global",
    "clusters_reduced",
    "clusters_local",
    "covered_ratio",
    "minima_coverage",
    "regions_missed",
    "downgrades",
)


@dataclass
class PipelineResult:
    record: Optional[RunRecord]
    problem: Problem
    truth: GroundTruth
    # clusters after the global phase, after reduction and after the local phase
    snapshots: Dict[str, List[Cluster]] = field(default_factory=dict)
    surrogates: List[Tuple[ApproxMethod, Surrogate]] = field(default_factory=list)
    approximations: List[RegionApproximation] = field(default_factory=list)


def build_benchmark(config: ExperimentConfig) -> Tuple[Problem, GroundTruth]:
    dimension = 4 if config.case is BenchmarkCase.III else 2
    return benchmark(
        config.case,
        grid_step=config.grid.region_step_for(dimension),
        box_radius=config.grid.region_box_radius_4d,
        ellipsoid_axes=config.ellipsoid_axes,
    )


def _global_phase(config: ExperimentConfig, problem: Problem, seq: np.random.SeedSequence):
    if config.algorithm is Algorithm.HMS:
        tree, points = hms_run(problem, config.hms, seq)
        clusters = extract_clusters(tree, points)
        reasons = Counter(leaf.stop_reason or "active" for leaf in tree.children)
        return clusters, dict(sorted(reasons.items())), tree.history
    result = nea2_search(problem, config.budget, config.nea2, seq)
    reasons = Counter(run["stop_reason"] for entry in result.trace for run in entry["runs"])
    return result.clusters, dict(sorted(reasons.items())), result.trace


def run_pipeline(config: ExperimentConfig, seed: int) -> PipelineResult:
    """Run every stage once for `seed`; cluster-level failures are recorded, not raised."""
    started = time.perf_counter()
    problem, truth = build_benchmark(config)
    global_seq, local_seq = np.random.SeedSequence(seed).spawn(2)

    raw, stop_reasons, trace = _global_phase(config, problem, global_seq)
    evaluations = problem.eval_counter
    logger.info("run %d: global phase %s gave %d clusters in %d evaluations", seed, config.algorithm.value, len(raw), evaluations)

    errors: List[str] = []
    local_budget = Budget(config.local_budget)
    reduced = merge_clusters(raw, problem, config.hill_valley_points, local_budget)

    local: List[Cluster] = []
    for cluster, child in zip(reduced, local_seq.spawn(len(reduced))):
        rng = np.random.default_rng(child)
        try:
            resized = resize_cluster(cluster, config.mwea.min_size, config.mwea.max_size, rng)
            if resized is None:
                errors.append(f"cluster {cluster.id}: empty, dropped")
                continue
            local.append(mwea_run(resized, problem, config.mwea, rng, local_budget))
        except RegionMapError as exc:
            logger.warning("run %d: local phase failed for cluster %d: %s", seed, cluster.id, exc)
            errors.append(f"cluster {cluster.id}: {exc}")
    local_evaluations = problem.eval_counter - evaluations
    logger.info("run %d: %d reduced, %d local clusters, %d local evaluations", seed, len(reduced), len(local), local_evaluations)

    result = PipelineResult(
        record=None,
        problem=problem,
        truth=truth,
        snapshots={"global": raw, "reduced": reduced, "local": local},
    )
    downgrades = 0
    for method in config.methods:
        for cluster in local:
            try:
                surrogate = fit_surrogate(cluster, method, config.grid, problem.lower, problem.upper)
                approx = level_set(surrogate, cluster, config.epsilon, truth.grid_step, anchor=problem.lower)
            except RegionMapError as exc:
                logger.warning("run %d: %s surrogate failed for cluster %d: %s", seed, method.value, cluster.id, exc)
                errors.append(f"cluster {cluster.id} {method.value}: {exc}")
                continue
            if surrogate.downgraded_from is not None:
                downgrades += 1
            if approx.empty:
                errors.append(f"cluster {cluster.id} {method.value}: empty region")
            result.surrogates.append((method, surrogate))
            result.approximations.append(replace(approx, method=method))

    covered = minima = None
    if truth.minima.size:
        minima = minima_coverage(local, truth)
    else:
        covered = coverage_ratio(local, truth)
    rows = region_distances([a for a in result.approximations if not a.empty], truth)
    hausdorff = {}
    for method in config.methods:
        values = [r.distance for r in rows if r.method is method and r.distance is not None]
        hausdorff[method.value] = float(np.mean(values)) if values else None
    paired = {r.region for r in rows}

    result.record = RunRecord(
        seed=seed,
        case=config.case,
        algorithm=config.algorithm,
        budget=config.budget,
        evaluations=evaluations,
        local_evaluations=local_evaluations,
        clusters_global=len(raw),
        clusters_reduced=len(reduced),
        clusters_local=len(local),
        covered_ratio=covered,
        minima_coverage=minima,
        hausdorff=hausdorff,
        regions_missed=truth.region_count - len(paired),
        region_distances=rows,
        stop_reasons=stop_reasons,
        downgrades=downgrades,
        cluster_errors=errors,
        wall_time=time.perf_counter() - started,
        trace=trace,
    )
    logger.info(
        "run %d: covered=%s minima=%s hausdorff=%s",
        seed, covered, minima, {k: None if v is None else round(v, 4) for k, v in hausdorff.items()},
    )
    return result


# ---- Output files ----
def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def metrics_csv(records: Iterable[RunRecord], methods: List[ApproxMethod]) -> str:
    """One row per run; wall time is left out so reruns are byte-identical."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = list(METRIC_COLUMNS) + [f"hausdorff_{m.value}" for m in methods]
    writer.writerow(header)
    for rec in records:
        row = [_fmt(getattr(rec, name)) for name in METRIC_COLUMNS]
        row += [_fmt(rec.hausdorff.get(m.value)) for m in methods]
        writer.writerow(row)
    return buf.getvalue()


def _surrogate_grid_values(surrogate: Surrogate, step: float, anchor: np.ndarray):
    lo, hi = surrogate.domain
    xs, ys = lattice(lo, hi, step, anchor)
    values = evaluate_chunked(surrogate, grid_points([xs, ys])).reshape(len(xs), len(ys))
    return xs, ys, values


def exact_isolines(problem: Problem, truth: GroundTruth) -> str:
    xs, ys = lattice(problem.lower, problem.upper, truth.grid_step, problem.lower)
    values = evaluate_chunked(problem.objective, grid_points([xs, ys])).reshape(len(xs), len(ys))
    return format_blocks(isolines(values, xs, ys, truth.region_cutoff))


def render_outputs(result: PipelineResult, run: int) -> Dict[str, str]:
    """File name -> content for every per-run data file."""
    files: Dict[str, str] = {}
    for stage, clusters in result.snapshots.items():
        files[f"clusters-{stage}-{run}.dat"] = format_blocks(c.array for c in clusters if c.points)

    counters: Counter = Counter()
    for approx in result.approximations:
        k = counters[approx.method]
        counters[approx.method] += 1
        files[f"region-{approx.method.value}-{run}-{k}.dat"] = format_blocks([approx.points])

    counters.clear()
    for method, surrogate in result.surrogates:
        k = counters[method]
        counters[method] += 1
        files[f"surrogate-{method.value}-{run}-{k}.json"] = json.dumps(surrogate.to_record(), sort_keys=True) + "\n"

    if result.problem.dimension == 2:
        per_method: Dict[ApproxMethod, List[np.ndarray]] = {}
        for approx in result.approximations:
            if approx.empty:
                continue
            xs, ys, values = _surrogate_grid_values(approx.surrogate, approx.grid_step, result.problem.lower)
            per_method.setdefault(approx.method, []).extend(isolines(values, xs, ys, approx.level))
        for method, segments in per_method.items():
            files[f"isoline-{method.value}-{run}.dat"] = format_blocks(segments)
    return files


def _run_worker(config_data: Dict[str, Any], seed: int, run: int) -> Tuple[int, Optional[str], Dict[str, str], Optional[str]]:
    """Process-pool entry point; returns only plain data."""
    config = ExperimentConfig.model_validate(config_data)
    try:
        result = run_pipeline(config, seed)
        return seed, result.record.model_dump_json(), render_outputs(result, run), None
    except Exception as exc:
        logger.exception("run with seed %d failed", seed)
        return seed, None, {}, f"{type(exc).__name__}: {exc}"


def run_experiment(
    config: ExperimentConfig,
    out_dir: Optional[Union[str, Path]] = None,
    jobs: Optional[int] = None,
) -> RunReport:
    """
    Run `repeats` pipelines with seeds seed .. seed + repeats - 1 and aggregate them.

    Failed runs are excluded from the aggregate and listed in the report.
    When `out_dir` is given the full experiment directory is written.
    """
    jobs = jobs or config.jobs
    seeds = [config.seed + i for i in range(config.repeats)]
    payload = config.model_dump(mode="json")
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(seeds))) as pool:
            outcomes = list(pool.map(_run_worker, [payload] * len(seeds), seeds, range(len(seeds))))
    else:
        outcomes = [_run_worker(payload, s, i) for i, s in enumerate(seeds)]
    outcomes.sort(key=lambda o: o[0])

    records: List[RunRecord] = []
    failures: List[RunFailure] = []
    files: Dict[str, str] = {}
    for seed, record_json, run_files, error in outcomes:
        if error is not None:
            failures.append(RunFailure(seed=seed, error=error))
            continue
        records.append(RunRecord.model_validate_json(record_json))
        files.update(run_files)
    if failures:
        logger.warning("run_experiment: %d of %d runs failed and are excluded", len(failures), len(seeds))

    report = RunReport(config=config, runs=records, failures=failures)
    if out_dir is not None:
        write_experiment(report, Path(out_dir), files)
    return report


def write_experiment(report: RunReport, out_dir: Path, files: Dict[str, str]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_text_atomic(out_dir / "config.resolved.json", report.config.model_dump_json(indent=2) + "\n")
    write_text_atomic(out_dir / "report.json", report.model_dump_json(indent=2) + "\n")
    write_text_atomic(out_dir / "metrics.csv", metrics_csv(report.runs, report.config.methods))
    for name, text in sorted(files.items()):
        write_text_atomic(out_dir / name, text)
    if report.config.case is not BenchmarkCase.III:
        problem, truth = build_benchmark(report.config)
        write_text_atomic(out_dir / "isoline-exact.dat", exact_isolines(problem, truth))
    logger.info("run_experiment: wrote %d runs to %s", len(report.runs), out_dir)


def read_report(path: Union[str, Path]) -> RunReport:
    return RunReport.model_validate_json(Path(path).read_text(encoding="utf-8"))


def parse_budgets(text: str) -> List[int]:
    """'A:B:S' -> [A, A+S, ..., B]; a comma list is taken as is."""
    if ":" in text:
        parts = [int(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0 or parts[0] > parts[1]:
            raise ValueError(f"budget range must be START:STOP:STEP, got {text!r}")
        start, stop, step = parts
        return list(range(start, stop + 1, step))
    return [int(p) for p in text.split(",") if p.strip()]


def sweep(
    config: ExperimentConfig,
    budgets: List[int],
    algorithms: List[Algorithm],
    out_root: Union[str, Path],
    jobs: Optional[int] = None,
) -> List[Tuple[Algorithm, int, RunReport]]:
    """One experiment per (algorithm, budget) cell plus a sweep.csv of aggregate means and stds."""
    out_root = Path(out_root)
    cells = []
    for algorithm in algorithms:
        for budget in budgets:
            cell = config.model_copy(update={"algorithm": algorithm, "budget": budget})
            cell = ExperimentConfig.model_validate(cell.model_dump())
            report = run_experiment(cell, out_root / f"{algorithm.value}-{budget}", jobs)
            cells.append((algorithm, budget, report))

    names = list(AGGREGATED_FIELDS) + [f"hausdorff_{m.value}" for m in config.methods]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["algorithm", "budget", "runs", "failures"] + [f"{n}_{s}" for n in names for s in ("mean", "std")])
    for algorithm, budget, report in cells:
        row = [algorithm.value, budget, len(report.runs), len(report.failures)]
        for name in names:
            summary = report.aggregate.get(name)
            row += [_fmt(summary.mean if summary else None), _fmt(summary.std if summary else None)]
        writer.writerow(row)
    write_text_atomic(out_root / "sweep.csv", buf.getvalue())
    return cells

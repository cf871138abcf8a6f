"""
NEA2 global phase: uniform sampling, Nearest Better Clustering and one
CMA-ES run per cluster, repeated until the evaluation budget is used up.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Union

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist

from regionmap.exceptions import InvalidArgumentError
from regionmap.models import Cluster, ClusterStage, EvaluatedPoint
from regionmap.schemas import NbcParams, Nea2Config
from regionmap.services.engine_service import cma_run
from regionmap.services.problem_service import Problem
from regionmap.utils.budget import Budget

logger = logging.getLogger(__name__)


@dataclass
class NearestBetterGraph:
    """parent[i] is the nearest better neighbor of i (-1 for none), length[i] its distance."""

    parent: np.ndarray
    length: np.ndarray

    @property
    def edges(self) -> np.ndarray:
        return np.flatnonzero(self.parent >= 0)


def nearest_better_graph(points: List[EvaluatedPoint]) -> NearestBetterGraph:
    n = len(points)
    X = np.vstack([p.x for p in points])
    f = np.array([p.f for p in points])
    idx = np.array([p.index for p in points])
    D = cdist(X, X)
    parent = np.full(n, -1)
    length = np.zeros(n)
    for i in range(n):
        better = (f < f[i]) | ((f == f[i]) & (idx < idx[i]))
        cand = np.flatnonzero(better)
        if cand.size == 0:
            continue
        # nearest first, ties by evaluation index
        j = cand[np.lexsort((idx[cand], D[i, cand]))[0]]
        parent[i] = j
        length[i] = D[i, j]
    return NearestBetterGraph(parent, length)


def cut_edges(graph: NearestBetterGraph, phi: float, b: float) -> np.ndarray:
    """Surviving-edge mask after the mean-length cut and then the median-incoming cut."""
    keep = graph.parent >= 0
    if not keep.any():
        return keep
    mean_length = graph.length[keep].mean()
    keep &= ~(graph.length > phi * mean_length)

    incoming: Dict[int, List[float]] = {}
    for i in np.flatnonzero(keep):
        incoming.setdefault(int(graph.parent[i]), []).append(graph.length[i])
    cut = np.zeros_like(keep)
    for j, lengths in incoming.items():
        if len(lengths) >= 3 and keep[j] and graph.length[j] > b * np.median(lengths):
            cut[j] = True
    return keep & ~cut


def nbc(points: List[EvaluatedPoint], params: NbcParams) -> List[Cluster]:
    """Nearest Better Clustering; clusters are the weakly connected components."""
    if not points:
        raise InvalidArgumentError("nbc needs at least one point")
    if not all(np.isfinite(p.f) for p in points):
        raise InvalidArgumentError("nbc needs finite fitness values")
    n = len(points)
    graph = nearest_better_graph(points)
    keep = cut_edges(graph, params.phi, params.b)
    src = np.flatnonzero(keep)
    adjacency = coo_matrix((np.ones(src.size), (src, graph.parent[src])), shape=(n, n))
    _, labels = connected_components(adjacency, directed=True, connection="weak")

    order: Dict[int, List[EvaluatedPoint]] = {}
    for p, lab in zip(points, labels):
        order.setdefault(int(lab), []).append(p)
    return [
        Cluster(id=k, stage=ClusterStage.RAW, points=members)
        for k, members in enumerate(order.values())
    ]


@dataclass
class Nea2Result:
    clusters: List[Cluster]
    evaluations: int
    # best individual of every CMA-ES run
    bests: List[EvaluatedPoint] = field(default_factory=list)
    trace: List[Dict[str, Any]] = field(default_factory=list)


def nea2_search(
    problem: Problem,
    budget: int,
    config: Nea2Config,
    seed: Union[int, np.random.SeedSequence] = 0,
) -> Nea2Result:
    if budget <= 0:
        raise InvalidArgumentError("nea2 needs a positive budget")
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    sample_seq, run_seq = seq.spawn(2)
    rng = np.random.default_rng(sample_seq)
    shared = Budget(budget)
    stop = config.cma_stop()
    sample_size = config.nbc.sample_size_for(problem.dimension)

    result = Nea2Result(clusters=[], evaluations=0)
    loop = 0
    while not shared.exhausted:
        loop += 1
        granted = shared.take(sample_size)
        X = rng.uniform(problem.lower, problem.upper, size=(sample_size, problem.dimension))[:granted]
        sample = problem.evaluate_points(X)
        groups = nbc(sample, config.nbc)
        runs = []
        for group in groups:
            if shared.exhausted:
                break
            run_rng = np.random.default_rng(run_seq.spawn(1)[0])
            state = cma_run(
                problem, group.best.x, config.sigma0, stop, run_rng,
                popsize=config.population, budget=shared,
            )
            entry = {"start": group.best.x.tolist(), "stop_reason": state.stop_reason, "iterations": state.iteration}
            if state.best is not None:
                entry["best"] = {"x": state.best.x.tolist(), "f": float(state.best.f)}
            runs.append(entry)
            if not state.population:
                continue
            result.clusters.append(
                Cluster(
                    id=len(result.clusters),
                    stage=ClusterStage.RAW,
                    points=list(state.population),
                    provenance=[len(result.clusters)],
                    converged=state.stop_reason != "budget",
                )
            )
            result.bests.append(state.best)
        result.trace.append({"loop": loop, "sample": len(sample), "groups": len(groups), "runs": runs, "evaluations": shared.used})
        logger.debug("nea2: loop %d, %d groups, %d evaluations used", loop, len(groups), shared.used)

    result.evaluations = shared.used
    logger.info("nea2_run: %d loops, %d clusters, %d evaluations", loop, len(result.clusters), shared.used)
    return result


def nea2_run(
    problem: Problem,
    budget: int,
    config: Optional[Nea2Config] = None,
    seed: Union[int, np.random.SeedSequence] = 0,
) -> List[Cluster]:
    return nea2_search(problem, budget, config or Nea2Config(), seed).clusters

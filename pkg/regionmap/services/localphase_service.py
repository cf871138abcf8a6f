"""
Cluster reduction and the local phase.

Clusters whose best points see no ridge between them are merged, the
merged clusters are brought into the configured size band, and a
multiwinner evolutionary algorithm spreads every cluster over its region.
All evaluations made here can be charged to an optional local budget.
"""

import logging
from typing import Dict, List, Optional

import numpy as np
from scipy.spatial.distance import cdist, pdist

from regionmap.exceptions import InvalidArgumentError
from regionmap.models import Cluster, ClusterStage, EvaluatedPoint, unique_points
from regionmap.schemas import MweaConfig
from regionmap.services.problem_service import Problem
from regionmap.utils.budget import Budget

logger = logging.getLogger(__name__)

HILL_VALLEY_TOL = 1e-9


def hill_valley_same_basin(
    a: EvaluatedPoint,
    b: EvaluatedPoint,
    problem: Problem,
    k: int = 3,
    budget: Optional[Budget] = None,
) -> bool:
    """
    True iff no interior point of [a, b] rises above the higher endpoint.

    Evaluates k equally spaced interior points. Without enough budget for
    all k evaluations the pair is treated as separated.
    """
    if k < 1:
        raise InvalidArgumentError("hill-valley test needs at least one interior point")
    if np.array_equal(a.x, b.x):
        return True
    if budget is not None and budget.take(k) < k:
        logger.warning("hill_valley: local budget exhausted, pair (%d, %d) kept apart", a.index, b.index)
        return False
    t = np.arange(1, k + 1) / (k + 1)
    interior = a.x + t[:, None] * (b.x - a.x)
    values = problem.evaluate_many(interior)
    return bool(np.all(values <= max(a.f, b.f) + HILL_VALLEY_TOL))


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i: int, j: int) -> None:
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            # smaller root wins so the representative does not depend on call order
            self.parent[max(ri, rj)] = min(ri, rj)


def merge_clusters(
    clusters: List[Cluster],
    problem: Problem,
    k: int = 3,
    budget: Optional[Budget] = None,
) -> List[Cluster]:
    """Transitively merge clusters whose best points pass the hill-valley test."""
    if any(c.stage is not ClusterStage.RAW for c in clusters):
        raise InvalidArgumentError("merge_clusters expects raw clusters")
    nonempty = [c for c in clusters if c.points]
    if len(nonempty) < len(clusters):
        logger.warning("merge_clusters: dropped %d empty clusters", len(clusters) - len(nonempty))
    # canonical order so the tested pairs do not depend on the input order
    ordered = sorted(nonempty, key=lambda c: c.best.sort_key())
    uf = _UnionFind(len(ordered))
    tested = 0
    for i in range(len(ordered)):
        for j in range(i + 1, len(ordered)):
            if uf.find(i) == uf.find(j):
                continue
            tested += 1
            if hill_valley_same_basin(ordered[i].best, ordered[j].best, problem, k, budget):
                uf.union(i, j)

    groups: Dict[int, List[Cluster]] = {}
    for i, c in enumerate(ordered):
        groups.setdefault(uf.find(i), []).append(c)
    reduced = []
    for new_id, members in enumerate(groups.values()):
        points = unique_points(p for c in members for p in c.points)
        provenance = sorted({pid for c in members for pid in (c.provenance or [c.id])})
        reduced.append(
            Cluster(
                id=new_id,
                stage=ClusterStage.REDUCED,
                points=points,
                provenance=provenance,
                converged=all(c.converged for c in members),
            )
        )
    logger.info(
        "merge_clusters: %d -> %d clusters, %d pairs tested", len(nonempty), len(reduced), tested
    )
    return reduced


def resize_cluster(
    cluster: Cluster,
    min_size: int,
    max_size: int,
    rng: np.random.Generator,
) -> Optional[Cluster]:
    """Subsample down to max_size or record the deficit below min_size; None drops an empty cluster."""
    if min_size > max_size:
        raise InvalidArgumentError("min_size must not exceed max_size")
    if not cluster.points:
        logger.warning("resize_cluster: cluster %d is empty, dropped", cluster.id)
        return None
    n = len(cluster.points)
    if n > max_size:
        keep = np.sort(rng.choice(n, size=max_size, replace=False))
        return _with(cluster, points=[cluster.points[i] for i in keep], deficit=0)
    if n < min_size:
        return _with(cluster, deficit=min_size - n)
    return cluster


def _with(cluster: Cluster, **changes) -> Cluster:
    values = dict(
        id=cluster.id,
        stage=cluster.stage,
        points=cluster.points,
        provenance=list(cluster.provenance),
        deficit=cluster.deficit,
        converged=cluster.converged,
    )
    values.update(changes)
    return Cluster(**values)


def diameter(X: np.ndarray) -> float:
    if X.shape[0] < 2:
        return 0.0
    return float(pdist(X).max())


def select_committee(candidates: List[EvaluatedPoint], size: int, alpha: float) -> List[EvaluatedPoint]:
    """
    Greedy committee: start from the best candidate, then repeatedly add the
    candidate maximizing alpha * (1 - rank / (N - 1)) + (1 - alpha) * d / D,
    where d is its distance to the nearest selected member and D the
    committee diameter so far (the largest d when the committee has no extent).
    """
    n = len(candidates)
    if size >= n:
        return list(candidates)
    X = np.vstack([p.x for p in candidates])
    order = sorted(range(n), key=lambda i: candidates[i].sort_key())
    rank = np.empty(n)
    rank[order] = np.arange(n)
    quality = 1.0 - rank / (n - 1) if n > 1 else np.ones(n)

    chosen = [order[0]]
    available = np.ones(n, dtype=bool)
    available[order[0]] = False
    nearest = cdist(X, X[order[0]][None, :]).ravel()
    spread = 0.0
    while len(chosen) < size:
        norm = spread if spread > 0 else float(nearest[available].max())
        norm = norm if norm > 0 else 1.0
        score = alpha * quality + (1.0 - alpha) * nearest / norm
        score[~available] = -np.inf
        pick = int(np.argmax(score))
        dists = np.linalg.norm(X - X[pick], axis=1)
        spread = max(spread, float(dists[chosen].max()))
        nearest = np.minimum(nearest, dists)
        chosen.append(pick)
        available[pick] = False
    return [candidates[i] for i in chosen]


def mwea_run(
    cluster: Cluster,
    problem: Problem,
    config: Optional[MweaConfig] = None,
    rng: Optional[np.random.Generator] = None,
    budget: Optional[Budget] = None,
) -> Cluster:
    """
    Spread a reduced cluster over its region.

    Each epoch adds one normal mutant per population member (plus the
    recorded deficit in the first epoch), then selects a committee of the
    target size from parents and mutants. Returns every point seen.
    """
    config = config or MweaConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    if cluster.stage is not ClusterStage.REDUCED:
        raise InvalidArgumentError("mwea_run expects a reduced cluster")

    population = list(cluster.points)
    accumulated = list(population)
    std = diameter(cluster.array) / 2.0
    if std <= 0:
        std = config.fallback_std
    target = len(population) + cluster.deficit

    for epoch in range(config.epochs):
        extra = cluster.deficit if epoch == 0 else 0
        parents = np.vstack([p.x for p in population])
        if extra:
            parents = np.vstack([parents, parents[rng.integers(0, len(population), size=extra)]])
        mutants = problem.clip(parents + rng.normal(0.0, std, size=parents.shape))
        granted = mutants.shape[0] if budget is None else budget.take(mutants.shape[0])
        if granted == 0:
            logger.warning("mwea: local budget exhausted in cluster %d at epoch %d", cluster.id, epoch + 1)
            break
        offspring = problem.evaluate_points(mutants[:granted])
        accumulated.extend(offspring)
        population = select_committee(population + offspring, target, config.alpha)

    logger.debug("mwea: cluster %d grew from %d to %d points", cluster.id, len(cluster.points), len(accumulated))
    return cluster.advance(ClusterStage.LOCAL, points=accumulated, deficit=0)

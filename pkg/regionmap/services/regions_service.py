"""
Region shapes from surrogates and the metrics comparing them to ground truth.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from regionmap.exceptions import InvalidArgumentError
from regionmap.models import Cluster
from regionmap.schemas import ApproxMethod, RegionDistance
from regionmap.services.approx_service import Surrogate
from regionmap.services.problem_service import GroundTruth, grid_points, lattice
from regionmap.utils.contour import isoline_segments

logger = logging.getLogger(__name__)

EVAL_CHUNK = 20000


@dataclass(frozen=True)
class RegionApproximation:
    cluster_id: int
    method: ApproxMethod
    surrogate: Surrogate
    epsilon: float
    level: float
    points: np.ndarray
    grid_step: float
    centroid: np.ndarray

    @property
    def empty(self) -> bool:
        return self.points.shape[0] == 0


def evaluate_chunked(fn, X: np.ndarray, chunk: int = EVAL_CHUNK) -> np.ndarray:
    if X.shape[0] <= chunk:
        return fn(X)
    return np.concatenate([fn(X[i:i + chunk]) for i in range(0, X.shape[0], chunk)])


def level_set(
    surrogate: Surrogate,
    cluster: Cluster,
    epsilon: float,
    grid_step: float,
    anchor: Optional[Sequence[float]] = None,
) -> RegionApproximation:
    """
    Grid points of the surrogate's domain at or below min over the cluster + epsilon.

    The grid is the lattice through `anchor` (default: the domain's lower
    corner) with spacing `grid_step`.
    """
    if epsilon <= 0 or grid_step <= 0:
        raise InvalidArgumentError("epsilon and grid_step must be positive")
    lo, hi = surrogate.domain
    anchor = lo if anchor is None else np.asarray(anchor, dtype=float)
    base = surrogate(cluster.array)
    finite = base[np.isfinite(base)]
    dim = lo.size
    if finite.size == 0:
        logger.warning("level_set: surrogate of cluster %d undefined on its points", cluster.id)
        return RegionApproximation(cluster.id, surrogate.method, surrogate, epsilon, math.nan,
                                   np.empty((0, dim)), grid_step, cluster.centroid)
    level = float(finite.min()) + epsilon
    grid = grid_points(lattice(lo, hi, grid_step, anchor))
    values = evaluate_chunked(surrogate, grid)
    points = grid[values <= level]
    if points.shape[0] == 0:
        logger.warning("level_set: empty region for cluster %d (%s)", cluster.id, surrogate.method.value)
    return RegionApproximation(cluster.id, surrogate.method, surrogate, epsilon, level, points, grid_step, cluster.centroid)


def hausdorff(A, B) -> float:
    """Symmetric Hausdorff distance; +inf if either set is empty."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.size == 0 or B.size == 0:
        logger.warning("hausdorff: empty operand, distance is infinite")
        return math.inf
    forward, _ = cKDTree(B).query(A)
    backward, _ = cKDTree(A).query(B)
    return float(max(forward.max(), backward.max()))


def coverage_ratio(clusters: List[Cluster], truth: GroundTruth) -> float:
    """Fraction of regions where a single cluster hits every coverage ellipsoid."""
    if not truth.regions or any(not r.ellipsoids for r in truth.regions):
        raise InvalidArgumentError("coverage_ratio needs regions described by ellipsoids")
    arrays = [c.array for c in clusters if c.points]
    covered = 0
    for region in truth.regions:
        if any(all(e.contains(X).any() for e in region.ellipsoids) for X in arrays):
            covered += 1
    return covered / len(truth.regions)


def minima_coverage(clusters: List[Cluster], truth: GroundTruth) -> float:
    """Fraction of known minima with some cluster point strictly closer than the radius."""
    if truth.minima.size == 0:
        raise InvalidArgumentError("minima_coverage needs a ground truth with minima")
    arrays = [c.array for c in clusters if c.points]
    if not arrays:
        return 0.0
    dist, _ = cKDTree(np.vstack(arrays)).query(truth.minima)
    return float(np.mean(dist < truth.minima_radius))


def nearest_region(truth: GroundTruth, point: np.ndarray) -> int:
    centers = np.vstack([r.center for r in truth.regions])
    return int(np.argmin(np.linalg.norm(centers - point, axis=1)))


def pair_approximations(approximations: List[RegionApproximation], truth: GroundTruth) -> Dict[int, List[RegionApproximation]]:
    """Assign each approximation to the exact region nearest to its cluster centroid."""
    pairs: Dict[int, List[RegionApproximation]] = {}
    for approx in approximations:
        pairs.setdefault(nearest_region(truth, approx.centroid), []).append(approx)
    return pairs


def region_distances(approximations: List[RegionApproximation], truth: GroundTruth) -> List[RegionDistance]:
    """One Hausdorff row per (paired region, approximation)."""
    rows = []
    for k, paired in sorted(pair_approximations(approximations, truth).items()):
        exact = truth.region_points(k)
        for approx in paired:
            rows.append(
                RegionDistance(
                    region=k,
                    method=approx.method,
                    cluster=approx.cluster_id,
                    distance=_finite_or_none(hausdorff(exact, approx.points)),
                )
            )
    return rows


def isolines(values: np.ndarray, xs: np.ndarray, ys: np.ndarray, level: float) -> List[np.ndarray]:
    """Marching-squares isoline of a 2D sampled field, one (2, 2) array per segment."""
    return [np.vstack(seg) for seg in isoline_segments(xs, ys, values, level)]


def _finite_or_none(value: float) -> Optional[float]:
    return value if math.isfinite(value) else None

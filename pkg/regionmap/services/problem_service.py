"""
Benchmark objectives and their exact insensitivity-region geometry.

The three benchmark cases are built from inverted Gaussian valleys:
three valleys multiplied together form a C-shaped lowland, rotated copies
of it are tiled over a square domain and the product is flattened at
T = 0.1, which makes the objective exactly zero on open lowland sets.
The third case is a shifted 4D Rastrigin-like cosine landscape with 27
global minima.

Objectives are vectorized: they map an (n, d) array to n values.
`Problem.evaluate*` counts evaluations; `Problem.objective` is the raw
uncounted map used for ground-truth geometry.
"""

import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from regionmap.exceptions import ConfigurationError, InvalidArgumentError
from regionmap.models import EvaluatedPoint
from regionmap.schemas import BenchmarkCase

logger = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], np.ndarray]

FLAT_THRESHOLD = 0.1
REGION_CUTOFF = 0.1
MINIMA_RADIUS = 0.4

# (center, radii) of the three valleys that make up one C-shaped lowland
C_FACTORS = (
    ((-0.8, 0.0), (0.5, 1.0)),
    ((0.0, -0.8), (1.0, 0.5)),
    ((0.8, 0.0), (0.5, 1.0)),
)


class Problem:
    """A box-constrained minimization problem with an evaluation counter."""

    def __init__(self, name: str, bounds: Sequence[Sequence[float]], objective: Objective):
        bounds = np.asarray(bounds, dtype=float)
        if bounds.ndim != 2 or bounds.shape[1] != 2 or bounds.shape[0] < 1:
            raise InvalidArgumentError("bounds must be a (dimension, 2) array")
        if np.any(bounds[:, 0] >= bounds[:, 1]):
            raise InvalidArgumentError("every bound needs lower < upper")
        self.name = name
        self.bounds = bounds
        self.objective = objective
        self._evals = 0
        self._lock = threading.Lock()

    @property
    def dimension(self) -> int:
        return self.bounds.shape[0]

    @property
    def lower(self) -> np.ndarray:
        return self.bounds[:, 0]

    @property
    def upper(self) -> np.ndarray:
        return self.bounds[:, 1]

    @property
    def eval_counter(self) -> int:
        with self._lock:
            return self._evals

    def _as_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.dimension:
            raise InvalidArgumentError(
                f"{self.name}: expected points of dimension {self.dimension}, got shape {X.shape}"
            )
        return X

    def _reserve(self, n: int) -> int:
        with self._lock:
            start = self._evals
            self._evals += n
            return start

    def evaluate(self, x) -> float:
        X = self._as_batch(x)
        if X.shape[0] != 1:
            raise InvalidArgumentError("evaluate() takes a single point")
        return float(self.evaluate_many(X)[0])

    def evaluate_many(self, X) -> np.ndarray:
        X = self._as_batch(X)
        self._reserve(X.shape[0])
        return np.asarray(self.objective(X), dtype=float)

    def evaluate_points(self, X) -> List[EvaluatedPoint]:
        """Evaluate a batch and pair every point with its evaluation index."""
        X = self._as_batch(X)
        if X.shape[0] == 0:
            return []
        start = self._reserve(X.shape[0])
        values = np.asarray(self.objective(X), dtype=float)
        return [
            EvaluatedPoint(x=X[i].copy(), f=float(values[i]), index=start + i)
            for i in range(X.shape[0])
        ]

    def clip(self, X) -> np.ndarray:
        return np.clip(X, self.lower, self.upper)

    def contains(self, X, tol: float = 0.0) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.all((X >= self.lower - tol) & (X <= self.upper + tol), axis=-1)

    def __repr__(self) -> str:
        return f"Problem({self.name!r}, dimension={self.dimension})"


# ---- Building blocks ----
def gaussian_valley(x, x0, r) -> Union[float, np.ndarray]:
    """Inverted Gaussian 1 - exp(-ln 2 (x-x0)^T S (x-x0)) with S = diag(1/r^2)."""
    x = np.asarray(x, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    r = np.asarray(r, dtype=float)
    if x0.shape != r.shape or x.shape[-1:] != x0.shape:
        raise InvalidArgumentError("x, x0 and r must share their dimension")
    if np.any(r <= 0):
        raise InvalidArgumentError("valley radii must be positive")
    q = np.sum(((x - x0) / r) ** 2, axis=-1)
    value = -np.expm1(-math.log(2.0) * q)
    return float(value) if np.ndim(value) == 0 else value


def rotate(x, phi: float) -> np.ndarray:
    """(x1 cos phi - x2 sin phi, x1 sin phi + x2 cos phi)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2:
        raise InvalidArgumentError("rotation is defined for 2D points only")
    c, s = math.cos(phi), math.sin(phi)
    return np.stack([x[..., 0] * c - x[..., 1] * s, x[..., 0] * s + x[..., 1] * c], axis=-1)


def c_shape(x, phi: float = 0.0) -> Union[float, np.ndarray]:
    """C-shaped valley (product of three inverted Gaussians), rotated by `phi`."""
    y = rotate(x, phi)
    value = np.ones(y.shape[:-1])
    for center, radii in C_FACTORS:
        value = value * gaussian_valley(y, center, radii)
    return float(value) if np.ndim(value) == 0 else value


def flatten(v, T: float = FLAT_THRESHOLD):
    """max((v - T) / (1 - T), 0); clips everything at or below T to zero."""
    if T >= 1:
        raise InvalidArgumentError("flatten threshold must be below 1")
    out = np.maximum((np.asarray(v, dtype=float) - T) / (1.0 - T), 0.0)
    return float(out) if np.ndim(out) == 0 else out


def tile_angle(i: int, j: int) -> float:
    return 0.5 * math.pi * ((i + j) % 4)


def tile_center(i: int, j: int) -> np.ndarray:
    return np.array([2.0 + 4.0 * i, 2.0 + 4.0 * j])


def tiled_c_shapes(tiles: int) -> Objective:
    """Product of rotated C-shapes over a tiles x tiles grid, flattened at 0.1."""
    layout = [(tile_center(i, j), tile_angle(i, j)) for i in range(tiles) for j in range(tiles)]

    def objective(X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        h = np.ones(X.shape[0])
        for center, theta in layout:
            h *= c_shape(X - center, theta)
        return flatten(h, FLAT_THRESHOLD)

    return objective


def cosine_landscape(X: np.ndarray) -> np.ndarray:
    """2 - (cos(pi x1 / 5) + sum_{i=2..4} cos(pi xi)) / 2, minima on {0} x {-2,0,2}^3."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    s = np.cos(math.pi * X[:, 0] / 5.0) + np.sum(np.cos(math.pi * X[:, 1:]), axis=1)
    return 2.0 - 0.5 * s


# ---- Ground truth ----
@dataclass(frozen=True)
class Ellipsoid:
    center: np.ndarray
    semiaxes: np.ndarray
    rotation: float

    def contains(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        u = rotate(X - self.center, self.rotation) / self.semiaxes
        return np.sum(u * u, axis=1) <= 1.0


@dataclass
class Region:
    center: np.ndarray
    ellipsoids: List[Ellipsoid] = field(default_factory=list)
    # search box for the exact component; None means the whole domain
    box: Optional[Tuple[np.ndarray, np.ndarray]] = None
    exact_points: Optional[np.ndarray] = None


@dataclass
class GroundTruth:
    case: BenchmarkCase
    problem: Problem
    regions: List[Region]
    grid_step: float
    region_cutoff: float = REGION_CUTOFF
    minima: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    minima_radius: float = MINIMA_RADIUS

    @property
    def region_count(self) -> int:
        return len(self.regions)

    def region_points(self, k: int) -> np.ndarray:
        """Grid discretization of region k's exact sublevel component, computed once."""
        if any(r.exact_points is None for r in self.regions):
            self._compute_exact()
        return self.regions[k].exact_points

    def _compute_exact(self) -> None:
        boxes = None
        if all(r.box is not None for r in self.regions):
            boxes = [r.box for r in self.regions]
        components = exact_region_points(
            self.problem,
            self.region_cutoff,
            self.grid_step,
            boxes=boxes,
            expected=self.region_count,
        )
        # components come in scan order; match each to the nearest region center
        centers = np.vstack([r.center for r in self.regions])
        assigned: Dict[int, np.ndarray] = {}
        for comp in components:
            k = int(np.argmin(np.linalg.norm(centers - comp.mean(axis=0), axis=1)))
            if k in assigned:
                raise ConfigurationError(f"two exact components matched region {k}")
            assigned[k] = comp
        for k, region in enumerate(self.regions):
            region.exact_points = assigned[k]
        logger.info(
            "ground truth %s: %d exact regions at step %.3g",
            self.case.value, len(components), self.grid_step,
        )


def lattice(lower, upper, step: float, anchor) -> List[np.ndarray]:
    """Per-axis coordinates anchor + k * step lying inside [lower, upper]."""
    axes = []
    for lo, hi, a in zip(np.atleast_1d(lower), np.atleast_1d(upper), np.atleast_1d(anchor)):
        k0 = math.ceil((lo - a) / step - 1e-9)
        k1 = math.floor((hi - a) / step + 1e-9)
        axes.append(a + step * np.arange(k0, k1 + 1))
    return axes


def grid_points(axes: List[np.ndarray]) -> np.ndarray:
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def exact_region_points(
    problem: Problem,
    cutoff: float,
    grid_step: float,
    boxes: Optional[List[Tuple[np.ndarray, np.ndarray]]] = None,
    expected: Optional[int] = None,
) -> List[np.ndarray]:
    """
    Connected components of {x on the grid : f(x) < cutoff}.

    The grid is the lattice anchored at the domain's lower corner. Without
    `boxes` the whole domain is scanned; with boxes each box is scanned and
    labeled separately. Components are connected through face-adjacent grid
    neighbors.
    """
    if cutoff <= 0 or grid_step <= 0:
        raise InvalidArgumentError("cutoff and grid_step must be positive")
    if boxes is None:
        boxes = [(problem.lower, problem.upper)]

    components: List[np.ndarray] = []
    for lo, hi in boxes:
        lo = np.maximum(np.asarray(lo, dtype=float), problem.lower)
        hi = np.minimum(np.asarray(hi, dtype=float), problem.upper)
        axes = lattice(lo, hi, grid_step, problem.lower)
        shape = tuple(len(a) for a in axes)
        if 0 in shape:
            continue
        pts = grid_points(axes)
        mask = (np.asarray(problem.objective(pts)) < cutoff).reshape(shape)
        labels, count = ndimage.label(mask)
        flat = labels.ravel()
        for lab in range(1, count + 1):
            components.append(pts[flat == lab])

    if expected is not None and len(components) != expected:
        raise ConfigurationError(
            f"{problem.name}: grid step {grid_step} gives {len(components)} components, expected {expected}"
        )
    return components


def _c_shape_regions(tiles: int, axes_mode: str) -> List[Region]:
    scale = 0.5 if axes_mode == "full" else 1.0
    regions = []
    for i in range(tiles):
        for j in range(tiles):
            p, theta = tile_center(i, j), tile_angle(i, j)
            ellipsoids = [
                Ellipsoid(
                    center=p + rotate(np.asarray(c), -theta),
                    semiaxes=scale * np.asarray(r, dtype=float),
                    rotation=theta,
                )
                for c, r in C_FACTORS
            ]
            regions.append(Region(center=p, ellipsoids=ellipsoids))
    return regions


def cosine_minima() -> np.ndarray:
    grid = np.array([-2.0, 0.0, 2.0])
    mesh = np.meshgrid(grid, grid, grid, indexing="ij")
    tail = np.stack([m.ravel() for m in mesh], axis=1)
    return np.hstack([np.zeros((tail.shape[0], 1)), tail])


def benchmark(
    case: Union[str, BenchmarkCase],
    grid_step: Optional[float] = None,
    box_radius: float = 1.5,
    ellipsoid_axes: str = "semiaxes",
) -> Tuple[Problem, GroundTruth]:
    """Build one of the three benchmark problems and its ground truth."""
    try:
        case = BenchmarkCase(case)
    except ValueError:
        raise InvalidArgumentError(f"unknown benchmark case {case!r}")

    if case is BenchmarkCase.I:
        problem = Problem("case-I", [[0.0, 6.0], [0.0, 6.0]], tiled_c_shapes(2))
        truth = GroundTruth(case, problem, _c_shape_regions(2, ellipsoid_axes), grid_step or 0.05)
    elif case is BenchmarkCase.II:
        problem = Problem("case-II", [[0.0, 20.0], [0.0, 20.0]], tiled_c_shapes(5))
        truth = GroundTruth(case, problem, _c_shape_regions(5, ellipsoid_axes), grid_step or 0.05)
    else:
        problem = Problem("case-III", [[-5.0, 5.0]] + [[-2.0, 2.0]] * 3, cosine_landscape)
        minima = cosine_minima()
        regions = [Region(center=m, box=(m - box_radius, m + box_radius)) for m in minima]
        truth = GroundTruth(case, problem, regions, grid_step or 0.1, minima=minima)
    return problem, truth

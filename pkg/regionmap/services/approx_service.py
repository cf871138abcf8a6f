"""
Local surrogates of the objective over a cluster.

Two families are supported:

* a first-order Lagrange interpolant on the Delaunay complex of the cluster,
  projected onto tensor-product quadratic B-splines over a regular grid by
  an L2 or H1 Galerkin projection (mass matrix M, stiffness matrix K);
* ordinary Kriging with a Gaussian kernel.

`fit_surrogate` builds the requested model for one cluster and falls back
to Kriging when the geometry or the linear system does not allow a spline
model.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, sparse
from scipy.interpolate import BSpline
from scipy.spatial import Delaunay, QhullError, cKDTree

from regionmap.exceptions import (
    ConditioningError,
    DegenerateGeometryError,
    InvalidArgumentError,
    RankDeficiencyError,
    RegionMapError,
)
from regionmap.models import Cluster
from regionmap.schemas import ApproxMethod, GridSpec

logger = logging.getLogger(__name__)

SPLINE_DEGREE = 2
GAUSS_POINTS = 3
NUGGET_START = 1e-8
NUGGET_MAX = 1e-2
MAX_CONDITION = 1e12


def average_duplicates(X, values) -> Tuple[np.ndarray, np.ndarray]:
    """Collapse repeated points into one, averaging their values."""
    X = np.asarray(X, dtype=float)
    values = np.asarray(values, dtype=float)
    unique, inverse = np.unique(X, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    sums = np.bincount(inverse, weights=values, minlength=unique.shape[0])
    counts = np.bincount(inverse, minlength=unique.shape[0])
    return unique, sums / counts


def bounding_box(X: np.ndarray, inflation: float, lower=None, upper=None) -> Tuple[np.ndarray, np.ndarray]:
    """Axis-aligned bounding box inflated by `inflation` of its width per side, clipped to the domain."""
    lo, hi = X.min(axis=0), X.max(axis=0)
    pad = inflation * (hi - lo)
    lo, hi = lo - pad, hi + pad
    if lower is not None:
        lo = np.maximum(lo, lower)
    if upper is not None:
        hi = np.minimum(hi, upper)
    return lo, hi


# ---- Delaunay complex and Lagrange interpolation ----
def delaunay(points) -> Delaunay:
    """Delaunay triangulation of at least d+1 affinely independent points."""
    X = np.asarray(points, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidArgumentError("delaunay expects an (n, d) array")
    d = X.shape[1]
    if X.shape[0] < d + 1 or np.linalg.matrix_rank(X[1:] - X[0]) < d:
        raise DegenerateGeometryError(f"{X.shape[0]} points do not span {d} dimensions")
    try:
        return Delaunay(X)
    except QhullError as exc:
        raise DegenerateGeometryError(f"qhull failed: {exc}") from exc


def in_circumsphere(vertices: np.ndarray, P, tol: float = 1e-9) -> np.ndarray:
    """
    Lifting-map predicate: a point lies strictly inside the circumsphere of
    the simplex iff its lift (p, |p|^2) lies below the hyperplane through the
    lifted vertices. Accepts one point or a batch.
    """
    V = np.asarray(vertices, dtype=float)
    P = np.asarray(P, dtype=float)
    A = np.hstack([V, np.ones((V.shape[0], 1))])
    try:
        coef = np.linalg.solve(A, np.sum(V * V, axis=1))
    except np.linalg.LinAlgError as exc:
        raise DegenerateGeometryError("flat simplex has no circumsphere") from exc
    gap = P @ coef[:-1] + coef[-1] - np.sum(P * P, axis=-1)
    scale = max(1.0, float(np.max(np.sum(V * V, axis=1))))
    return gap > tol * scale


def is_delaunay(tri: Delaunay, tol: float = 1e-9) -> bool:
    """Brute-force empty-circumsphere check over every simplex and every input point."""
    pts = tri.points
    for simplex in tri.simplices:
        inside = in_circumsphere(pts[simplex], pts, tol)
        inside[simplex] = False
        if inside.any():
            return False
    return True


@dataclass(frozen=True)
class SimplicialInterpolant:
    """Piecewise-linear interpolant on a Delaunay complex."""

    tri: Delaunay
    values: np.ndarray
    # per-simplex affine pieces: f(x) = offset + gradient . (x - origin)
    origins: np.ndarray = field(repr=False)
    offsets: np.ndarray = field(repr=False)
    gradients: np.ndarray = field(repr=False)
    centroids: cKDTree = field(repr=False)

    @property
    def vertices(self) -> np.ndarray:
        return self.tri.points

    @property
    def simplices(self) -> np.ndarray:
        return self.tri.simplices

    @property
    def dimension(self) -> int:
        return self.tri.points.shape[1]

    def locate(self, X) -> np.ndarray:
        """Containing simplex of every row, -1 outside the convex hull."""
        return self.tri.find_simplex(np.atleast_2d(np.asarray(X, dtype=float)))

    def __call__(self, X) -> np.ndarray:
        """Barycentric-linear values; NaN outside the convex hull."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        s = self.locate(X)
        out = np.full(X.shape[0], np.nan)
        inside = s >= 0
        if inside.any():
            T = self.tri.transform[s[inside]]
            d = self.dimension
            b = np.einsum("mij,mj->mi", T[:, :d, :], X[inside] - T[:, d, :])
            bary = np.hstack([b, 1.0 - b.sum(axis=1, keepdims=True)])
            out[inside] = np.sum(bary * self.values[self.simplices[s[inside]]], axis=1)
        return out

    def extended(self, X) -> Tuple[np.ndarray, np.ndarray]:
        """
        Value and gradient everywhere: inside the hull the containing simplex,
        outside it the affine piece of the simplex with the nearest centroid.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        s = self.locate(X)
        outside = s < 0
        if outside.any():
            _, s[outside] = self.centroids.query(X[outside])
        grads = self.gradients[s]
        vals = self.offsets[s] + np.sum(grads * (X - self.origins[s]), axis=1)
        return vals, grads


def simplicial_interpolant(points, values) -> SimplicialInterpolant:
    X, f = average_duplicates(points, values)
    tri = delaunay(X)
    V = tri.points[tri.simplices]
    F = f[tri.simplices]
    edges = V[:, 1:, :] - V[:, :1, :]
    rises = F[:, 1:] - F[:, :1]
    try:
        gradients = np.linalg.solve(edges, rises[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise DegenerateGeometryError("triangulation contains a flat simplex") from exc
    return SimplicialInterpolant(
        tri=tri,
        values=f,
        origins=V[:, 0, :],
        offsets=F[:, 0],
        gradients=gradients,
        centroids=cKDTree(V.mean(axis=1)),
    )


def interpolate(interp: SimplicialInterpolant, x) -> Optional[float]:
    """Interpolated value at x, or None outside the convex hull."""
    value = interp(np.asarray(x, dtype=float)[None, :])[0]
    return None if np.isnan(value) else float(value)


# ---- Tensor-product quadratic B-splines ----
def clamped_knots(lo: float, hi: float, cells: int) -> np.ndarray:
    breaks = np.linspace(lo, hi, cells + 1)
    return np.concatenate([[lo] * SPLINE_DEGREE, breaks, [hi] * SPLINE_DEGREE])


@dataclass(frozen=True)
class BsplineModel:
    lower: np.ndarray
    upper: np.ndarray
    cells: int
    coefficients: np.ndarray

    @property
    def dimension(self) -> int:
        return self.lower.size

    @property
    def knots(self) -> List[np.ndarray]:
        return [clamped_knots(lo, hi, self.cells) for lo, hi in zip(self.lower, self.upper)]

    @property
    def basis_size(self) -> int:
        return self.cells + SPLINE_DEGREE

    def design(self, X, derivative: Optional[int] = None) -> sparse.csr_matrix:
        return tensor_design(X, self.lower, self.upper, self.cells, derivative)

    def __call__(self, X) -> np.ndarray:
        """Spline values; NaN outside the box."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.full(X.shape[0], np.nan)
        inside = np.all((X >= self.lower) & (X <= self.upper), axis=1)
        if inside.any():
            out[inside] = self.design(X[inside]) @ self.coefficients.ravel()
        return out

    def gradient(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        c = self.coefficients.ravel()
        return np.stack([self.design(X, derivative=k) @ c for k in range(self.dimension)], axis=1)


def _axis_bases(x: np.ndarray, lo: float, hi: float, cells: int, derivative: bool):
    """Three local basis values per point and the index of the first of them."""
    n = cells + SPLINE_DEGREE
    spline = BSpline(clamped_knots(lo, hi, cells), np.eye(n), SPLINE_DEGREE, extrapolate=True)
    if derivative:
        spline = spline.derivative()
    xc = np.clip(x, lo, hi)
    dense = np.atleast_2d(spline(xc))
    span = np.clip(np.floor((xc - lo) / ((hi - lo) / cells)).astype(int), 0, cells - 1)
    cols = span[:, None] + np.arange(SPLINE_DEGREE + 1)
    return np.take_along_axis(dense, cols, axis=1), span


def tensor_design(
    X,
    lower: np.ndarray,
    upper: np.ndarray,
    cells: int,
    derivative: Optional[int] = None,
) -> sparse.csr_matrix:
    """Sparse (m, N) matrix of tensor-product basis values (or one partial derivative)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    m, d = X.shape
    n = cells + SPLINE_DEGREE
    local = [
        _axis_bases(X[:, k], lower[k], upper[k], cells, derivative == k) for k in range(d)
    ]
    offsets = np.array(np.meshgrid(*[np.arange(SPLINE_DEGREE + 1)] * d, indexing="ij")).reshape(d, -1)
    vals = np.ones((m, offsets.shape[1]))
    multi = []
    for k, (b, span) in enumerate(local):
        vals *= b[:, offsets[k]]
        multi.append(span[:, None] + offsets[k][None, :])
    cols = np.ravel_multi_index(tuple(multi), (n,) * d)
    rows = np.repeat(np.arange(m), offsets.shape[1])
    return sparse.csr_matrix((vals.ravel(), (rows, cols.ravel())), shape=(m, n ** d))


def quadrature(lower: np.ndarray, upper: np.ndarray, cells: int) -> Tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss-Legendre nodes and weights, GAUSS_POINTS per axis and cell."""
    nodes, weights = np.polynomial.legendre.leggauss(GAUSS_POINTS)
    axes_x, axes_w = [], []
    for lo, hi in zip(lower, upper):
        h = (hi - lo) / cells
        left = lo + h * np.arange(cells)
        axes_x.append((left[:, None] + 0.5 * h * (nodes + 1.0)).ravel())
        axes_w.append(np.tile(0.5 * h * weights, cells))
    X = np.stack([g.ravel() for g in np.meshgrid(*axes_x, indexing="ij")], axis=1)
    W = np.ones(X.shape[0])
    for g in np.meshgrid(*axes_w, indexing="ij"):
        W = W * g.ravel()
    return X, W


def bspline_project(
    interp: SimplicialInterpolant,
    lower,
    upper,
    cells: int,
    mode: ApproxMethod = ApproxMethod.L2,
) -> BsplineModel:
    """
    Galerkin projection of the interpolant onto quadratic B-splines over the box.

    L2 solves M c = (f, phi); H1 solves (M + K) c = (f, phi) + (grad f, grad phi).
    """
    mode = ApproxMethod(mode)
    if mode is ApproxMethod.KRIGING:
        raise InvalidArgumentError("kriging is not a spline projection")
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(upper <= lower):
        raise DegenerateGeometryError("grid box has no extent along some axis")
    hull = interp.vertices
    if np.any(hull.min(axis=0) < lower - 1e-12) or np.any(hull.max(axis=0) > upper + 1e-12):
        raise InvalidArgumentError("grid box must contain the interpolant's vertices")

    Q, W = quadrature(lower, upper, cells)
    fq, gq = interp.extended(Q)
    Phi = tensor_design(Q, lower, upper, cells)
    Wd = sparse.diags(W)
    A = Phi.T @ Wd @ Phi
    rhs = Phi.T @ (W * fq)
    if mode is ApproxMethod.H1:
        for k in range(interp.dimension):
            dPhi = tensor_design(Q, lower, upper, cells, derivative=k)
            A = A + dPhi.T @ Wd @ dPhi
            rhs = rhs + dPhi.T @ (W * gq[:, k])
    try:
        factor = linalg.cho_factor(A.toarray())
    except linalg.LinAlgError as exc:
        raise RankDeficiencyError(f"{mode.value} system is not positive definite") from exc
    coef = linalg.cho_solve(factor, rhs)
    n = cells + SPLINE_DEGREE
    return BsplineModel(lower, upper, cells, coef.reshape((n,) * interp.dimension))


# ---- Ordinary Kriging ----
def gaussian_kernel(A: np.ndarray, B: np.ndarray, length_scale: float) -> np.ndarray:
    sq = np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * A @ B.T
    return np.exp(-np.maximum(sq, 0.0) / (2.0 * length_scale ** 2))


@dataclass(frozen=True)
class KrigingModel:
    points: np.ndarray
    values: np.ndarray
    length_scale: float
    nugget: float
    mean: float
    weights: np.ndarray

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return gaussian_kernel(X, self.points, self.length_scale) @ self.weights + self.mean

    def _system(self) -> np.ndarray:
        n = self.points.shape[0]
        A = np.ones((n + 1, n + 1))
        A[:n, :n] = gaussian_kernel(self.points, self.points, self.length_scale) + self.nugget * np.eye(n)
        A[n, n] = 0.0
        return A


def kriging_weights(model: KrigingModel, x) -> np.ndarray:
    """Weights of the training values in the prediction at x; they sum to one."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    rhs = np.append(gaussian_kernel(model.points, x, model.length_scale).ravel(), 1.0)
    return linalg.solve(model._system(), rhs)[:-1]


def kriging_fit(points, values, length_scale: Optional[float] = None) -> KrigingModel:
    """Ordinary Kriging through the points, nugget raised tenfold until the system is usable."""
    X, y = average_duplicates(points, values)
    n = X.shape[0]
    if n < 2:
        raise InvalidArgumentError("kriging needs at least two distinct points")
    if length_scale is None:
        dist, _ = cKDTree(X).query(X, k=2)
        length_scale = float(np.median(dist[:, 1]))
    K = gaussian_kernel(X, X, length_scale)
    A = np.ones((n + 1, n + 1))
    A[n, n] = 0.0
    rhs = np.append(y, 0.0)
    nugget = NUGGET_START
    while nugget <= NUGGET_MAX * (1 + 1e-9):
        A[:n, :n] = K + nugget * np.eye(n)
        if np.linalg.cond(A) < MAX_CONDITION:
            lu = linalg.lu_factor(A)
            sol = linalg.lu_solve(lu, rhs)
            return KrigingModel(X, y, length_scale, nugget, float(sol[-1]), sol[:-1])
        logger.debug("kriging: system ill-conditioned at nugget %.0e", nugget)
        nugget *= 10.0
    raise ConditioningError(f"kriging system singular up to nugget {NUGGET_MAX:g}")


# ---- Surrogates ----
@dataclass(frozen=True)
class Surrogate:
    cluster_id: int
    method: ApproxMethod
    model: Any
    lower: np.ndarray
    upper: np.ndarray
    downgraded_from: Optional[ApproxMethod] = None

    @property
    def domain(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.lower, self.upper

    def __call__(self, X) -> np.ndarray:
        """Surrogate values; NaN outside its domain."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.full(X.shape[0], np.nan)
        inside = np.all((X >= self.lower) & (X <= self.upper), axis=1)
        if inside.any():
            out[inside] = self.model(X[inside])
        return out

    def to_record(self) -> Dict[str, Any]:
        record: Dict[str, Any] = {
            "cluster": self.cluster_id,
            "method": self.method.value,
            "downgraded_from": self.downgraded_from.value if self.downgraded_from else None,
            "domain": [self.lower.tolist(), self.upper.tolist()],
        }
        if isinstance(self.model, BsplineModel):
            record["cells"] = self.model.cells
            record["degree"] = SPLINE_DEGREE
            record["knots"] = [t.tolist() for t in self.model.knots]
            record["coefficients"] = self.model.coefficients.ravel().tolist()
        elif isinstance(self.model, KrigingModel):
            record["length_scale"] = self.model.length_scale
            record["nugget"] = self.model.nugget
            record["mean"] = self.model.mean
            record["points"] = self.model.points.tolist()
            record["weights"] = self.model.weights.tolist()
        return record


def _fit_spline(
    X: np.ndarray,
    f: np.ndarray,
    method: ApproxMethod,
    grid: GridSpec,
    lower,
    upper,
) -> Tuple[BsplineModel, np.ndarray, np.ndarray]:
    interp = simplicial_interpolant(X, f)
    cells = grid.cells_for(X.shape[1])
    lo, hi = bounding_box(X, grid.inflation, lower, upper)
    try:
        return bspline_project(interp, lo, hi, cells, method), lo, hi
    except RankDeficiencyError:
        lo, hi = bounding_box(X, 0.0, lower, upper)
        logger.debug("fit_surrogate: %s system singular, retrying on the tight box", method.value)
        return bspline_project(interp, lo, hi, cells, method), lo, hi


def fit_surrogate(
    cluster: Cluster,
    method: ApproxMethod,
    grid: Optional[GridSpec] = None,
    lower: Optional[Sequence[float]] = None,
    upper: Optional[Sequence[float]] = None,
) -> Surrogate:
    """
    Fit one surrogate to a cluster's points.

    Spline methods that fail on geometry or rank are downgraded to Kriging
    (logged); Kriging failures propagate.
    """
    method = ApproxMethod(method)
    grid = grid or GridSpec()
    if not cluster.points:
        raise InvalidArgumentError(f"cluster {cluster.id} has no points")
    X = cluster.array
    f = np.array([p.f for p in cluster.points])
    lower = None if lower is None else np.asarray(lower, dtype=float)
    upper = None if upper is None else np.asarray(upper, dtype=float)

    downgraded_from = None
    if method is not ApproxMethod.KRIGING:
        try:
            model, lo, hi = _fit_spline(X, f, method, grid, lower, upper)
            return Surrogate(cluster.id, method, model, lo, hi)
        except RegionMapError as exc:
            logger.warning(
                "fit_surrogate: cluster %d %s fit failed (%s), downgraded to kriging",
                cluster.id, method.value, exc,
            )
            downgraded_from = method

    model = kriging_fit(X, f)
    lo, hi = bounding_box(X, grid.inflation, lower, upper)
    return Surrogate(cluster.id, ApproxMethod.KRIGING, model, lo, hi, downgraded_from)

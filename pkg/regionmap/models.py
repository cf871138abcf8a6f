"""
Numeric value types passed between the pipeline stages.

Configuration and report models live in `regionmap.schemas`; the types here
carry numpy arrays and are never validated field by field.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, List

import numpy as np


@dataclass(frozen=True)
class EvaluatedPoint:
    """A domain point together with its objective value and evaluation index."""

    x: np.ndarray
    f: float
    index: int

    def sort_key(self):
        return (self.f, self.index)


def best_point(points: Iterable[EvaluatedPoint]) -> EvaluatedPoint:
    """Lowest fitness, ties broken by the lower evaluation index."""
    return min(points, key=EvaluatedPoint.sort_key)


def as_array(points: List[EvaluatedPoint]) -> np.ndarray:
    if not points:
        return np.empty((0, 0))
    return np.vstack([p.x for p in points])


def unique_points(points: Iterable[EvaluatedPoint]) -> List[EvaluatedPoint]:
    """Drop repeated evaluations (same index), keeping first-seen order."""
    seen = set()
    out = []
    for p in points:
        if p.index in seen:
            continue
        seen.add(p.index)
        out.append(p)
    return out


class ClusterStage(str, Enum):
    RAW = "raw"
    REDUCED = "reduced"
    LOCAL = "local"


_NEXT_STAGE = {ClusterStage.RAW: ClusterStage.REDUCED, ClusterStage.REDUCED: ClusterStage.LOCAL}


@dataclass
class Cluster:
    id: int
    stage: ClusterStage
    points: List[EvaluatedPoint]
    provenance: List[int] = field(default_factory=list)
    # individuals the first local-phase epoch still has to generate
    deficit: int = 0
    converged: bool = True

    def __post_init__(self):
        if self.stage is not ClusterStage.RAW and not self.points:
            raise ValueError(f"cluster {self.id} at stage {self.stage.value} has no points")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def array(self) -> np.ndarray:
        return as_array(self.points)

    @property
    def best(self) -> EvaluatedPoint:
        return best_point(self.points)

    @property
    def centroid(self) -> np.ndarray:
        return self.array.mean(axis=0)

    def advance(self, stage: ClusterStage, **changes) -> "Cluster":
        """Return a copy moved to `stage`; only raw -> reduced -> local is allowed."""
        if _NEXT_STAGE.get(self.stage) is not stage:
            raise ValueError(f"illegal stage transition {self.stage.value} -> {stage.value}")
        values = {
            "id": self.id,
            "points": self.points,
            "provenance": list(self.provenance),
            "deficit": self.deficit,
            "converged": self.converged,
        }
        values.update(changes)
        return Cluster(stage=stage, **values)

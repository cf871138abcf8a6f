"""
Exception hierarchy shared by every regionmap service.

Services raise these; the pipeline decides whether a failure stops a deme,
downgrades a surrogate, drops a cluster or excludes a whole run.
"""


class RegionMapError(Exception):
    """Base class for all regionmap errors."""


class InvalidArgumentError(RegionMapError, ValueError):
    """An operation was called outside its preconditions."""


class ConfigurationError(RegionMapError):
    """A configuration is inconsistent with the problem it is applied to."""


class EngineDegenerateError(RegionMapError):
    """A sampling measure lost positive definiteness beyond repair."""


class DegenerateGeometryError(RegionMapError):
    """Point set is affinely dependent and cannot be triangulated."""


class RankDeficiencyError(RegionMapError):
    """A Galerkin system could not be factorized."""


class ConditioningError(RegionMapError):
    """A Kriging system stayed singular at the largest admissible nugget."""

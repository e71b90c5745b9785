"""One-dimensional Skorokhod map on sampled paths.

For an input path ``x`` the map returns the pair ``(z, y)`` with ``z = x + y``
kept nonnegative and ``y`` the minimal nondecreasing regulator, computed by
the running-supremum recursion ``y[k] = max(y[k-1], max(-x[k], 0))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class PathError(ValueError):
    """Raised for malformed sampled paths."""


@dataclass(frozen=True)
class SampledPath:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or v.ndim != 1:
            raise PathError("times and values must be one-dimensional")
        if t.size == 0:
            raise PathError("empty path")
        if t.size != v.size:
            raise PathError(f"length mismatch: {t.size} times, {v.size} values")
        if t[0] != 0.0:
            raise PathError("first time point must be 0")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise PathError("times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class SkorokhodOutput:
    z: SampledPath
    y: SampledPath


def skorokhod_map(x: SampledPath) -> SkorokhodOutput:
    if not isinstance(x, SampledPath):
        x = SampledPath(*x)
    y = np.maximum.accumulate(np.maximum(-x.values, 0.0))
    # where y increments, y[k] == -x[k] exactly, so z[k] is an exact 0
    z = x.values + y
    return SkorokhodOutput(SampledPath(x.times, z), SampledPath(x.times, y))


def oscillation(x: SampledPath, s: float, t: float) -> float:
    """max - min of the sampled values with times in ``[s, t]``."""
    if not (s < t):
        raise PathError(f"degenerate interval [{s}, {t}]")
    if s < 0 or s < x.times[0] or t > x.times[-1]:
        raise PathError(f"interval [{s}, {t}] outside path span [0, {x.times[-1]}]")
    mask = (x.times >= s) & (x.times <= t)
    if not mask.any():
        return 0.0
    w = x.values[mask]
    return float(w.max() - w.min())


def verify_complementarity(out: SkorokhodOutput, tol: float = 0.0) -> bool:
    """Grid check of ``sum_k z[k] * (y[k] - y[k-1]) <= tol``."""
    dy = np.diff(out.y.values)
    return bool(np.sum(out.z.values[1:] * dy) <= tol)

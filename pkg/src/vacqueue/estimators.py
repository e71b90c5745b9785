"""Steady-state statistics from trajectories and replication-level reports."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .limit_sim import Trajectory

REPORT_COLUMNS = ("param_set_id", "estimate", "theoretical", "max_abs_dev", "max_rel_dev", "ci95", "seeds")


class EstimationError(ValueError):
    pass


@dataclass
class EstimateReport:
    estimate: float
    replication_values: list[float]
    theoretical: float | None = None
    max_abs_dev: float = math.nan
    max_rel_dev: float = math.nan
    ci_halfwidth: float = math.inf
    config_echo: dict = field(default_factory=dict)

    def row(self, param_set_id: str = "") -> dict:
        seeds = self.config_echo.get("seeds", "")
        if isinstance(seeds, (list, tuple)):
            seeds = " ".join(str(s) for s in seeds)
        return {
            "param_set_id": param_set_id,
            "estimate": self.estimate,
            "theoretical": "" if self.theoretical is None else self.theoretical,
            "max_abs_dev": self.max_abs_dev,
            "max_rel_dev": self.max_rel_dev,
            "ci95": self.ci_halfwidth,
            "seeds": seeds,
        }

    def table(self) -> str:
        """Replication values laid out like the tables of reported runs."""
        cols = ["theoretical"] + [str(i + 1) for i in range(len(self.replication_values))] + ["max. dev."]
        th = "-" if self.theoretical is None else f"{self.theoretical:.4f}"
        dev = "-" if self.theoretical is None else f"{self.max_abs_dev:.4f}"
        vals = [th] + [f"{v:.4f}" for v in self.replication_values] + [dev]
        w = [max(len(a), len(b)) for a, b in zip(cols, vals)]
        line = lambda xs: " | ".join(s.rjust(n) for s, n in zip(xs, w))  # noqa: E731
        return "\n".join([line(cols), "-+-".join("-" * n for n in w), line(vals)])


def aggregate(replication_values: Sequence[float], theoretical: float | None = None,
              config_echo: dict | None = None) -> EstimateReport:
    vals = [float(v) for v in replication_values]
    if not vals:
        raise EstimationError("need at least one replication")
    arr = np.sort(np.array(vals))  # order-normalized so the reduction is permutation invariant
    n = arr.size
    est = float(math.fsum(arr) / n)
    if n > 1:
        s = float(np.std(arr, ddof=1))
        ci = float(stats.t.ppf(0.975, n - 1) * s / math.sqrt(n))
    else:
        ci = math.inf
    abs_dev = rel_dev = math.nan
    if theoretical is not None:
        d = np.abs(arr - theoretical)
        abs_dev = float(d.max())
        rel_dev = float(d.max() / abs(theoretical)) if theoretical != 0 else math.inf
    return EstimateReport(est, vals, theoretical, abs_dev, rel_dev, ci, dict(config_echo or {}))


def batch_means_halfwidth(samples: Sequence[float], batches: int = 20) -> float:
    """95% half-width from non-overlapping batch means of one long path (diagnostic only)."""
    a = np.asarray(samples, dtype=float)
    k = a.size // batches
    if k < 1 or batches < 2:
        raise EstimationError("not enough samples for batch means")
    means = a[: k * batches].reshape(batches, k).mean(axis=1)
    return float(stats.t.ppf(0.975, batches - 1) * means.std(ddof=1) / math.sqrt(batches))


_COMPONENTS: dict[str, Callable[[Trajectory], np.ndarray]] = {
    "x": lambda tr: tr.x,
    "v": lambda tr: tr.v,
    "l": lambda tr: tr.l,
    "y": lambda tr: tr.x + tr.v,
    "x_neg": lambda tr: np.maximum(-tr.x, 0.0),
    "y_neg": lambda tr: np.maximum(-(tr.x + tr.v), 0.0),
    "wait": lambda tr: (tr.x + tr.v > 0).astype(float),
}


def _component(traj: Trajectory, component) -> np.ndarray:
    if callable(component):
        return np.asarray(component(traj), dtype=float)
    if component in _COMPONENTS:
        return _COMPONENTS[component](traj)
    if isinstance(component, str) and component.startswith("u") and component[1:].isdigit():
        i = int(component[1:]) - 1
        if not 0 <= i < traj.m:
            raise EstimationError(f"no vacation stage {component}")
        return traj.u[:, i]
    raise EstimationError(f"unknown component {component!r}; expected one of {sorted(_COMPONENTS)} or u1..um")


def time_average(traj: Trajectory, component="x", burn_in: float = 0.2, rule: str = "left") -> float:
    """Post-burn-in Cesaro mean of a component on the stored grid.

    ``rule='left'`` integrates piecewise-constantly from each grid point,
    matching the Euler dynamics and jump components; ``'trapezoid'`` is
    available for smooth synthetic paths.
    """
    if not 0 <= burn_in < 1:
        raise EstimationError("burn_in must lie in [0, 1)")
    f = _component(traj, component)
    t = traj.t
    if t.size < 2:
        raise EstimationError("trajectory has fewer than two grid points")
    t0 = burn_in * t[-1]
    k0 = int(np.searchsorted(t, t0 - 1e-12 * max(1.0, t[-1])))
    if k0 >= t.size - 1:
        raise EstimationError("empty post-burn-in window")
    tt, ff = t[k0:], f[k0:]
    dt = np.diff(tt)
    if rule == "left":
        integral = float(np.sum(ff[:-1] * dt))
    elif rule == "trapezoid":
        integral = float(np.sum(0.5 * (ff[1:] + ff[:-1]) * dt))
    else:
        raise EstimationError(f"unknown integration rule {rule!r}")
    return integral / (tt[-1] - tt[0])


def boundary_rate(traj: Trajectory, burn_in: float = 0.2) -> float:
    """Long-run growth rate of the regulator, (L(T) - L(t0)) / (T - t0)."""
    if traj.summary is not None:
        return traj.summary.l_rate
    t = traj.t
    k0 = int(np.searchsorted(t, burn_in * t[-1]))
    if k0 >= t.size - 1:
        raise EstimationError("empty post-burn-in window")
    return float((traj.l[-1] - traj.l[k0]) / (t[-1] - t[k0]))


def estimate_pow_limit(traj: Trajectory, regime: str | None = None, burn_in: float = 0.2) -> float:
    """Fraction of post-burn-in time with X + V > 0.

    Simulated trajectories carry statistics accumulated on the full Euler
    grid; these are used in preference to the (possibly thinned) stored path.
    """
    if traj.summary is not None:
        return float(traj.summary.pow)
    return time_average(traj, "wait", burn_in)


def estimate_sd(traj: Trajectory, burn_in: float = 0.2) -> float:
    """Slowdown 1 + E X(inf) from the post-burn-in time average of X."""
    if traj.summary is not None:
        return 1.0 + float(traj.summary.x_mean)
    return 1.0 + time_average(traj, "x", burn_in)


def estimate_v_mean(traj: Trajectory, burn_in: float = 0.2) -> float:
    if traj.summary is not None:
        return float(traj.summary.v_mean)
    return time_average(traj, "v", burn_in)

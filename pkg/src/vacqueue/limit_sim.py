"""Euler-Maruyama simulation of the coupled (X, V) limit systems.

Three regimes, single- or multi-stage vacations (``m`` stages with stage
transition-rate matrix ``R``):

* ``hw``      dX = [b + mu max(-X, V)] dt + sigma dW,
              dU = [beta (X + V)^- + (R^T - G) U] dt
* ``near-hw`` dX = [b + mu V] dt + sigma dW + dL,  X >= 0,
              dU = (R^T - G) U dt + beta/mu dL
* ``nds``     same X equation; U integer-valued, up-jumps from unit Poisson
              clocks read at beta_i/mu L(t), down-jumps and stage moves
              from clocks read at gamma_i int U_i and r_ij int U_i.

``V = sum(U)``. Reflection is explicit Euler then projection to zero; the
projected amount is the regulator increment dL, which also drives the
vacation component in the same step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numba import njit

from .stochastic import BROWNIAN, RngStream, clock_stream_id

log = logging.getLogger(__name__)

REGIMES = ("hw", "near-hw", "nds")
SCHEMES = ("threshold", "bernoulli")


class NumericalFailure(ArithmeticError):
    def __init__(self, step: int, what: str = "non-finite state"):
        super().__init__(f"{what} at step {step}")
        self.step = step


def _as_vector(v, m=None) -> np.ndarray:
    a = np.atleast_1d(np.asarray(v, dtype=float)).ravel()
    if m is not None and a.size == 1 and m > 1:
        a = np.full(m, a[0])
    return a


@dataclass(frozen=True)
class ModelParams:
    """Limit-system coefficients.

    ``beta``/``gamma`` are scalars for single-stage vacations, or length-m
    vectors together with an m x m rate matrix ``R`` (``R[i, j]`` is the
    rate of moving from stage i to stage j, rows sum to zero).
    """

    b: float
    mu: float
    sigma: float
    beta: float | Sequence[float] = 0.0
    gamma: float | Sequence[float] = 1.0
    R: Sequence[Sequence[float]] | None = None

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")
        if not math.isfinite(self.b):
            raise ValueError("b must be finite")
        beta = _as_vector(self.beta)
        gamma = _as_vector(self.gamma)
        m = max(beta.size, gamma.size, 0 if self.R is None else len(self.R))
        beta, gamma = _as_vector(beta, m), _as_vector(gamma, m)
        if beta.size != m or gamma.size != m:
            raise ValueError("beta and gamma must have one entry per vacation stage")
        if np.any(beta < 0):
            raise ValueError("vacation-begin rates must be nonnegative")
        if np.any(~(gamma > 0)):
            raise ValueError("vacation-end rates must be positive")
        R = np.zeros((m, m)) if self.R is None else np.array(self.R, dtype=float)
        if R.shape != (m, m):
            raise ValueError(f"R must be {m}x{m}, got shape {R.shape}")
        off = R - np.diag(np.diag(R))
        if np.any(off < 0):
            raise ValueError("off-diagonal entries of R must be nonnegative")
        if np.any(np.abs(R.sum(axis=1)) > 1e-12):
            raise ValueError("rows of R must sum to 0")
        object.__setattr__(self, "_beta", beta)
        object.__setattr__(self, "_gamma", gamma)
        object.__setattr__(self, "_R", R)

    @property
    def m(self) -> int:
        return self._beta.size

    @property
    def beta_vec(self) -> np.ndarray:
        return self._beta.copy()

    @property
    def gamma_vec(self) -> np.ndarray:
        return self._gamma.copy()

    @property
    def R_mat(self) -> np.ndarray:
        return self._R.copy()

    def describe(self) -> dict:
        d = {"b": self.b, "mu": self.mu, "sigma": self.sigma}
        if self.m == 1:
            d.update(beta=float(self._beta[0]), gamma=float(self._gamma[0]))
        else:
            d.update(beta=self._beta.tolist(), gamma=self._gamma.tolist(), R=self._R.tolist())
        return d


@dataclass(frozen=True)
class LimitState:
    x: float = 0.0
    v: float | Sequence[float] = 0.0
    l: float = 0.0

    @property
    def u(self) -> np.ndarray:
        return _as_vector(self.v)


@dataclass(frozen=True)
class SimConfig:
    delta: float = 1e-3
    steps: int = 100_000
    burn_in: float = 0.2
    seed: int = 0
    replications: int = 1
    regime: str = "hw"
    reference_only: bool = False
    scheme: str = "threshold"
    stride: int = 1

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"time step must be positive, got {self.delta}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not 0 <= self.burn_in < 1:
            raise ValueError("burn_in must lie in [0, 1)")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    @property
    def horizon(self) -> float:
        return self.delta * self.steps

    @property
    def burn_in_steps(self) -> int:
        return int(self.burn_in * self.steps)

    def scaled(self, factor: float) -> "SimConfig":
        """Same configuration with the step count multiplied by ``factor``."""
        return replace(self, steps=max(1, int(round(self.steps * factor))))


@dataclass
class PathSummary:
    """Post-burn-in statistics accumulated on the full Euler grid (left-endpoint rule)."""

    window_steps: int
    window_time: float
    pow: float          # fraction of time with X + V > 0
    x_mean: float
    v_mean: float
    y_neg_mean: float   # time average of (X + V)^-
    l_rate: float       # (L(T) - L(burn-in)) / window length


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    l: np.ndarray
    regime: str
    delta: float
    stride: int = 1
    summary: PathSummary | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def v(self) -> np.ndarray:
        return self.u.sum(axis=1)

    @property
    def m(self) -> int:
        return self.u.shape[1]

    def __len__(self):
        return self.t.size


# --------------------------------------------------------------------------
# compiled kernels


@njit(cache=True)
def _hw_kernel(x, u0, b, mu, sigma, beta, gamma, RT, delta, steps, stride, k0, rng):
    m = u0.size
    npts = steps // stride + 1
    xs = np.zeros(npts)
    us = np.zeros((npts, m))
    u = u0.copy()
    un = np.empty(m)
    stats = np.zeros(4)
    sq = math.sqrt(delta)
    clamps = 0
    j = 0
    for k in range(steps):
        V = 0.0
        for i in range(m):
            V += u[i]
        if k % stride == 0:
            xs[j] = x
            us[j, :] = u
            j += 1
        y = x + V
        if k >= k0:
            if y > 0.0:
                stats[0] += 1.0
            stats[1] += x
            stats[2] += V
            if y < 0.0:
                stats[3] -= y
        yneg = -y if y < 0.0 else 0.0
        drift = b + mu * max(-x, V)
        xn = x + drift * delta + sigma * sq * rng.standard_normal()
        for i in range(m):
            acc = beta[i] * yneg - gamma[i] * u[i]
            for jj in range(m):
                acc += RT[i, jj] * u[jj]
            un[i] = u[i] + acc * delta
            if un[i] < 0.0:
                un[i] = 0.0
                clamps += 1
        if not math.isfinite(xn):
            return xs, us, stats, clamps, k
        for i in range(m):
            if not math.isfinite(un[i]):
                return xs, us, stats, clamps, k
            u[i] = un[i]
        x = xn
    if steps % stride == 0:
        xs[j] = x
        us[j, :] = u
    return xs, us, stats, clamps, -1


@njit(cache=True)
def _reflected_kernel(x, u0, b, mu, sigma, beta_over_mu, gamma, RT, delta, steps, stride, k0, rng):
    m = u0.size
    npts = steps // stride + 1
    xs = np.zeros(npts)
    us = np.zeros((npts, m))
    ls = np.zeros(npts)
    u = u0.copy()
    un = np.empty(m)
    stats = np.zeros(7)  # pos, x, v, yneg, L at burn-in, sum x*dL, L at end
    sq = math.sqrt(delta)
    L = 0.0
    clamps = 0
    j = 0
    for k in range(steps):
        V = 0.0
        for i in range(m):
            V += u[i]
        if k % stride == 0:
            xs[j] = x
            us[j, :] = u
            ls[j] = L
            j += 1
        if k == k0:
            stats[4] = L
        if k >= k0:
            if x + V > 0.0:
                stats[0] += 1.0
            stats[1] += x
            stats[2] += V
        xt = x + (b + mu * V) * delta + sigma * sq * rng.standard_normal()
        if not math.isfinite(xt):
            return xs, us, ls, stats, clamps, k
        dL = 0.0
        if xt < 0.0:
            dL = -xt
            xt = 0.0
        stats[5] += xt * dL
        L += dL
        for i in range(m):
            acc = -gamma[i] * u[i]
            for jj in range(m):
                acc += RT[i, jj] * u[jj]
            un[i] = u[i] + acc * delta + beta_over_mu[i] * dL
            if un[i] < 0.0:
                un[i] = 0.0
                clamps += 1
        for i in range(m):
            u[i] = un[i]
        x = xt
    if steps % stride == 0:
        xs[j] = x
        us[j, :] = u
        ls[j] = L
    if k0 >= steps:
        stats[4] = L
    stats[6] = L
    return xs, us, ls, stats, clamps, -1


@njit(cache=True)
def _nds_kernel(x, u0, b, mu, sigma, coef, src, dst, delta, steps, stride, k0,
                bernoulli, rng, clock_rngs):
    # clocks 0..m-1: vacation begins into stage i, argument (beta_i/mu) L(t)
    # clocks m..C-1: vacation ends / stage moves out of stage src[c], argument coef[c] int U_src
    m = u0.size
    C = coef.size
    npts = steps // stride + 1
    xs = np.zeros(npts)
    us = np.zeros((npts, m))
    ls = np.zeros(npts)
    u = u0.copy()
    args = np.zeros(C)
    thr = np.empty(C)
    for c in range(C):
        thr[c] = clock_rngs[c].standard_exponential()
    stats = np.zeros(7)
    # diag: up jumps, down jumps, stage moves, up jumps without regulator increase, clipped probabilities
    diag = np.zeros(5, dtype=np.int64)
    sq = math.sqrt(delta)
    L = 0.0
    j = 0
    for k in range(steps):
        V = 0.0
        for i in range(m):
            V += u[i]
        if k % stride == 0:
            xs[j] = x
            us[j, :] = u
            ls[j] = L
            j += 1
        if k == k0:
            stats[4] = L
        if k >= k0:
            if x + V > 0.0:
                stats[0] += 1.0
            stats[1] += x
            stats[2] += V
        xt = x + (b + mu * V) * delta + sigma * sq * rng.standard_normal()
        if not math.isfinite(xt):
            return xs, us, ls, stats, diag, k
        dL = 0.0
        if xt < 0.0:
            dL = -xt
            xt = 0.0
        stats[5] += xt * dL
        L += dL
        if bernoulli:
            for c in range(m, C):
                s = src[c]
                p = coef[c] * u[s] * delta
                if p > 0.0:
                    if p > 1.0:
                        p = 1.0
                        diag[4] += 1
                    if clock_rngs[c].random() < p:
                        u[s] -= 1.0
                        if dst[c] >= 0:
                            u[dst[c]] += 1.0
                            diag[2] += 1
                        else:
                            diag[1] += 1
            for c in range(m):
                p = coef[c] * dL
                if p > 0.0:
                    if p > 1.0:
                        p = 1.0
                        diag[4] += 1
                    if clock_rngs[c].random() < p:
                        u[c] += 1.0
                        diag[0] += 1
        else:
            rem = delta
            while True:
                best = -1
                tbest = rem
                for c in range(m, C):
                    a = coef[c] * u[src[c]]
                    if a > 0.0:
                        tc = (thr[c] - args[c]) / a
                        if tc < tbest:
                            tbest = tc
                            best = c
                for c in range(m, C):
                    args[c] += coef[c] * u[src[c]] * tbest
                if best < 0:
                    break
                args[best] = thr[best]
                thr[best] += clock_rngs[best].standard_exponential()
                u[src[best]] -= 1.0
                if dst[best] >= 0:
                    u[dst[best]] += 1.0
                    diag[2] += 1
                else:
                    diag[1] += 1
                rem -= tbest
            for c in range(m):
                if dL > 0.0:
                    args[c] += coef[c] * dL
                while args[c] >= thr[c]:
                    thr[c] += clock_rngs[c].standard_exponential()
                    u[c] += 1.0
                    diag[0] += 1
                    if dL <= 0.0:
                        diag[3] += 1
        x = xt
    if steps % stride == 0:
        xs[j] = x
        us[j, :] = u
        ls[j] = L
    if k0 >= steps:
        stats[4] = L
    stats[6] = L
    return xs, us, ls, stats, diag, -1


# --------------------------------------------------------------------------


def _summary(stats: np.ndarray, cfg: SimConfig, l_end: float | None) -> PathSummary:
    k0 = cfg.burn_in_steps
    n = cfg.steps - k0
    window = n * cfg.delta
    l_rate = 0.0 if l_end is None else (l_end - stats[4]) / window
    return PathSummary(
        window_steps=n,
        window_time=window,
        pow=stats[0] / n,
        x_mean=stats[1] / n,
        v_mean=stats[2] / n,
        y_neg_mean=stats[3] / n if l_end is None else 0.0,
        l_rate=l_rate,
    )


def _grid(cfg: SimConfig, npts: int) -> np.ndarray:
    return np.arange(npts) * (cfg.stride * cfg.delta)


def _check_init(p: ModelParams, init: LimitState) -> np.ndarray:
    u0 = _as_vector(init.v, p.m)
    if u0.size != p.m:
        raise ValueError(f"initial vacation state needs {p.m} components, got {u0.size}")
    if np.any(u0 < 0) or not math.isfinite(init.x):
        raise ValueError("initial vacation mass must be nonnegative and x finite")
    return u0


def _brownian(cfg: SimConfig, replication: int) -> np.random.Generator:
    return RngStream(cfg.seed, BROWNIAN, replication).generator


def simulate_hw(p: ModelParams, init: LimitState, cfg: SimConfig, replication: int = 0) -> Trajectory:
    u0 = _check_init(p, init)
    beta, RT = p.beta_vec, p.R_mat.T.copy()
    if cfg.reference_only:
        u0 = np.zeros(p.m)
        beta = np.zeros(p.m)
    xs, us, stats, clamps, fail = _hw_kernel(
        float(init.x), u0, float(p.b), float(p.mu), float(p.sigma), beta, p.gamma_vec, RT,
        float(cfg.delta), int(cfg.steps), int(cfg.stride), cfg.burn_in_steps, _brownian(cfg, replication))
    if fail >= 0:
        raise NumericalFailure(fail)
    if clamps:
        log.warning("vacation mass clamped at 0 in %d Euler steps (gamma*delta too large?)", clamps)
    return Trajectory(
        t=_grid(cfg, xs.size), x=xs, u=us, l=np.zeros(xs.size), regime="hw", delta=cfg.delta,
        stride=cfg.stride, summary=_summary(stats, cfg, None),
        diagnostics={"clamp_events": int(clamps), "seed": cfg.seed, "replication": replication},
    )


def simulate_near_hw(p: ModelParams, init: LimitState, cfg: SimConfig, replication: int = 0) -> Trajectory:
    u0 = _check_init(p, init)
    if init.x < 0:
        raise ValueError("reflected regimes need a nonnegative initial x")
    beta = np.zeros(p.m) if cfg.reference_only else p.beta_vec
    if cfg.reference_only:
        u0 = np.zeros(p.m)
    xs, us, ls, stats, clamps, fail = _reflected_kernel(
        float(init.x), u0, float(p.b), float(p.mu), float(p.sigma), beta / p.mu, p.gamma_vec,
        p.R_mat.T.copy(), float(cfg.delta), int(cfg.steps), int(cfg.stride), cfg.burn_in_steps,
        _brownian(cfg, replication))
    if fail >= 0:
        raise NumericalFailure(fail)
    if clamps:
        log.warning("vacation mass clamped at 0 in %d Euler steps", clamps)
    l_end = float(stats[6])
    return Trajectory(
        t=_grid(cfg, xs.size), x=xs, u=us, l=ls, regime="near-hw", delta=cfg.delta,
        stride=cfg.stride, summary=_summary(stats, cfg, l_end),
        diagnostics={"clamp_events": int(clamps), "complementarity": float(stats[5]),
                     "l_end": l_end, "seed": cfg.seed, "replication": replication},
    )


def _nds_clocks(p: ModelParams):
    m = p.m
    beta, gamma, R = p.beta_vec, p.gamma_vec, p.R_mat
    coef = list(beta / p.mu) + list(gamma)
    src = list(range(m)) + list(range(m))
    dst = [-1] * m + [-1] * m
    ids = [clock_stream_id(1, i) for i in range(m)] + [clock_stream_id(2, i) for i in range(m)]
    for i in range(m):
        for j in range(m):
            if i != j:
                coef.append(R[i, j])
                src.append(i)
                dst.append(j)
                ids.append(clock_stream_id(3, i, j))
    return np.array(coef), np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64), ids


def simulate_nds(p: ModelParams, init: LimitState, cfg: SimConfig, replication: int = 0) -> Trajectory:
    u0 = _check_init(p, init)
    if init.x < 0:
        raise ValueError("reflected regimes need a nonnegative initial x")
    if np.any(u0 != np.round(u0)):
        raise ValueError("NDS vacation counts must be integers")
    if cfg.reference_only:
        p = replace(p, beta=np.zeros(p.m).tolist() if p.m > 1 else 0.0)
        u0 = np.zeros(p.m)
    coef, src, dst, ids = _nds_clocks(p)
    clock_rngs = tuple(RngStream(cfg.seed, sid, replication).generator for sid in ids)
    xs, us, ls, stats, diag, fail = _nds_kernel(
        float(init.x), u0.astype(float), float(p.b), float(p.mu), float(p.sigma), coef, src, dst,
        float(cfg.delta), int(cfg.steps), int(cfg.stride), cfg.burn_in_steps,
        cfg.scheme == "bernoulli", _brownian(cfg, replication), clock_rngs)
    if fail >= 0:
        raise NumericalFailure(fail)
    if diag[4]:
        log.warning("jump probability exceeded 1 and was clipped in %d steps; reduce delta", diag[4])
    l_end = float(stats[6])
    return Trajectory(
        t=_grid(cfg, xs.size), x=xs, u=us, l=ls, regime="nds", delta=cfg.delta,
        stride=cfg.stride, summary=_summary(stats, cfg, l_end),
        diagnostics={"up_jumps": int(diag[0]), "down_jumps": int(diag[1]), "stage_moves": int(diag[2]),
                     "causality_violations": int(diag[3]), "clipped": int(diag[4]),
                     "complementarity": float(stats[5]), "l_end": l_end, "scheme": cfg.scheme,
                     "seed": cfg.seed, "replication": replication},
    )


def simulate_reference_rbm(p: ModelParams, init: LimitState, cfg: SimConfig, replication: int = 0) -> Trajectory:
    """No-vacation reference: reflected BM, or the Halfin-Whitt diffusion when ``cfg.regime == 'hw'``."""
    ref = replace(cfg, reference_only=True)
    if cfg.regime == "hw":
        return simulate_hw(p, LimitState(init.x, 0.0), ref, replication)
    traj = simulate_near_hw(p, LimitState(init.x, 0.0), ref, replication)
    traj.regime = "rbm"
    return traj


def simulate(p: ModelParams, init: LimitState, cfg: SimConfig, replication: int = 0) -> Trajectory:
    if cfg.regime == "hw":
        return simulate_hw(p, init, cfg, replication)
    if cfg.regime == "near-hw":
        return simulate_near_hw(p, init, cfg, replication)
    return simulate_nds(p, init, cfg, replication)


def _run_one(task):
    fn, p, init, cfg, r = task
    return fn(p, init, cfg, r)


def run_replications(p: ModelParams, init: LimitState, cfg: SimConfig, *, reference: bool = False,
                     workers: int = 1) -> list[Trajectory]:
    """All ``cfg.replications`` runs; replication r draws from streams keyed by (seed, r)."""
    fn = simulate_reference_rbm if reference else simulate
    tasks = [(fn, p, init, cfg, r) for r in range(cfg.replications)]
    if workers <= 1 or len(tasks) == 1:
        return [_run_one(t) for t in tasks]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, tasks))

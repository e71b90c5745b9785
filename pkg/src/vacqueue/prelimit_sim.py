"""Discrete-event simulation of the n-th pre-limit queue with server vacations.

Servers are pooled: the state is (queue q, idle i, vacationing u per stage),
busy = N - i - sum(u). Every driver is a unit Poisson process read through
its own time change, exactly as in the model construction:

* departures   S(mu_ind * int busy)
* vacation begins into stage s    S_0s(beta_s * int i)
* vacation ends from stage s      S_s0(gamma_s * int u_s)
* stage moves s -> r              S_sr(r_sr * int u_s)

plus a renewal arrival stream with mean-one interarrivals scaled by
1/lambda. Rates are constant between events, so the next firing time of
each clock is exact.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numba import njit

from .estimators import EstimateReport, aggregate
from .limit_sim import ModelParams
from .stochastic import (ARRIVALS, SERVICE, VACATION_BEGIN, VACATION_END, InterarrivalLaw, RngStream,
                         clock_stream_id, draw_ia)

log = logging.getLogger(__name__)

# event codes in the log
ARRIVAL, DEPARTURE, VAC_BEGIN, VAC_END, STAGE_MOVE = range(5)
EVENT_NAMES = ("arrival", "departure", "vacation_begin", "vacation_end", "stage_move")
LOG_COLUMNS = ("t", "event", "stage", "q", "i", "v", "A", "J", "D")


def server_count(n: float, alpha: float) -> int:
    """ceil(n**alpha), robust to round-off in the power."""
    return max(1, math.ceil(n ** alpha - 1e-9))


@dataclass(frozen=True)
class PrelimitParams:
    n: float
    alpha: float
    lambda_n: float
    mu_ind_n: float
    ia_law: InterarrivalLaw = field(default_factory=InterarrivalLaw)
    beta_n: float | Sequence[float] = 0.0
    gamma_n: float | Sequence[float] = 1.0
    R_n: Sequence[Sequence[float]] | None = None
    horizon: float = 100.0

    def __post_init__(self):
        if not self.n > 0:
            raise ValueError("scale parameter n must be positive")
        if not 0 <= self.alpha <= 1:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.lambda_n < 0:
            raise ValueError("arrival rate must be nonnegative")
        if not self.mu_ind_n > 0:
            raise ValueError("individual service rate must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        # reuse the rate-vector validation of the limit parameters
        mp = ModelParams(-1.0, 1.0, 1.0, self.beta_n, self.gamma_n, self.R_n)
        object.__setattr__(self, "_vac", mp)
        if self.lambda_n > 0:
            imbalance = abs(self.capacity - self.lambda_n) / self.lambda_n
            if imbalance > 0.5:
                warnings.warn(f"capacity {self.capacity:.4g} is far from arrival rate {self.lambda_n:.4g}; "
                              "the system is not near critical load", stacklevel=2)

    @property
    def N_n(self) -> int:
        return server_count(self.n, self.alpha)

    @property
    def capacity(self) -> float:
        return self.mu_ind_n * self.N_n

    @property
    def m(self) -> int:
        return self._vac.m

    @property
    def beta_vec(self) -> np.ndarray:
        return self._vac.beta_vec

    @property
    def gamma_vec(self) -> np.ndarray:
        return self._vac.gamma_vec

    @property
    def R_mat(self) -> np.ndarray:
        return self._vac.R_mat

    @property
    def v_scale(self) -> float:
        """n**(alpha - 1/2), the normalization of vacation and idle counts."""
        return self.n ** (self.alpha - 0.5)

    @classmethod
    def from_limit(cls, n: float, alpha: float, model: ModelParams, horizon: float = 100.0,
                   lam: float | None = None) -> "PrelimitParams":
        """n-th system whose scaled processes converge to the limit with ``model``'s coefficients.

        Critical load lambda = mu is used with lambda_n = n mu and capacity
        n mu + |b| sqrt(n); the interarrival SCV is sigma^2 / mu - 1.
        """
        lam = model.mu if lam is None else lam
        c2 = model.sigma ** 2 / lam - 1.0
        if c2 < 0:
            raise ValueError(f"sigma^2 / mu = {model.sigma**2 / lam:.4g} < 1 is not reachable by renewal arrivals")
        N = server_count(n, alpha)
        lambda_n = n * lam
        mu_n = n * model.mu - model.b * math.sqrt(n)
        beta = model.beta_vec if model.m > 1 else float(model.beta_vec[0])
        gamma = model.gamma_vec if model.m > 1 else float(model.gamma_vec[0])
        R = model.R_mat if model.m > 1 else None
        return cls(n=n, alpha=alpha, lambda_n=lambda_n, mu_ind_n=mu_n / N, ia_law=InterarrivalLaw.from_c2(c2),
                   beta_n=beta, gamma_n=gamma, R_n=R, horizon=horizon)

    def describe(self) -> dict:
        d = {"n": self.n, "alpha": self.alpha, "N_n": self.N_n, "lambda_n": self.lambda_n,
             "mu_ind_n": self.mu_ind_n, "ia_law": self.ia_law.kind, "ia_c2": self.ia_law.c2,
             "horizon": self.horizon}
        if self.m == 1:
            d.update(beta_n=float(self.beta_vec[0]), gamma_n=float(self.gamma_vec[0]))
        else:
            d.update(beta_n=self.beta_vec.tolist(), gamma_n=self.gamma_vec.tolist(), R_n=self.R_mat.tolist())
        return d


@dataclass(frozen=True)
class SystemState:
    q: int = 0
    i: int | None = None  # None: all servers idle
    v: int | Sequence[int] = 0

    def resolve(self, N: int, m: int) -> tuple[int, int, np.ndarray]:
        u = np.atleast_1d(np.asarray(self.v, dtype=np.int64)).ravel()
        if u.size == 1 and m > 1:
            u = np.concatenate([u, np.zeros(m - 1, dtype=np.int64)])
        if u.size != m:
            raise ValueError(f"initial vacation state needs {m} stages")
        i = N - int(u.sum()) if self.i is None else int(self.i)
        if self.q < 0 or i < 0 or np.any(u < 0):
            raise ValueError("initial counts must be nonnegative")
        if i + u.sum() > N:
            raise ValueError(f"idle + vacationing = {i + u.sum()} exceeds the {N} servers")
        if self.q > 0 and i > 0:
            raise ValueError("work conservation violated: queue is nonempty while servers idle")
        return int(self.q), i, u


@dataclass(frozen=True)
class PrelimitConfig:
    seed: int = 0
    replications: int = 1
    burn_in: float = 0.2
    sample_dt: float = 0.1
    log_events: bool = False
    max_log: int = 1_000_000

    def __post_init__(self):
        if not 0 <= self.burn_in < 1:
            raise ValueError("burn_in must lie in [0, 1)")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not self.sample_dt > 0:
            raise ValueError("sample_dt must be positive")


@dataclass
class ScaledSnapshots:
    t: np.ndarray
    q: np.ndarray
    i: np.ndarray
    u: np.ndarray
    n: float
    alpha: float
    N: int

    @property
    def v(self) -> np.ndarray:
        return self.u.sum(axis=1)

    @property
    def x_hat(self) -> np.ndarray:
        # X - N = q + busy - N = q - i - v
        return (self.q - self.i - self.v) / math.sqrt(self.n)

    @property
    def v_tilde(self) -> np.ndarray:
        return self.v / self.n ** (self.alpha - 0.5)

    @property
    def u_tilde(self) -> np.ndarray:
        return self.u / self.n ** (self.alpha - 0.5)

    @property
    def q_hat(self) -> np.ndarray:
        return self.q / math.sqrt(self.n)

    @property
    def i_tilde(self) -> np.ndarray:
        return self.i / self.n ** (self.alpha - 0.5)


@dataclass
class PrelimitRun:
    snapshots: ScaledSnapshots
    arrivals: int
    waited: int
    pow_arrivals: float      # post-burn-in fraction of arrivals finding no idle server
    pow_time: float          # post-burn-in fraction of time with no idle server
    means: dict
    counters: dict
    vacation_hit_time: float
    event_log: np.ndarray | None = None
    log_truncated: bool = False


def scaling_identity_residuals(s: ScaledSnapshots) -> tuple[float, float]:
    """Max residuals of (x_hat + n^(a-1) v_tilde)^+ = q_hat and (n^(1-a) x_hat + v_tilde)^- = i_tilde."""
    a, n = s.alpha, s.n
    lhs1 = np.maximum(s.x_hat + n ** (a - 1.0) * s.v_tilde, 0.0)
    lhs2 = np.maximum(-(n ** (1.0 - a) * s.x_hat + s.v_tilde), 0.0)
    return float(np.max(np.abs(lhs1 - s.q_hat), initial=0.0)), float(np.max(np.abs(lhs2 - s.i_tilde), initial=0.0))


@njit(cache=True)
def _event_loop(q, i, u0, N, lam, ia_params, rate, src, dst, kind, stage, horizon, burn_t,
                sample_dt, nsamples, stop_on_vacation, log_events, max_log, rng_arr, clock_rngs):
    m = u0.size
    C = rate.size
    u = u0.copy()
    V = 0
    for s in range(m):
        V += u[s]
    st = np.zeros(nsamples)
    sq = np.zeros(nsamples, dtype=np.int64)
    si = np.zeros(nsamples, dtype=np.int64)
    su = np.zeros((nsamples, m), dtype=np.int64)
    elog = np.zeros((max_log if log_events else 1, 9))
    nlog = 0
    truncated = False
    args = np.zeros(C)
    thr = np.empty(C)
    for c in range(C):
        thr[c] = clock_rngs[c].standard_exponential()
    A = 0
    J = 0
    D = 0
    arrivals = 0
    waited = 0
    # time integrals after burn-in: no idle server, q, i, v
    acc = np.zeros(4)
    t = 0.0
    next_arr = draw_ia(rng_arr, ia_params) / lam if lam > 0.0 else np.inf
    ks = 0
    hit = np.inf
    if V >= 1:
        hit = 0.0
    a = np.zeros(C)
    while True:
        busy = N - i - V
        for c in range(C):
            k = kind[c]
            if k == 1:
                a[c] = rate[c] * busy
            elif k == 3:
                a[c] = rate[c] * i
            else:
                a[c] = rate[c] * u[src[c]]
        best = -1
        tbest = np.inf
        for c in range(C):
            if a[c] > 0.0:
                tc = t + (thr[c] - args[c]) / a[c]
                if tc < tbest:
                    tbest = tc
                    best = c
        # ties: departure > arrival > vacation end > vacation begin
        arrival = best < 0 or next_arr < tbest or (next_arr == tbest and kind[best] != 1)
        tn = next_arr if arrival else tbest
        stop = tn > horizon
        if stop:
            tn = horizon
        while ks < nsamples and ks * sample_dt <= tn:
            st[ks] = ks * sample_dt
            sq[ks] = q
            si[ks] = i
            su[ks, :] = u
            ks += 1
        lo = t if t > burn_t else burn_t
        if tn > lo:
            w = tn - lo
            if i == 0:
                acc[0] += w
            acc[1] += q * w
            acc[2] += i * w
            acc[3] += V * w
        for c in range(C):
            args[c] += a[c] * (tn - t)
        t = tn
        if stop:
            break
        ev = 0
        evs = -1
        if arrival:
            A += 1
            if t >= burn_t:
                arrivals += 1
                if i == 0:
                    waited += 1
            if i > 0:
                i -= 1
                J += 1
            else:
                q += 1
            next_arr = t + draw_ia(rng_arr, ia_params) / lam
            ev = 0
        else:
            c = best
            args[c] = thr[c]
            thr[c] += clock_rngs[c].standard_exponential()
            k = kind[c]
            if k == 1:
                D += 1
                if q > 0:
                    q -= 1
                    J += 1
                else:
                    i += 1
                ev = 1
            elif k == 3:
                i -= 1
                u[stage[c]] += 1
                V += 1
                ev = 2
                evs = stage[c]
            elif k == 2:
                u[src[c]] -= 1
                V -= 1
                if q > 0:
                    q -= 1
                    J += 1
                else:
                    i += 1
                ev = 3
                evs = src[c]
            else:
                u[src[c]] -= 1
                u[dst[c]] += 1
                ev = 4
                evs = src[c] * m + dst[c]
        if log_events:
            if nlog < max_log:
                elog[nlog, 0] = t
                elog[nlog, 1] = ev
                elog[nlog, 2] = evs
                elog[nlog, 3] = q
                elog[nlog, 4] = i
                elog[nlog, 5] = V
                elog[nlog, 6] = A
                elog[nlog, 7] = J
                elog[nlog, 8] = D
                nlog += 1
            else:
                truncated = True
        if V >= 1 and hit == np.inf:
            hit = t
            if stop_on_vacation:
                break
    counters = np.array([A, J, D, q, i, arrivals, waited], dtype=np.int64)
    return st[:ks], sq[:ks], si[:ks], su[:ks], acc, counters, u, hit, t, elog[:nlog], truncated


def _clocks(p: PrelimitParams):
    """Clock table ordered by tie priority: departure, vacation ends, begins, stage moves."""
    m = p.m
    beta, gamma, R = p.beta_vec, p.gamma_vec, p.R_mat
    rate, src, dst, kind, stage, ids = [p.mu_ind_n], [0], [-1], [1], [-1], [SERVICE]
    for s in range(m):
        rate.append(gamma[s]); src.append(s); dst.append(-1); kind.append(2); stage.append(s)
        ids.append(VACATION_END if m == 1 else clock_stream_id(VACATION_END, s))
    for s in range(m):
        rate.append(beta[s]); src.append(0); dst.append(-1); kind.append(3); stage.append(s)
        ids.append(VACATION_BEGIN if m == 1 else clock_stream_id(VACATION_BEGIN, s))
    for s in range(m):
        for r in range(m):
            if s != r and R[s, r] > 0:
                rate.append(R[s, r]); src.append(s); dst.append(r); kind.append(4); stage.append(s)
                ids.append(clock_stream_id(5, s, r))
    ints = lambda xs: np.array(xs, dtype=np.int64)  # noqa: E731
    return np.array(rate, dtype=float), ints(src), ints(dst), ints(kind), ints(stage), ids


def run_prelimit(p: PrelimitParams, seed: int = 0, init: SystemState | None = None,
                 cfg: PrelimitConfig | None = None, replication: int = 0,
                 stop_on_vacation: bool = False) -> PrelimitRun:
    cfg = cfg or PrelimitConfig(seed=seed)
    init = init or SystemState()
    N = p.N_n
    q, i, u0 = init.resolve(N, p.m)
    rate, src, dst, kind, stage, ids = _clocks(p)
    rng_arr = RngStream(seed, ARRIVALS, replication).generator
    clock_rngs = tuple(RngStream(seed, sid, replication).generator for sid in ids)
    nsamples = int(math.floor(p.horizon / cfg.sample_dt + 1e-9)) + 1
    burn_t = cfg.burn_in * p.horizon
    st, sq, si, su, acc, cnt, u_end, hit, t_end, elog, trunc = _event_loop(
        q, i, u0.astype(np.int64), N, float(p.lambda_n), p.ia_law.params(), rate, src, dst, kind, stage,
        float(p.horizon), burn_t, float(cfg.sample_dt), nsamples, stop_on_vacation, cfg.log_events,
        int(cfg.max_log), rng_arr, clock_rngs)
    window = max(t_end - burn_t, 0.0)
    A, J, D, q_end, i_end, arrivals, waited = (int(c) for c in cnt)
    if trunc:
        log.warning("event log truncated at %d rows", cfg.max_log)
    return PrelimitRun(
        snapshots=ScaledSnapshots(st, sq, si, su, p.n, p.alpha, N),
        arrivals=arrivals,
        waited=waited,
        pow_arrivals=waited / arrivals if arrivals else math.nan,
        pow_time=acc[0] / window if window > 0 else math.nan,
        means={"q": acc[1] / window, "i": acc[2] / window, "v": acc[3] / window} if window > 0 else {},
        counters={"A": A, "J": J, "D": D, "q0": q, "i0": i, "v0": int(u0.sum()), "q": q_end, "i": i_end,
                  "v": int(u_end.sum()), "u": u_end.tolist()},
        vacation_hit_time=float(hit),
        event_log=elog if cfg.log_events else None,
        log_truncated=bool(trunc),
    )


def estimate_pow_prelimit(p: PrelimitParams, cfg: PrelimitConfig | None = None,
                          init: SystemState | None = None, theoretical: float | None = None,
                          use_time_average: bool = False) -> EstimateReport:
    """Fraction of post-burn-in arrivals that find no idle server, per replication."""
    cfg = cfg or PrelimitConfig()
    if p.lambda_n >= p.capacity:
        warnings.warn(f"arrival rate {p.lambda_n:.4g} >= capacity {p.capacity:.4g}: no stationary regime; "
                      "estimate reflects the finite horizon only", stacklevel=2)
    vals = []
    for r in range(cfg.replications):
        run = run_prelimit(p, cfg.seed, init, replace(cfg, log_events=False), replication=r)
        v = run.pow_time if use_time_average else run.pow_arrivals
        vals.append(0.0 if math.isnan(v) else v)
    echo = {"prelimit": p.describe(), "seeds": [f"{cfg.seed}:{r}" for r in range(cfg.replications)],
            "burn_in": cfg.burn_in, "statistic": "time" if use_time_average else "arrivals"}
    return aggregate(vals, theoretical, echo)


def decoupling_check(p: PrelimitParams, horizon: float | None = None, replications: int = 1000,
                     seed: int = 0) -> EstimateReport:
    """Estimate P(V^n reaches 1 by the horizon | V^n(0) = 0)."""
    if horizon is not None:
        p = replace(p, horizon=horizon)
    if np.all(p.beta_vec == 0):
        return aggregate([0.0] * replications, None, {"prelimit": p.describe(), "seeds": [seed]})
    cfg = PrelimitConfig(seed=seed, sample_dt=p.horizon)
    hits = []
    for r in range(replications):
        run = run_prelimit(p, seed, SystemState(), cfg, replication=r, stop_on_vacation=True)
        hits.append(1.0 if run.vacation_hit_time <= p.horizon else 0.0)
    return aggregate(hits, None, {"prelimit": p.describe(), "seeds": [seed], "replications": replications})

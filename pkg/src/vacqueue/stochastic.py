"""Seeded random streams, renewal interarrival laws and unit-Poisson clocks.

Every random driver of a simulation (Brownian motion, arrivals, services,
vacation begins/ends, stage transitions) gets its own ``RngStream``. Streams
are Philox generators keyed by ``SeedSequence(seed, spawn_key=(replication,
stream_id))``, so distinct ids never share state and identical ids replay
identical variates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

# fixed stream ids; per-clock ids for the multi-stage models are offset below
BROWNIAN = 0
ARRIVALS = 1
SERVICE = 2
VACATION_BEGIN = 3
VACATION_END = 4
TRANSITIONS = 5
_CLOCK_BASE = 100


def clock_stream_id(kind: int, i: int, j: int = 0) -> int:
    """Stream id for the clock of driver ``kind`` and stage pair ``(i, j)``."""
    return _CLOCK_BASE + 10_000 * kind + 100 * i + j


class RngStream:
    """A reproducible, independent stream of variates.

    ``RngStream(seed, stream_id)`` constructed twice yields identical
    sequences; the object itself is stateful and is owned by one worker.
    """

    def __init__(self, seed: int, stream_id: int, replication: int = 0):
        if seed < 0 or stream_id < 0 or replication < 0:
            raise ValueError("seed, stream_id and replication must be nonnegative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.replication = int(replication)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.replication, self.stream_id))
        self.generator = np.random.Generator(np.random.Philox(ss))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, replication={self.replication})"


def brownian_increment(stream: RngStream, dt: float) -> float:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return math.sqrt(dt) * stream.generator.standard_normal()


KINDS = ("exponential", "erlang", "hyperexponential", "deterministic")


@dataclass(frozen=True)
class InterarrivalLaw:
    """Mean-one interarrival distribution with squared coefficient of variation ``c2``.

    ``erlang`` needs ``c2 == 1/k`` for an integer ``k``; ``hyperexponential``
    (two phases, balanced means) needs ``c2 > 1``.
    """

    kind: str = "exponential"
    c2: float = 1.0
    shape: int = field(init=False, default=1)
    p1: float = field(init=False, default=1.0)
    rate1: float = field(init=False, default=1.0)
    rate2: float = field(init=False, default=1.0)

    def __post_init__(self):
        kind, c2 = self.kind, float(self.c2)
        if kind == "exponential":
            if c2 != 1.0:
                raise ValueError("exponential law has c2 = 1")
        elif kind == "deterministic":
            if c2 != 0.0:
                raise ValueError("deterministic law has c2 = 0")
        elif kind == "erlang":
            if not c2 > 0:
                raise ValueError("erlang c2 must be positive")
            k = round(1.0 / c2)
            if k < 1 or abs(k * c2 - 1.0) > 1e-9:
                raise ValueError(f"erlang law needs c2 = 1/k for integer k, got {c2}")
            object.__setattr__(self, "shape", int(k))
        elif kind == "hyperexponential":
            if not c2 > 1:
                raise ValueError(f"hyperexponential law needs c2 > 1, got {c2}")
            p1 = 0.5 * (1.0 + math.sqrt((c2 - 1.0) / (c2 + 1.0)))
            object.__setattr__(self, "p1", p1)
            object.__setattr__(self, "rate1", 2.0 * p1)
            object.__setattr__(self, "rate2", 2.0 * (1.0 - p1))
        else:
            raise ValueError(f"unknown interarrival law {kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "c2", c2)

    @classmethod
    def from_c2(cls, c2: float) -> "InterarrivalLaw":
        """Pick the canonical law with the requested variability."""
        if c2 == 0:
            return cls("deterministic", 0.0)
        if c2 == 1:
            return cls("exponential", 1.0)
        if c2 > 1:
            return cls("hyperexponential", c2)
        return cls("erlang", c2)

    @property
    def code(self) -> int:
        return KINDS.index(self.kind)

    def params(self) -> np.ndarray:
        """Packed parameters consumed by the compiled samplers."""
        return np.array([self.code, self.shape, self.p1, self.rate1, self.rate2], dtype=float)

    def sample(self, stream: RngStream, size: int) -> np.ndarray:
        return _sample_ia(stream.generator, self.params(), int(size))


@njit(cache=True)
def draw_ia(rng, params):
    """One mean-one interarrival variate; the simulators call this inline."""
    kind = int(params[0])
    if kind == 0:
        return rng.standard_exponential()
    if kind == 1:
        k = int(params[1])
        s = 0.0
        for _ in range(k):
            s += rng.standard_exponential()
        return s / k
    if kind == 2:
        if rng.random() < params[2]:
            return rng.standard_exponential() / params[3]
        return rng.standard_exponential() / params[4]
    return 1.0


@njit(cache=True)
def _sample_ia(rng, params, size):
    out = np.empty(size)
    for k in range(size):
        out[k] = draw_ia(rng, params)
    return out


def next_interarrival(law: InterarrivalLaw, rate: float, stream: RngStream) -> float:
    if not rate > 0:
        raise ValueError(f"rate must be positive, got {rate}")
    return float(law.sample(stream, 1)[0]) / rate


class PoissonClock:
    """Unit Poisson process read through a nondecreasing time change.

    Feeding the clock a total argument ``u`` produces ``Poisson(u)`` jumps;
    jump thresholds are cumulative sums of IID Exp(1) variates.
    """

    def __init__(self, stream: RngStream):
        self.stream = stream
        self.cumulative_argument = 0.0
        self.next_threshold = stream.generator.standard_exponential()
        self.jumps = 0

    def advance(self, delta_arg: float) -> int:
        if delta_arg < 0:
            raise ValueError(f"time-change increment must be nonnegative, got {delta_arg}")
        self.cumulative_argument += delta_arg
        k = 0
        while self.cumulative_argument >= self.next_threshold:
            k += 1
            self.next_threshold += self.stream.generator.standard_exponential()
        self.jumps += k
        return k


def poisson_clock_advance(clock: PoissonClock, delta_arg: float) -> int:
    return clock.advance(delta_arg)

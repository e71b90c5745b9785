"""Closed-form performance formulas for the no-vacation baselines and the
vacation-adjusted heuristics.

All formulas require a negative drift ``b`` and use ``|b|`` internally; a
nonnegative drift has no stationary regime and is rejected.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

SQRT_2PI = math.sqrt(2.0 * math.pi)


class DomainError(ValueError):
    pass


def norm_cdf(x: float) -> float:
    """Standard normal CDF via the complementary error function.

    ``0.5 * erfc(-x / sqrt(2))`` keeps full relative precision in the lower
    tail, where ``1 + erf`` would cancel.
    """
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def _check_b(b):
    if not b < 0:
        raise DomainError(f"drift b must be negative for a stationary regime, got {b}")


def _check_pos(**kw):
    for k, v in kw.items():
        if not v > 0:
            raise DomainError(f"{k} must be positive, got {v}")


def _pow_form(arg: float) -> float:
    # 1 / (1 + sqrt(2 pi) a Phi(a) exp(a^2/2)); the exponential overflows past a ~ 37,
    # there the value is exp(-log term) and underflows to 0 only beyond a ~ 38.6
    if arg > 30.0:
        return math.exp(-(math.log(SQRT_2PI * arg * norm_cdf(arg)) + 0.5 * arg * arg))
    return 1.0 / (1.0 + SQRT_2PI * arg * norm_cdf(arg) * math.exp(0.5 * arg * arg))


def b1(b: float, mu: float, sigma: float) -> float:
    return math.sqrt(2.0 / mu) * abs(b) / sigma


def b2(b: float, mu: float, sigma: float, beta: float, gamma: float) -> float:
    return gamma * math.sqrt(2.0 * (mu + beta)) / (mu * (gamma + beta)) * abs(b) / sigma


def pow0(b: float, mu: float, sigma: float) -> float:
    """Stationary probability of wait without vacations (Halfin-Whitt diffusion)."""
    _check_b(b)
    _check_pos(mu=mu, sigma=sigma)
    return _pow_form(b1(b, mu, sigma))


def effective_params(b: float, mu: float, beta: float, gamma: float) -> tuple[float, float]:
    """Drift and rate of the uncoupled diffusion obtained by freezing V at its mean."""
    return gamma * (mu + beta) / (mu * (gamma + beta)) * b, mu + beta


def pow_tilde(b: float, mu: float, sigma: float, beta: float, gamma: float) -> float:
    _check_b(b)
    _check_pos(mu=mu, sigma=sigma, gamma=gamma)
    if beta < 0:
        raise DomainError(f"beta must be nonnegative, got {beta}")
    # same value as the direct b2 formula; going through (b_tilde, mu_tilde) makes the
    # gamma == mu case reproduce pow0(b, mu + beta, sigma) bit for bit
    bt, mt = effective_params(b, mu, beta, gamma)
    return _pow_form(b1(bt, mt, sigma))


def steady_averages_hw(b: float, mu: float, beta: float, gamma: float) -> tuple[float, float]:
    """Long-run averages ``(y, v)`` of ``(X+V)^-`` and ``V`` in the HW system.

    They solve ``b + (mu+beta) y + (mu-gamma) v = 0`` and ``beta y = gamma v``.
    """
    _check_b(b)
    _check_pos(mu=mu, gamma=gamma)
    d = mu * (gamma + beta)
    return gamma * abs(b) / d, beta * abs(b) / d


def sd0(b: float, sigma: float) -> float:
    """Slowdown without vacations: 1 + mean of the stationary reflected BM."""
    _check_b(b)
    if sigma < 0:
        raise DomainError("sigma must be nonnegative")
    return 1.0 + sigma * sigma / (2.0 * abs(b))


def sd_tilde(b: float, sigma: float, beta: float, gamma: float) -> float:
    _check_b(b)
    _check_pos(gamma=gamma)
    if beta < 0 or sigma < 0:
        raise DomainError("beta and sigma must be nonnegative")
    return 1.0 + sigma * sigma * (1.0 + beta / gamma) / (2.0 * abs(b))


def steady_averages_nds(b: float, mu: float, beta: float, gamma: float) -> tuple[float, float]:
    """Long-run averages ``(v, l)`` of ``V`` and ``L(t)/t`` in the NDS system.

    They solve ``b + mu v + l = 0`` and ``-gamma v + beta l / mu = 0``.
    """
    _check_b(b)
    _check_pos(mu=mu, gamma=gamma)
    if beta < 0:
        raise DomainError("beta must be nonnegative")
    v = beta * abs(b) / (mu * (beta + gamma))
    return v, abs(b) - mu * v


@dataclass(frozen=True)
class HeuristicOutputs:
    pow0: float
    pow_tilde: float
    sd0: float
    sd_tilde: float
    b1: float
    b2: float
    b_tilde: float
    mu_tilde: float
    y_bar: float
    v_bar: float
    l_bar: float

    def as_dict(self) -> dict:
        return asdict(self)


def evaluate(b: float, mu: float, sigma: float, beta: float, gamma: float) -> HeuristicOutputs:
    """Every closed-form quantity at one parameter point."""
    bt, mt = effective_params(b, mu, beta, gamma)
    y, v = steady_averages_hw(b, mu, beta, gamma)
    _, ln = steady_averages_nds(b, mu, beta, gamma)
    return HeuristicOutputs(
        pow0=pow0(b, mu, sigma),
        pow_tilde=pow_tilde(b, mu, sigma, beta, gamma),
        sd0=sd0(b, sigma),
        sd_tilde=sd_tilde(b, sigma, beta, gamma),
        b1=b1(b, mu, sigma),
        b2=b2(b, mu, sigma, beta, gamma),
        b_tilde=bt,
        mu_tilde=mt,
        y_bar=y,
        v_bar=v,
        l_bar=ln,
    )

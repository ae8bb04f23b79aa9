"""Univariate Student-t: CDF and quantile.

The CDF is written with the regularized incomplete beta function; the quantile
starts from the inverse incomplete beta and is polished with a bracketed Brent
search on the CDF.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from errors import InvalidSystemError, UsageError


@dataclass(frozen=True)
class UnivariateT:
    location: float
    scale: float
    dof: float

    def __post_init__(self) -> None:
        if not (self.scale >= 0.0):
            raise InvalidSystemError(f"scale must be >= 0, got {self.scale}")
        if not (self.dof > 0.0):
            raise InvalidSystemError(f"dof must be > 0, got {self.dof}")

    @property
    def is_point_mass(self) -> bool:
        return self.scale == 0.0

    def cdf(self, x: float) -> float:
        return t_cdf(x, self)

    def quantile(self, p: float) -> float:
        return t_quantile(p, self)

    def interval(self, level: float = 0.95) -> tuple[float, float]:
        """中央信用区間"""
        tail = 0.5 * (1.0 - level)
        return t_quantile(tail, self), t_quantile(1.0 - tail, self)


def _standard_cdf(t: float, dof: float) -> float:
    t2 = t * t
    if t2 < dof:
        # 0 付近は I_x(1/2, ν/2) の方が桁落ちしない
        half = 0.5 * special.betainc(0.5, 0.5 * dof, t2 / (dof + t2))
        return 0.5 + half if t > 0 else 0.5 - half
    tail = 0.5 * special.betainc(0.5 * dof, 0.5, dof / (dof + t2))
    return 1.0 - tail if t > 0 else tail


def t_cdf(x: float, dist: UnivariateT) -> float:
    if dist.is_point_mass:
        return 1.0 if x >= dist.location else 0.0
    return _standard_cdf((x - dist.location) / dist.scale, dist.dof)


def _standard_quantile_guess(p: float, dof: float) -> float:
    if p == 0.5:
        return 0.0
    upper = p > 0.5
    q = p if upper else 1.0 - p  # q in (0.5, 1)
    two_tail = 2.0 * (1.0 - q)
    if two_tail > 0.5:
        # 中心付近: I_y(1/2, ν/2) = 2q - 1
        y = special.betaincinv(0.5, 0.5 * dof, 2.0 * q - 1.0)
        t = math.sqrt(dof * y / (1.0 - y)) if y < 1.0 else math.inf
    else:
        x = special.betaincinv(0.5 * dof, 0.5, two_tail)
        t = math.sqrt(dof * (1.0 - x) / x) if x > 0.0 else math.inf
    return t if upper else -t


def _standard_quantile(p: float, dof: float) -> float:
    guess = _standard_quantile_guess(p, dof)
    if guess == 0.0 or not math.isfinite(guess):
        return guess

    def f(t: float) -> float:
        return _standard_cdf(t, dof) - p

    step = max(abs(guess) * 1e-6, 1e-12)
    lo, hi = guess - step, guess + step
    f_lo, f_hi = f(lo), f(hi)
    for _ in range(200):
        if f_lo <= 0.0 <= f_hi:
            break
        step *= 2.0
        if f_lo > 0.0:
            lo = guess - step
            f_lo = f(lo)
        if f_hi < 0.0:
            hi = guess + step
            f_hi = f(hi)
    else:
        return guess
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    return optimize.brentq(f, lo, hi, xtol=1e-300, rtol=4.0 * np.finfo(float).eps, maxiter=200)


def t_quantile(p: float, dist: UnivariateT) -> float:
    if not (0.0 < p < 1.0):
        raise UsageError(f"probability must lie in (0, 1), got {p}")
    if dist.is_point_mass or p == 0.5:
        return dist.location
    return dist.location + dist.scale * _standard_quantile(p, dist.dof)

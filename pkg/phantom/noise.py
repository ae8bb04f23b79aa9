from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np

from bayes.random import NOISE, stream
from errors import DataError, UsageError

logger = logging.getLogger(__name__)

NoiseKind = Literal["rician", "gaussian"]
DEFAULT_RELATIVE_SIGMA = 0.05


@dataclass(frozen=True)
class NoiseSpec:
    kind: NoiseKind = "rician"
    sigma: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("rician", "gaussian"):
            raise UsageError(f"unknown noise kind {self.kind!r}")
        if not self.sigma >= 0.0:
            raise DataError(f"noise sigma must be >= 0, got {self.sigma}")

    @classmethod
    def relative(cls, sigma_rel: float, s0: float, kind: NoiseKind = "rician") -> "NoiseSpec":
        return cls(kind, sigma_rel * s0)


def noise_trial(latent: np.ndarray, spec: NoiseSpec, seed: int, trial: int) -> np.ndarray:
    """1 試行分。乱数は (seed, NOISE, trial) のストリームから実部・虚部の順に引く"""
    latent = np.asarray(latent, dtype=float)
    if spec.sigma == 0.0:
        return latent.copy()
    eps = stream(seed, NOISE, trial).normal(0.0, spec.sigma, size=(2, latent.shape[0]))
    real = latent + eps[0]
    if spec.kind == "gaussian":
        return real
    return np.hypot(real, eps[1])


def add_noise(latent: np.ndarray, spec: NoiseSpec, trials: int, seed: int) -> np.ndarray:
    if trials < 1:
        raise UsageError(f"trials must be >= 1, got {trials}")
    latent = np.asarray(latent, dtype=float).reshape(-1)
    logger.debug("noise kind=%s sigma=%.4g trials=%d seed=%d", spec.kind, spec.sigma, trials, seed)
    return np.vstack([noise_trial(latent, spec, seed, t) for t in range(trials)])

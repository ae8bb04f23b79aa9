"""Generalized residual bootstrap for weighted, regularized linear fits."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from bayes.random import BOOTSTRAP, stream
from bayes.regression import LinearSystem, PosteriorT, fitted_values, posterior_means, residual_covariance_diagonal
from errors import DmriUncertaintyError, EmptySampleError, UsageError

logger = logging.getLogger(__name__)

DEFAULT_BOOTSTRAP_DRAWS = 1000
FAILURE_LIMIT = 0.05
LEVERAGE_RTOL = 1e-10

# (B, d) の係数 -> (B,) の統計量。失敗したドローは NaN を返す
Statistic = Callable[[np.ndarray], np.ndarray]
# y* (n,) -> 係数 (d,)
Refit = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class BootstrapResult:
    samples: np.ndarray
    n_draws: int
    failures: int = 0
    excluded_residuals: int = 0

    @property
    def flagged(self) -> bool:
        return self.failures > FAILURE_LIMIT * self.n_draws


def normalized_residuals(sys: LinearSystem, fit: PosteriorT) -> np.ndarray:
    """r_i / sqrt((Z Z^T)_ii)。対角が正でない測定（レバレッジ 1）は NaN"""
    residual = sys.observations - fitted_values(sys, fit)
    zz = residual_covariance_diagonal(sys, fit)
    tol = LEVERAGE_RTOL * sys.covariance_trace() / sys.n
    ok = zz > tol
    out = np.full(sys.n, np.nan)
    out[ok] = residual[ok] / np.sqrt(zz[ok])
    if not np.all(ok):
        logger.debug("%d measurement(s) with leverage 1 excluded from the resampling pool", int(np.sum(~ok)))
    return out


def _reconstruct(sys: LinearSystem, fitted: np.ndarray, resampled: np.ndarray) -> np.ndarray:
    # y* = y_hat + W^{-1/2} r*（全 W では三角因子）
    return fitted + sys.unwhiten(resampled.T).T


def residual_bootstrap(
    sys: LinearSystem,
    fit: PosteriorT,
    statistic: Statistic,
    n_draws: int = DEFAULT_BOOTSTRAP_DRAWS,
    seed: int = 0,
    *keys: int,
    refit: Optional[Refit] = None,
) -> BootstrapResult:
    if n_draws < 1:
        raise UsageError(f"bootstrap needs at least one draw, got {n_draws}")
    r_tilde = normalized_residuals(sys, fit)
    pool = r_tilde[np.isfinite(r_tilde)]
    excluded = sys.n - pool.size
    if pool.size == 0:
        raise EmptySampleError("no residuals left to resample")
    # 中心化した残差から引く
    pool = pool - pool.mean()

    rng = stream(seed, BOOTSTRAP, *keys)
    resampled = rng.choice(pool, size=(n_draws, sys.n), replace=True)
    y_star = _reconstruct(sys, fitted_values(sys, fit), resampled)

    if refit is None:
        coeffs = posterior_means(sys, fit, y_star)
        values = np.asarray(statistic(coeffs), dtype=float).reshape(-1)
    else:
        values = np.full(n_draws, np.nan)
        for b in range(n_draws):
            try:
                c = refit(y_star[b])
            except DmriUncertaintyError as e:
                logger.debug("bootstrap draw %d: refit failed: %s", b, e)
                continue
            values[b] = np.asarray(statistic(np.atleast_2d(c)), dtype=float).reshape(-1)[0]

    ok = np.isfinite(values)
    result = BootstrapResult(values[ok], n_draws, failures=int(n_draws - ok.sum()), excluded_residuals=excluded)
    if result.flagged:
        logger.warning("bootstrap: %d/%d draws failed", result.failures, n_draws)
    return result

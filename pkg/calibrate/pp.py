"""P-P curves: how often the true value lies below each posterior quantile.

For a calibrated posterior the fraction of trials with ``truth <= Q_t(p)`` is
``p`` for every ``p``. The band around the diagonal is the central 95 %
binomial interval of that fraction for the given number of trials.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import stats

from calibrate.quantiles import QuantityPosterior, quantile
from errors import DataError, EmptySampleError

logger = logging.getLogger(__name__)

DEFAULT_P_GRID = np.round(np.arange(1, 100) / 100.0, 2)
BAND_LEVEL = 0.95

Truth = Union[float, Sequence[float], np.ndarray]


@dataclass(frozen=True)
class PPCurve:
    p_grid: np.ndarray
    coverage: np.ndarray
    n_trials: int
    band_lo: np.ndarray
    band_hi: np.ndarray
    bias: float = 0.0

    def max_deviation(self, p_lo: float = 0.0, p_hi: float = 1.0) -> float:
        """sup |coverage - p|（p_lo <= p <= p_hi の格子点上）"""
        sel = (self.p_grid >= p_lo - 1e-12) & (self.p_grid <= p_hi + 1e-12)
        return float(np.max(np.abs(self.coverage[sel] - self.p_grid[sel])))

    def within_band_fraction(self) -> float:
        inside = (self.coverage >= self.band_lo) & (self.coverage <= self.band_hi)
        return float(np.mean(inside))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"p": self.p_grid, "coverage": self.coverage, "band_lo": self.band_lo, "band_hi": self.band_hi}
        )


def binomial_band(p_grid: np.ndarray, n_trials: int, level: float = BAND_LEVEL) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = stats.binom.interval(level, n_trials, p_grid)
    return lo / n_trials, hi / n_trials


def _truth_vector(truth: Truth, n: int) -> np.ndarray:
    t = np.asarray(truth, dtype=float)
    t = np.full(n, float(t)) if t.ndim == 0 else t.reshape(-1)
    if t.shape[0] != n:
        raise DataError(f"{t.shape[0]} truth values for {n} posteriors")
    if not np.all(np.isfinite(t)):
        raise DataError("truth must be finite")
    return t


def quantile_matrix(posteriors: Sequence[QuantityPosterior], p_grid: np.ndarray) -> np.ndarray:
    """(trials, len(p_grid))"""
    return np.vstack([quantile(qp, p_grid) for qp in posteriors])


def _curve(q: np.ndarray, truth: np.ndarray, p_grid: np.ndarray, bias: float) -> PPCurve:
    coverage = np.mean(truth[:, None] <= q, axis=0)
    lo, hi = binomial_band(p_grid, q.shape[0])
    return PPCurve(p_grid.copy(), coverage, q.shape[0], lo, hi, bias)


def pp_curve(
    posteriors: Sequence[QuantityPosterior],
    truth: Truth,
    p_grid: Optional[np.ndarray] = None,
) -> PPCurve:
    if len(posteriors) == 0:
        raise EmptySampleError("P-P curve needs at least one posterior")
    p_grid = DEFAULT_P_GRID if p_grid is None else np.asarray(p_grid, dtype=float)
    t = _truth_vector(truth, len(posteriors))
    return _curve(quantile_matrix(posteriors, p_grid), t, p_grid, 0.0)


def bias_corrected_pp(
    posteriors: Sequence[QuantityPosterior],
    truth: Truth,
    p_grid: Optional[np.ndarray] = None,
) -> PPCurve:
    """平均誤差（事後平均 - 真値）を理論分位点から差し引いた P-P 曲線"""
    if len(posteriors) == 0:
        raise EmptySampleError("P-P curve needs at least one posterior")
    p_grid = DEFAULT_P_GRID if p_grid is None else np.asarray(p_grid, dtype=float)
    t = _truth_vector(truth, len(posteriors))
    centers = np.array([qp.center for qp in posteriors])
    bias = float(np.mean(centers - t))
    logger.info("bias correction: mean error %.4g over %d trials", bias, len(posteriors))
    return _curve(quantile_matrix(posteriors, p_grid) - bias, t, p_grid, bias)

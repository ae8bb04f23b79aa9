"""Voxelwise Bayesian comparison of FA between two cohorts.

Each subject contributes an ``S x V`` matrix of posterior draws. Subjects are
independent, so group draws are formed by pairing draw ``s`` across subjects;
the group difference is (controls - patients) per draw and voxel.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from errors import BetaFitError, DataError

logger = logging.getLogger(__name__)

SD_FLOOR = 1e-6


@dataclass(frozen=True)
class SubjectPosterior:
    subject_id: str
    draws: np.ndarray
    group: Optional[str] = None

    def __post_init__(self) -> None:
        d = np.atleast_2d(np.asarray(self.draws, dtype=float))
        if d.shape[0] < 2:
            raise DataError(f"subject {self.subject_id}: need at least 2 draws, got {d.shape[0]}")
        if not np.all(np.isfinite(d)):
            raise DataError(f"subject {self.subject_id}: draws must be finite")
        if np.any((d < 0.0) | (d > 1.0)):
            raise DataError(f"subject {self.subject_id}: FA draws must lie in [0, 1]")
        d.setflags(write=False)
        object.__setattr__(self, "draws", d)

    @property
    def shape(self) -> tuple[int, int]:
        return self.draws.shape


@dataclass(frozen=True)
class GroupResult:
    diff_draws: np.ndarray
    t_score: np.ndarray
    weights: Optional[np.ndarray] = None  # None は重みなし
    saturated: Optional[np.ndarray] = None

    @property
    def mean(self) -> np.ndarray:
        return self.diff_draws.mean(axis=0)

    @property
    def sd(self) -> np.ndarray:
        return self.diff_draws.std(axis=0, ddof=1)

    @property
    def weighted(self) -> bool:
        return self.weights is not None


def _stack(subjects: Sequence[SubjectPosterior], shape: tuple[int, int]) -> np.ndarray:
    for sp in subjects:
        if sp.shape != shape:
            raise DataError(f"subject {sp.subject_id} has draws {sp.shape}, expected {shape}")
    return np.stack([sp.draws for sp in subjects])


def _cohorts(controls: Sequence[SubjectPosterior], patients: Sequence[SubjectPosterior]) -> tuple[np.ndarray, np.ndarray]:
    if not controls or not patients:
        raise DataError("both cohorts need at least one subject")
    shape = controls[0].shape
    return _stack(controls, shape), _stack(patients, shape)


def subject_weights(sp: SubjectPosterior) -> np.ndarray:
    """w_v = 1 / max(SD_v, SD_FLOOR)"""
    return 1.0 / np.maximum(sp.draws.std(axis=0, ddof=1), SD_FLOOR)


def _saturation(diff: np.ndarray) -> np.ndarray:
    return diff.std(axis=0, ddof=1) < SD_FLOOR


def bayesian_t(result: GroupResult) -> np.ndarray:
    return _t_score(result.diff_draws)


def _t_score(diff: np.ndarray) -> np.ndarray:
    sd = np.maximum(diff.std(axis=0, ddof=1), SD_FLOOR)
    return diff.mean(axis=0) / sd


def _result(diff: np.ndarray, weights: Optional[np.ndarray]) -> GroupResult:
    saturated = _saturation(diff)
    if np.any(saturated):
        logger.warning("%d voxel(s) with floored SD: t-scores saturated", int(saturated.sum()))
    return GroupResult(diff, _t_score(diff), weights, saturated)


def unweighted_group_diff(
    controls: Sequence[SubjectPosterior],
    patients: Sequence[SubjectPosterior],
) -> GroupResult:
    c, p = _cohorts(controls, patients)
    return _result(c.mean(axis=0) - p.mean(axis=0), None)


def _weighted_mean(stack: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # stack (I, S, V), weights (I, V)
    return np.einsum("isv,iv->sv", stack, weights) / weights.sum(axis=0)


def weighted_group_diff(
    controls: Sequence[SubjectPosterior],
    patients: Sequence[SubjectPosterior],
) -> GroupResult:
    c, p = _cohorts(controls, patients)
    wc = np.stack([subject_weights(sp) for sp in controls])
    wp = np.stack([subject_weights(sp) for sp in patients])
    diff = _weighted_mean(c, wc) - _weighted_mean(p, wp)
    return _result(diff, np.vstack([wc, wp]))


def mean_weights(subjects: Sequence[SubjectPosterior]) -> np.ndarray:
    """被験者ごとの重みのボクセル平均 -> (I,)"""
    return np.array([subject_weights(sp).mean() for sp in subjects])


def fit_beta_mom(samples: np.ndarray) -> tuple[float, float]:
    """モーメント法によるベータ分布 (alpha, beta)"""
    x = np.asarray(samples, dtype=float).reshape(-1)
    if x.size < 2 or np.any((x < 0.0) | (x > 1.0)):
        raise DataError("beta fit needs at least 2 samples within [0, 1]")
    m = float(x.mean())
    v = float(x.var(ddof=1))
    return beta_from_moments(m, v)


def beta_from_moments(m: float, v: float) -> tuple[float, float]:
    if not (0.0 < m < 1.0) or not (0.0 < v < m * (1.0 - m)):
        raise BetaFitError(m, v)
    common = m * (1.0 - m) / v - 1.0
    return m * common, (1.0 - m) * common

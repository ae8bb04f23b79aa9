"""Diffusion tensor imaging as a weighted linear model on the log-signal.

Coefficient order is fixed: ``(ln S0, Dxx, Dyy, Dzz, Dxy, Dxz, Dyz)``.
Positive definiteness is not imposed on the fitted tensor; FA is clamped to
[0, 1] and RTOP sampling rejects non-SPD draws instead.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Literal, Optional, Union

import numpy as np
from scipy import linalg

from bayes.regression import (
    AffineMap,
    LinearSystem,
    PosteriorT,
    fit_posterior,
    marginal,
    pushforward_affine,
    sample_posterior,
)
from bayes.student import UnivariateT
from errors import NonPositiveSignalError, RankDeficientError, RtopUndefinedError, UsageError
from models.scheme import AcquisitionScheme

logger = logging.getLogger(__name__)

COEFFICIENTS = ("ln_s0", "Dxx", "Dyy", "Dzz", "Dxy", "Dxz", "Dyz")
RTOP_REJECTION_LIMIT = 0.5

DtiWeighting = Literal["predicted", "observed"]
DTI_WEIGHTINGS: tuple[str, ...] = ("predicted", "observed")


@dataclass(frozen=True)
class DiffusionTensor:
    dxx: float
    dyy: float
    dzz: float
    dxy: float = 0.0
    dxz: float = 0.0
    dyz: float = 0.0

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "DiffusionTensor":
        m = np.asarray(m, dtype=float)
        return cls(m[0, 0], m[1, 1], m[2, 2], m[0, 1], m[0, 2], m[1, 2])

    @classmethod
    def from_coefficients(cls, c: np.ndarray) -> "DiffusionTensor":
        return cls(*[float(v) for v in np.asarray(c)[1:7]])

    def components(self) -> np.ndarray:
        return np.array([self.dxx, self.dyy, self.dzz, self.dxy, self.dxz, self.dyz])

    def matrix(self) -> np.ndarray:
        return _tensor_matrices(self.components()[None, :])[0]

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix())

    @property
    def trace(self) -> float:
        return self.dxx + self.dyy + self.dzz


TensorLike = Union[DiffusionTensor, np.ndarray]


def _as_matrix(D: TensorLike) -> np.ndarray:
    return D.matrix() if isinstance(D, DiffusionTensor) else np.asarray(D, dtype=float)


def _tensor_matrices(six: np.ndarray) -> np.ndarray:
    # (k, 6) -> (k, 3, 3)
    xx, yy, zz, xy, xz, yz = np.moveaxis(np.asarray(six, dtype=float), -1, 0)
    return np.stack(
        [
            np.stack([xx, xy, xz], axis=-1),
            np.stack([xy, yy, yz], axis=-1),
            np.stack([xz, yz, zz], axis=-1),
        ],
        axis=-2,
    )


@dataclass(frozen=True)
class DtiFit:
    posterior: PosteriorT
    scheme: AcquisitionScheme
    system: LinearSystem

    @property
    def tensor(self) -> DiffusionTensor:
        return DiffusionTensor.from_coefficients(self.posterior.mean)


@dataclass(frozen=True)
class DerivedSamples:
    """非線形量のサンプルと棄却/クランプの記録"""

    values: np.ndarray
    n_draws: int
    n_rejected: int = 0
    n_clamped: int = 0
    unreliable: bool = False

    @property
    def clamped_fraction(self) -> float:
        return self.n_clamped / self.n_draws

    @property
    def rejected_fraction(self) -> float:
        return self.n_rejected / self.n_draws


def dti_design(scheme: AcquisitionScheme) -> np.ndarray:
    b = scheme.bvals
    gx, gy, gz = scheme.bvecs.T
    return np.column_stack(
        [
            np.ones_like(b),
            -b * gx * gx,
            -b * gy * gy,
            -b * gz * gz,
            -2.0 * b * gx * gy,
            -2.0 * b * gx * gz,
            -2.0 * b * gy * gz,
        ]
    )


def _log_signal(signal: np.ndarray) -> np.ndarray:
    signal = np.asarray(signal, dtype=float).reshape(-1)
    if np.any(signal <= 0.0):
        bad = int(np.sum(signal <= 0.0))
        raise NonPositiveSignalError(f"voxel rejected: {bad} nonpositive signal value(s), log undefined")
    return np.log(signal)


def dti_system(scheme: AcquisitionScheme, signal: np.ndarray, weights: Optional[np.ndarray] = None) -> LinearSystem:
    log_signal = _log_signal(signal)
    design = dti_design(scheme)
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise RankDeficientError("fewer than 7 informative measurements for the tensor model")
    precision = np.exp(2.0 * log_signal) if weights is None else np.asarray(weights, dtype=float)
    return LinearSystem(design, precision, np.zeros((7, 7)), log_signal)


def predicted_signal(scheme: AcquisitionScheme, signal: np.ndarray) -> np.ndarray:
    """非加重の対数線形フィットによる予測信号"""
    design = dti_design(scheme)
    coeffs, *_ = linalg.lstsq(design, _log_signal(signal))
    return np.exp(design @ coeffs)


def dti_fit_wls(
    scheme: AcquisitionScheme,
    signal: np.ndarray,
    reweight: bool = False,
    weighting: DtiWeighting = "predicted",
) -> DtiFit:
    """W = diag(S^2) による重み付き最小二乗

    weighting="predicted"（既定）: S は非加重の対数線形フィットの予測信号
    weighting="observed": S は観測信号
    """
    if weighting not in DTI_WEIGHTINGS:
        raise UsageError(f"unknown DTI weighting {weighting!r}; expected one of {', '.join(DTI_WEIGHTINGS)}")
    weights = predicted_signal(scheme, signal) ** 2 if weighting == "predicted" else None
    system = dti_system(scheme, signal, weights=weights)
    posterior = fit_posterior(system)
    if reweight:
        # 推定信号で 1 回だけ重みを更新
        fitted = np.exp(system.design @ posterior.mean)
        system = dti_system(scheme, signal, weights=fitted ** 2)
        posterior = fit_posterior(system)
    return DtiFit(posterior, scheme, system)


MD_MAP = AffineMap.row([0.0, 1 / 3, 1 / 3, 1 / 3, 0.0, 0.0, 0.0])


def md_posterior(fit: Union[DtiFit, PosteriorT]) -> UnivariateT:
    post = fit.posterior if isinstance(fit, DtiFit) else fit
    return marginal(pushforward_affine(post, MD_MAP), 0)


def md_from_coefficients(coeffs: np.ndarray) -> np.ndarray:
    coeffs = np.atleast_2d(coeffs)
    return coeffs[:, 1:4].sum(axis=1) / 3.0


def _fa_raw(six: np.ndarray) -> np.ndarray:
    six = np.atleast_2d(six)
    tr = six[:, 0] + six[:, 1] + six[:, 2]
    tr2 = (six[:, :3] ** 2).sum(axis=1) + 2.0 * (six[:, 3:] ** 2).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        arg = 0.5 * (3.0 - tr * tr / tr2)
    arg = np.where(tr2 > 0.0, arg, 0.0)
    return np.sqrt(np.clip(arg, 0.0, None))


def fa_of_tensor(D: TensorLike) -> float:
    m = _as_matrix(D)
    six = np.array([m[0, 0], m[1, 1], m[2, 2], m[0, 1], m[0, 2], m[1, 2]])
    return float(np.clip(_fa_raw(six)[0], 0.0, 1.0))


def fa_from_coefficients(coeffs: np.ndarray) -> tuple[np.ndarray, int]:
    raw = _fa_raw(np.atleast_2d(coeffs)[:, 1:7])
    clamped = int(np.sum(raw > 1.0))
    return np.clip(raw, 0.0, 1.0), clamped


def fa_posterior_samples(fit: Union[DtiFit, PosteriorT], n_draws: int, seed: int, *keys: int) -> DerivedSamples:
    post = fit.posterior if isinstance(fit, DtiFit) else fit
    draws = sample_posterior(post, n_draws, seed, *keys)
    values, clamped = fa_from_coefficients(draws)
    if clamped:
        logger.debug("FA clamped at 1 for %d/%d draws", clamped, n_draws)
    return DerivedSamples(values, n_draws, n_clamped=clamped)


def rtop_of_tensor(D: TensorLike, diffusion_time: float) -> float:
    """RTOP = det(4 pi t_d D)^{-1/2} [mm^-3]"""
    m = _as_matrix(D)
    if np.linalg.eigvalsh(m).min() <= 0.0:
        raise RtopUndefinedError("RTOP undefined: tensor is not positive definite")
    return float(np.linalg.det(4.0 * math.pi * diffusion_time * m) ** -0.5)


def rtop_from_coefficients(coeffs: np.ndarray, diffusion_time: float) -> np.ndarray:
    """SPD でないドローは NaN"""
    mats = _tensor_matrices(np.atleast_2d(coeffs)[:, 1:7])
    spd = np.linalg.eigvalsh(mats).min(axis=1) > 0.0
    out = np.full(mats.shape[0], np.nan)
    if np.any(spd):
        det = np.linalg.det(4.0 * math.pi * diffusion_time * mats[spd])
        out[spd] = det ** -0.5
    return out


def rtop_posterior_samples(
    fit: Union[DtiFit, PosteriorT],
    diffusion_time: float,
    n_draws: int,
    seed: int,
    *keys: int,
) -> DerivedSamples:
    post = fit.posterior if isinstance(fit, DtiFit) else fit
    draws = sample_posterior(post, n_draws, seed, *keys)
    values = rtop_from_coefficients(draws, diffusion_time)
    ok = np.isfinite(values)
    rejected = int(n_draws - ok.sum())
    unreliable = rejected > RTOP_REJECTION_LIMIT * n_draws
    if unreliable:
        logger.warning("RTOP posterior unreliable: %d/%d draws not positive definite", rejected, n_draws)
    return DerivedSamples(values[ok], n_draws, n_rejected=rejected, unreliable=unreliable)

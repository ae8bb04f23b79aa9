"""Weighted, regularized least squares read as a Bayesian linear regression.

Every estimate of the form ``(Phi^T W Phi + Lambda)^{-1} Phi^T W y`` is the
mean of a multivariate t posterior once the residual variance is given an
empirical-Bayes inverse-Gamma prior. This module computes that posterior and
the few derived objects the rest of the package needs (smoother matrix,
residual covariance structure, affine pushforward, sampling).

Degrees of freedom follow ``nu = ||(I - H) W^{-1/2}||_F^2`` evaluated with W
normalized to ``tr(W^{-1}) = n``. For ``W = I`` this is the textbook
expression; the normalization only removes the arbitrary scale of W. The
appendix form ``||I - H||_F^2`` agrees with it only for ``W = I``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import linalg

from bayes.random import stream
from bayes.student import UnivariateT
from errors import (
    CovarianceUndefinedError,
    DegenerateDofError,
    FactorizationError,
    InvalidSystemError,
    SingularSystemError,
)

logger = logging.getLogger(__name__)

PSD_RTOL = 1e-10


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LinearSystem:
    design: np.ndarray
    precision: np.ndarray
    regularizer: np.ndarray
    observations: np.ndarray

    def __post_init__(self) -> None:
        design = np.atleast_2d(np.asarray(self.design, dtype=float))
        y = np.asarray(self.observations, dtype=float).reshape(-1)
        n, d = design.shape
        if n < 1 or d < 1:
            raise InvalidSystemError(f"empty design matrix {design.shape}")
        if y.shape[0] != n:
            raise InvalidSystemError(f"observations have length {y.shape[0]}, design has {n} rows")

        precision = np.asarray(self.precision, dtype=float)
        if precision.ndim == 1:
            if precision.shape[0] != n:
                raise InvalidSystemError(f"precision has length {precision.shape[0]}, expected {n}")
            if not np.all(precision > 0.0):
                raise InvalidSystemError("diagonal precision entries must be strictly positive")
        elif precision.ndim == 2:
            if precision.shape != (n, n):
                raise InvalidSystemError(f"precision has shape {precision.shape}, expected {(n, n)}")
            if not np.allclose(precision, precision.T, rtol=0.0, atol=1e-12 * np.abs(precision).max()):
                raise InvalidSystemError("precision matrix is not symmetric")
            try:
                linalg.cholesky(precision, lower=True)
            except linalg.LinAlgError as e:
                raise InvalidSystemError("precision matrix is not positive definite") from e
        else:
            raise InvalidSystemError("precision must be a vector or a square matrix")

        regularizer = np.asarray(self.regularizer, dtype=float)
        if regularizer.ndim == 0 or regularizer.shape == ():
            regularizer = float(regularizer) * np.eye(d)
        if regularizer.shape != (d, d):
            raise InvalidSystemError(f"regularizer has shape {regularizer.shape}, expected {(d, d)}")
        if not np.allclose(regularizer, regularizer.T, rtol=0.0, atol=1e-12 * max(np.abs(regularizer).max(), 1e-300)):
            raise InvalidSystemError("regularizer is not symmetric")
        if np.any(regularizer):
            eig = linalg.eigvalsh(regularizer)
            if eig.min() < -PSD_RTOL * max(eig.max(), 0.0):
                raise InvalidSystemError(f"regularizer is not positive semidefinite (min eigenvalue {eig.min():.3e})")

        object.__setattr__(self, "design", _frozen(design))
        object.__setattr__(self, "precision", _frozen(precision))
        object.__setattr__(self, "regularizer", _frozen(regularizer))
        object.__setattr__(self, "observations", _frozen(y))

    @classmethod
    def ordinary(cls, design: np.ndarray, observations: np.ndarray) -> "LinearSystem":
        design = np.atleast_2d(np.asarray(design, dtype=float))
        n, d = design.shape
        return cls(design, np.ones(n), np.zeros((d, d)), observations)

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def d(self) -> int:
        return self.design.shape[1]

    @property
    def diagonal_precision(self) -> bool:
        return self.precision.ndim == 1

    def with_observations(self, observations: np.ndarray) -> "LinearSystem":
        return replace(self, observations=observations)

    def precision_root(self) -> np.ndarray:
        """W = L L^T の下三角 L（対角 W なら sqrt(w) ベクトル）"""
        if self.diagonal_precision:
            return np.sqrt(self.precision)
        return linalg.cholesky(self.precision, lower=True)

    def whiten(self, v: np.ndarray) -> np.ndarray:
        # L^T v ; (L^T Phi)^T (L^T Phi) = Phi^T W Phi
        root = self.precision_root()
        if self.diagonal_precision:
            return root.reshape((-1,) + (1,) * (np.ndim(v) - 1)) * v
        return root.T @ v

    def unwhiten(self, v: np.ndarray) -> np.ndarray:
        """W^{-1/2} v（Cholesky 因子による平方根）"""
        root = self.precision_root()
        if self.diagonal_precision:
            return v / root.reshape((-1,) + (1,) * (np.ndim(v) - 1))
        return linalg.solve_triangular(root.T, v, lower=False)

    def covariance_trace(self) -> float:
        # tr(W^{-1})
        if self.diagonal_precision:
            return float(np.sum(1.0 / self.precision))
        eye = np.eye(self.n)
        w_inv = linalg.cho_solve((linalg.cholesky(self.precision, lower=True), True), eye)
        return float(np.trace(w_inv))


@dataclass(frozen=True)
class AffineMap:
    matrix: np.ndarray
    offset: np.ndarray

    def __post_init__(self) -> None:
        matrix = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        offset = np.asarray(self.offset, dtype=float).reshape(-1)
        if offset.shape[0] != matrix.shape[0]:
            raise InvalidSystemError(f"offset length {offset.shape[0]} does not match {matrix.shape[0]} rows")
        object.__setattr__(self, "matrix", _frozen(matrix))
        object.__setattr__(self, "offset", _frozen(offset))

    @classmethod
    def row(cls, coefficients, offset: float = 0.0) -> "AffineMap":
        return cls(np.asarray(coefficients, dtype=float).reshape(1, -1), np.array([offset]))

    def apply(self, x: np.ndarray) -> np.ndarray:
        # x: (..., d) -> (..., m)
        return x @ self.matrix.T + self.offset


@dataclass(frozen=True)
class PosteriorT:
    """多変量 t 事後分布 t_nu(mean, scale)"""

    mean: np.ndarray
    dof: float
    sigma2_hat: float
    scale: np.ndarray
    q_factor: Optional[np.ndarray] = None
    condition: Optional[float] = None
    heavy_tailed: bool = False
    extras: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if not (self.dof > 0.0):
            raise DegenerateDofError(f"degrees of freedom must be > 0, got {self.dof}")
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        scale = np.atleast_2d(np.asarray(self.scale, dtype=float))
        if scale.shape != (mean.shape[0], mean.shape[0]):
            raise InvalidSystemError(f"scale has shape {scale.shape} for mean of length {mean.shape[0]}")
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "scale", _frozen(scale))
        if self.q_factor is not None:
            object.__setattr__(self, "q_factor", _frozen(self.q_factor))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def is_point_mass(self) -> bool:
        return not np.any(self.scale)

    def covariance(self) -> np.ndarray:
        if self.heavy_tailed or self.dof <= 2.0:
            raise CovarianceUndefinedError(f"heavy-tailed: covariance undefined for dof {self.dof:.4g} <= 2")
        return self.dof / (self.dof - 2.0) * self.scale

    def q_matrix(self) -> np.ndarray:
        if self.q_factor is None:
            raise InvalidSystemError("posterior carries no Q factorization (pushforward result)")
        return self.q_factor @ self.q_factor.T

    def q_solve(self, b: np.ndarray) -> np.ndarray:
        if self.q_factor is None:
            raise InvalidSystemError("posterior carries no Q factorization (pushforward result)")
        return linalg.cho_solve((self.q_factor, True), b)


@dataclass(frozen=True)
class InverseGammaParams:
    alpha_post: float
    beta_post: float
    alpha_prior: float
    beta_prior: float

    @property
    def mean_variance(self) -> float:
        # E[sigma^2] = beta* / (alpha* - 1)
        return self.beta_post / (self.alpha_post - 1.0)


def _factor_q(sys: LinearSystem) -> tuple[np.ndarray, np.ndarray, float]:
    phi_w = sys.whiten(sys.design)
    q = phi_w.T @ phi_w + sys.regularizer
    q = 0.5 * (q + q.T)
    eig = linalg.eigvalsh(q)
    condition = float(eig.max() / eig.min()) if eig.min() > 0.0 else float("inf")
    try:
        q_chol = linalg.cholesky(q, lower=True)
    except linalg.LinAlgError as e:
        raise SingularSystemError("Q = Phi^T W Phi + Lambda is not invertible", condition) from e
    if not np.isfinite(condition) or condition > 1.0 / np.finfo(float).eps:
        raise SingularSystemError("Q = Phi^T W Phi + Lambda is numerically singular", condition)
    return phi_w, q_chol, condition


def _whitened_gram(phi_w: np.ndarray, q_chol: np.ndarray) -> np.ndarray:
    # G = Phi_w L_Q^{-T} ; smoother in whitened coordinates S = G G^T
    return linalg.solve_triangular(q_chol, phi_w.T, lower=True).T


def _raw_dof(sys: LinearSystem, g: np.ndarray) -> float:
    """||Z||_F^2 = tr((I - S) W^{-1} (I - S))"""
    if sys.diagonal_precision:
        v = 1.0 / sys.precision
        s_diag = np.einsum("ij,ij->i", g, g)
        gtg = g.T @ g
        gtvg = g.T @ (v[:, None] * g)
        return float(np.sum(v) - 2.0 * np.dot(s_diag, v) + np.trace(gtg @ gtvg))
    z = _explicit_z(sys, g)
    return float(np.sum(z * z))


def _explicit_z(sys: LinearSystem, g: np.ndarray) -> np.ndarray:
    # Z = (I - H) W^{-1/2} = W^{-1/2} (I - S)
    i_minus_s = np.eye(sys.n) - g @ g.T
    return sys.unwhiten(i_minus_s)


def fit_posterior(sys: LinearSystem) -> PosteriorT:
    phi_w, q_chol, condition = _factor_q(sys)
    logger.debug("fit n=%d d=%d condition=%.3e", sys.n, sys.d, condition)

    rhs = phi_w.T @ sys.whiten(sys.observations)
    mean = linalg.cho_solve((q_chol, True), rhs)
    residual = sys.observations - sys.design @ mean

    g = _whitened_gram(phi_w, q_chol)
    raw = _raw_dof(sys, g)
    dof = raw * sys.n / sys.covariance_trace()
    if not dof > 1e-10 * sys.n:
        raise DegenerateDofError(
            f"degrees of freedom {dof:.3e} <= 0: n={sys.n} too small for the effective model size"
        )
    sigma2_hat = float(residual @ residual) / raw

    q_inv = linalg.cho_solve((q_chol, True), np.eye(sys.d))
    q_inv = 0.5 * (q_inv + q_inv.T)
    heavy = dof <= 2.0
    if heavy:
        logger.warning("heavy-tailed: covariance undefined (dof=%.4g)", dof)
        scale = sigma2_hat * q_inv
    else:
        scale = (dof - 2.0) / dof * sigma2_hat * q_inv

    return PosteriorT(
        mean=mean,
        dof=dof,
        sigma2_hat=sigma2_hat,
        scale=scale,
        q_factor=q_chol,
        condition=condition,
        heavy_tailed=heavy,
    )


def fitted_values(sys: LinearSystem, fit: PosteriorT) -> np.ndarray:
    return sys.design @ fit.mean


def smoother_matrix(sys: LinearSystem, fit: PosteriorT) -> np.ndarray:
    """H = Phi Q^{-1} Phi^T W"""
    if sys.diagonal_precision:
        phi_t_w = (sys.design * sys.precision[:, None]).T
    else:
        phi_t_w = sys.design.T @ sys.precision
    return sys.design @ fit.q_solve(phi_t_w)


def residual_covariance(sys: LinearSystem, fit: PosteriorT) -> np.ndarray:
    """Z Z^T = (I - H) W^{-1} (I - H)^T（sigma^2 を除いた残差共分散）"""
    phi_w = sys.whiten(sys.design)
    g = _whitened_gram(phi_w, fit.q_factor)
    z = _explicit_z(sys, g)
    return z @ z.T


def residual_covariance_diagonal(sys: LinearSystem, fit: PosteriorT) -> np.ndarray:
    if not sys.diagonal_precision:
        return np.diag(residual_covariance(sys, fit)).copy()
    phi_w = sys.whiten(sys.design)
    g = _whitened_gram(phi_w, fit.q_factor)
    v = 1.0 / sys.precision
    s_diag = np.einsum("ij,ij->i", g, g)
    # ||S_i||^2 = g_i (G^T G) g_i^T
    s_row2 = np.einsum("ij,jk,ik->i", g, g.T @ g, g)
    return v * (1.0 - 2.0 * s_diag + s_row2)


def posterior_means(sys: LinearSystem, fit: PosteriorT, observations: np.ndarray) -> np.ndarray:
    """同じ系 (Q 固定) での一括再推定: (B, n) -> (B, d)"""
    y = np.atleast_2d(observations)
    phi_w = sys.whiten(sys.design)
    rhs = phi_w.T @ sys.whiten(y.T)
    return fit.q_solve(rhs).T


def gaussian_posterior(post: PosteriorT) -> tuple[np.ndarray, np.ndarray]:
    """プラグイン正規事後分布 N(mu, sigma2_hat Q^{-1})"""
    if post.q_factor is not None:
        cov = post.sigma2_hat * post.q_solve(np.eye(post.dim))
        return post.mean.copy(), 0.5 * (cov + cov.T)
    if post.heavy_tailed:
        return post.mean.copy(), post.scale.copy()
    return post.mean.copy(), post.covariance()


def variance_posterior(sys: LinearSystem, fit: PosteriorT) -> InverseGammaParams:
    """sigma^2 の逆ガンマ事前/事後パラメータ（経験ベイズ: E[sigma^2] = sigma2_hat）"""
    alpha_post = 0.5 * fit.dof
    beta_post = fit.sigma2_hat * (alpha_post - 1.0)
    y = sys.observations
    residual = y - fitted_values(sys, fit)
    w_resid = sys.precision * residual if sys.diagonal_precision else sys.precision @ residual
    alpha_prior = alpha_post - 0.5 * sys.n
    beta_prior = beta_post - 0.5 * float(y @ w_resid)
    return InverseGammaParams(alpha_post, beta_post, alpha_prior, beta_prior)


def pushforward_affine(post: PosteriorT, amap: AffineMap) -> PosteriorT:
    if amap.matrix.shape[1] != post.dim:
        raise InvalidSystemError(
            f"affine map expects dimension {amap.matrix.shape[1]}, posterior has {post.dim}"
        )
    a = amap.matrix
    scale = a @ post.scale @ a.T
    return PosteriorT(
        mean=a @ post.mean + amap.offset,
        dof=post.dof,
        sigma2_hat=post.sigma2_hat,
        scale=0.5 * (scale + scale.T),
        q_factor=None,
        condition=post.condition,
        heavy_tailed=post.heavy_tailed,
    )


def marginal(post: PosteriorT, index: int) -> UnivariateT:
    if not (0 <= index < post.dim):
        raise IndexError(f"coefficient index {index} out of range for dimension {post.dim}")
    return UnivariateT(float(post.mean[index]), float(np.sqrt(max(post.scale[index, index], 0.0))), post.dof)


def scale_factor(post: PosteriorT) -> np.ndarray:
    """L L^T = R となる因子（半正定値なら固有分解にフォールバック）"""
    r = post.scale
    if not np.any(r):
        return np.zeros_like(r)
    try:
        return linalg.cholesky(r, lower=True)
    except linalg.LinAlgError:
        pass
    eig, vec = linalg.eigh(r)
    tol = PSD_RTOL * max(eig.max(), 0.0)
    if eig.min() < -tol:
        raise FactorizationError(f"scale matrix not positive semidefinite (min eigenvalue {eig.min():.3e})")
    return vec * np.sqrt(np.clip(eig, 0.0, None))


def sample_posterior(post: PosteriorT, n_draws: int, seed: int, *keys: int) -> np.ndarray:
    if n_draws < 1:
        raise InvalidSystemError(f"n_draws must be positive, got {n_draws}")
    if post.is_point_mass:
        return np.tile(post.mean, (n_draws, 1))
    factor = scale_factor(post)
    rng = stream(seed, *keys)
    z = rng.standard_normal((n_draws, post.dim))
    g = rng.chisquare(post.dof, size=n_draws)
    return post.mean + (z @ factor.T) * np.sqrt(post.dof / g)[:, None]

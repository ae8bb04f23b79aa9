"""Real, symmetric (even-order) spherical harmonics and the SH-based fits.

Basis ordering is ``l = 0, 2, ..., L`` and ``m = -l..l`` inside each band,
orthonormal with respect to the uniform measure on the sphere. Negative m
carries ``sin(|m| phi)``, positive m ``cos(m phi)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from bayes.regression import AffineMap, LinearSystem, PosteriorT, fit_posterior
from errors import DataError, UsageError
from models.dti import DiffusionTensor
from models.scheme import AcquisitionScheme
from models.sphere import cart2sphere

logger = logging.getLogger(__name__)

RESPONSE_QUADRATURE_NODES = 128
QBI_DEFAULT_LAMBDA = 0.006


def n_coefficients(order: int) -> int:
    return (order + 1) * (order + 2) // 2


def _check_order(order: int) -> None:
    if order < 0 or order % 2:
        raise UsageError(f"spherical harmonic order must be even and >= 0, got {order}")


def sh_degrees(order: int) -> tuple[np.ndarray, np.ndarray]:
    _check_order(order)
    ls, ms = [], []
    for l in range(0, order + 1, 2):
        for m in range(-l, l + 1):
            ls.append(l)
            ms.append(m)
    return np.array(ls), np.array(ms)


def _normalization(l: int, m: int) -> float:
    return math.sqrt((2 * l + 1) / (4.0 * math.pi) * math.factorial(l - m) / math.factorial(l + m))


def sh_basis(directions: np.ndarray, order: int) -> np.ndarray:
    """(N, 3) の単位ベクトル -> (N, (L+1)(L+2)/2)"""
    _check_order(order)
    theta, phi = cart2sphere(directions)
    x = np.cos(theta)
    cols = []
    for l in range(0, order + 1, 2):
        for m in range(-l, l + 1):
            am = abs(m)
            plm = special.lpmv(am, l, x) * _normalization(l, am)
            if m == 0:
                cols.append(plm)
            elif m > 0:
                cols.append(math.sqrt(2.0) * plm * np.cos(am * phi))
            else:
                cols.append(math.sqrt(2.0) * plm * np.sin(am * phi))
    return np.column_stack(cols)


def band_energy(coeffs: np.ndarray, order: int) -> np.ndarray:
    """各 l の sum_m c_lm^2（回転不変量）"""
    ls, _ = sh_degrees(order)
    c = np.asarray(coeffs)
    return np.array([np.sum(c[ls == l] ** 2) for l in range(0, order + 1, 2)])


def _axial_eigenvalues(D) -> tuple[float, float]:
    if isinstance(D, DiffusionTensor):
        e = np.sort(D.eigenvalues())
    else:
        arr = np.asarray(D, dtype=float)
        if arr.shape == (2,):
            # (lambda_par, lambda_perp)
            return float(arr[0]), float(arr[1])
        e = np.sort(np.linalg.eigvalsh(arr))
    scale = max(abs(e).max(), 1e-300)
    if abs(e[0] - e[1]) <= abs(e[1] - e[2]):
        par, perp, spread = e[2], 0.5 * (e[0] + e[1]), abs(e[0] - e[1])
    else:
        par, perp, spread = e[0], 0.5 * (e[1] + e[2]), abs(e[1] - e[2])
    if spread > 1e-6 * scale:
        raise DataError("response tensor must be axially symmetric")
    return float(par), float(perp)


def response_from_tensor(D_axial, bval: float, order: int, s0: float = 1.0, nodes: int = RESPONSE_QUADRATURE_NODES) -> np.ndarray:
    """単一ファイバー応答の回転調和係数 r_l（l = 0, 2, ..., L）

    Scaled so that a unit-mass delta fODF convolves to the single-fiber
    signal: r_l = 2 pi * integral_{-1}^{1} S(x) P_l(x) dx.
    """
    _check_order(order)
    par, perp = _axial_eigenvalues(D_axial)
    x, w = np.polynomial.legendre.leggauss(nodes)
    signal = s0 * np.exp(-bval * (perp + (par - perp) * x * x))
    return np.array([2.0 * math.pi * np.sum(w * signal * special.eval_legendre(l, x)) for l in range(0, order + 1, 2)])


def convolution_weights(response: np.ndarray, order: int) -> np.ndarray:
    # 係数ごとに r_l を展開
    ls, _ = sh_degrees(order)
    return np.asarray(response)[ls // 2]


@dataclass(frozen=True)
class ShFit:
    posterior: PosteriorT
    order: int
    system: LinearSystem
    response: Optional[np.ndarray] = None
    constraint_matrix: Optional[np.ndarray] = None
    converged: bool = True
    n_iterations: int = 0
    lambda_eff: float = 0.0


def _single_shell(scheme: AcquisitionScheme, signal: np.ndarray) -> tuple[np.ndarray, np.ndarray, Optional[float]]:
    scheme.require_single_shell()
    signal = np.asarray(signal, dtype=float).reshape(-1)
    weighted = ~scheme.b0_mask
    b0 = float(signal[scheme.b0_mask].mean()) if np.any(scheme.b0_mask) else None
    return scheme.bvecs[weighted], signal[weighted], b0


def laplace_beltrami_penalty(order: int) -> np.ndarray:
    ls, _ = sh_degrees(order)
    return np.diag((ls * (ls + 1.0)) ** 2)


def qbi_fit(scheme: AcquisitionScheme, signal: np.ndarray, order: int = 6, lam: float = QBI_DEFAULT_LAMBDA) -> ShFit:
    """Laplace-Beltrami 正則化付き SH 信号フィット（W = I）"""
    dirs, y, b0 = _single_shell(scheme, signal)
    if b0 is not None and b0 > 0.0:
        y = y / b0
    design = sh_basis(dirs, order)
    system = LinearSystem(design, np.ones(len(y)), lam * laplace_beltrami_penalty(order), y)
    return ShFit(fit_posterior(system), order, system, lambda_eff=lam)


def funk_radon_eigenvalues(order: int) -> np.ndarray:
    # 2 pi P_l(0)、係数ごと
    ls, _ = sh_degrees(order)
    return 2.0 * math.pi * special.eval_legendre(ls, 0.0)


def funk_radon_map(order: int, directions: np.ndarray) -> AffineMap:
    """QBI 係数 -> ODF 振幅（Funk-Radon 固有値 2 pi P_l(0)）"""
    basis = sh_basis(directions, order)
    return AffineMap(basis * funk_radon_eigenvalues(order), np.zeros(basis.shape[0]))

"""Constrained spherical deconvolution.

The fODF is expanded in the real even SH basis and the measured shell is the
fODF convolved with a single-fiber response. Negative lobes are suppressed
iteratively: grid directions whose amplitude falls below ``tau`` times the
mean amplitude of a low-order initial estimate become rows of a penalty
matrix, and the regularized system is re-solved until that set stops
changing. The last system is what the posterior is computed from, so the
constraint set is treated as fixed.
"""
from __future__ import annotations

import logging
from typing import Optional

import numpy as np
from scipy import linalg

from bayes.regression import LinearSystem, fit_posterior
from errors import DataError
from models.scheme import AcquisitionScheme
from models.sh import ShFit, _check_order, _single_shell, convolution_weights, n_coefficients, sh_basis
from models.sphere import hemisphere_directions

logger = logging.getLogger(__name__)

CSD_DEFAULT_ORDER = 10
CSD_DEFAULT_LAMBDA = 5.0
CSD_DEFAULT_TAU = 0.1
CSD_MAX_ITERATIONS = 50
INITIAL_ORDER = 4
# 724 点の球面格子を対蹠点で半分にしたもの
CSD_CONSTRAINT_DIRECTIONS = 362


def csd_design(directions: np.ndarray, response: np.ndarray, order: int) -> np.ndarray:
    return sh_basis(directions, order) * convolution_weights(response, order)


def _regularized_solve(design: np.ndarray, y: np.ndarray, penalty: np.ndarray) -> np.ndarray:
    # [X; L] f = [y; 0] を最小二乗で解く
    stacked = np.vstack([design, penalty])
    rhs = np.concatenate([y, np.zeros(penalty.shape[0])])
    coeffs, *_ = linalg.lstsq(stacked, rhs)
    return coeffs


def _initial_estimate(design: np.ndarray, y: np.ndarray, order: int) -> np.ndarray:
    """低次（l <= 4）だけの非拘束解。高次係数は 0"""
    k = n_coefficients(min(order, INITIAL_ORDER))
    coeffs = np.zeros(design.shape[1])
    coeffs[:k], *_ = linalg.lstsq(design[:, :k], y)
    return coeffs


def csd_fit(
    scheme: AcquisitionScheme,
    signal: np.ndarray,
    response: np.ndarray,
    order: int = CSD_DEFAULT_ORDER,
    lam: float = CSD_DEFAULT_LAMBDA,
    tau: float = CSD_DEFAULT_TAU,
    constraint_directions: Optional[np.ndarray] = None,
    max_iterations: int = CSD_MAX_ITERATIONS,
) -> ShFit:
    _check_order(order)
    response = np.asarray(response, dtype=float)
    if response.shape[0] < order // 2 + 1:
        raise DataError(f"response has {response.shape[0]} bands, order {order} needs {order // 2 + 1}")
    dirs, y, _ = _single_shell(scheme, signal)
    if constraint_directions is None:
        constraint_directions = hemisphere_directions(CSD_CONSTRAINT_DIRECTIONS)

    design = csd_design(dirs, response, order)
    grid_basis = sh_basis(constraint_directions, order)
    n_meas, n_grid = design.shape[0], grid_basis.shape[0]
    lambda_eff = lam * n_meas * float(response[0]) / n_grid

    coeffs = _initial_estimate(design, y, order)
    threshold = tau * float(np.mean(grid_basis @ coeffs))

    active: Optional[np.ndarray] = None
    converged = False
    n_iterations = 0
    for _ in range(max_iterations):
        below = grid_basis @ coeffs < threshold
        if active is not None and np.array_equal(below, active):
            converged = True
            break
        active = below
        coeffs = _regularized_solve(design, y, lambda_eff * grid_basis[active])
        n_iterations += 1
    else:
        # 最終解で集合が固定されていれば収束扱い
        converged = np.array_equal(grid_basis @ coeffs < threshold, active)

    if not converged:
        logger.warning("CSD did not converge in %d iterations; last iterate kept", max_iterations)
    if n_meas + int(active.sum()) < design.shape[1]:
        logger.warning(
            "CSD underdetermined: %d measurements + %d constraints < %d coefficients",
            n_meas,
            int(active.sum()),
            design.shape[1],
        )

    constraint = grid_basis[active]
    penalty = lambda_eff ** 2 * (constraint.T @ constraint)
    penalty = 0.5 * (penalty + penalty.T)
    system = LinearSystem(design, np.ones(n_meas), penalty, y)
    posterior = fit_posterior(system)
    logger.debug("CSD converged=%s iterations=%d constraints=%d", converged, n_iterations, int(active.sum()))
    return ShFit(
        posterior,
        order,
        system,
        response=response[: order // 2 + 1],
        constraint_matrix=constraint,
        converged=bool(converged),
        n_iterations=n_iterations,
        lambda_eff=lambda_eff,
    )

"""fODF peak detection on a sphere grid and the crossing angle."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from bayes.regression import AffineMap, PosteriorT, sample_posterior
from models.dti import DerivedSamples
from models.sh import sh_basis
from models.sphere import SphereGrid, icosphere

DEFAULT_MIN_SEPARATION = 25.0  # degrees
DEFAULT_RELATIVE_THRESHOLD = 0.25


@dataclass(frozen=True)
class FodfPeaks:
    directions: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    amplitudes: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self) -> int:
        return self.amplitudes.shape[0]


def axis_angle(a: np.ndarray, b: np.ndarray) -> float:
    """軸（符号なし方向）同士の角度 [deg]、0..90"""
    cos = abs(float(np.dot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b)))
    return math.degrees(math.acos(min(cos, 1.0)))


def _local_maxima(amplitudes: np.ndarray, grid: SphereGrid) -> np.ndarray:
    scale = max(float(np.abs(amplitudes).max()), 1e-300)
    around = amplitudes[grid.neighbor_table]
    # 定数場は極大にしない
    is_max = (amplitudes >= around.max(axis=1)) & (amplitudes - around.min(axis=1) > 1e-12 * scale)
    return np.flatnonzero(is_max)


def _refine(v: int, amplitudes: np.ndarray, grid: SphereGrid) -> tuple[np.ndarray, float]:
    """接平面での 2 次曲面当てはめで頂点位置を補正"""
    center = grid.vertices[v]
    nbrs = grid.neighbors[v]
    helper = np.array([1.0, 0.0, 0.0]) if abs(center[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(center, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(center, e1)
    pts = grid.vertices[np.concatenate([[v], nbrs])]
    x, y = pts @ e1, pts @ e2
    a = amplitudes[np.concatenate([[v], nbrs])]
    design = np.column_stack([np.ones_like(x), x, y, x * x, x * y, y * y])
    coef, *_ = np.linalg.lstsq(design, a, rcond=None)
    hess = np.array([[2.0 * coef[3], coef[4]], [coef[4], 2.0 * coef[5]]])
    if np.any(np.linalg.eigvalsh(hess) >= 0.0):
        return center, float(amplitudes[v])
    step = np.linalg.solve(hess, -coef[1:3])
    if np.linalg.norm(step) > grid.edge_angle:
        return center, float(amplitudes[v])
    direction = center + step[0] * e1 + step[1] * e2
    direction /= np.linalg.norm(direction)
    sx, sy = step
    value = coef[0] + coef[1] * sx + coef[2] * sy + coef[3] * sx * sx + coef[4] * sx * sy + coef[5] * sy * sy
    return direction, float(max(value, amplitudes[v]))


def detect_peaks(
    coeffs: np.ndarray,
    order: int,
    grid: Optional[SphereGrid] = None,
    min_separation: float = DEFAULT_MIN_SEPARATION,
    relative_threshold: float = DEFAULT_RELATIVE_THRESHOLD,
    refine: bool = True,
    basis: Optional[np.ndarray] = None,
) -> FodfPeaks:
    grid = grid or icosphere(3)
    if basis is None:
        basis = sh_basis(grid.vertices, order)
    amplitudes = basis @ np.asarray(coeffs, dtype=float)
    return peaks_from_amplitudes(amplitudes, grid, min_separation, relative_threshold, refine)


def peaks_from_amplitudes(
    amplitudes: np.ndarray,
    grid: SphereGrid,
    min_separation: float = DEFAULT_MIN_SEPARATION,
    relative_threshold: float = DEFAULT_RELATIVE_THRESHOLD,
    refine: bool = True,
) -> FodfPeaks:
    maxima = _local_maxima(amplitudes, grid)
    maxima = maxima[amplitudes[maxima] > 0.0]
    if maxima.size == 0:
        return FodfPeaks()
    candidates = []
    for v in maxima:
        if refine:
            candidates.append(_refine(v, amplitudes, grid))
        else:
            candidates.append((grid.vertices[v], float(amplitudes[v])))
    candidates.sort(key=lambda c: -c[1])
    top = candidates[0][1]

    dirs: list[np.ndarray] = []
    amps: list[float] = []
    for direction, amp in candidates:
        if amp < relative_threshold * top:
            break
        # 対蹠点は同じ軸として畳み込む
        if all(axis_angle(direction, d) >= min_separation for d in dirs):
            dirs.append(direction)
            amps.append(amp)

    peaks = FodfPeaks(np.array(dirs).reshape(-1, 3), np.array(amps))
    _check_peaks(peaks, min_separation, relative_threshold)
    return peaks


def _check_peaks(peaks: FodfPeaks, min_separation: float, relative_threshold: float) -> None:
    if len(peaks) == 0:
        return
    assert np.all(np.diff(peaks.amplitudes) <= 0.0), "peaks not sorted by amplitude"
    assert np.all(peaks.amplitudes >= relative_threshold * peaks.amplitudes[0]), "peak below threshold"
    for i in range(len(peaks)):
        for j in range(i + 1, len(peaks)):
            assert axis_angle(peaks.directions[i], peaks.directions[j]) >= min_separation, "peaks too close"


def crossing_angle(peaks: FodfPeaks) -> Optional[float]:
    """上位 2 ピーク間の角度 [deg]。2 本未満なら None（未検出）"""
    if len(peaks) < 2:
        return None
    return axis_angle(peaks.directions[0], peaks.directions[1])


def angles_from_amplitudes(
    amplitudes: np.ndarray,
    grid: SphereGrid,
    min_separation: float = DEFAULT_MIN_SEPARATION,
    relative_threshold: float = DEFAULT_RELATIVE_THRESHOLD,
) -> np.ndarray:
    """(B, V) の格子上振幅 -> (B,) の交差角。未検出は NaN"""
    amplitudes = np.atleast_2d(amplitudes)
    out = np.full(amplitudes.shape[0], np.nan)
    for b, amp in enumerate(amplitudes):
        angle = crossing_angle(peaks_from_amplitudes(amp, grid, min_separation, relative_threshold))
        if angle is not None:
            out[b] = angle
    return out


def angles_from_coefficients(
    coeffs: np.ndarray,
    order: int,
    grid: Optional[SphereGrid] = None,
    min_separation: float = DEFAULT_MIN_SEPARATION,
    relative_threshold: float = DEFAULT_RELATIVE_THRESHOLD,
    amplitude_map: Optional[AffineMap] = None,
) -> np.ndarray:
    """(B, K) の係数 -> (B,) の交差角

    amplitude_map は係数から grid 頂点上の振幅への写像（既定は SH 基底の評価）。
    """
    grid = grid or icosphere(3)
    if amplitude_map is None:
        amplitude_map = AffineMap(sh_basis(grid.vertices, order), np.zeros(len(grid)))
    amplitudes = amplitude_map.apply(np.atleast_2d(coeffs))
    return angles_from_amplitudes(amplitudes, grid, min_separation, relative_threshold)


def crossing_angle_samples(
    post: PosteriorT,
    order: int,
    n_draws: int,
    seed: int,
    *keys: int,
    grid: Optional[SphereGrid] = None,
    min_separation: float = DEFAULT_MIN_SEPARATION,
    amplitude_map: Optional[AffineMap] = None,
) -> DerivedSamples:
    draws = sample_posterior(post, n_draws, seed, *keys)
    values = angles_from_coefficients(draws, order, grid, min_separation, amplitude_map=amplitude_map)
    ok = np.isfinite(values)
    return DerivedSamples(values[ok], n_draws, n_rejected=int(n_draws - ok.sum()))

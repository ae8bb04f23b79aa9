from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from errors import DataError, ShellMixingError

SHELL_TOLERANCE = 50.0  # s/mm^2
DIRECTION_TOLERANCE = 1e-8


def infer_shells(bvals: np.ndarray, tolerance: float = SHELL_TOLERANCE) -> np.ndarray:
    """b 値を ±tolerance でクラスタリングしてシェル番号を付ける（b=0 はシェル 0）"""
    bvals = np.asarray(bvals, dtype=float)
    order = np.argsort(bvals, kind="stable")
    shell_ids = np.empty(bvals.shape[0], dtype=int)
    current, anchor = -1, None
    for idx in order:
        b = bvals[idx]
        if anchor is None or b - anchor > tolerance:
            current += 1
            anchor = b
        shell_ids[idx] = current
    return shell_ids


@dataclass(frozen=True)
class AcquisitionScheme:
    bvals: np.ndarray
    bvecs: np.ndarray
    shell_ids: Optional[np.ndarray] = None
    diffusion_time: Optional[float] = None
    small_delta: Optional[float] = None
    big_delta: Optional[float] = None

    def __post_init__(self) -> None:
        bvals = np.asarray(self.bvals, dtype=float).reshape(-1)
        bvecs = np.asarray(self.bvecs, dtype=float)
        if bvecs.shape == (3, bvals.shape[0]) and bvals.shape[0] != 3:
            bvecs = bvecs.T
        if bvecs.shape != (bvals.shape[0], 3):
            raise DataError(f"bvecs shape {bvecs.shape} does not match {bvals.shape[0]} b-values")
        if np.any(bvals < 0.0):
            raise DataError("b-values must be >= 0")
        weighted = bvals > 0.0
        norms = np.linalg.norm(bvecs[weighted], axis=1)
        if np.any(np.abs(norms - 1.0) > DIRECTION_TOLERANCE):
            raise DataError("gradient directions must be unit vectors for b > 0")

        t_d = self.diffusion_time
        if self.small_delta is not None and self.big_delta is not None:
            implied = self.big_delta - self.small_delta / 3.0
            if t_d is None:
                t_d = implied
            elif abs(t_d - implied) > 1e-12:
                raise DataError(f"diffusion time {t_d} inconsistent with Delta - delta/3 = {implied}")
        if t_d is not None and not t_d > 0.0:
            raise DataError(f"diffusion time must be > 0, got {t_d}")

        shell_ids = self.shell_ids
        shell_ids = infer_shells(bvals) if shell_ids is None else np.asarray(shell_ids, dtype=int).reshape(-1)
        if shell_ids.shape[0] != bvals.shape[0]:
            raise DataError("shell_ids length does not match b-values")

        for name, value in (("bvals", bvals), ("bvecs", bvecs), ("shell_ids", shell_ids)):
            value = value.copy()
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "diffusion_time", t_d)

    def __len__(self) -> int:
        return self.bvals.shape[0]

    @property
    def b0_mask(self) -> np.ndarray:
        return self.bvals <= SHELL_TOLERANCE

    def shell_bvals(self) -> list[float]:
        """シェルごとの代表 b 値（平均）"""
        return [float(self.bvals[self.shell_ids == s].mean()) for s in np.unique(self.shell_ids)]

    def subset(self, mask: np.ndarray) -> "AcquisitionScheme":
        mask = np.asarray(mask)
        return replace(self, bvals=self.bvals[mask], bvecs=self.bvecs[mask], shell_ids=self.shell_ids[mask])

    def select_shell(self, bval: float, tolerance: float = SHELL_TOLERANCE) -> np.ndarray:
        return np.abs(self.bvals - bval) <= tolerance

    def bmax_mask(self, bmax: float, tolerance: float = SHELL_TOLERANCE) -> np.ndarray:
        return self.bvals <= bmax + tolerance

    def q_magnitudes(self) -> np.ndarray:
        # b = 4 pi^2 t_d q^2  ->  q [1/mm]
        if self.diffusion_time is None:
            raise DataError("diffusion time is required to convert b-values to q")
        return np.sqrt(self.bvals / (4.0 * math.pi ** 2 * self.diffusion_time))

    def require_single_shell(self) -> float:
        weighted = ~self.b0_mask
        ids = np.unique(self.shell_ids[weighted])
        if ids.size != 1:
            raise ShellMixingError(f"expected a single diffusion-weighted shell, found {ids.size}")
        return float(self.bvals[weighted].mean())

    @classmethod
    def from_fsl(cls, bvals_path, bvecs_path, **timing) -> "AcquisitionScheme":
        """FSL 形式（bvals は 1 行、bvecs は x/y/z の 3 行）から読み込む"""
        bvals = np.atleast_1d(np.loadtxt(bvals_path, dtype=float)).reshape(-1)
        bvecs = np.atleast_2d(np.loadtxt(bvecs_path, dtype=float))
        if bvecs.shape != (3, bvals.shape[0]):
            raise DataError(f"{bvecs_path}: expected 3 rows of {bvals.shape[0]} values, got {bvecs.shape}")
        return cls(bvals, bvecs.T, **timing)

    def to_fsl(self, bvals_path, bvecs_path) -> None:
        np.savetxt(bvals_path, self.bvals[None, :], fmt="%.6g")
        np.savetxt(bvecs_path, self.bvecs.T, fmt="%.17g")

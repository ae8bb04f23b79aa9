"""Synthetic acquisition schemes and the noiseless Stejskal-Tanner signal."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from errors import DataError, UsageError
from models.scheme import AcquisitionScheme
from models.sphere import hemisphere_directions
from phantom.tensors import Phantom

# HCP (MGH) の 4 シェル構成
HCP_SHELLS = (1000.0, 3000.0, 5000.0, 10000.0)
HCP_DIRECTIONS = (64, 64, 128, 256)
HCP_B0 = 40
# パルス間隔 [s]。t_d = Delta - delta / 3
HCP_SMALL_DELTA = 12.9e-3
HCP_BIG_DELTA = 21.8e-3


def fibonacci_directions(n: int) -> np.ndarray:
    """半球フィボナッチ格子（決定的）。勾配方向は符号なし軸として使う"""
    if n < 1:
        raise UsageError(f"direction count must be positive, got {n}")
    return hemisphere_directions(n)


def _b0_positions(n_b0: int, total: int) -> np.ndarray:
    # 全体に等間隔で散らす（先頭は必ず b=0）
    return np.floor(np.arange(n_b0) * total / n_b0).astype(int)


def make_scheme(
    shell_bvals: Sequence[float],
    dirs_per_shell: Sequence[int],
    n_b0: int,
    diffusion_time: Optional[float] = None,
    small_delta: Optional[float] = None,
    big_delta: Optional[float] = None,
) -> AcquisitionScheme:
    shell_bvals = [float(b) for b in shell_bvals]
    dirs_per_shell = [int(k) for k in dirs_per_shell]
    if len(shell_bvals) != len(dirs_per_shell):
        raise UsageError(f"{len(shell_bvals)} shells but {len(dirs_per_shell)} direction counts")
    if n_b0 < 0 or any(k < 1 for k in dirs_per_shell):
        raise UsageError("direction counts must be positive and the b0 count nonnegative")
    if any(b <= 0.0 for b in shell_bvals):
        raise UsageError("shell b-values must be > 0")

    weighted_b = np.concatenate([np.full(k, b) for b, k in zip(shell_bvals, dirs_per_shell)])
    weighted_g = np.vstack([fibonacci_directions(k) for k in dirs_per_shell])
    total = n_b0 + weighted_b.shape[0]

    bvals = np.zeros(total)
    bvecs = np.zeros((total, 3))
    is_b0 = np.zeros(total, dtype=bool)
    is_b0[_b0_positions(n_b0, total)] = True
    bvals[~is_b0] = weighted_b
    bvecs[~is_b0] = weighted_g
    return AcquisitionScheme(
        bvals,
        bvecs,
        diffusion_time=diffusion_time,
        small_delta=small_delta,
        big_delta=big_delta,
    )


def hcp_scheme(bmax: Optional[float] = None) -> AcquisitionScheme:
    """HCP 型の 552 測定。bmax 指定時はそれ以下のシェルだけ残す"""
    scheme = make_scheme(HCP_SHELLS, HCP_DIRECTIONS, HCP_B0, small_delta=HCP_SMALL_DELTA, big_delta=HCP_BIG_DELTA)
    if bmax is None:
        return scheme
    return scheme.subset(scheme.bmax_mask(bmax))


def latent_signal(phantom: Phantom, scheme: AcquisitionScheme) -> np.ndarray:
    """S_j = S0 sum_k f_k exp(-b_j g_j^T D_k g_j)"""
    g = scheme.bvecs
    b = scheme.bvals
    signal = np.zeros(len(scheme))
    for comp in phantom.components:
        adc = np.einsum("ij,jk,ik->i", g, comp.tensor.matrix(), g)
        signal += comp.fraction * np.exp(-b * adc)
    signal *= phantom.s0
    if not np.all(np.isfinite(signal)):
        raise DataError("latent signal is not finite")
    return signal

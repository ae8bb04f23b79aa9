from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from errors import DataError
from models.dti import fa_of_tensor, rtop_of_tensor
from models.peaks import axis_angle
from models.scheme import AcquisitionScheme
from phantom.acquisition import latent_signal
from phantom.noise import NoiseSpec, add_noise
from phantom.tensors import Phantom, y_rotation

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TruthRecord:
    md: Optional[float] = None
    fa: Optional[float] = None
    rtop: Optional[float] = None
    crossing_angle: Optional[float] = None

    def require(self, quantity: str) -> float:
        value = getattr(self, quantity)
        if value is None:
            raise DataError(f"ground truth for {quantity!r} is not defined for this phantom")
        return float(value)

    def to_dict(self) -> dict:
        return asdict(self)


def mixture_rtop(phantom: Phantom, diffusion_time: float) -> float:
    """sum_k f_k det(4 pi t_d D_k)^{-1/2}"""
    return float(sum(c.fraction * rtop_of_tensor(c.tensor, diffusion_time) for c in phantom.components))


def phantom_truth(phantom: Phantom, diffusion_time: Optional[float] = None) -> TruthRecord:
    traces = np.array([t.trace for t in phantom.tensors])
    md = float(traces[0] / 3.0) if np.allclose(traces, traces[0], rtol=1e-12, atol=0.0) else None
    fa = fa_of_tensor(phantom.tensors[0]) if len(phantom.components) == 1 else None
    rtop = mixture_rtop(phantom, diffusion_time) if diffusion_time is not None else None

    angle = None
    if len(phantom.components) == 2 and phantom.rotation_deg is not None:
        # 回転角を軸の角度 [0, 90] に畳む
        axis = np.array([1.0, 0.0, 0.0])
        angle = axis_angle(axis, y_rotation(phantom.rotation_deg) @ axis)
    return TruthRecord(md=md, fa=fa, rtop=rtop, crossing_angle=angle)


@dataclass(frozen=True)
class TrialSet:
    latent: np.ndarray
    noisy: np.ndarray
    scheme: AcquisitionScheme
    truth: TruthRecord
    seed: int
    noise: NoiseSpec

    def __post_init__(self) -> None:
        noisy = np.atleast_2d(np.asarray(self.noisy, dtype=float))
        if noisy.shape[0] < 1 or noisy.shape[1] != len(self.scheme):
            raise DataError(f"noisy matrix has shape {noisy.shape}, scheme has {len(self.scheme)} rows")
        if self.noise.kind == "rician" and np.any(noisy < 0.0):
            raise DataError("rician trials must be nonnegative")
        object.__setattr__(self, "noisy", noisy)
        object.__setattr__(self, "latent", np.asarray(self.latent, dtype=float).reshape(-1))

    @property
    def n_trials(self) -> int:
        return self.noisy.shape[0]


def simulate_trials(
    phantom: Phantom,
    scheme: AcquisitionScheme,
    noise: NoiseSpec,
    trials: int,
    seed: int,
) -> TrialSet:
    latent = latent_signal(phantom, scheme)
    noisy = add_noise(latent, noise, trials, seed)
    truth = phantom_truth(phantom, scheme.diffusion_time)
    logger.info("simulated %d trials of %d measurements (seed=%d)", trials, len(scheme), seed)
    return TrialSet(latent, noisy, scheme, truth, seed, noise)

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from bayes.student import UnivariateT, t_quantile
from errors import DataError, EmptySampleError, UsageError


@dataclass(frozen=True)
class QuantityPosterior:
    """閉形式の t 分布か、サンプル列のどちらか一方"""

    dist: Optional[UnivariateT] = None
    samples: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if (self.dist is None) == (self.samples is None):
            raise UsageError("exactly one of dist or samples must be given")
        if self.samples is not None:
            s = np.asarray(self.samples, dtype=float).reshape(-1)
            if s.size == 0:
                raise EmptySampleError("empirical posterior has no samples")
            if not np.all(np.isfinite(s)):
                raise DataError("posterior samples must be finite")
            s = np.sort(s)
            s.setflags(write=False)
            object.__setattr__(self, "samples", s)

    @classmethod
    def closed(cls, dist: UnivariateT) -> "QuantityPosterior":
        return cls(dist=dist)

    @classmethod
    def empirical(cls, samples: np.ndarray) -> "QuantityPosterior":
        return cls(samples=samples)

    @property
    def is_closed_form(self) -> bool:
        return self.dist is not None

    @property
    def center(self) -> float:
        """t 分布なら位置、サンプルなら標本平均"""
        if self.dist is not None:
            return self.dist.location
        return float(self.samples.mean())

    def shifted(self, delta: float) -> "QuantityPosterior":
        if self.dist is not None:
            d = self.dist
            return QuantityPosterior.closed(UnivariateT(d.location + delta, d.scale, d.dof))
        return QuantityPosterior.empirical(self.samples + delta)

    def quantile(self, p: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        return quantile(self, p)


def _check_probabilities(p: np.ndarray) -> None:
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise UsageError(f"probabilities must lie in (0, 1), got {p[(p <= 0.0) | (p >= 1.0)][:3].tolist()}")


def quantile(qp: QuantityPosterior, p: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    probs = np.asarray(p, dtype=float)
    _check_probabilities(np.atleast_1d(probs))
    if qp.dist is not None:
        out = np.array([t_quantile(float(x), qp.dist) for x in np.atleast_1d(probs)])
    else:
        # 順序統計量の線形補間（位置 p (n - 1) + 1）
        out = np.quantile(qp.samples, np.atleast_1d(probs), method="linear")
    return float(out[0]) if probs.ndim == 0 else out.reshape(probs.shape)


def iqr(qp: QuantityPosterior) -> float:
    q1, q3 = quantile(qp, np.array([0.25, 0.75]))
    return float(max(q3 - q1, 0.0))

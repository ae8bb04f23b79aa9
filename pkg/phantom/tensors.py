from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from errors import DataError
from models.dti import DiffusionTensor

# 論文の単一テンソル設定（白質相当）
DEFAULT_MD = 0.7e-3  # mm^2/s
DEFAULT_FA = 0.8
DEFAULT_S0 = 1.0


def axially_symmetric_tensor(md: float, fa: float, axis: Sequence[float] = (1.0, 0.0, 0.0)) -> DiffusionTensor:
    """MD と FA を満たす軸対称テンソル（主軸 = axis）

    lambda_par = MD (1 + 2a), lambda_perp = MD (1 - a), a = FA / sqrt(3 - 2 FA^2)
    """
    if md <= 0.0:
        raise DataError(f"mean diffusivity must be > 0, got {md}")
    if not 0.0 <= fa < 1.0:
        raise DataError(f"FA must be in [0, 1) for a positive definite tensor, got {fa}")
    a = fa / math.sqrt(3.0 - 2.0 * fa * fa)
    par, perp = md * (1.0 + 2.0 * a), md * (1.0 - a)
    u = np.asarray(axis, dtype=float)
    u = u / np.linalg.norm(u)
    m = perp * np.eye(3) + (par - perp) * np.outer(u, u)
    return DiffusionTensor.from_matrix(m)


def y_rotation(angle_deg: float) -> np.ndarray:
    t = math.radians(angle_deg)
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotate_about_y(D: DiffusionTensor, angle_deg: float) -> DiffusionTensor:
    r = y_rotation(angle_deg)
    return DiffusionTensor.from_matrix(r @ D.matrix() @ r.T)


@dataclass(frozen=True)
class PhantomComponent:
    tensor: DiffusionTensor
    fraction: float


@dataclass(frozen=True)
class Phantom:
    components: tuple[PhantomComponent, ...]
    s0: float = DEFAULT_S0
    # 交差角（2 成分の場合のみ意味を持つ）
    rotation_deg: float | None = None

    def __post_init__(self) -> None:
        comps = tuple(self.components)
        if not comps:
            raise DataError("phantom needs at least one component")
        if self.s0 <= 0.0:
            raise DataError(f"s0 must be > 0, got {self.s0}")
        fractions = np.array([c.fraction for c in comps])
        if np.any(fractions < 0.0) or abs(fractions.sum() - 1.0) > 1e-12:
            raise DataError(f"fractions must be nonnegative and sum to 1, got {fractions.tolist()}")
        for c in comps:
            if np.linalg.eigvalsh(c.tensor.matrix()).min() <= 0.0:
                raise DataError("phantom tensors must be positive definite")
        object.__setattr__(self, "components", comps)

    @property
    def tensors(self) -> list[DiffusionTensor]:
        return [c.tensor for c in self.components]

    @property
    def fractions(self) -> np.ndarray:
        return np.array([c.fraction for c in self.components])


def single_tensor_phantom(md: float = DEFAULT_MD, fa: float = DEFAULT_FA, s0: float = DEFAULT_S0) -> Phantom:
    return Phantom((PhantomComponent(axially_symmetric_tensor(md, fa), 1.0),), s0=s0)


def double_tensor_phantom(
    angle_deg: float,
    md: float = DEFAULT_MD,
    fa: float = DEFAULT_FA,
    s0: float = DEFAULT_S0,
) -> Phantom:
    """等しい 2 本のテンソル。2 本目を y 軸まわりに angle_deg 回転"""
    first = axially_symmetric_tensor(md, fa)
    second = rotate_about_y(first, angle_deg)
    return Phantom(
        (PhantomComponent(first, 0.5), PhantomComponent(second, 0.5)),
        s0=s0,
        rotation_deg=float(angle_deg),
    )

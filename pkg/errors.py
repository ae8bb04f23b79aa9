from __future__ import annotations

from typing import Optional


class DmriUncertaintyError(Exception):
    """パッケージ共通の基底例外"""

    exit_code = 1


class UsageError(DmriUncertaintyError):
    exit_code = 2


class DataError(DmriUncertaintyError):
    exit_code = 3


class NumericalError(DmriUncertaintyError):
    exit_code = 4


# --- bayes ---

class InvalidSystemError(DataError):
    """LinearSystem の次元・正定値性チェックに失敗"""


class SingularSystemError(NumericalError):
    def __init__(self, message: str, condition: Optional[float] = None) -> None:
        if condition is not None:
            message = f"{message} (condition estimate {condition:.3e})"
        super().__init__(message)
        self.condition = condition


class DegenerateDofError(NumericalError):
    """自由度 ν <= 0（観測数がモデルの実効サイズに対して少なすぎる）"""


class CovarianceUndefinedError(NumericalError):
    """heavy-tailed: ν <= 2 では共分散が定義されない"""


class FactorizationError(NumericalError):
    pass


# --- models ---

class RankDeficientError(DataError):
    pass


class NonPositiveSignalError(DataError):
    pass


class ShellMixingError(DataError):
    pass


class RtopUndefinedError(NumericalError):
    pass


# --- calibrate / group ---

class EmptySampleError(DataError):
    pass


class InsufficientDrawsError(UsageError):
    pass


class BetaFitError(NumericalError):
    def __init__(self, mean: float, variance: float) -> None:
        super().__init__(
            f"beta fit refused: variance {variance:.4g} >= mean*(1-mean) "
            f"for mean {mean:.4g}"
        )
        self.mean = mean
        self.variance = variance

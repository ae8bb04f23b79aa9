"""Serialized forms (JSON / JSONL) of the domain objects."""
from __future__ import annotations

from typing import Any, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from bayes.regression import PosteriorT
from phantom.noise import NoiseSpec
from phantom.trials import TruthRecord


class PosteriorRecord(BaseModel):
    """posteriors.jsonl の 1 行（1 試行）"""

    model_config = ConfigDict(extra="forbid")

    trial: int
    model: Literal["dti", "csd", "qbi"]
    status: Literal["ok", "rejected", "failed"] = "ok"
    reason: Optional[str] = None
    mean: list[float] = Field(default_factory=list)
    dof: Optional[float] = None
    sigma2_hat: Optional[float] = None
    scale: list[list[float]] = Field(default_factory=list)
    condition: Optional[float] = None
    heavy_tailed: bool = False
    extras: dict[str, Any] = Field(default_factory=dict)

    @classmethod
    def from_posterior(cls, trial: int, model: str, post: PosteriorT, **extras: Any) -> "PosteriorRecord":
        return cls(
            trial=trial,
            model=model,
            mean=post.mean.tolist(),
            dof=float(post.dof),
            sigma2_hat=float(post.sigma2_hat),
            scale=post.scale.tolist(),
            condition=None if post.condition is None or not np.isfinite(post.condition) else float(post.condition),
            heavy_tailed=post.heavy_tailed,
            extras=extras,
        )

    @classmethod
    def rejected(cls, trial: int, model: str, reason: str, status: str = "rejected") -> "PosteriorRecord":
        return cls(trial=trial, model=model, status=status, reason=reason)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_posterior(self) -> PosteriorT:
        return PosteriorT(
            mean=np.array(self.mean),
            dof=self.dof,
            sigma2_hat=self.sigma2_hat,
            scale=np.array(self.scale),
            condition=self.condition,
            heavy_tailed=self.heavy_tailed,
            extras=dict(self.extras),
        )


class TruthModel(BaseModel):
    md: Optional[float] = None
    fa: Optional[float] = None
    rtop: Optional[float] = None
    crossing_angle: Optional[float] = None

    @classmethod
    def from_record(cls, truth: TruthRecord) -> "TruthModel":
        return cls(**truth.to_dict())

    def to_record(self) -> TruthRecord:
        return TruthRecord(**self.model_dump())


class NoiseModel(BaseModel):
    kind: Literal["rician", "gaussian"] = "rician"
    sigma: float = Field(0.0, ge=0.0)

    def to_spec(self) -> NoiseSpec:
        return NoiseSpec(self.kind, self.sigma)


class RunMeta(BaseModel):
    command: str
    version: str
    config: dict[str, Any]
    inputs: dict[str, Any] = Field(default_factory=dict)
    summary: dict[str, Any] = Field(default_factory=dict)
    # 用途ごとのストリーム鍵 (seed, 用途キー)。試行ごとに末尾へ trial が付く
    seed_lineage: dict[str, list[int]] = Field(default_factory=dict)


class SchemeTiming(BaseModel):
    """scheme.json: FSL ファイルに入らないパルス間隔と拡散時間 [s]"""

    diffusion_time: Optional[float] = None
    small_delta: Optional[float] = None
    big_delta: Optional[float] = None

    def kwargs(self) -> dict[str, Optional[float]]:
        # t_d はパルス間隔から導出されるので、両方ある場合は間隔だけ渡す
        if self.small_delta is not None and self.big_delta is not None:
            return {"small_delta": self.small_delta, "big_delta": self.big_delta}
        return self.model_dump()


class TrialSetMeta(BaseModel):
    seed: int
    trials: int
    noise: NoiseModel
    diffusion_time: Optional[float] = None
    small_delta: Optional[float] = None
    big_delta: Optional[float] = None
    phantom: dict[str, Any] = Field(default_factory=dict)
    run: Optional[RunMeta] = None


class SubjectEntry(BaseModel):
    subject_id: str
    group: Literal["control", "patient"]
    file: str
    n_draws: int = Field(ge=2)
    n_voxels: int = Field(ge=1)
    seed_lineage: list[int] = Field(default_factory=list)


class CohortManifest(BaseModel):
    subjects: list[SubjectEntry]

"""Run configuration.

Values are resolved in the order flag > config file > environment > default.
The config file is JSON with the global keys ``seed``, ``out`` and
``threads`` and one section per command whose keys are the long flag names
with dashes replaced by underscores.
"""
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from errors import UsageError

__version__ = "0.1.0"


def _get_env(key: str) -> str | None:
    val = os.getenv(key)
    return val if val and val.strip() else None


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SchemeParams(_Section):
    shells: list[float] = Field(default_factory=lambda: [1000.0])
    dirs: list[int] = Field(default_factory=lambda: [64])
    b0: int = Field(1, ge=0)
    diffusion_time: Optional[float] = Field(None, gt=0.0)
    small_delta: Optional[float] = Field(None, gt=0.0)
    big_delta: Optional[float] = Field(None, gt=0.0)
    hcp: bool = False

    @field_validator("dirs")
    @classmethod
    def _positive_dirs(cls, v: list[int]) -> list[int]:
        if any(k < 1 for k in v):
            raise ValueError("direction counts must be positive")
        return v


class SimulateParams(_Section):
    fa: float = Field(0.8, ge=0.0, lt=1.0)
    md: float = Field(0.7e-3, gt=0.0)
    angle: Optional[float] = None
    s0: float = Field(1.0, gt=0.0)
    sigma_rel: float = Field(0.05, ge=0.0)
    noise: Literal["rician", "gaussian"] = "rician"
    trials: int = Field(1000, ge=1)
    bmax: Optional[float] = None
    scheme_dir: Optional[str] = None


class FitParams(_Section):
    # 設定ファイルでは "lambda" と書ける
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    model: Literal["dti", "csd", "qbi"] = "dti"
    trialset: Optional[str] = None
    reweight: bool = False
    weighting: Literal["predicted", "observed"] = "predicted"
    order: Optional[int] = Field(None, ge=0)
    lam: Optional[float] = Field(None, ge=0.0, alias="lambda")
    tau: float = Field(0.1, ge=0.0)
    shell: Optional[float] = None


class PpParams(_Section):
    quantity: Literal["md", "fa", "rtop", "angle"] = "md"
    fits: Optional[str] = None
    trialset: Optional[str] = None
    draws: int = 1000
    bias_correct: bool = False
    bootstrap: bool = False
    bootstrap_draws: int = Field(1000, ge=1)


class GroupParams(_Section):
    manifest: Optional[str] = None
    weighted: bool = False
    hist_voxel: list[int] = Field(default_factory=list)


class RunConfig(_Section):
    seed: int = 0
    out: str = "./out"
    threads: int = Field(1, ge=1)
    scheme: SchemeParams = Field(default_factory=SchemeParams)
    simulate: SimulateParams = Field(default_factory=SimulateParams)
    fit: FitParams = Field(default_factory=FitParams)
    pp: PpParams = Field(default_factory=PpParams)
    group: GroupParams = Field(default_factory=GroupParams)


def _env_layer() -> dict[str, Any]:
    layer: dict[str, Any] = {}
    for key, env in (("seed", "DMRI_SEED"), ("threads", "DMRI_THREADS"), ("out", "DMRI_OUT")):
        val = _get_env(env)
        if val is not None:
            layer[key] = val
    return layer


def _file_layer(path: Optional[str]) -> dict[str, Any]:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise UsageError(f"{p}: invalid JSON ({e.msg} at line {e.lineno})") from e
    if not isinstance(data, dict):
        raise UsageError(f"{p}: top level must be an object")
    return data


def _drop_none(d: dict[str, Any]) -> dict[str, Any]:
    return {k: v for k, v in d.items() if v is not None and v != ()}


def resolve_config(
    command: str,
    global_flags: dict[str, Any],
    command_flags: dict[str, Any],
    config_path: Optional[str] = None,
) -> RunConfig:
    """flag > config file > env > default の順で RunConfig を組み立てる"""
    merged: dict[str, Any] = _env_layer()
    file_layer = _file_layer(config_path)
    section = dict(file_layer.pop(command, {}) or {})
    merged.update(file_layer)
    merged.update(_drop_none(global_flags))
    section.update(_drop_none(command_flags))
    merged[command] = section
    try:
        return RunConfig.model_validate(merged)
    except ValidationError as e:
        err = e.errors()[0]
        where = ".".join(str(x) for x in err["loc"])
        raise UsageError(f"invalid configuration at {where}: {err['msg']}") from e

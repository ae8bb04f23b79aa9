from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterable, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from calibrate.pp import PPCurve
from errors import DataError
from group.analysis import GroupResult, SubjectPosterior
from models.scheme import AcquisitionScheme
from phantom.trials import TrialSet
from store.records import (
    CohortManifest,
    NoiseModel,
    PosteriorRecord,
    RunMeta,
    SchemeTiming,
    SubjectEntry,
    TrialSetMeta,
    TruthModel,
)

PathLike = Union[str, Path]

FLOAT_FORMAT = "%.17g"
SCHEME_STEM = "scheme"


def _dir(path: PathLike) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def write_json(path: PathLike, payload: Union[BaseModel, dict[str, Any]]) -> Path:
    path = Path(path)
    data = payload.model_dump(mode="json") if isinstance(payload, BaseModel) else payload
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_model(path: PathLike, model: type[BaseModel]) -> BaseModel:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    try:
        return model.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise DataError(f"{path}: {e.error_count()} validation error(s): {e.errors()[0]['msg']}") from e


def write_meta(out_dir: PathLike, meta: RunMeta) -> Path:
    return write_json(_dir(out_dir) / "meta.json", meta)


# --- 勾配テーブル (FSL) ---

def write_scheme(scheme: AcquisitionScheme, out_dir: PathLike, stem: str = SCHEME_STEM) -> tuple[Path, Path]:
    out = _dir(out_dir)
    bvals, bvecs = out / f"{stem}.bvals", out / f"{stem}.bvecs"
    scheme.to_fsl(bvals, bvecs)
    timing = SchemeTiming(
        diffusion_time=scheme.diffusion_time, small_delta=scheme.small_delta, big_delta=scheme.big_delta
    )
    write_json(out / f"{stem}.json", timing)
    return bvals, bvecs


def read_scheme(
    in_dir: PathLike,
    stem: str = SCHEME_STEM,
    diffusion_time: Optional[float] = None,
    small_delta: Optional[float] = None,
    big_delta: Optional[float] = None,
) -> AcquisitionScheme:
    """FSL 形式の bvals/bvecs を読む

    時間を引数で渡さなければ、あれば {stem}.json に書かれた時間を使う。
    """
    d = Path(in_dir)
    bvals, bvecs = d / f"{stem}.bvals", d / f"{stem}.bvecs"
    if not bvals.exists() or not bvecs.exists():
        raise DataError(f"{d}: missing {bvals.name} or {bvecs.name}")
    timing = SchemeTiming(diffusion_time=diffusion_time, small_delta=small_delta, big_delta=big_delta)
    stored = d / f"{stem}.json"
    if diffusion_time is None and small_delta is None and big_delta is None and stored.exists():
        timing = read_model(stored, SchemeTiming)
    return AcquisitionScheme.from_fsl(bvals, bvecs, **timing.kwargs())


# --- 試行セット ---

def _measurement_columns(n: int) -> list[str]:
    return [f"m{j}" for j in range(n)]


def save_trialset(
    ts: TrialSet,
    out_dir: PathLike,
    phantom: Optional[dict[str, Any]] = None,
    run: Optional[RunMeta] = None,
) -> Path:
    out = _dir(out_dir)
    write_scheme(ts.scheme, out)
    cols = _measurement_columns(len(ts.scheme))
    pd.DataFrame(ts.latent[None, :], columns=cols).to_csv(out / "latent.csv", index=False, float_format=FLOAT_FORMAT)
    pd.DataFrame(ts.noisy, columns=cols).to_csv(out / "noisy.csv", index=False, float_format=FLOAT_FORMAT)
    write_json(out / "truth.json", TruthModel.from_record(ts.truth))
    meta = TrialSetMeta(
        seed=ts.seed,
        trials=ts.n_trials,
        noise=NoiseModel(kind=ts.noise.kind, sigma=ts.noise.sigma),
        diffusion_time=ts.scheme.diffusion_time,
        small_delta=ts.scheme.small_delta,
        big_delta=ts.scheme.big_delta,
        phantom=phantom or {},
        run=run,
    )
    write_json(out / "meta.json", meta)
    return out


def load_trialset(in_dir: PathLike) -> TrialSet:
    d = Path(in_dir)
    meta = read_model(d / "meta.json", TrialSetMeta)
    timing = SchemeTiming(diffusion_time=meta.diffusion_time, small_delta=meta.small_delta, big_delta=meta.big_delta)
    scheme = read_scheme(d, **timing.kwargs())
    latent = pd.read_csv(d / "latent.csv", float_precision="round_trip").to_numpy(dtype=float).reshape(-1)
    noisy = pd.read_csv(d / "noisy.csv", float_precision="round_trip").to_numpy(dtype=float)
    truth = read_model(d / "truth.json", TruthModel).to_record()
    return TrialSet(latent, noisy, scheme, truth, meta.seed, meta.noise.to_spec())


def load_trialset_meta(in_dir: PathLike) -> TrialSetMeta:
    return read_model(Path(in_dir) / "meta.json", TrialSetMeta)


# --- 事後分布 ---

def write_posteriors(records: Iterable[PosteriorRecord], path: PathLike) -> Path:
    path = Path(path)
    _dir(path.parent)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.model_dump_json() + "\n")
    return path


def read_posteriors(path: PathLike) -> list[PosteriorRecord]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(PosteriorRecord.model_validate_json(line))
            except ValidationError as e:
                raise DataError(f"{path}:{lineno}: invalid posterior record") from e
    return records


# --- P-P 曲線 ---

def write_pp_csv(curve: PPCurve, path: PathLike) -> Path:
    path = Path(path)
    curve.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


# --- 群解析 ---

def save_subject(sp: SubjectPosterior, out_dir: PathLike) -> str:
    name = f"{sp.subject_id}.csv"
    cols = [f"v{k}" for k in range(sp.shape[1])]
    pd.DataFrame(sp.draws, columns=cols).to_csv(_dir(out_dir) / name, index=False, float_format=FLOAT_FORMAT)
    return name


def write_manifest(entries: list[SubjectEntry], out_dir: PathLike) -> Path:
    return write_json(_dir(out_dir) / "manifest.json", CohortManifest(subjects=entries))


def _manifest_path(path: PathLike) -> Path:
    path = Path(path)
    return path / "manifest.json" if path.is_dir() else path


def read_manifest(path: PathLike) -> CohortManifest:
    return read_model(_manifest_path(path), CohortManifest)


def load_manifest(path: PathLike) -> list[SubjectPosterior]:
    path = _manifest_path(path)
    manifest = read_manifest(path)
    subjects = []
    for entry in manifest.subjects:
        draws = pd.read_csv(path.parent / entry.file, float_precision="round_trip").to_numpy(dtype=float)
        if draws.shape != (entry.n_draws, entry.n_voxels):
            raise DataError(
                f"{entry.file}: draws {draws.shape} do not match manifest ({entry.n_draws}, {entry.n_voxels})"
            )
        subjects.append(SubjectPosterior(entry.subject_id, draws, entry.group))
    return subjects


def group_frame(result: GroupResult) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "voxel": np.arange(result.t_score.shape[0]),
            "mean": result.mean,
            "sd": result.sd,
            "t": result.t_score,
            "saturated": result.saturated,
        }
    )


def write_group_csv(result: GroupResult, path: PathLike) -> Path:
    path = Path(path)
    group_frame(result).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def write_weights_csv(subjects: list[SubjectPosterior], weights: np.ndarray, path: PathLike) -> Path:
    path = Path(path)
    frame = pd.DataFrame(weights, columns=[f"v{k}" for k in range(weights.shape[1])])
    frame.insert(0, "group", [sp.group for sp in subjects])
    frame.insert(0, "subject_id", [sp.subject_id for sp in subjects])
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path

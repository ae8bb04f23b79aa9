"""ハンドラー共通処理（設定の解決、meta.json、スレッド並列）"""

import logging
from pathlib import Path
from typing import Any, Callable, Iterable, Optional, Sequence, TypeVar

import click
from joblib import Parallel, delayed

from config import RunConfig, __version__, resolve_config
from store.records import RunMeta
from store.repository import write_meta

logger = logging.getLogger("dmri-uncertainty")

T = TypeVar("T")
R = TypeVar("R")


def run_config(ctx: click.Context, command: str, flags: dict[str, Any]) -> RunConfig:
	obj = ctx.find_object(dict) or {}
	return resolve_config(command, obj.get("global_flags", {}), flags, obj.get("config_path"))


def out_dir(config: RunConfig) -> Path:
	p = Path(config.out)
	p.mkdir(parents=True, exist_ok=True)
	return p


def require_distinct_out(config: RunConfig, *inputs: Optional[str]) -> None:
	# 入力ディレクトリの meta.json を上書きしない
	out = Path(config.out).resolve()
	for d in inputs:
		if d is not None and Path(d).resolve() == out:
			raise click.UsageError(f"--out must differ from the input directory {d}")


def run_meta(
	command: str,
	config: RunConfig,
	inputs: Optional[dict[str, Any]] = None,
	summary: Optional[dict[str, Any]] = None,
	lineage: Optional[dict[str, Sequence[int]]] = None,
) -> RunMeta:
	return RunMeta(
		command=command,
		version=__version__,
		config=config.model_dump(mode="json"),
		inputs=inputs or {},
		summary=summary or {},
		seed_lineage={k: list(v) for k, v in (lineage or {}).items()},
	)


def save_run_meta(
	command: str,
	config: RunConfig,
	inputs: Optional[dict[str, Any]] = None,
	summary: Optional[dict[str, Any]] = None,
	lineage: Optional[dict[str, Sequence[int]]] = None,
) -> Path:
	return write_meta(out_dir(config), run_meta(command, config, inputs, summary, lineage))


def parallel_map(func: Callable[[T], R], items: Iterable[T], threads: int) -> list[R]:
	"""順序を保ったスレッド並列 map（threads=1 なら逐次）"""
	items = list(items)
	if threads <= 1 or len(items) <= 1:
		return [func(x) for x in items]
	return Parallel(n_jobs=threads, prefer="threads")(delayed(func)(x) for x in items)


def parse_list(value: Optional[str], cast: Callable[[str], T], name: str) -> Optional[list[T]]:
	# "1000,3000" 形式
	if value is None:
		return None
	try:
		return [cast(v) for v in value.replace(" ", "").split(",") if v]
	except ValueError as e:
		raise click.BadParameter(f"{name}: expected a comma-separated list, got {value!r}") from e

"""P-P 曲線とヒストグラムの SVG 出力"""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Optional, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from calibrate.pp import PPCurve  # noqa: E402

PathLike = Union[str, Path]


def plot_pp_curves(curves: Mapping[str, PPCurve], path: PathLike, title: Optional[str] = None) -> Path:
	"""複数の P-P 曲線を 1 枚に描く。帯は最初の曲線のもの"""
	path = Path(path)
	fig, ax = plt.subplots(figsize=(4.5, 4.5))
	first = next(iter(curves.values()))
	ax.fill_between(first.p_grid, first.band_lo, first.band_hi, color="0.85", label="95% band")
	ax.plot([0.0, 1.0], [0.0, 1.0], color="0.4", linestyle="--", linewidth=0.8)
	for label, curve in curves.items():
		ax.plot(curve.p_grid, curve.coverage, linewidth=1.5, label=label)
	ax.set_xlim(0.0, 1.0)
	ax.set_ylim(0.0, 1.0)
	ax.set_xlabel("theoretical quantile p")
	ax.set_ylabel("observed coverage")
	ax.set_aspect("equal")
	if title:
		ax.set_title(title)
	ax.legend(loc="upper left", fontsize="small")
	fig.tight_layout()
	fig.savefig(path, format="svg")
	plt.close(fig)
	return path


def plot_histogram(
	samples: Mapping[str, np.ndarray],
	path: PathLike,
	title: Optional[str] = None,
	overlay: Optional[tuple[np.ndarray, np.ndarray]] = None,
	bins: int = 40,
) -> Path:
	# overlay: (x, 密度) の曲線（ベータ分布の当てはめなど）
	path = Path(path)
	fig, ax = plt.subplots(figsize=(5.0, 3.5))
	for label, values in samples.items():
		ax.hist(np.asarray(values).reshape(-1), bins=bins, density=True, alpha=0.5, label=label)
	if overlay is not None:
		ax.plot(overlay[0], overlay[1], color="k", linewidth=1.2, label="beta fit")
	ax.set_ylabel("density")
	if title:
		ax.set_title(title)
	ax.legend(fontsize="small")
	fig.tight_layout()
	fig.savefig(path, format="svg")
	plt.close(fig)
	return path

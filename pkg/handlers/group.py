from typing import Any, Optional

import click
import numpy as np
from scipy import stats

from cliApp import cli_app
from display.plots import plot_histogram
from errors import BetaFitError, DataError
from group.analysis import GroupResult, SubjectPosterior, fit_beta_mom, mean_weights, unweighted_group_diff, weighted_group_diff
from handlers.common import logger, out_dir, run_config, save_run_meta
from store.repository import load_manifest, read_manifest, write_group_csv, write_weights_csv


def _split(subjects: list[SubjectPosterior]) -> tuple[list[SubjectPosterior], list[SubjectPosterior]]:
	controls = [sp for sp in subjects if sp.group == "control"]
	patients = [sp for sp in subjects if sp.group == "patient"]
	return controls, patients


def _result_summary(result: GroupResult) -> dict[str, Any]:
	return {
		"max_abs_t": float(np.max(np.abs(result.t_score))),
		"mean_diff": float(np.mean(result.mean)),
		"n_saturated": int(np.sum(result.saturated)),
	}


def divergence(unweighted: GroupResult, weighted: GroupResult) -> dict[str, Any]:
	"""重みあり/なしの t スコアの食い違い"""
	dt = weighted.t_score - unweighted.t_score
	return {
		"max_abs_t_difference": float(np.max(np.abs(dt))),
		"n_sign_flips": int(np.sum(np.sign(weighted.t_score) != np.sign(unweighted.t_score))),
		"max_abs_mean_difference": float(np.max(np.abs(weighted.mean - unweighted.mean))),
	}


def _voxel_histogram(voxel: int, controls: list[SubjectPosterior], patients: list[SubjectPosterior], path) -> Optional[tuple[float, float]]:
	pooled = {
		"control": np.concatenate([sp.draws[:, voxel] for sp in controls]),
		"patient": np.concatenate([sp.draws[:, voxel] for sp in patients]),
	}
	overlay = None
	shape = None
	try:
		shape = fit_beta_mom(pooled["control"])
		x = np.linspace(0.0, 1.0, 201)
		overlay = (x, stats.beta.pdf(x, *shape))
	except (BetaFitError, DataError) as e:
		# 分散 0 などモーメントが合わない場合は当てはめなし
		logger.warning("voxel %d: no beta fit: %s", voxel, e)
	plot_histogram(pooled, path, title=f"voxel {voxel}", overlay=overlay)
	return shape


@cli_app.command("group")
@click.option("--manifest", type=click.Path(exists=True), default=None, help="manifest.json かそのディレクトリ")
@click.option("--weighted", is_flag=True, help="1/SD 重み付きの解析も行う")
@click.option("--hist-voxel", type=int, multiple=True, help="ヒストグラムを出すボクセル（複数可）")
@click.pass_context
def cmd_group(ctx: click.Context, manifest: Optional[str], weighted: bool, hist_voxel: tuple[int, ...]) -> None:
	"""被験者ごとの事後ドローから群間差と Bayesian t スコアを求める"""
	config = run_config(
		ctx,
		"group",
		{"manifest": manifest, "weighted": weighted or None, "hist_voxel": list(hist_voxel) or None},
	)
	p = config.group
	if p.manifest is None:
		raise click.UsageError("--manifest is required (or group.manifest in the config file)")

	subjects = load_manifest(p.manifest)
	controls, patients = _split(subjects)
	out = out_dir(config)

	unweighted = unweighted_group_diff(controls, patients)
	write_group_csv(unweighted, out / "group_unweighted.csv")
	summary: dict[str, Any] = {
		"n_controls": len(controls),
		"n_patients": len(patients),
		"n_voxels": int(unweighted.t_score.shape[0]),
		"unweighted": _result_summary(unweighted),
	}

	if p.weighted:
		result = weighted_group_diff(controls, patients)
		write_group_csv(result, out / "group_weighted.csv")
		write_weights_csv(controls + patients, result.weights, out / "weights.csv")
		summary["weighted"] = _result_summary(result)
		summary["divergence"] = divergence(unweighted, result)
		summary["mean_weights"] = {
			sp.subject_id: float(w) for sp, w in zip(controls + patients, mean_weights(controls + patients))
		}
		logger.info("group: weighted vs unweighted max |dt| = %.3g", summary["divergence"]["max_abs_t_difference"])

	n_voxels = summary["n_voxels"]
	beta_fits: dict[str, Any] = {}
	for v in p.hist_voxel:
		if not 0 <= v < n_voxels:
			raise click.BadParameter(f"voxel {v} out of range (0..{n_voxels - 1})", param_hint="--hist-voxel")
		shape = _voxel_histogram(v, controls, patients, out / f"hist_voxel_{v}.svg")
		beta_fits[str(v)] = list(shape) if shape is not None else None
	if beta_fits:
		summary["control_beta_fits"] = beta_fits

	# 被験者ごとのドローの系譜（manifest に記録があるものだけ）
	lineage = {e.subject_id: e.seed_lineage for e in read_manifest(p.manifest).subjects if e.seed_lineage}
	save_run_meta("group", config, inputs={"manifest": str(p.manifest)}, summary=summary, lineage=lineage)
	click.echo(f"group: {len(controls)} controls vs {len(patients)} patients, {n_voxels} voxel(s) -> {out}")

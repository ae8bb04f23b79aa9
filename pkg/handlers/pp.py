from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional

import click
import numpy as np

from bayes.random import BOOTSTRAP, POSTERIOR, stream_key
from bayes.regression import AffineMap
from calibrate.bootstrap import residual_bootstrap
from calibrate.pp import PPCurve, bias_corrected_pp, pp_curve
from calibrate.quantiles import QuantityPosterior, iqr
from cliApp import cli_app
from config import FitParams
from display.plots import plot_pp_curves
from errors import DataError, DmriUncertaintyError, EmptySampleError, InsufficientDrawsError
from handlers.common import logger, out_dir, parallel_map, require_distinct_out, run_config, save_run_meta
from handlers.fit import Fitter, make_fitter
from models.dti import (
	DerivedSamples,
	fa_from_coefficients,
	fa_posterior_samples,
	md_from_coefficients,
	md_posterior,
	rtop_from_coefficients,
	rtop_posterior_samples,
)
from models.peaks import angles_from_coefficients, crossing_angle_samples
from models.sh import funk_radon_map
from models.sphere import icosphere
from phantom.trials import TrialSet
from store.records import PosteriorRecord, RunMeta
from store.repository import load_trialset, load_trialset_meta, read_model, read_posteriors, write_pp_csv

# 量ごとに受け付けるモデル
QUANTITY_MODELS = {"md": ("dti",), "fa": ("dti",), "rtop": ("dti",), "angle": ("csd", "qbi")}
TRUTH_FIELDS = {"md": "md", "fa": "fa", "rtop": "rtop", "angle": "crossing_angle"}


@dataclass(frozen=True)
class TrialPosterior:
	trial: int
	posterior: Optional[QuantityPosterior]
	derived: Optional[DerivedSamples] = None


def _fits_paths(fits: str) -> tuple[Path, Path]:
	p = Path(fits)
	if p.is_dir():
		return p / "posteriors.jsonl", p / "meta.json"
	return p, p.parent / "meta.json"


def _fit_meta(meta_path: Path) -> Optional[RunMeta]:
	if not meta_path.exists():
		return None
	return read_model(meta_path, RunMeta)


def _order(rec: PosteriorRecord) -> int:
	if "order" not in rec.extras:
		raise DataError(f"trial {rec.trial}: record carries no SH order")
	return int(rec.extras["order"])


def _amplitude_map(rec: PosteriorRecord) -> Optional[AffineMap]:
	# QBI は信号係数なので Funk-Radon 変換した ODF 振幅でピークを探す
	if rec.model == "qbi":
		return funk_radon_map(_order(rec), icosphere(3).vertices)
	return None


def bayesian_posterior(rec: PosteriorRecord, quantity: str, draws: int, seed: int, diffusion_time: Optional[float]) -> TrialPosterior:
	post = rec.to_posterior()
	if quantity == "md":
		return TrialPosterior(rec.trial, QuantityPosterior.closed(md_posterior(post)))
	if quantity == "fa":
		derived = fa_posterior_samples(post, draws, seed, POSTERIOR, rec.trial)
	elif quantity == "rtop":
		derived = rtop_posterior_samples(post, diffusion_time, draws, seed, POSTERIOR, rec.trial)
	else:
		derived = crossing_angle_samples(
			post, _order(rec), draws, seed, POSTERIOR, rec.trial, amplitude_map=_amplitude_map(rec)
		)
	if derived.values.size == 0:
		logger.debug("trial %d: no usable %s draws", rec.trial, quantity)
		return TrialPosterior(rec.trial, None, derived)
	return TrialPosterior(rec.trial, QuantityPosterior.empirical(derived.values), derived)


def _statistic(quantity: str, rec: PosteriorRecord, diffusion_time: Optional[float]) -> Callable[[np.ndarray], np.ndarray]:
	if quantity == "md":
		return md_from_coefficients
	if quantity == "fa":
		return lambda c: fa_from_coefficients(c)[0]
	if quantity == "rtop":
		return lambda c: rtop_from_coefficients(c, diffusion_time)
	order, amplitude_map = _order(rec), _amplitude_map(rec)
	return lambda c: angles_from_coefficients(c, order, amplitude_map=amplitude_map)


def bootstrap_posterior(rec: PosteriorRecord, quantity: str, fitter: Fitter, ts: TrialSet, n_draws: int, seed: int) -> TrialPosterior:
	"""同じ設定で再フィットした系に残差ブートストラップをかける"""
	try:
		sys, post, _ = fitter(ts.noisy[rec.trial])
		result = residual_bootstrap(
			sys, post, _statistic(quantity, rec, ts.scheme.diffusion_time), n_draws, seed, rec.trial
		)
		qp = QuantityPosterior.empirical(result.samples)
	except DmriUncertaintyError as e:
		logger.warning("trial %d: bootstrap failed: %s", rec.trial, e)
		return TrialPosterior(rec.trial, None)
	derived = DerivedSamples(result.samples, n_draws, n_rejected=result.failures, unreliable=result.flagged)
	return TrialPosterior(rec.trial, qp, derived)


def _usable(items: list[TrialPosterior]) -> list[QuantityPosterior]:
	usable = [tp.posterior for tp in items if tp.posterior is not None]
	if not usable:
		raise EmptySampleError("no trial produced a usable posterior")
	return usable


def _curve_summary(curve: PPCurve, posteriors: list[QuantityPosterior]) -> dict[str, Any]:
	return {
		"n_trials": curve.n_trials,
		"max_deviation": curve.max_deviation(),
		"within_band_fraction": curve.within_band_fraction(),
		"bias": curve.bias,
		"mean_iqr": float(np.mean([iqr(qp) for qp in posteriors])),
	}


def _detection_rate(items: list[TrialPosterior]) -> Optional[float]:
	derived = [tp.derived for tp in items if tp.derived is not None]
	if not derived:
		return None
	return float(np.mean([1.0 - d.rejected_fraction for d in derived]))


@cli_app.command("pp")
@click.argument("quantity", type=click.Choice(["md", "fa", "rtop", "angle"]))
@click.option("--fits", type=click.Path(exists=True), default=None, help="fit の出力（ディレクトリか posteriors.jsonl）")
@click.option("--trialset", type=click.Path(file_okay=False, exists=True), default=None, help="既定: fit の meta.json に記録された試行セット")
@click.option("--draws", type=int, default=None, help="事後サンプル数（既定 1000）")
@click.option("--bias-correct", is_flag=True, help="平均誤差を差し引いた曲線も出力")
@click.option("--bootstrap", is_flag=True, help="残差ブートストラップの曲線も出力")
@click.option("--bootstrap-draws", type=int, default=None, help="ブートストラップ回数（既定 1000）")
@click.pass_context
def cmd_pp(
	ctx: click.Context,
	quantity: str,
	fits: Optional[str],
	trialset: Optional[str],
	draws: Optional[int],
	bias_correct: bool,
	bootstrap: bool,
	bootstrap_draws: Optional[int],
) -> None:
	"""事後分布の P-P 曲線（CSV と SVG）を出力する"""
	config = run_config(
		ctx,
		"pp",
		{
			"quantity": quantity,
			"fits": fits,
			"trialset": trialset,
			"draws": draws,
			"bias_correct": bias_correct or None,
			"bootstrap": bootstrap or None,
			"bootstrap_draws": bootstrap_draws,
		},
	)
	p = config.pp
	if p.draws < 2:
		raise InsufficientDrawsError(f"--draws must be at least 2 to form quantiles, got {p.draws}")
	if p.fits is None:
		raise click.UsageError("--fits is required (or pp.fits in the config file)")

	posteriors_path, meta_path = _fits_paths(p.fits)
	fit_meta = _fit_meta(meta_path)
	trialset = p.trialset or (fit_meta.inputs.get("trialset") if fit_meta else None)
	if trialset is None:
		raise click.UsageError("--trialset is required when the fits carry no meta.json")
	require_distinct_out(config, trialset, str(posteriors_path.parent))

	records = read_posteriors(posteriors_path)
	allowed = QUANTITY_MODELS[p.quantity]
	wrong = {r.model for r in records} - set(allowed)
	if wrong:
		raise click.UsageError(f"{p.quantity} needs {'/'.join(allowed)} fits, got {'/'.join(sorted(wrong))}")
	ok = [r for r in records if r.ok]
	ts = load_trialset(trialset)
	truth = ts.truth.require(TRUTH_FIELDS[p.quantity])
	t_d = ts.scheme.diffusion_time
	if p.quantity == "rtop" and t_d is None:
		raise DataError("RTOP needs the diffusion time of the trial set")

	out = out_dir(config)
	stem = f"pp_{p.quantity}"
	bayes = parallel_map(lambda r: bayesian_posterior(r, p.quantity, p.draws, config.seed, t_d), ok, config.threads)
	bayes_qp = _usable(bayes)
	curve = pp_curve(bayes_qp, truth)
	write_pp_csv(curve, out / f"{stem}.csv")
	curves = {"Bayesian": curve}
	# MD は閉形式なので乱数を使わない
	lineage: dict[str, tuple[int, ...]] = {}
	if p.quantity != "md":
		lineage["posterior"] = stream_key(config.seed, POSTERIOR)
	summary: dict[str, Any] = {
		"truth": truth,
		"n_records": len(records),
		"n_rejected_fits": len(records) - len(ok),
		"n_skipped": len(bayes) - len(bayes_qp),
		"bayesian": _curve_summary(curve, bayes_qp),
	}
	rate = _detection_rate(bayes)
	if rate is not None:
		summary["bayesian"]["usable_draw_fraction"] = rate

	if p.bias_correct:
		corrected = bias_corrected_pp(bayes_qp, truth)
		write_pp_csv(corrected, out / f"{stem}_bias_corrected.csv")
		curves["bias corrected"] = corrected
		summary["bias_corrected"] = _curve_summary(corrected, bayes_qp)

	if p.bootstrap:
		if fit_meta is None or "fit" not in fit_meta.config:
			raise DataError(f"{meta_path}: fit settings are needed to refit for the bootstrap")
		fit_params = FitParams.model_validate(fit_meta.config["fit"])
		fitter = make_fitter(fit_params, ts.scheme, load_trialset_meta(trialset).phantom)
		boot = parallel_map(
			lambda r: bootstrap_posterior(r, p.quantity, fitter, ts, p.bootstrap_draws, config.seed),
			ok,
			config.threads,
		)
		boot_qp = _usable(boot)
		boot_curve = pp_curve(boot_qp, truth)
		write_pp_csv(boot_curve, out / f"{stem}_bootstrap.csv")
		curves["bootstrap"] = boot_curve
		lineage["bootstrap"] = stream_key(config.seed, BOOTSTRAP)
		summary["bootstrap"] = _curve_summary(boot_curve, boot_qp)
		summary["bootstrap"]["n_flagged"] = sum(1 for tp in boot if tp.derived is not None and tp.derived.unreliable)
		summary["bootstrap_vs_bayesian"] = float(np.max(np.abs(boot_curve.coverage - curve.coverage)))

	svg = plot_pp_curves(curves, out / f"{stem}.svg", title=p.quantity.upper())
	inputs = {"fits": str(posteriors_path), "trialset": str(trialset)}
	save_run_meta("pp", config, inputs=inputs, summary=summary, lineage=lineage)
	logger.info("pp %s: %d trials, sup deviation %.3f -> %s", p.quantity, curve.n_trials, curve.max_deviation(), svg)
	click.echo(f"{stem}: {curve.n_trials} trials, max |coverage - p| = {curve.max_deviation():.3f}")

from typing import Any, Callable, Optional

import click
import numpy as np

from bayes.regression import LinearSystem, PosteriorT
from cliApp import cli_app
from config import FitParams
from errors import DataError, DmriUncertaintyError
from handlers.common import logger, out_dir, parallel_map, require_distinct_out, run_config, save_run_meta
from models.csd import CSD_DEFAULT_LAMBDA, CSD_DEFAULT_ORDER, csd_fit
from models.dti import dti_fit_wls
from models.scheme import AcquisitionScheme
from models.sh import QBI_DEFAULT_LAMBDA, qbi_fit, response_from_tensor
from phantom.tensors import DEFAULT_FA, DEFAULT_MD, DEFAULT_S0, axially_symmetric_tensor
from store.records import PosteriorRecord
from store.repository import load_trialset, load_trialset_meta, write_posteriors

QBI_DEFAULT_ORDER = 6

# 信号 (n,) -> (系, 事後分布, extras)
Fitter = Callable[[np.ndarray], tuple[LinearSystem, PosteriorT, dict[str, Any]]]


def _shell_subset(scheme: AcquisitionScheme, shell: Optional[float]) -> tuple[np.ndarray, float]:
	weighted = ~scheme.b0_mask
	if not np.any(weighted):
		raise DataError("scheme has no diffusion-weighted measurements")
	b = float(shell) if shell is not None else max(scheme.shell_bvals())
	mask = scheme.b0_mask | scheme.select_shell(b)
	return mask, b


def make_fitter(params: FitParams, scheme: AcquisitionScheme, phantom: dict[str, Any]) -> Fitter:
	"""モデル設定から 1 試行分のフィット関数を作る"""
	if params.model == "dti":

		def fit_dti(signal: np.ndarray):
			fit = dti_fit_wls(scheme, signal, reweight=params.reweight, weighting=params.weighting)
			return fit.system, fit.posterior, {"reweight": params.reweight, "weighting": params.weighting}

		return fit_dti

	mask, shell = _shell_subset(scheme, params.shell)
	sub = scheme.subset(mask)

	if params.model == "qbi":
		order = params.order if params.order is not None else QBI_DEFAULT_ORDER
		lam = params.lam if params.lam is not None else QBI_DEFAULT_LAMBDA

		def fit_qbi(signal: np.ndarray):
			fit = qbi_fit(sub, np.asarray(signal)[mask], order, lam)
			return fit.system, fit.posterior, {"order": order, "lambda": lam, "shell": shell}

		return fit_qbi

	order = params.order if params.order is not None else CSD_DEFAULT_ORDER
	lam = params.lam if params.lam is not None else CSD_DEFAULT_LAMBDA
	# 応答関数はファントムの単一テンソル
	tensor = axially_symmetric_tensor(phantom.get("md", DEFAULT_MD), phantom.get("fa", DEFAULT_FA))
	response = response_from_tensor(tensor, shell, order, s0=phantom.get("s0", DEFAULT_S0))

	def fit_csd(signal: np.ndarray):
		fit = csd_fit(sub, np.asarray(signal)[mask], response, order, lam, params.tau)
		extras = {
			"order": order,
			"lambda": lam,
			"tau": params.tau,
			"shell": shell,
			"converged": fit.converged,
			"n_iterations": fit.n_iterations,
			"lambda_eff": fit.lambda_eff,
		}
		return fit.system, fit.posterior, extras

	return fit_csd


def fit_record(fitter: Fitter, model: str, trial: int, signal: np.ndarray) -> PosteriorRecord:
	try:
		_, post, extras = fitter(signal)
	except DmriUncertaintyError as e:
		# ボクセル単位の失敗は記録して続行
		logger.warning("trial %d rejected: %s", trial, e)
		return PosteriorRecord.rejected(trial, model, str(e))
	return PosteriorRecord.from_posterior(trial, model, post, **extras)


@cli_app.command("fit")
@click.argument("model", type=click.Choice(["dti", "csd", "qbi"]))
@click.option("--trialset", type=click.Path(file_okay=False, exists=True), default=None, help="simulate の出力ディレクトリ")
@click.option("--reweight", is_flag=True, help="DTI: 推定信号で 1 回だけ重みを更新")
@click.option(
	"--weighting",
	type=click.Choice(["predicted", "observed"]),
	default=None,
	help="DTI: 重み diag(S^2) の S（既定: 非加重フィットの予測信号）",
)
@click.option("--order", type=int, default=None, help="SH 次数（CSD 既定 10, QBI 既定 6）")
@click.option("--lambda", "lam", type=float, default=None, help="正則化強度（CSD 既定 5, QBI 既定 0.006）")
@click.option("--tau", type=float, default=None, help="CSD 閾値（既定 0.1）")
@click.option("--shell", type=float, default=None, help="CSD/QBI で使うシェル（既定: 最大 b 値）")
@click.pass_context
def cmd_fit(
	ctx: click.Context,
	model: str,
	trialset: Optional[str],
	reweight: bool,
	weighting: Optional[str],
	order: Optional[int],
	lam: Optional[float],
	tau: Optional[float],
	shell: Optional[float],
) -> None:
	"""試行ごとに事後分布を推定して posteriors.jsonl に書く"""
	config = run_config(
		ctx,
		"fit",
		{
			"model": model,
			"trialset": trialset,
			"reweight": reweight or None,
			"weighting": weighting,
			"order": order,
			"lambda": lam,
			"tau": tau,
			"shell": shell,
		},
	)
	p = config.fit
	if p.trialset is None:
		raise click.UsageError("--trialset is required (or fit.trialset in the config file)")
	require_distinct_out(config, p.trialset)

	ts = load_trialset(p.trialset)
	phantom = load_trialset_meta(p.trialset).phantom
	fitter = make_fitter(p, ts.scheme, phantom)

	records = parallel_map(lambda t: fit_record(fitter, p.model, t, ts.noisy[t]), range(ts.n_trials), config.threads)
	path = write_posteriors(records, out_dir(config) / "posteriors.jsonl")

	n_ok = sum(r.ok for r in records)
	summary: dict[str, Any] = {"n_trials": len(records), "n_ok": n_ok, "n_rejected": len(records) - n_ok}
	if p.model == "csd":
		summary["n_not_converged"] = sum(1 for r in records if r.ok and not r.extras.get("converged", True))
	save_run_meta("fit", config, inputs={"trialset": str(p.trialset)}, summary=summary)
	logger.info("fit %s: %d/%d trials -> %s", p.model, n_ok, len(records), path)
	click.echo(f"{n_ok}/{len(records)} posteriors written to {path}")

from typing import Optional

import click

from bayes.random import NOISE, stream_key
from cliApp import cli_app
from handlers.common import logger, out_dir, run_config, run_meta
from phantom.acquisition import HCP_BIG_DELTA, HCP_SMALL_DELTA, hcp_scheme
from phantom.noise import NoiseSpec
from phantom.tensors import double_tensor_phantom, single_tensor_phantom
from phantom.trials import simulate_trials
from store.repository import read_scheme, save_trialset

# 論文設定: 単一テンソルは b <= 1000、二重テンソルは b <= 3000
SINGLE_TENSOR_BMAX = 1000.0
DOUBLE_TENSOR_BMAX = 3000.0


@cli_app.command("simulate")
@click.option("--fa", type=float, default=None, help="FA（既定 0.8）")
@click.option("--md", type=float, default=None, help="MD [mm^2/s]（既定 0.7e-3）")
@click.option("--angle", type=float, default=None, help="指定すると二重テンソル（y 軸回転 [deg]）")
@click.option("--s0", type=float, default=None)
@click.option("--sigma-rel", type=float, default=None, help="sigma / S0（既定 0.05）")
@click.option("--noise", type=click.Choice(["rician", "gaussian"]), default=None)
@click.option("--trials", type=int, default=None, help="試行数（既定 1000）")
@click.option("--bmax", type=float, default=None, help="使用する最大 b 値")
@click.option("--scheme-dir", type=click.Path(file_okay=False, exists=True), default=None, help="scheme.bvals/bvecs のあるディレクトリ")
@click.pass_context
def cmd_simulate(
	ctx: click.Context,
	fa: Optional[float],
	md: Optional[float],
	angle: Optional[float],
	s0: Optional[float],
	sigma_rel: Optional[float],
	noise: Optional[str],
	trials: Optional[int],
	bmax: Optional[float],
	scheme_dir: Optional[str],
) -> None:
	"""ファントムから試行セットを生成する"""
	config = run_config(
		ctx,
		"simulate",
		{
			"fa": fa,
			"md": md,
			"angle": angle,
			"s0": s0,
			"sigma_rel": sigma_rel,
			"noise": noise,
			"trials": trials,
			"bmax": bmax,
			"scheme_dir": scheme_dir,
		},
	)
	p = config.simulate

	if p.angle is None:
		phantom = single_tensor_phantom(p.md, p.fa, p.s0)
		default_bmax = SINGLE_TENSOR_BMAX
	else:
		phantom = double_tensor_phantom(p.angle, p.md, p.fa, p.s0)
		default_bmax = DOUBLE_TENSOR_BMAX
	bmax = p.bmax if p.bmax is not None else default_bmax

	if p.scheme_dir is None:
		scheme = hcp_scheme(bmax)
	else:
		scheme = read_scheme(p.scheme_dir)
		if scheme.diffusion_time is None:
			logger.info("%s: no timing stored, assuming HCP pulse timing", p.scheme_dir)
			scheme = read_scheme(p.scheme_dir, small_delta=HCP_SMALL_DELTA, big_delta=HCP_BIG_DELTA)
		scheme = scheme.subset(scheme.bmax_mask(bmax))

	spec = NoiseSpec.relative(p.sigma_rel, p.s0, p.noise)
	ts = simulate_trials(phantom, scheme, spec, p.trials, config.seed)
	description = {"md": p.md, "fa": p.fa, "angle": p.angle, "s0": p.s0, "bmax": bmax}
	run = run_meta("simulate", config, lineage={"noise": stream_key(config.seed, NOISE)})
	out = save_trialset(ts, out_dir(config), phantom=description, run=run)
	logger.info("simulate: %d trials x %d measurements -> %s", ts.n_trials, len(scheme), out)
	click.echo(f"{ts.n_trials} trials written to {out}")

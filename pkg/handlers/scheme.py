from typing import Optional

import click

from cliApp import cli_app
from handlers.common import logger, out_dir, parse_list, run_config, save_run_meta
from phantom.acquisition import HCP_BIG_DELTA, HCP_SMALL_DELTA, hcp_scheme, make_scheme
from store.repository import write_scheme


@cli_app.command("scheme")
@click.option("--shells", default=None, help="シェルの b 値（カンマ区切り, s/mm^2）")
@click.option("--dirs", default=None, help="シェルごとの方向数（カンマ区切り）")
@click.option("--b0", type=int, default=None, help="b=0 の数")
@click.option("--diffusion-time", type=float, default=None, help="t_d [s]")
@click.option("--small-delta", type=float, default=None, help="delta [s]")
@click.option("--big-delta", type=float, default=None, help="Delta [s]")
@click.option("--hcp", is_flag=True, help="HCP 型 4 シェル（552 測定）")
@click.pass_context
def cmd_scheme(
	ctx: click.Context,
	shells: Optional[str],
	dirs: Optional[str],
	b0: Optional[int],
	diffusion_time: Optional[float],
	small_delta: Optional[float],
	big_delta: Optional[float],
	hcp: bool,
) -> None:
	"""勾配テーブル（FSL 形式 bvals/bvecs）を書き出す"""
	config = run_config(
		ctx,
		"scheme",
		{
			"shells": parse_list(shells, float, "--shells"),
			"dirs": parse_list(dirs, int, "--dirs"),
			"b0": b0,
			"diffusion_time": diffusion_time,
			"small_delta": small_delta,
			"big_delta": big_delta,
			"hcp": hcp or None,
		},
	)
	p = config.scheme
	if p.hcp:
		scheme = hcp_scheme()
	else:
		timing = {"diffusion_time": p.diffusion_time, "small_delta": p.small_delta, "big_delta": p.big_delta}
		if all(v is None for v in timing.values()):
			timing = {"small_delta": HCP_SMALL_DELTA, "big_delta": HCP_BIG_DELTA}
		scheme = make_scheme(p.shells, p.dirs, p.b0, **timing)

	bvals, bvecs = write_scheme(scheme, out_dir(config))
	save_run_meta("scheme", config, summary={"n_measurements": len(scheme), "diffusion_time": scheme.diffusion_time})
	logger.info("scheme: %d measurements -> %s, %s", len(scheme), bvals, bvecs)
	click.echo(f"{len(scheme)} measurements written to {bvals.parent}")

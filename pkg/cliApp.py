import logging
from typing import Optional

import click
from dotenv import load_dotenv

from config import __version__


# .env を読み込む（存在しない場合は無視）
load_dotenv()


@click.group(name="dmri-uncertainty")
@click.version_option(__version__, prog_name="dmri-uncertainty")
@click.option("--seed", type=int, default=None, help="乱数シード（既定: DMRI_SEED または 0）")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="出力ディレクトリ（既定: DMRI_OUT または ./out）")
@click.option("--threads", type=click.IntRange(min=1), default=None, help="並列スレッド数（既定: DMRI_THREADS または 1）")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="JSON 設定ファイル")
@click.option("--log-level", type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False), default=None)
@click.pass_context
def cli_app(
	ctx: click.Context,
	seed: Optional[int],
	out: Optional[str],
	threads: Optional[int],
	config_path: Optional[str],
	log_level: Optional[str],
) -> None:
	"""拡散 MRI 推定の不確かさ評価ツール"""
	if log_level:
		logging.getLogger().setLevel(log_level.upper())
	ctx.ensure_object(dict)
	ctx.obj["global_flags"] = {"seed": seed, "out": out, "threads": threads}
	ctx.obj["config_path"] = config_path

import logging
import os
import sys

import click

from cliApp import cli_app
from errors import DmriUncertaintyError

# コマンドを cli_app に登録する
import handlers.scheme  # noqa: F401
import handlers.simulate  # noqa: F401
import handlers.fit  # noqa: F401
import handlers.pp  # noqa: F401
import handlers.group  # noqa: F401


def _setup_logging() -> None:
	logging.basicConfig(
		level=os.getenv("LOG_LEVEL", "INFO").upper(),
		format="%(asctime)s %(levelname)s %(name)s - %(message)s",
	)

	# サードパーティのログは抑える
	logging.getLogger("matplotlib").setLevel(logging.WARNING)
	logging.getLogger("PIL").setLevel(logging.WARNING)
	logging.getLogger("joblib").setLevel(logging.WARNING)


def main(argv: list[str] | None = None) -> int:
	_setup_logging()
	logger = logging.getLogger("dmri-uncertainty")

	try:
		cli_app.main(args=argv, prog_name="dmri-uncertainty", standalone_mode=False)
	except DmriUncertaintyError as e:
		logger.error("%s: %s", type(e).__name__, e, exc_info=logger.isEnabledFor(logging.DEBUG))
		return e.exit_code
	except click.exceptions.Abort:
		logger.error("aborted")
		return 1
	except click.ClickException as e:
		e.show(file=sys.stderr)
		return 2 if isinstance(e, click.UsageError) else e.exit_code
	except Exception as e:
		logger.error(f"予期しないエラーが発生しました: {str(e)}", exc_info=True)
		return 1
	return 0


if __name__ == "__main__":
	raise SystemExit(main())

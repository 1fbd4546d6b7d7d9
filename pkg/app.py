import argparse
import logging
import sys
from typing import List, Optional

from commands import evaluate, features, params, predict, split, train
from config.settings import get_config, validate_config
from core.container import container
from nn.tensor import set_debug_numerics
from utils.errors import MamAppError
from utils.run_logger import get_run_logger

COMMANDS = (split, train, evaluate, predict, features, params)


def create_app() -> argparse.ArgumentParser:
    config = get_config()
    parser = argparse.ArgumentParser(
        prog='mamapp',
        description=f"{config.APP_NAME} {config.APP_VERSION}: Mamba-based plant leaf disease classifier",
    )
    parser.add_argument('--workers', type=int, default=None,
                        help='data pipeline threads (default: MAMAPP_WORKERS; 1 is bit-reproducible)')
    parser.add_argument('--debug-numerics', action='store_true', help='check every op output for NaN/Inf')
    subparsers = parser.add_subparsers(dest='command', required=True)
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Run one command; exit codes are 0 success, 2 usage/config/data error, 3 numeric failure."""
    parser = create_app()
    args = parser.parse_args(argv)

    settings = get_config()
    try:
        validate_config(settings)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    container.config.workers.from_value(args.workers or settings.WORKERS)
    set_debug_numerics(args.debug_numerics or settings.DEBUG_NUMERICS)

    run_logger = get_run_logger()
    run_logger.command = args.command
    run_logger.log_command(args.command, {k: v for k, v in vars(args).items() if k != 'handler'})

    try:
        return args.handler(args)
    except MamAppError as e:
        run_logger.log_event('command_failed', {'error': type(e).__name__, 'message': str(e)}, level='ERROR')
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        logging.getLogger(__name__).error("I/O failure: %s", e)
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == '__main__':
    sys.exit(main())

"""
params command: trainable parameter count with per-module breakdown
"""
import argparse

from commands.common import read_run_config
from core.container import container


def register(subparsers) -> None:
    parser = subparsers.add_parser('params', help='Count trainable parameters of a configuration')
    parser.add_argument('--config', default=None)
    parser.add_argument('--image-size', type=int, default=None)
    parser.add_argument('--num-classes', type=int, default=None)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    settings = container.settings()
    config = read_run_config(args.config).model_config(image_size=args.image_size, num_classes=args.num_classes)
    counts = container.model_service().count_params(config)

    print(f"total: {counts['total']:,}  (paper: {settings.REFERENCE_PARAM_COUNT:,})")
    for name, value in counts['per_module'].items():
        print(f"  {name}: {value:,}")
    print("per stage:")
    for name, value in counts['per_stage'].items():
        print(f"  {name}: {value:,}")
    print("per block component (summed over blocks):")
    for name, value in counts['per_block_component'].items():
        print(f"  {name}: {value:,}")
    return 0

"""
train command: fit a model from a run config and write best/last checkpoints and the train log
"""
import argparse
import os

from commands.common import read_run_config, resolve_out_dir, resolve_seed, split_index, write_run_manifest
from core.container import container
from services.training_service import (BEST_CHECKPOINT, LAST_CHECKPOINT, TRAIN_LOG_CSV, TRAIN_SUMMARY_JSON)
from utils.errors import ConfigError
from utils.validators import validate_model_config

SPLIT_MANIFEST = 'split_manifest.csv'


def register(subparsers) -> None:
    parser = subparsers.add_parser('train', help='Train a classifier')
    parser.add_argument('--config', default=None, help='run config file (key = value)')
    parser.add_argument('--resume', default=None, help='last checkpoint of an earlier run')
    parser.add_argument('--data', default=None, help='dataset root (overrides the config file)')
    parser.add_argument('--manifest', default=None, help='reuse the split of an existing manifest CSV')
    parser.add_argument('--out', default=None, help='output directory')
    parser.add_argument('--seed', type=int, default=None)
    parser.add_argument('--epochs', type=int, default=None)
    parser.add_argument('--batch-size', type=int, default=None)
    parser.add_argument('--image-size', type=int, default=None)
    parser.add_argument('--no-augment', action='store_true', help='disable training augmentation')
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    settings = container.settings()
    run_config = read_run_config(args.config)
    seed = resolve_seed(args.seed, run_config, settings)
    out_dir = resolve_out_dir(args.out, run_config, settings)
    if args.workers is None and 'workers' in run_config.options:
        container.config.workers.from_value(run_config.options['workers'])

    data_service = container.data_service()
    index = split_index(data_service, args.data or run_config.options.get('data'), seed,
                        args.manifest or run_config.options.get('manifest'))

    config = run_config.model_config(
        seed=seed, epochs=args.epochs, batch_size=args.batch_size, image_size=args.image_size,
    )
    if 'num_classes' in run_config.config_values and config.num_classes != index.num_classes:
        raise ConfigError(f"num_classes = {config.num_classes} but the dataset has {index.num_classes} classes")
    config = validate_model_config(
        config.with_overrides(num_classes=index.num_classes, class_names=list(index.classes))
    )

    manifest_path = os.path.join(out_dir, SPLIT_MANIFEST)
    data_service.write_manifest(index, manifest_path)

    augment = run_config.options.get('augment', True) and not args.no_augment
    result = container.training_service().train(config, index, out_dir=out_dir, resume=args.resume,
                                                augment=augment)

    summary = result.log.summary()
    print(f"epochs completed: {summary['epochs_completed']}")
    if summary['best_epoch'] is not None:
        print(f"best epoch: {summary['best_epoch']}  val_acc: {summary['best_val_acc']:.4f}  "
              f"val_loss: {summary['best_val_loss']:.4f}")

    produced = [os.path.join(out_dir, name) for name in
                (BEST_CHECKPOINT, LAST_CHECKPOINT, TRAIN_LOG_CSV, TRAIN_SUMMARY_JSON, SPLIT_MANIFEST)]
    write_run_manifest(out_dir, 'train', produced, {'seed': seed, 'config_hash': config.config_hash()})
    return 0

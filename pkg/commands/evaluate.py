"""
eval command: confusion matrix and micro/macro metrics of a checkpoint on one split
"""
import argparse
import os

from commands.common import check_class_names, read_run_config, resolve_out_dir, split_index, write_run_manifest
from core.container import container

METRICS_JSON = 'metrics.json'
CONFUSION_CSV = 'confusion.csv'


def register(subparsers) -> None:
    parser = subparsers.add_parser('eval', help='Evaluate a checkpoint on a dataset split')
    parser.add_argument('--ckpt', required=True)
    parser.add_argument('--data', default=None)
    parser.add_argument('--manifest', default=None, help='split manifest CSV written by split/train')
    parser.add_argument('--split', choices=('train', 'val', 'test'), default='test')
    parser.add_argument('--seed', type=int, default=None, help='split seed (default: the checkpoint seed)')
    parser.add_argument('--batch-size', type=int, default=None)
    parser.add_argument('--out', default=None)
    parser.set_defaults(handler=run)


def split_batches(args: argparse.Namespace, config):
    """Batches of the requested split, reproducing the training split by default."""
    data_service = container.data_service()
    seed = config.seed if args.seed is None else args.seed
    index = split_index(data_service, args.data, seed, args.manifest)
    check_class_names(config, index)
    batches = data_service.make_batches(
        index, args.split, args.batch_size or config.batch_size, seed, image_size=config.image_hw[0],
        norm=(config.norm_mean, config.norm_std),
    )
    return index, batches


def run(args: argparse.Namespace) -> int:
    settings = container.settings()
    out_dir = resolve_out_dir(args.out, read_run_config(None), settings)
    loaded = container.model_service().load_checkpoint(args.ckpt)
    index, batches = split_batches(args, loaded.config)

    evaluation = container.evaluation_service()
    report = evaluation.evaluate(loaded.model, batches, index.classes)

    metrics_path = os.path.join(out_dir, METRICS_JSON)
    confusion_path = os.path.join(out_dir, CONFUSION_CSV)
    evaluation.write_metrics(report, metrics_path)
    evaluation.write_confusion(report.confusion, confusion_path)

    print(f"split: {args.split}  samples: {report.confusion.total}")
    print(f"accuracy: {report.accuracy:.4f}  (sum TP / sum(TP+FP+FN): {report.table_accuracy:.4f})")
    print(f"micro  P {report.micro.precision:.4f}  R {report.micro.recall:.4f}  F1 {report.micro.f1:.4f}")
    print(f"macro  P {report.macro.precision:.4f}  R {report.macro.recall:.4f}  F1 {report.macro.f1:.4f}")
    for item in report.per_class:
        flags = f"  undefined: {','.join(item.to_dict()['undefined'])}" if item.to_dict()['undefined'] else ''
        print(f"  {item.name}: P {item.precision:.4f}  R {item.recall:.4f}  F1 {item.f1:.4f}  "
              f"n={item.support}{flags}")

    write_run_manifest(out_dir, 'eval', [metrics_path, confusion_path], {'checkpoint': args.ckpt, 'split': args.split})
    return 0

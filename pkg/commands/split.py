"""
split command: index a dataset, assign train/val/test and write the split manifest
"""
import argparse
import os

from commands.common import print_table, resolve_seed, write_run_manifest, read_run_config
from core.container import container
from models.dataset import DATASET_PROFILES, DatasetIndex
from utils.errors import ConfigError


def register(subparsers) -> None:
    parser = subparsers.add_parser('split', help='Stratified 70/15/15 split of an image-folder dataset')
    parser.add_argument('--data', required=True, help='dataset root with one directory per class')
    parser.add_argument('--seed', type=int, default=None, help='split seed (default: MAMAPP_SEED)')
    parser.add_argument('--out', default='split_manifest.csv', help='manifest CSV path')
    parser.add_argument('--profile', choices=sorted(DATASET_PROFILES), default=None,
                        help='compare the split against a published dataset profile')
    parser.set_defaults(handler=run)


def counts_rows(index: DatasetIndex):
    table = index.counts_table()
    rows = [['class', 'train', 'val', 'test', 'total']]
    totals = [0, 0, 0, 0]
    for name in index.classes:
        counts = [table[name][key] for key in ('train', 'val', 'test', 'total')]
        totals = [a + b for a, b in zip(totals, counts)]
        rows.append([name] + [str(c) for c in counts])
    rows.append(['Total'] + [str(c) for c in totals])
    return rows, totals


def profile_mismatches(index: DatasetIndex, profile_name: str):
    profile = DATASET_PROFILES[profile_name]
    table = index.counts_table()
    if len(index.classes) != len(profile.classes):
        return [f"{len(index.classes)} classes, profile has {len(profile.classes)}"]
    problems = []
    for name, expected, profile_class in zip(index.classes, profile.counts, profile.classes):
        actual = tuple(table[name][key] for key in ('train', 'val', 'test', 'total'))
        if actual != tuple(expected):
            problems.append(f"{name} ({profile_class}): {actual} != {tuple(expected)}")
    return problems


def run(args: argparse.Namespace) -> int:
    settings = container.settings()
    seed = resolve_seed(args.seed, read_run_config(None), settings)
    data_service = container.data_service()

    index = data_service.split(data_service.index_dataset(args.data), seed)
    data_service.write_manifest(index, args.out)

    rows, _ = counts_rows(index)
    print_table(rows)
    print(f"imbalance ratio: {index.imbalance_ratio():.2f}")

    if args.profile:
        problems = profile_mismatches(index, args.profile)
        if problems:
            raise ConfigError(f"Split does not match profile '{args.profile}'", problems)
        print(f"matches profile '{args.profile}'")

    out_dir = os.path.dirname(os.path.abspath(args.out))
    write_run_manifest(out_dir, 'split', [args.out], {'seed': seed, 'data': args.data})
    return 0

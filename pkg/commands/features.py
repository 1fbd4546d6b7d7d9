"""
features command: penultimate-feature CSV export with optional PCA projection
"""
import argparse
import os

from commands.common import read_run_config, resolve_out_dir, write_run_manifest
from commands.evaluate import split_batches
from core.container import container
from services.evaluation_service import pca

FEATURES_CSV = 'features.csv'
PCA_CSV = 'pca.csv'


def register(subparsers) -> None:
    parser = subparsers.add_parser('features', help='Export penultimate features (and PCA coordinates)')
    parser.add_argument('--ckpt', required=True)
    parser.add_argument('--data', default=None)
    parser.add_argument('--manifest', default=None)
    parser.add_argument('--split', choices=('train', 'val', 'test'), default='test')
    parser.add_argument('--seed', type=int, default=None)
    parser.add_argument('--batch-size', type=int, default=None)
    parser.add_argument('--pca', type=int, choices=(2, 3), default=None, help='number of principal components')
    parser.add_argument('--out', default=None)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    settings = container.settings()
    out_dir = resolve_out_dir(args.out, read_run_config(None), settings)
    loaded = container.model_service().load_checkpoint(args.ckpt)
    index, batches = split_batches(args, loaded.config)

    evaluation = container.evaluation_service()
    features_path = os.path.join(out_dir, FEATURES_CSV)
    result = evaluation.export_features(loaded.model, batches, index.classes, features_path)
    produced = [features_path]
    print(f"features: {len(result.paths)} rows x {result.features.shape[1]} dims -> {features_path}")

    if args.pca:
        labels = [index.classes[int(label)] for label in result.labels]
        projection = pca(result.features, args.pca, labels)
        pca_path = os.path.join(out_dir, PCA_CSV)
        sidecar = evaluation.write_pca(projection, result.paths, pca_path)
        produced += [pca_path, sidecar]
        ratios = ', '.join(f"{r:.4f}" for r in projection.explained_variance_ratio)
        print(f"pca: explained variance ratio [{ratios}] -> {pca_path}")

    write_run_manifest(out_dir, 'features', produced, {'checkpoint': args.ckpt, 'split': args.split})
    return 0

"""
Helpers shared by the command modules
"""
import json
import os
from typing import Dict, Iterable, List, Optional

from config.run_config import RunConfigFile, load_run_config
from config.settings import BaseConfig
from models.config import MamAppConfig
from models.dataset import DatasetIndex
from services.data_service import DataService
from utils.errors import ConfigError

RUN_MANIFEST = 'manifest.json'


def read_run_config(path: Optional[str]) -> RunConfigFile:
    return load_run_config(path) if path else RunConfigFile()


def resolve_seed(flag: Optional[int], run_config: RunConfigFile, settings: BaseConfig) -> int:
    """--seed, then the config file, then MAMAPP_SEED."""
    if flag is not None:
        return int(flag)
    return int(run_config.config_values.get('seed', settings.SEED))


def resolve_out_dir(flag: Optional[str], run_config: RunConfigFile, settings: BaseConfig) -> str:
    out = flag or run_config.options.get('out') or settings.OUTPUT_DIR
    os.makedirs(out, exist_ok=True)
    return out


def split_index(data_service: DataService, data_root: Optional[str], seed: int,
                manifest: Optional[str] = None) -> DatasetIndex:
    """Index and split a dataset, or reuse the assignment of an earlier split manifest."""
    if manifest:
        return data_service.dataset_repository.read_manifest(manifest)
    if not data_root:
        raise ConfigError("A dataset root is required (--data or 'data' in the run config)")
    return data_service.split(data_service.index_dataset(data_root), seed)


def check_class_names(config: MamAppConfig, index: DatasetIndex) -> None:
    if config.class_names and list(config.class_names) != list(index.classes):
        raise ConfigError(
            "Dataset classes do not match the checkpoint",
            [f"checkpoint classes {list(config.class_names)}", f"dataset classes {list(index.classes)}"],
        )


def write_run_manifest(out_dir: str, command: str, files: Iterable[str], details: Optional[Dict] = None) -> str:
    """Record the files a command produced under ``out_dir``."""
    produced: List[str] = sorted({os.path.relpath(os.path.abspath(f), os.path.abspath(out_dir)) for f in files})
    path = os.path.join(out_dir, RUN_MANIFEST)
    with open(path, 'w', encoding='utf-8') as fh:
        json.dump({'command': command, 'files': produced, 'details': details or {}}, fh, indent=2, sort_keys=True)
    return path


def print_table(rows: List[List[str]], out=None) -> None:
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    for row in rows:
        cells = [row[0].ljust(widths[0])] + [cell.rjust(width) for cell, width in zip(row[1:], widths[1:])]
        print('  '.join(cells), file=out)

"""
Repository pattern for checkpoint files
Separates the binary file format from model and training logic

Layout (little-endian throughout):
    magic "MAMAPP01" (8 bytes), format version u32,
    JSON block: u64 length + UTF-8 JSON {"config": {...}, "state": {...}},
    u32 tensor count, then per tensor:
        u32 name length + UTF-8 name, u32 rank, rank x u64 dims, raw float32 data
"""
import json
import os
import struct
from abc import ABC, abstractmethod
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, BinaryIO, Dict

import numpy as np

from utils.errors import CheckpointError

MAGIC = b"MAMAPP01"
FORMAT_VERSION = 1


@dataclass
class CheckpointData:
    """Decoded checkpoint contents"""
    config: Dict[str, Any]
    tensors: 'OrderedDict[str, np.ndarray]'
    state: Dict[str, Any] = field(default_factory=dict)


class CheckpointRepositoryInterface(ABC):
    """Interface for checkpoint storage"""

    @abstractmethod
    def save(self, path: str, data: CheckpointData) -> None:
        pass

    @abstractmethod
    def load(self, path: str) -> CheckpointData:
        pass


class BinaryCheckpointRepository(CheckpointRepositoryInterface):
    """Single-file binary checkpoint storage"""

    def save(self, path: str, data: CheckpointData) -> None:
        """Write atomically: the file appears only once complete"""
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        tmp_path = f"{path}.tmp"
        header = json.dumps({'config': data.config, 'state': data.state}, sort_keys=True).encode('utf-8')
        try:
            with open(tmp_path, 'wb') as fh:
                fh.write(MAGIC)
                fh.write(struct.pack('<I', FORMAT_VERSION))
                fh.write(struct.pack('<Q', len(header)))
                fh.write(header)
                fh.write(struct.pack('<I', len(data.tensors)))
                for name, array in data.tensors.items():
                    encoded = name.encode('utf-8')
                    fh.write(struct.pack('<I', len(encoded)))
                    fh.write(encoded)
                    fh.write(struct.pack('<I', array.ndim))
                    for dim in array.shape:
                        fh.write(struct.pack('<Q', dim))
                    fh.write(np.ascontiguousarray(array, dtype='<f4').tobytes())
            os.replace(tmp_path, path)
        except OSError as e:
            raise CheckpointError(f"Cannot write checkpoint {path}: {e}")

    def load(self, path: str) -> CheckpointData:
        try:
            with open(path, 'rb') as fh:
                return self._read(fh, path)
        except OSError as e:
            raise CheckpointError(f"Cannot read checkpoint {path}: {e}")

    def _read(self, fh: BinaryIO, path: str) -> CheckpointData:
        def read_exact(count: int, what: str) -> bytes:
            chunk = fh.read(count)
            if len(chunk) != count:
                raise CheckpointError(f"{path}: truncated while reading {what}")
            return chunk

        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic bytes {magic!r}, not a Mam-App checkpoint")
        (version,) = struct.unpack('<I', read_exact(4, 'format version'))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version} (expected {FORMAT_VERSION})")

        (header_len,) = struct.unpack('<Q', read_exact(8, 'config length'))
        try:
            header = json.loads(read_exact(header_len, 'config block').decode('utf-8'))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"{path}: malformed config block: {e}")

        (count,) = struct.unpack('<I', read_exact(4, 'tensor count'))
        tensors: 'OrderedDict[str, np.ndarray]' = OrderedDict()
        for index in range(count):
            (name_len,) = struct.unpack('<I', read_exact(4, f"name length of tensor #{index}"))
            name = read_exact(name_len, f"name of tensor #{index}").decode('utf-8')
            (rank,) = struct.unpack('<I', read_exact(4, f"rank of tensor '{name}'"))
            dims = struct.unpack(f'<{rank}Q', read_exact(8 * rank, f"dims of tensor '{name}'"))
            size = int(np.prod(dims, dtype=np.int64)) if rank else 1
            raw = read_exact(4 * size, f"data of tensor '{name}'")
            tensors[name] = np.frombuffer(raw, dtype='<f4').reshape(dims).astype(np.float32)

        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after {count} tensors")

        return CheckpointData(config=header.get('config', {}), tensors=tensors, state=header.get('state', {}))
